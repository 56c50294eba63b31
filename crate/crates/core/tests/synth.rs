use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use securemask::config::RunConfig;
use securemask::csi::{amplitude, denoise_stream, HampelParams};
use securemask::dataset::{load_recording, RecordingManifest};
use securemask::evaluation::experiment::simulate_benchmark;
use securemask::mask::{masks_for_video, parse_mv_sidecar, FrameGeometry, MaskParams};
use securemask::synth::{forge, simulate, simulate_scene, ActorSpec, CsiModel, ForgeMode, ForgeSpec, SceneParams, SceneSpec, MV_COVERAGE};

fn geom() -> FrameGeometry {
    FrameGeometry::new(48, 64, 8).unwrap()
}

fn walker(frames: usize) -> SceneSpec {
    SceneSpec {
        geometry: geom(),
        gop_length: 4,
        fps: 7.5,
        frames,
        actors: vec![ActorSpec {
            radius_y: 9.0,
            radius_x: 6.0,
            waypoints: vec![[24.0, 8.0], [24.0, 56.0]],
            speed: 2.0,
            moving_gops: vec![true; frames.div_ceil(4)],
        }],
        seed: 9,
    }
}

#[test]
fn empty_scene_has_no_motion_and_a_baseline_stream() {
    let scene = SceneSpec::random(0, 16, geom(), 4, 7.5, &SceneParams::default(), 3).unwrap();
    let quiet = CsiModel {
        noise_sigma: 0.0,
        outlier_rate: 0.0,
        ..CsiModel::default()
    };
    let sim = simulate_scene(&scene, &quiet, 37.5).unwrap();
    assert!(sim.fields.iter().all(|f| f.vectors.iter().all(|v| *v == [0.0, 0.0])));
    assert!(sim.gt_masks.iter().all(|m| m.count() == 0));
    let first = amplitude(&sim.records[0]).amps;
    for r in &sim.records {
        // Constant complex values, not just constant amplitudes.
        assert_eq!(r.values, sim.records[0].values);
        assert_eq!(amplitude(r).amps, first);
    }
    for &a in &first {
        assert!((0.8..=1.2).contains(&(a as f64)));
    }
}

#[test]
fn horizontal_walker_moves_its_blocks_two_pixels() {
    let scene = walker(20);
    let sim = simulate_scene(&scene, &CsiModel::default(), 37.5).unwrap();
    let g = geom();
    let need = (MV_COVERAGE * 64.0).ceil() as usize;
    let mut moving_blocks = 0;
    for f in 1..20 {
        let mask = &sim.gt_masks[f];
        for by in 0..g.blocks_h() {
            for bx in 0..g.blocks_w() {
                let cover = (by * 8..by * 8 + 8)
                    .flat_map(|y| (bx * 8..bx * 8 + 8).map(move |x| (y, x)))
                    .filter(|&(y, x)| mask.bits[y * g.width + x])
                    .count();
                let v = sim.fields[f].vectors[by * g.blocks_w() + bx];
                if cover >= need {
                    assert!((v[0] - 2.0).abs() < 1e-6 && v[1].abs() < 1e-6, "frame {f} block ({by},{bx}) {v:?}");
                    moving_blocks += 1;
                } else if cover == 0 {
                    assert_eq!(v, [0.0, 0.0]);
                }
            }
        }
    }
    assert!(moving_blocks > 19);
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SceneSpec::random(2, 24, geom(), 4, 7.5, &SceneParams::default(), 77).unwrap();
    for run in ["a", "b"] {
        simulate(&scene, &CsiModel::default(), 37.5, &dir.path().join(run)).unwrap();
    }
    for file in ["csi.bin", "mv.bin", "manifest.json", "scene.json", "gt_masks/000013.pgm"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn sidecar_round_trip_groups_frames_by_gop() {
    let dir = tempfile::tempdir().unwrap();
    let scene = SceneSpec::random(1, 8, geom(), 4, 7.5, &SceneParams::default(), 5).unwrap();
    simulate(&scene, &CsiModel::default(), 37.5, dir.path()).unwrap();
    let sc = parse_mv_sidecar(&dir.path().join("mv.bin")).unwrap().unwrap();
    assert_eq!(sc.fields.len(), 8);
    let gops: Vec<usize> = sc.fields.iter().map(|f| f.gop_index).collect();
    assert_eq!(gops, vec![0, 0, 0, 0, 1, 1, 1, 1]);
}

#[test]
fn pseudo_masks_overlap_ground_truth_per_gop() {
    // Ground truth for a GOP is the union of its frames' actor masks.
    let mut worst = f64::INFINITY;
    let mut n = 0;
    for seed in 0..20 {
        let scene = SceneSpec::random(1, 120, geom(), 4, 7.5, &SceneParams::default(), seed).unwrap();
        let sim = simulate_scene(&scene, &CsiModel::default(), 37.5).unwrap();
        let masks = masks_for_video(&sim.fields, &MaskParams::default()).unwrap();
        for gop in 1..30 {
            if !scene.actors[0].moving_gops[gop] {
                continue;
            }
            let mut union = sim.gt_masks[gop * 4].clone();
            for f in gop * 4..gop * 4 + 4 {
                for (u, b) in union.bits.iter_mut().zip(&sim.gt_masks[f].bits) {
                    *u |= *b;
                }
            }
            worst = worst.min(masks[gop * 4].iou(&union));
            n += 1;
        }
    }
    assert!(n > 300);
    assert!(worst >= 0.5, "worst GOP IoU {worst}");
}

#[test]
fn moving_blob_mask_centroid_tracks_the_actor() {
    let scene = walker(24);
    let sim = simulate_scene(&scene, &CsiModel::default(), 37.5).unwrap();
    let masks = masks_for_video(&sim.fields, &MaskParams::default()).unwrap();
    for gop in 1..6 {
        let m = &masks[gop * 4];
        let (my, mx) = m.centroid().expect("moving GOP has a mask");
        // True centroid over the GOP's frames.
        let mut ty = 0.0;
        let mut tx = 0.0;
        for f in gop * 4..gop * 4 + 4 {
            let (y, x) = sim.gt_masks[f].centroid().unwrap();
            ty += y / 4.0;
            tx += x / 4.0;
        }
        let d = ((my - ty).powi(2) + (mx - tx).powi(2)).sqrt();
        assert!(d <= 16.0, "gop {gop}: centroid off by {d}");
    }
}

#[test]
fn hampel_defaults_remove_injected_outliers() {
    let model = CsiModel::default();
    for seed in 0..4 {
        let scene = SceneSpec::random(1, 60, geom(), 4, 7.5, &SceneParams::default(), seed).unwrap();
        let sim = simulate_scene(&scene, &model, 37.5).unwrap();
        let mut amps: Vec<_> = sim.records.iter().map(amplitude).collect();
        let raw_rms = rms(&amps, &sim.clean_amplitudes);
        assert!(raw_rms > 2.0 * model.noise_sigma, "outliers should be visible before filtering");
        denoise_stream(&mut amps, HampelParams::default()).unwrap();
        let rms = rms(&amps, &sim.clean_amplitudes);
        assert!(rms < 2.0 * model.noise_sigma, "seed {seed}: rms {rms}");
    }
}

fn rms(amps: &[securemask::csi::AmplitudeRecord], clean: &[Vec<f32>]) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for (a, c) in amps.iter().zip(clean) {
        for (x, y) in a.amps.iter().zip(c) {
            se += ((x - y) as f64).powi(2);
            n += 1.0;
        }
    }
    (se / n).sqrt()
}

/// Logistic regression on standardised CSI windows, trained on three
/// recordings and scored on three others.
#[test]
fn linear_probe_detects_moving_actors() {
    let cfg = RunConfig::benchmark();
    let dir = tempfile::tempdir().unwrap();
    let dirs = simulate_benchmark(&cfg, dir.path()).unwrap();
    let p = &cfg.preprocess;
    let mut sets: [Vec<(Vec<f64>, bool)>; 2] = [Vec::new(), Vec::new()];
    for (i, d) in dirs.iter().enumerate() {
        let rec = load_recording(d, i, p.m, p.eta, p.hampel, &p.mask).unwrap();
        for s in rec.samples {
            let x = s.csi.amps_concat.iter().map(|&v| v as f64).collect();
            sets[i / 3].push((x, s.motion_label));
        }
    }
    let [train, test] = sets;
    let dim = train[0].0.len();
    let mut mean = vec![0.0; dim];
    let mut sd = vec![0.0; dim];
    for (x, _) in &train {
        for j in 0..dim {
            mean[j] += x[j] / train.len() as f64;
        }
    }
    for (x, _) in &train {
        for j in 0..dim {
            sd[j] += (x[j] - mean[j]).powi(2) / train.len() as f64;
        }
    }
    let z = |x: &[f64]| -> Vec<f64> { (0..dim).map(|j| (x[j] - mean[j]) / sd[j].sqrt().max(1e-9)).collect() };
    let train: Vec<(Vec<f64>, bool)> = train.iter().map(|(x, y)| (z(x), *y)).collect();
    let test: Vec<(Vec<f64>, bool)> = test.iter().map(|(x, y)| (z(x), *y)).collect();

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let lr = 0.1;
    for _ in 0..300 {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (x, y) in &train {
            let s: f64 = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let err = 1.0 / (1.0 + (-s).exp()) - if *y { 1.0 } else { 0.0 };
            for j in 0..dim {
                gw[j] += err * x[j];
            }
            gb += err;
        }
        let n = train.len() as f64;
        for j in 0..dim {
            w[j] -= lr * (gw[j] / n + 1e-3 * w[j]);
        }
        b -= lr * gb / n;
    }
    let correct = test
        .iter()
        .filter(|(x, y)| (b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() > 0.0) == *y)
        .count();
    let acc = correct as f64 / test.len() as f64;
    assert!(acc >= 0.9, "held-out probe accuracy {acc}");
}

#[test]
fn forged_copy_keeps_csi_and_annotates_the_interval() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let scene = SceneSpec::random(1, 50, geom(), 4, 7.5, &SceneParams::default(), 12).unwrap();
    simulate(&scene, &CsiModel::default(), 37.5, &src).unwrap();

    let zero = ForgeSpec {
        mode: ForgeMode::Shift,
        offset_frames: 0,
        interval: None,
        donor: None,
    };
    assert!(forge(&src, &dir.path().join("zero"), &zero, 7).is_err());
    let short = ForgeSpec {
        offset_frames: 5,
        ..zero.clone()
    };
    assert!(forge(&src, &dir.path().join("short"), &short, 7).is_err());

    let out = dir.path().join("forged");
    let spec = ForgeSpec {
        offset_frames: 10,
        ..zero
    };
    let m = forge(&src, &out, &spec, 7).unwrap();
    let ann = m.forgery.clone().unwrap();
    assert_eq!((ann.start, ann.end, ann.offset_frames), (10, 50, 10));
    assert_eq!(RecordingManifest::load(&out).unwrap(), m);
    assert_eq!(std::fs::read(src.join("csi.bin")).unwrap(), std::fs::read(out.join("csi.bin")).unwrap());

    let a = parse_mv_sidecar(&src.join("mv.bin")).unwrap().unwrap();
    let b = parse_mv_sidecar(&out.join("mv.bin")).unwrap().unwrap();
    for f in 0..50 {
        let want = if f >= 10 { &a.fields[f - 10] } else { &a.fields[f] };
        assert_eq!(b.fields[f].vectors, want.vectors, "frame {f}");
        assert_eq!(b.fields[f].frame_index, f);
    }
}

#[test]
fn random_scenes_keep_actors_in_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..30 {
        let persons = rng.gen_range(0..=3);
        let scene = SceneSpec::random(persons, 80, geom(), 4, 7.5, &SceneParams::default(), rng.gen()).unwrap();
        for (a, pos) in scene.actors.iter().zip(scene.positions()) {
            for c in pos {
                assert!(c[0] - a.radius_y >= 0.0 && c[0] + a.radius_y <= 48.0);
                assert!(c[1] - a.radius_x >= 0.0 && c[1] + a.radius_x <= 64.0);
            }
        }
    }
    assert!(SceneSpec::random(4, 10, geom(), 4, 7.5, &SceneParams::default(), 0).is_err());
}

use num_complex::Complex32;
use proptest::prelude::*;
use securemask::csi::{amplitude, hampel_filter, local_stats, window_csi, AmplitudeRecord, CsiDims, CsiRecord, MAD_SCALE};
use securemask::dataset::{build_forgery_dataset, motion_criterion, Selector, SplitMode, SplitSpec, WirelessMask};
use securemask::evaluation::confusion;
use securemask::mask::{binarize, gaussian_smooth3, refine, AccumulatedField, BinaryMask, VecField};
use securemask::models::dice_loss;
use securemask::models::ModuleKind;
use securemask::training::{lr_at, TrainConfig};

fn field(h: usize, w: usize, data: Vec<(f64, f64)>) -> VecField {
    VecField {
        height: h,
        width: w,
        data: data.into_iter().map(|(a, b)| [a, b]).collect(),
    }
}

/// Components are either exactly zero or at least 1e-3 in magnitude, so the
/// near-zero cosine rule never flips under scaling.
fn component() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), (1e-3f64..3.0), (-3.0f64..-1e-3)]
}

fn small_field() -> impl Strategy<Value = VecField> {
    (2usize..10, 2usize..10).prop_flat_map(|(h, w)| {
        prop::collection::vec((component(), component()), h * w).prop_map(move |d| field(h, w, d))
    })
}

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (3usize..20, 3usize..20).prop_flat_map(|(h, w)| {
        prop::collection::vec(any::<bool>(), h * w).prop_map(move |bits| BinaryMask {
            height: h,
            width: w,
            frame_index: 0,
            bits,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn raising_tau_never_adds_pixels(f in small_field(), lambda in 0.0f64..2.0, t1 in 0.0f64..3.0, dt in 0.0f64..2.0) {
        let acc = AccumulatedField::from_raw(f);
        let lo = binarize(&acc, lambda, t1);
        let hi = binarize(&acc, lambda, t1 + dt);
        for (a, b) in lo.bits.iter().zip(&hi.bits) {
            prop_assert!(*a || !*b);
        }
    }

    #[test]
    fn scaling_motion_up_never_removes_pixels(f in small_field(), lambda in 0.0f64..2.0, tau in 0.0f64..3.0, c in 1.0f64..5.0) {
        let scaled = VecField {
            data: f.data.iter().map(|v| [v[0] * c, v[1] * c]).collect(),
            ..f.clone()
        };
        let before = binarize(&AccumulatedField::from_raw(f), lambda, tau);
        let after = binarize(&AccumulatedField::from_raw(scaled), lambda, tau);
        for (a, b) in before.bits.iter().zip(&after.bits) {
            prop_assert!(!*a || *b);
        }
    }

    #[test]
    fn smoothing_preserves_sums_inside_a_zero_frame(f in small_field()) {
        let (h, w) = (f.height + 2, f.width + 2);
        let mut padded = VecField::zeros(h, w);
        for r in 0..f.height {
            for c in 0..f.width {
                padded.data[(r + 1) * w + c + 1] = f.at(r, c);
            }
        }
        let before = padded.component_sums();
        let after = gaussian_smooth3(&padded).component_sums();
        prop_assert!((before[0] - after[0]).abs() < 1e-9 && (before[1] - after[1]).abs() < 1e-9);
    }

    #[test]
    fn refine_leaves_no_small_components(m in mask_strategy(), frac in 0.0f64..0.2) {
        let out = refine(&m, frac);
        let (h, w) = (out.height, out.width);
        let min = frac * (h * w) as f64;
        let mut seen = vec![false; h * w];
        for start in 0..h * w {
            if !out.bits[start] || seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut area = 0;
            while let Some(i) = stack.pop() {
                area += 1;
                let (r, c) = (i / w, i % w);
                let mut push = |j: usize| {
                    if out.bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if r > 0 { push(i - w); }
                if r + 1 < h { push(i + w); }
                if c > 0 { push(i - 1); }
                if c + 1 < w { push(i + 1); }
            }
            prop_assert!(area as f64 >= min, "component of {area} px below {min}");
        }
    }

    #[test]
    fn motion_criterion_at_zero_means_any_pixel(m in mask_strategy()) {
        prop_assert_eq!(motion_criterion(&m, 0.0), m.bits.iter().any(|&b| b));
    }

    #[test]
    fn hampel_keeps_non_outliers(x in prop::collection::vec(-10.0f64..10.0, 0..60), half in 1usize..4, n in 1.0f64..4.0) {
        let window = 2 * half + 1;
        let y = hampel_filter(&x, window, n).unwrap();
        prop_assert_eq!(y.len(), x.len());
        for i in 0..x.len() {
            let (med, mad) = local_stats(&x, i, window);
            if (x[i] - med).abs() <= n * MAD_SCALE * mad {
                prop_assert_eq!(y[i], x[i]);
            } else if y[i] != x[i] {
                prop_assert_eq!(y[i], med);
            }
        }
    }

    #[test]
    fn amplitude_ignores_conjugation(vals in prop::collection::vec((-5.0f32..5.0, -5.0f32..5.0), 4)) {
        let dims = CsiDims::new(1, 2, 2).unwrap();
        let values: Vec<Complex32> = vals.iter().map(|&(re, im)| Complex32::new(re, im)).collect();
        let rec = CsiRecord { timestamp_us: 0, dims, values: values.clone() };
        let conj = CsiRecord { values: values.iter().map(|v| v.conj()).collect(), ..rec.clone() };
        prop_assert_eq!(amplitude(&rec), amplitude(&conj));
    }

    #[test]
    fn windows_stay_inside_their_frames(
        gaps in prop::collection::vec(1u64..40_000, 1..120),
        frames in 1usize..30,
        m in 1usize..6,
    ) {
        let dims = CsiDims::new(1, 1, 1).unwrap();
        let mut t = 0;
        let amps: Vec<AmplitudeRecord> = gaps
            .iter()
            .map(|g| {
                t += g;
                AmplitudeRecord { timestamp_us: t, dims, amps: vec![t as f32] }
            })
            .collect();
        let times: Vec<u64> = (0..frames as u64).map(|f| f * 133_333).collect();
        let out = window_csi(&amps, &times, m).unwrap();
        prop_assert!(out.windows.len() <= frames);
        prop_assert_eq!(out.windows.len() + out.dropped_frames.len(), frames);
        for w in &out.windows {
            let start = times[w.frame_index];
            let end = match times.get(w.frame_index + 1) {
                Some(&t) => t,
                None if frames > 1 => start + 133_333,
                None => u64::MAX,
            };
            prop_assert_eq!(w.source_timestamps.len(), m);
            for &ts in &w.source_timestamps {
                prop_assert!(ts >= start && ts < end);
            }
        }
    }

    #[test]
    fn splits_partition_their_input(
        keys in prop::collection::vec((0usize..4, 0usize..300), 0..200),
        seed in any::<u64>(),
        frac in 0.05f64..0.95,
        blocks in any::<bool>(),
        block_len in 1usize..50,
    ) {
        let spec = SplitSpec {
            train_frac: frac,
            seed,
            selector: Selector::AllFrames,
            mode: if blocks { SplitMode::Blocks { block_len } } else { SplitMode::Random },
        };
        let (train, test) = spec.partition(&keys).unwrap();
        prop_assert_eq!(spec.partition(&keys).unwrap(), (train.clone(), test.clone()));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..keys.len()).collect::<Vec<_>>());
    }

    #[test]
    fn clip_labels_match_index_alignment(n in 8usize..40, g in 1usize..6, extra in 0usize..4, seed in any::<u64>()) {
        let min_offset = g + extra;
        let visual: Vec<BinaryMask> = (0..n).map(|f| BinaryMask::empty(4, 4, f + 100)).collect();
        let wireless: Vec<WirelessMask> = (0..n)
            .map(|f| WirelessMask { frame_index: f + 100, height: 4, width: 4, probs: vec![0.5; 16] })
            .collect();
        let clips = build_forgery_dataset(&visual, &wireless, g, 0.5, min_offset, seed).unwrap();
        prop_assert_eq!(clips.len(), n + 1 - g);
        for c in &clips {
            let v: Vec<usize> = c.visual_masks.iter().map(|m| m.frame_index).collect();
            let w: Vec<usize> = c.wireless_masks.iter().map(|m| m.frame_index).collect();
            prop_assert_eq!(v.len(), g);
            for f in v.iter().chain(&w) {
                prop_assert!((100..100 + n).contains(f), "fabricated frame {f}");
            }
            if c.label {
                prop_assert!(v.iter().zip(&w).any(|(a, b)| a.abs_diff(*b) >= min_offset));
            } else {
                prop_assert_eq!(v, w);
            }
        }
    }

    #[test]
    fn confusion_ignores_order(pairs in prop::collection::vec(any::<(bool, bool)>(), 1..100), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let split = |p: &[(bool, bool)]| -> (Vec<bool>, Vec<bool>) { p.iter().copied().unzip() };
        let (p1, l1) = split(&pairs);
        let (p2, l2) = split(&shuffled);
        let a = confusion(&p1, &l1).unwrap();
        let b = confusion(&p2, &l2).unwrap();
        prop_assert_eq!(&a, &b);
        let total = (a.tp + a.fp + a.tn + a.fn_) as f64;
        prop_assert_eq!(a.acc.value().unwrap(), 1.0 - (a.fp + a.fn_) as f64 / total);
    }

    #[test]
    fn dice_is_bounded(p in prop::collection::vec(0.0f64..=1.0, 1..50), smooth in 0.01f64..5.0, seed in any::<u64>()) {
        let t: Vec<f64> = p.iter().enumerate().map(|(i, _)| ((seed >> (i % 64)) & 1) as f64).collect();
        let d = dice_loss(&p, &t, smooth).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(dice_loss(&t, &t, smooth).unwrap().abs() < 1e-12);
    }

    #[test]
    fn lr_steps_down_on_schedule(step in 1usize..10, decay in 1.0f64..20.0, epoch in 0usize..100) {
        let cfg = TrainConfig { lr_step_epochs: step, lr_decay: decay, ..TrainConfig::reported_default(ModuleKind::Forgery) };
        prop_assert!(lr_at(&cfg, epoch + 1) <= lr_at(&cfg, epoch));
        let block_start = epoch / step * step;
        prop_assert_eq!(lr_at(&cfg, epoch), lr_at(&cfg, block_start));
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use securemask::csi::{CsiDims, CsiWindow};
use securemask::models::{
    bce_with_logits, tile_to_working_size, untile, DetectorArch, DetectorNet, ForgeryArch, ForgeryNet,
    ModelShape, SegmentorArch, SegmentorNet,
};
use securemask::nn::{Feature, Init, Module};

fn small_shape() -> ModelShape {
    ModelShape {
        dims: CsiDims::new(6, 2, 2).unwrap(),
        m: 2,
        g: 2,
        height: 16,
        width: 16,
    }
}

fn random_window(shape: &ModelShape, rng: &mut ChaCha8Rng) -> CsiWindow {
    CsiWindow {
        frame_index: 0,
        dims: shape.dims,
        m: shape.m,
        amps_concat: (0..shape.m * shape.dims.len()).map(|_| rng.gen_range(0.0..2.0)).collect(),
        source_timestamps: vec![0; shape.m],
    }
}

/// Compares the accumulated gradient against a central difference of
/// `loss` along random directions through the whole parameter vector.
fn check_grads<N: Module>(net: &mut N, loss: impl Fn(&N) -> f64, rng: &mut ChaCha8Rng, what: &str) {
    let eps = 1e-3f32;
    let base = net.export_weights();
    let grad: Vec<f32> = net.params().iter().flat_map(|p| p.grad.iter().copied()).collect();
    for trial in 0..4 {
        let dir: Vec<f32> = (0..base.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let shifted = |s: f32| -> Vec<f32> { base.iter().zip(&dir).map(|(b, d)| b + s * d).collect() };
        net.import_weights(&shifted(eps)).unwrap();
        let lp = loss(net);
        net.import_weights(&shifted(-eps)).unwrap();
        let lm = loss(net);
        net.import_weights(&base).unwrap();
        let numeric = (lp - lm) / (2.0 * eps as f64);
        let analytic: f64 = grad.iter().zip(&dir).map(|(&g, &d)| g as f64 * d as f64).sum();
        let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
        // ReLU kinks crossed by the perturbation cost a few percent; wiring
        // mistakes show up as order-one errors.
        assert!(err < 5e-2, "{what} trial {trial}: analytic {analytic} numeric {numeric}");
    }
}

#[test]
fn detector_gradients_match_finite_differences() {
    let shape = small_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let arch = DetectorArch { conv1: 4, conv2: 5, hidden: 6, fc: 4 };
    let mut net = DetectorNet::new(arch, shape, &mut Init::seeded(2)).unwrap();
    let w = random_window(&shape, &mut rng);
    net.accumulate(&w, 1.0, 1.0).unwrap();
    check_grads(
        &mut net,
        |n| bce_with_logits(&[n.forward(&w).unwrap() as f64], &[1.0]).unwrap(),
        &mut rng,
        "detector",
    );
}

#[test]
fn segmentor_gradients_match_finite_differences() {
    let shape = small_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let arch = SegmentorArch { channels: [2, 3, 3, 4, 4] };
    let mut net = SegmentorNet::new(arch, shape, &mut Init::seeded(4)).unwrap();
    let w = random_window(&shape, &mut rng);
    let target: Vec<f32> = (0..256).map(|i| ((i / 16) > 8 && (i % 16) < 6) as u8 as f32).collect();
    net.accumulate(&w, &target, 1.0, 1.0, 1.0).unwrap();
    let t64: Vec<f64> = target.iter().map(|&v| v as f64).collect();
    check_grads(
        &mut net,
        |n| {
            let x = n.prepare(&w).unwrap();
            let z: Vec<f64> = n.logits(&x).unwrap().data.iter().map(|&v| v as f64).collect();
            securemask::models::segmentor_loss(&z, &t64, 1.0, 1.0).unwrap()
        },
        &mut rng,
        "segmentor",
    );
}

fn random_clip(shape: &ModelShape, rng: &mut ChaCha8Rng) -> Vec<Feature> {
    (0..shape.g)
        .map(|_| {
            let n = 2 * shape.height * shape.width;
            Feature::new(2, shape.height, shape.width, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
        })
        .collect()
}

#[test]
fn forgery_gradients_match_finite_differences() {
    let shape = small_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let arch = ForgeryArch { channels: [3, 4, 4, 5, 6], hidden: 5, fc: 4 };
    let mut net = ForgeryNet::new(arch, shape, &mut Init::seeded(6)).unwrap();
    let clip = random_clip(&shape, &mut rng);
    net.accumulate(&clip, 0.0, 1.0).unwrap();
    check_grads(
        &mut net,
        |n| bce_with_logits(&[n.forward(&clip).unwrap() as f64], &[0.0]).unwrap(),
        &mut rng,
        "forgery",
    );
}

#[test]
fn zero_weights_give_neutral_outputs() {
    let shape = ModelShape {
        dims: CsiDims::new(30, 3, 3).unwrap(),
        m: 5,
        g: 7,
        height: 96,
        width: 128,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = random_window(&shape, &mut rng);
    let det = DetectorNet::new(DetectorArch::default(), shape, &mut Init::Zeros).unwrap();
    assert_eq!(det.forward(&w).unwrap(), 0.0);
    let seg = SegmentorNet::new(SegmentorArch::default(), shape, &mut Init::Zeros).unwrap();
    let p = seg.predict(&w).unwrap();
    assert_eq!(p.len(), 96 * 128);
    assert!(p.iter().all(|&v| v == 0.5));
    let fg = ForgeryNet::new(ForgeryArch::default(), shape, &mut Init::Zeros).unwrap();
    assert_eq!(fg.forward(&random_clip(&shape, &mut rng)).unwrap(), 0.0);
}

#[test]
fn forwards_are_deterministic_and_batch_independent() {
    let shape = small_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let det = DetectorNet::new(DetectorArch::default(), shape, &mut Init::seeded(9)).unwrap();
    let w = random_window(&shape, &mut rng);
    assert_eq!(det.forward(&w).unwrap().to_bits(), det.forward(&w).unwrap().to_bits());

    let fg = ForgeryNet::new(ForgeryArch::default(), shape, &mut Init::seeded(10)).unwrap();
    let a = random_clip(&shape, &mut rng);
    let b = random_clip(&shape, &mut rng);
    let ab: Vec<f32> = [&a, &b].iter().map(|c| fg.forward(c).unwrap()).collect();
    let ba: Vec<f32> = [&b, &a].iter().map(|c| fg.forward(c).unwrap()).collect();
    assert_eq!(ab[0], ba[1]);
    assert_eq!(ab[1], ba[0]);
}

#[test]
fn shape_errors() {
    let shape = small_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let fg = ForgeryNet::new(ForgeryArch::default(), shape, &mut Init::seeded(1)).unwrap();
    let mut clip = random_clip(&shape, &mut rng);
    clip.pop();
    assert!(fg.forward(&clip).is_err());

    let det = DetectorNet::new(DetectorArch::default(), shape, &mut Init::seeded(1)).unwrap();
    let mut w = random_window(&shape, &mut rng);
    w.m = 1;
    w.amps_concat.truncate(shape.dims.len());
    assert!(det.forward(&w).is_err());

    let bad = ModelShape { height: 20, ..shape };
    assert!(SegmentorNet::new(SegmentorArch::default(), bad, &mut Init::Zeros).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let shape = small_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let w = random_window(&shape, &mut rng);
    let mut seg = SegmentorNet::new(SegmentorArch::default(), shape, &mut Init::seeded(3)).unwrap();
    seg.norm.mean[0] = 0.3;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.ckpt");
    seg.to_checkpoint(4, 99).save(&path).unwrap();
    let ck = securemask::models::Checkpoint::load(&path).unwrap();
    let back = SegmentorNet::from_checkpoint(&ck, shape, 99).unwrap();
    assert_eq!(seg.predict(&w).unwrap(), back.predict(&w).unwrap());
    assert!(SegmentorNet::from_checkpoint(&ck, shape, 100).is_err());
    assert!(SegmentorNet::from_checkpoint(&ck, ModelShape { m: 3, ..shape }, 99).is_err());
    assert!(DetectorNet::from_checkpoint(&ck, shape, 99).is_err());
}

#[test]
fn tiling_is_invertible_and_preserves_constants() {
    let x = Feature::new(2, 3, 3, (0..18).map(|v| v as f32).collect());
    let t = tile_to_working_size(&x, 48, 64);
    assert_eq!(t.c, 2);
    assert_eq!(untile(&t, 3, 3), x);
    let c = Feature::new(1, 3, 3, vec![4.0; 9]);
    assert!(tile_to_working_size(&c, 96, 128).data.iter().all(|&v| v == 4.0));
}


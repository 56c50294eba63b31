use criterion::{black_box, criterion_group, criterion_main, Criterion};
use securemask::csi::hampel_filter;
use securemask::mask::{binarize, refine};
use securemask::models::{DetectorArch, DetectorNet, ForgeryArch, ForgeryNet, SegmentorArch, SegmentorNet};
use securemask::nn::{Feature, Init};
use securemask_bench::{field, series, shape, window};

fn signal(c: &mut Criterion) {
    let x = series(2000);
    c.bench_function("hampel_2000_w7", |b| b.iter(|| hampel_filter(black_box(&x), 7, 3.0).unwrap()));
    let acc = field(6, 8);
    c.bench_function("binarize_refine_6x8", |b| b.iter(|| refine(&binarize(black_box(&acc), 0.5, 0.5), 0.02)));
}

fn networks(c: &mut Criterion) {
    let s = shape(5);
    let w = window(&s, 3);
    let det = DetectorNet::new(DetectorArch::default(), s, &mut Init::seeded(1)).unwrap();
    c.bench_function("detector_forward", |b| b.iter(|| det.forward(black_box(&w)).unwrap()));
    let seg = SegmentorNet::new(SegmentorArch::default(), s, &mut Init::seeded(2)).unwrap();
    c.bench_function("segmentor_predict", |b| b.iter(|| seg.predict(black_box(&w)).unwrap()));
    let fg = ForgeryNet::new(ForgeryArch::default(), s, &mut Init::seeded(3)).unwrap();
    let clip: Vec<Feature> = (0..s.g)
        .map(|i| Feature::new(2, s.height, s.width, (0..2 * s.height * s.width).map(|j| ((i + j) % 3) as f32 * 0.5).collect()))
        .collect();
    c.bench_function("forgery_forward_g5", |b| b.iter(|| fg.forward(black_box(&clip)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = signal, networks
}
criterion_main!(benches);

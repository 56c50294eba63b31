//! Deterministic inputs shared by the benchmarks.

use securemask::csi::{CsiDims, CsiWindow};
use securemask::mask::{AccumulatedField, VecField};
use securemask::models::ModelShape;

/// The benchmark geometry: 48x64 frames, 30 subcarriers, 3x3 antennas.
pub fn shape(g: usize) -> ModelShape {
    ModelShape {
        dims: CsiDims::new(30, 3, 3).unwrap(),
        m: 5,
        g,
        height: 48,
        width: 64,
    }
}

pub fn window(shape: &ModelShape, f: usize) -> CsiWindow {
    CsiWindow {
        frame_index: f,
        dims: shape.dims,
        m: shape.m,
        amps_concat: (0..shape.m * shape.dims.len()).map(|i| 1.0 + ((i * 7 + f) % 13) as f32 * 0.05).collect(),
        source_timestamps: (0..shape.m as u64).map(|j| f as u64 * 1000 + j).collect(),
    }
}

/// A noisy series with a spike every 37 samples.
pub fn series(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let base = (i as f64 * 0.1).sin() + ((i * 2654435761) % 1000) as f64 * 1e-4;
            if i % 37 == 0 { base + 8.0 } else { base }
        })
        .collect()
}

/// A block-level field with one moving blob.
pub fn field(h: usize, w: usize) -> AccumulatedField {
    let mut f = VecField::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let d = ((r as f64 - h as f64 / 2.0).powi(2) + (c as f64 - w as f64 / 3.0).powi(2)).sqrt();
            let v = (2.0 - d / 2.0).max(0.0);
            f.data[r * w + c] = [v, 0.3 * v];
        }
    }
    AccumulatedField::from_raw(f)
}

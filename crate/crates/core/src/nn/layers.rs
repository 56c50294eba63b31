use super::{gemm, Feature, Init, Module, Param};

pub fn relu_in_place(x: &mut [f32]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `dy` by the positivity of the ReLU *output* `y`.
pub fn relu_backward(y: &[f32], dy: &mut [f32]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub inp: usize,
    pub out: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(inp: usize, out: usize, init: &mut Init) -> Self {
        let bound = 1.0 / (inp as f32).sqrt();
        Self {
            inp,
            out,
            weight: Param::uniform(out * inp, bound, init),
            bias: Param::uniform(out, bound, init),
        }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.inp);
        let mut y = self.bias.value.clone();
        gemm(self.out, self.inp, 1, &self.weight.value, false, x, false, &mut y, true);
        y
    }

    pub fn backward(&mut self, x: &[f32], dy: &[f32], need_dx: bool) -> Option<Vec<f32>> {
        for (r, &g) in dy.iter().enumerate() {
            self.bias.grad[r] += g;
            if g != 0.0 {
                let row = &mut self.weight.grad[r * self.inp..(r + 1) * self.inp];
                for (w, &xi) in row.iter_mut().zip(x) {
                    *w += g * xi;
                }
            }
        }
        need_dx.then(|| {
            let mut dx = vec![0.0; self.inp];
            gemm(1, self.out, self.inp, dy, false, &self.weight.value, false, &mut dx, false);
            dx
        })
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// 2-D convolution over a `(c, h, w)` map via im2col + GEMM.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub weight: Param,
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    cols: Vec<f32>,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Conv2d {
    pub fn new(
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        init: &mut Init,
    ) -> Self {
        let fan_in = cin * kernel.0 * kernel.1;
        let bound = (6.0 / fan_in as f32).sqrt();
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            weight: Param::uniform(cout * fan_in, bound, init),
            bias: Param::zeros(cout),
        }
    }

    /// Square kernel with "same"-style padding `k / 2`.
    pub fn square(cin: usize, cout: usize, k: usize, stride: usize, init: &mut Init) -> Self {
        Self::new(cin, cout, (k, k), (stride, stride), (k / 2, k / 2), init)
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad.0 - self.kernel.0) / self.stride.0 + 1,
            (w + 2 * self.pad.1 - self.kernel.1) / self.stride.1 + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.pad == (0, 0)
    }

    fn im2col(&self, x: &Feature, oh: usize, ow: usize) -> Vec<f32> {
        if self.is_pointwise() {
            return x.data.clone();
        }
        let (kh, kw) = self.kernel;
        let p = oh * ow;
        let mut cols = vec![0.0f32; self.cin * kh * kw * p];
        for ci in 0..self.cin {
            let plane = &x.data[ci * x.h * x.w..(ci + 1) * x.h * x.w];
            for a in 0..kh {
                for b in 0..kw {
                    let row = &mut cols[((ci * kh + a) * kw + b) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride.0 + a) as isize - self.pad.0 as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..][..x.w];
                        let dst = &mut row[oy * ow..][..ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride.1 + b) as isize - self.pad.1 as isize;
                            if ix >= 0 && ix < x.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[f32], cache: &ConvCache) -> Feature {
        if self.is_pointwise() {
            return Feature::new(self.cin, cache.in_h, cache.in_w, dcols.to_vec());
        }
        let (kh, kw) = self.kernel;
        let (oh, ow) = (cache.out_h, cache.out_w);
        let p = oh * ow;
        let mut dx = Feature::zeros(self.cin, cache.in_h, cache.in_w);
        let (ih, iw) = (cache.in_h, cache.in_w);
        for ci in 0..self.cin {
            let plane = &mut dx.data[ci * ih * iw..(ci + 1) * ih * iw];
            for a in 0..kh {
                for b in 0..kw {
                    let row = &dcols[((ci * kh + a) * kw + b) * p..][..p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride.0 + a) as isize - self.pad.0 as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * iw..][..iw];
                        for ox in 0..ow {
                            let ix = (ox * self.stride.1 + b) as isize - self.pad.1 as isize;
                            if ix >= 0 && ix < iw as isize {
                                dst[ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &Feature) -> (Feature, ConvCache) {
        assert_eq!(x.c, self.cin, "conv input channels");
        let (oh, ow) = self.out_size(x.h, x.w);
        let p = oh * ow;
        let cols = self.im2col(x, oh, ow);
        let mut y = Feature::zeros(self.cout, oh, ow);
        for (co, row) in y.data.chunks_exact_mut(p).enumerate() {
            row.iter_mut().for_each(|v| *v = self.bias.value[co]);
        }
        let ckk = self.cin * self.kernel.0 * self.kernel.1;
        gemm(self.cout, ckk, p, &self.weight.value, false, &cols, false, &mut y.data, true);
        let cache = ConvCache {
            cols,
            in_h: x.h,
            in_w: x.w,
            out_h: oh,
            out_w: ow,
        };
        (y, cache)
    }

    pub fn backward(&mut self, cache: &ConvCache, dy: &Feature, need_dx: bool) -> Option<Feature> {
        let p = cache.out_h * cache.out_w;
        let ckk = self.cin * self.kernel.0 * self.kernel.1;
        for (co, row) in dy.data.chunks_exact(p).enumerate() {
            self.bias.grad[co] += row.iter().sum::<f32>();
        }
        gemm(self.cout, p, ckk, &dy.data, false, &cache.cols, true, &mut self.weight.grad, true);
        need_dx.then(|| {
            let mut dcols = vec![0.0f32; ckk * p];
            gemm(ckk, self.cout, p, &self.weight.value, true, &dy.data, false, &mut dcols, false);
            self.col2im(&dcols, cache)
        })
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Transposed convolution with a 2x2 kernel and stride 2: exact 2x
/// upsampling with no overlapping taps.
#[derive(Debug, Clone)]
pub struct ConvTranspose2x2 {
    pub cin: usize,
    pub cout: usize,
    /// `cin x (cout * 4)`, taps ordered `(co, dy, dx)`.
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose2x2 {
    pub fn new(cin: usize, cout: usize, init: &mut Init) -> Self {
        let bound = (6.0 / cin as f32).sqrt();
        Self {
            cin,
            cout,
            weight: Param::uniform(cin * cout * 4, bound, init),
            bias: Param::zeros(cout),
        }
    }

    pub fn forward(&self, x: &Feature) -> Feature {
        assert_eq!(x.c, self.cin, "transposed conv input channels");
        let hw = x.plane();
        let mut z = vec![0.0f32; self.cout * 4 * hw];
        gemm(self.cout * 4, self.cin, hw, &self.weight.value, true, &x.data, false, &mut z, false);
        let (oh, ow) = (2 * x.h, 2 * x.w);
        let mut y = Feature::zeros(self.cout, oh, ow);
        for co in 0..self.cout {
            let bias = self.bias.value[co];
            for tap in 0..4 {
                let (a, b) = (tap / 2, tap % 2);
                let src = &z[(co * 4 + tap) * hw..][..hw];
                for i in 0..x.h {
                    for j in 0..x.w {
                        y.data[(co * oh + 2 * i + a) * ow + 2 * j + b] = src[i * x.w + j] + bias;
                    }
                }
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Feature, dy: &Feature, need_dx: bool) -> Option<Feature> {
        let hw = x.plane();
        let (oh, ow) = (dy.h, dy.w);
        let mut dz = vec![0.0f32; self.cout * 4 * hw];
        for co in 0..self.cout {
            let plane = &dy.data[co * oh * ow..][..oh * ow];
            self.bias.grad[co] += plane.iter().sum::<f32>();
            for tap in 0..4 {
                let (a, b) = (tap / 2, tap % 2);
                let dst = &mut dz[(co * 4 + tap) * hw..][..hw];
                for i in 0..x.h {
                    for j in 0..x.w {
                        dst[i * x.w + j] = plane[(2 * i + a) * ow + 2 * j + b];
                    }
                }
            }
        }
        gemm(self.cin, hw, self.cout * 4, &x.data, false, &dz, true, &mut self.weight.grad, true);
        need_dx.then(|| {
            let mut dx = Feature::zeros(self.cin, x.h, x.w);
            gemm(self.cin, self.cout * 4, hw, &self.weight.value, false, &dz, false, &mut dx.data, false);
            dx
        })
    }
}

impl Module for ConvTranspose2x2 {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

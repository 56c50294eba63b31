use super::{gemm, sigmoid, Init, Module, Param};

/// Single-layer LSTM with gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    /// `4H x I`
    pub w_ih: Param,
    /// `4H x H`
    pub w_hh: Param,
    pub bias: Param,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct LstmTape {
    steps: usize,
    xs: Vec<f32>,
    /// `h_{t-1}` per step, `T x H`.
    h_prev: Vec<f32>,
    c_prev: Vec<f32>,
    /// Activated gates per step, `T x 4H`.
    gates: Vec<f32>,
    c: Vec<f32>,
    /// Hidden states `h_t`, `T x H`.
    pub hs: Vec<f32>,
}

impl LstmTape {
    pub fn last_hidden(&self, hidden: usize) -> &[f32] {
        &self.hs[(self.steps - 1) * hidden..]
    }
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, init: &mut Init) -> Self {
        let bound = 1.0 / (hidden as f32).sqrt();
        Self {
            input,
            hidden,
            w_ih: Param::uniform(4 * hidden * input, bound, init),
            w_hh: Param::uniform(4 * hidden * hidden, bound, init),
            bias: Param::uniform(4 * hidden, bound, init),
        }
    }

    /// Runs the sequence `xs` (`T x I`, row-major) from a zero state.
    pub fn forward(&self, xs: &[f32]) -> LstmTape {
        let (i_n, h_n) = (self.input, self.hidden);
        assert!(!xs.is_empty() && xs.len() % i_n == 0, "LSTM input length");
        let steps = xs.len() / i_n;
        let mut zx = vec![0.0f32; steps * 4 * h_n];
        gemm(steps, i_n, 4 * h_n, xs, false, &self.w_ih.value, true, &mut zx, false);
        let mut tape = LstmTape {
            steps,
            xs: xs.to_vec(),
            h_prev: vec![0.0; steps * h_n],
            c_prev: vec![0.0; steps * h_n],
            gates: vec![0.0; steps * 4 * h_n],
            c: vec![0.0; steps * h_n],
            hs: vec![0.0; steps * h_n],
        };
        let mut h = vec![0.0f32; h_n];
        let mut c = vec![0.0f32; h_n];
        for t in 0..steps {
            tape.h_prev[t * h_n..(t + 1) * h_n].copy_from_slice(&h);
            tape.c_prev[t * h_n..(t + 1) * h_n].copy_from_slice(&c);
            let z = &mut zx[t * 4 * h_n..(t + 1) * 4 * h_n];
            for (zv, b) in z.iter_mut().zip(&self.bias.value) {
                *zv += b;
            }
            gemm(1, h_n, 4 * h_n, &h, false, &self.w_hh.value, true, z, true);
            let gates = &mut tape.gates[t * 4 * h_n..(t + 1) * 4 * h_n];
            for j in 0..h_n {
                let ig = sigmoid(z[j]);
                let fg = sigmoid(z[h_n + j]);
                let gg = z[2 * h_n + j].tanh();
                let og = sigmoid(z[3 * h_n + j]);
                gates[j] = ig;
                gates[h_n + j] = fg;
                gates[2 * h_n + j] = gg;
                gates[3 * h_n + j] = og;
                c[j] = fg * c[j] + ig * gg;
                h[j] = og * c[j].tanh();
            }
            tape.c[t * h_n..(t + 1) * h_n].copy_from_slice(&c);
            tape.hs[t * h_n..(t + 1) * h_n].copy_from_slice(&h);
        }
        tape
    }

    /// Backpropagates per-step hidden-state gradients `dhs` (`T x H`).
    pub fn backward(&mut self, tape: &LstmTape, dhs: &[f32], need_dx: bool) -> Option<Vec<f32>> {
        let (i_n, h_n, steps) = (self.input, self.hidden, tape.steps);
        let mut dz_all = vec![0.0f32; steps * 4 * h_n];
        let mut dh_next = vec![0.0f32; h_n];
        let mut dc_next = vec![0.0f32; h_n];
        for t in (0..steps).rev() {
            let gates = &tape.gates[t * 4 * h_n..(t + 1) * 4 * h_n];
            let c = &tape.c[t * h_n..(t + 1) * h_n];
            let c_prev = &tape.c_prev[t * h_n..(t + 1) * h_n];
            let dz = &mut dz_all[t * 4 * h_n..(t + 1) * 4 * h_n];
            for j in 0..h_n {
                let dh = dhs[t * h_n + j] + dh_next[j];
                let (ig, fg, gg, og) = (gates[j], gates[h_n + j], gates[2 * h_n + j], gates[3 * h_n + j]);
                let tc = c[j].tanh();
                let d_o = dh * tc;
                let dc = dh * og * (1.0 - tc * tc) + dc_next[j];
                dz[j] = dc * gg * ig * (1.0 - ig);
                dz[h_n + j] = dc * c_prev[j] * fg * (1.0 - fg);
                dz[2 * h_n + j] = dc * ig * (1.0 - gg * gg);
                dz[3 * h_n + j] = d_o * og * (1.0 - og);
                dc_next[j] = dc * fg;
            }
            gemm(1, 4 * h_n, h_n, dz, false, &self.w_hh.value, false, &mut dh_next, false);
        }
        for dz in dz_all.chunks_exact(4 * h_n) {
            for (b, g) in self.bias.grad.iter_mut().zip(dz) {
                *b += g;
            }
        }
        gemm(4 * h_n, steps, i_n, &dz_all, true, &tape.xs, false, &mut self.w_ih.grad, true);
        gemm(4 * h_n, steps, h_n, &dz_all, true, &tape.h_prev, false, &mut self.w_hh.grad, true);
        need_dx.then(|| {
            let mut dx = vec![0.0f32; steps * i_n];
            gemm(steps, 4 * h_n, i_n, &dz_all, false, &self.w_ih.value, false, &mut dx, false);
            dx
        })
    }
}

impl Module for Lstm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_ih, &self.w_hh, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{assert_close, numeric_grad};
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn bptt_matches_finite_differences() {
        let mut init = Init::seeded(11);
        let mut lstm = Lstm::new(3, 4, &mut init);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut xs: Vec<f32> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r: Vec<f32> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |l: &Lstm, x: &[f32]| -> f64 {
            let tape = l.forward(x);
            tape.hs.iter().zip(&r).map(|(h, w)| (*h as f64) * (*w as f64)).sum()
        };
        let tape = lstm.forward(&xs);
        let dx = lstm.backward(&tape, &r, true).unwrap();
        for i in [0, 4, 9, 14] {
            let num = numeric_grad(&mut xs, i, 1e-2, |x| loss(&lstm, x));
            assert_close(dx[i] as f64, num, 1e-2, "lstm dx");
        }
        let grads = lstm.w_hh.grad.clone();
        for i in [0, 17, 40, 63] {
            let mut w = lstm.w_hh.value.clone();
            let num = numeric_grad(&mut w, i, 1e-2, |wv| {
                let mut l = lstm.clone();
                l.w_hh.value = wv.to_vec();
                loss(&l, &xs)
            });
            assert_close(grads[i] as f64, num, 1e-2, "lstm dw_hh");
        }
        let grads = lstm.bias.grad.clone();
        for i in [1, 6, 11] {
            let mut b = lstm.bias.value.clone();
            let num = numeric_grad(&mut b, i, 1e-2, |bv| {
                let mut l = lstm.clone();
                l.bias.value = bv.to_vec();
                loss(&l, &xs)
            });
            assert_close(grads[i] as f64, num, 1e-2, "lstm db");
        }
    }

    #[test]
    fn zero_lstm_outputs_zero() {
        let lstm = Lstm::new(5, 3, &mut Init::Zeros);
        let tape = lstm.forward(&[1.0; 10]);
        assert!(tape.hs.iter().all(|&h| h == 0.0));
    }
}

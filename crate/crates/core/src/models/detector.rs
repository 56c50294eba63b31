use serde::{Deserialize, Serialize};

use super::{bce_logit_grad, check_target, Checkpoint, Head, ModelShape, ModuleKind, Standardizer};
use crate::csi::CsiWindow;
use crate::error::{Error, Result};
use crate::nn::{relu_backward, relu_in_place, Conv2d, ConvCache, Feature, Init, Lstm, LstmTape, Module, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorArch {
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub fc: usize,
}

impl Default for DetectorArch {
    fn default() -> Self {
        Self {
            conv1: 64,
            conv2: 128,
            hidden: 128,
            fc: 64,
        }
    }
}

/// Per-step 1-D convolutions over the subcarrier axis (antenna pairs as
/// channels), an LSTM over the m stacked measurements, and a two-layer head.
#[derive(Debug, Clone)]
pub struct DetectorNet {
    pub arch: DetectorArch,
    pub shape: ModelShape,
    pub norm: Standardizer,
    conv1: Conv2d,
    conv2: Conv2d,
    lstm: Lstm,
    head: Head,
}

struct StepTape {
    c1: ConvCache,
    y1: Feature,
    c2: ConvCache,
    y2: Feature,
}

struct Tape {
    steps: Vec<StepTape>,
    lstm: LstmTape,
    last: Vec<f32>,
    h: Vec<f32>,
    logit: f32,
}

fn conv1d(cin: usize, cout: usize, init: &mut Init) -> Conv2d {
    Conv2d::new(cin, cout, (1, 3), (1, 2), (0, 1), init)
}

impl DetectorNet {
    pub fn new(arch: DetectorArch, shape: ModelShape, init: &mut Init) -> Result<Self> {
        shape.validate()?;
        let p = shape.dims.pairs();
        let conv1 = conv1d(p, arch.conv1, init);
        let conv2 = conv1d(arch.conv1, arch.conv2, init);
        let (_, w1) = conv1.out_size(1, shape.dims.k);
        let (_, w2) = conv2.out_size(1, w1);
        let lstm = Lstm::new(arch.conv2 * w2, arch.hidden, init);
        let head = Head::new(arch.hidden, arch.fc, init);
        Ok(Self {
            arch,
            shape,
            norm: Standardizer::identity(shape.dims.len()),
            conv1,
            conv2,
            lstm,
            head,
        })
    }

    /// Measurement `j` as a `pairs x 1 x K` feature.
    fn step_input(&self, w: &CsiWindow, j: usize) -> Feature {
        let dims = self.shape.dims;
        let (k, p) = (dims.k, dims.pairs());
        let meas = w.measurement(j);
        let mut x = Feature::zeros(p, 1, k);
        for kk in 0..k {
            for pp in 0..p {
                let i = kk * p + pp;
                x.data[pp * k + kk] = self.norm.apply(i, meas[i]);
            }
        }
        x
    }

    fn run(&self, w: &CsiWindow) -> Result<Tape> {
        self.shape.check_window(w)?;
        let mut steps = Vec::with_capacity(w.m);
        let mut xs = Vec::new();
        for j in 0..w.m {
            let x = self.step_input(w, j);
            let (mut y1, c1) = self.conv1.forward(&x);
            relu_in_place(&mut y1.data);
            let (mut y2, c2) = self.conv2.forward(&y1);
            relu_in_place(&mut y2.data);
            xs.extend_from_slice(&y2.data);
            steps.push(StepTape { c1, y1, c2, y2 });
        }
        let lstm = self.lstm.forward(&xs);
        let last = lstm.last_hidden(self.arch.hidden).to_vec();
        let (h, logit) = self.head.forward(&last);
        Ok(Tape {
            steps,
            lstm,
            last,
            h,
            logit,
        })
    }

    pub fn forward(&self, w: &CsiWindow) -> Result<f32> {
        let z = self.run(w)?.logit;
        if !z.is_finite() {
            return Err(Error::Diverged(format!("detector logit {z} on frame {}", w.frame_index)));
        }
        Ok(z)
    }

    /// Forward plus backward for one sample of a batch; gradients are
    /// accumulated with weight `scale` (usually 1/batch). Returns the logit
    /// and this sample's BCE.
    pub fn accumulate(&mut self, w: &CsiWindow, target: f32, scale: f32) -> Result<(f32, f64)> {
        check_target(target)?;
        let tape = self.run(w)?;
        let (loss, dz) = bce_logit_grad(tape.logit, target, scale);
        let dlast = self.head.backward(&tape.last, &tape.h, dz);
        let hidden = self.arch.hidden;
        let mut dhs = vec![0.0; w.m * hidden];
        dhs[(w.m - 1) * hidden..].copy_from_slice(&dlast);
        let dxs = self.lstm.backward(&tape.lstm, &dhs, true).expect("dx requested");
        let step_len = dxs.len() / w.m;
        for (j, st) in tape.steps.iter().enumerate() {
            let mut dy2 = Feature::new(st.y2.c, st.y2.h, st.y2.w, dxs[j * step_len..(j + 1) * step_len].to_vec());
            relu_backward(&st.y2.data, &mut dy2.data);
            let mut dy1 = self.conv2.backward(&st.c2, &dy2, true).expect("dx requested");
            relu_backward(&st.y1.data, &mut dy1.data);
            self.conv1.backward(&st.c1, &dy1, false);
        }
        Ok((tape.logit, loss))
    }

    pub fn to_checkpoint(&self, epoch: usize, seed: u64) -> Checkpoint {
        Checkpoint {
            fingerprint: self.shape.fingerprint(ModuleKind::Detector, epoch, seed),
            arch: serde_json::to_value(self.arch).expect("arch serialises"),
            weights: self.export_weights(),
            aux: self.norm.to_flat(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, shape: ModelShape, seed: u64) -> Result<Self> {
        ck.fingerprint
            .check_compatible(&shape.fingerprint(ModuleKind::Detector, 0, seed))?;
        let arch: DetectorArch = serde_json::from_value(ck.arch.clone())
            .map_err(|e| Error::Checkpoint(format!("detector architecture: {e}")))?;
        let mut net = Self::new(arch, shape, &mut Init::Zeros)?;
        net.import_weights(&ck.weights).map_err(Error::Checkpoint)?;
        net.norm = Standardizer::from_flat(&ck.aux, shape.dims.len())?;
        Ok(net)
    }
}

impl Module for DetectorNet {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![
            &self.conv1.weight,
            &self.conv1.bias,
            &self.conv2.weight,
            &self.conv2.bias,
            &self.lstm.w_ih,
            &self.lstm.w_hh,
            &self.lstm.bias,
        ];
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.lstm.w_ih,
            &mut self.lstm.w_hh,
            &mut self.lstm.bias,
        ];
        v.extend(self.head.params_mut());
        v
    }
}

use serde::{Deserialize, Serialize};

use super::{bce_logit_grad, check_target, Checkpoint, Head, ModelShape, ModuleKind};
use crate::error::{Error, Result};
use crate::nn::{relu_backward, relu_in_place, Conv2d, ConvCache, Feature, Init, Lstm, LstmTape, Module, Param};

const BLOCKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForgeryArch {
    /// Stem width followed by the output width of each residual block; the
    /// last entry is the pooled feature size.
    pub channels: [usize; BLOCKS + 1],
    pub hidden: usize,
    pub fc: usize,
}

impl Default for ForgeryArch {
    fn default() -> Self {
        Self {
            channels: [8, 16, 32, 64, 128],
            hidden: 128,
            fc: 64,
        }
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    a: Conv2d,
    b: Conv2d,
    shortcut: Conv2d,
}

struct BlockTape {
    ca: ConvCache,
    ya: Feature,
    cb: ConvCache,
    cs: ConvCache,
    out: Feature,
}

struct StepTape {
    c_stem: ConvCache,
    y_stem: Feature,
    blocks: Vec<BlockTape>,
}

struct Tape {
    steps: Vec<StepTape>,
    lstm: LstmTape,
    last: Vec<f32>,
    h: Vec<f32>,
    logit: f32,
}

/// Residual per-step encoder over (visual, wireless) mask pairs, pooled and
/// fed through an LSTM over the clip.
#[derive(Debug, Clone)]
pub struct ForgeryNet {
    pub arch: ForgeryArch,
    pub shape: ModelShape,
    stem: Conv2d,
    blocks: Vec<ResBlock>,
    lstm: Lstm,
    head: Head,
}

impl ForgeryNet {
    pub fn new(arch: ForgeryArch, shape: ModelShape, init: &mut Init) -> Result<Self> {
        shape.validate()?;
        let ch = arch.channels;
        if ch.iter().any(|&c| c == 0) || arch.hidden == 0 || arch.fc == 0 {
            return Err(Error::Config("forgery network widths must be positive".into()));
        }
        let stem = Conv2d::square(2, ch[0], 3, 2, init);
        let blocks = (0..BLOCKS)
            .map(|i| ResBlock {
                a: Conv2d::square(ch[i], ch[i + 1], 3, 2, init),
                b: Conv2d::square(ch[i + 1], ch[i + 1], 3, 1, init),
                shortcut: Conv2d::new(ch[i], ch[i + 1], (1, 1), (2, 2), (0, 0), init),
            })
            .collect();
        let lstm = Lstm::new(ch[BLOCKS], arch.hidden, init);
        let head = Head::new(arch.hidden, arch.fc, init);
        Ok(Self {
            arch,
            shape,
            stem,
            blocks,
            lstm,
            head,
        })
    }

    fn encode(&self, x: &Feature) -> (StepTape, Vec<f32>) {
        let (mut y_stem, c_stem) = self.stem.forward(x);
        relu_in_place(&mut y_stem.data);
        let mut blocks = Vec::with_capacity(BLOCKS);
        for blk in &self.blocks {
            let input = blocks.last().map(|b: &BlockTape| &b.out).unwrap_or(&y_stem);
            let (mut ya, ca) = blk.a.forward(input);
            relu_in_place(&mut ya.data);
            let (mut out, cb) = blk.b.forward(&ya);
            let (s, cs) = blk.shortcut.forward(input);
            out.add_assign(&s);
            relu_in_place(&mut out.data);
            blocks.push(BlockTape { ca, ya, cb, cs, out });
        }
        let last = &blocks.last().unwrap().out;
        let plane = last.plane() as f32;
        let pooled = last
            .data
            .chunks(last.plane())
            .map(|c| c.iter().sum::<f32>() / plane)
            .collect();
        (StepTape { c_stem, y_stem, blocks }, pooled)
    }

    fn run(&self, clip: &[Feature]) -> Result<Tape> {
        if clip.len() != self.shape.g {
            return Err(Error::Dimension(format!(
                "clip has {} steps, network expects g={}",
                clip.len(),
                self.shape.g
            )));
        }
        let mut steps = Vec::with_capacity(clip.len());
        let mut xs = Vec::new();
        for x in clip {
            if (x.c, x.h, x.w) != (2, self.shape.height, self.shape.width) {
                return Err(Error::Dimension(format!(
                    "clip step is {}x{}x{}, expected 2x{}x{}",
                    x.c, x.h, x.w, self.shape.height, self.shape.width
                )));
            }
            let (st, pooled) = self.encode(x);
            xs.extend(pooled);
            steps.push(st);
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

    /// One logit per clip of `g` two-channel maps (visual, wireless).
    pub fn forward(&self, clip: &[Feature]) -> Result<f32> {
        let z = self.run(clip)?.logit;
        if !z.is_finite() {
            return Err(Error::Diverged(format!("forgery logit {z}")));
        }
        Ok(z)
    }

    pub fn accumulate(&mut self, clip: &[Feature], target: f32, scale: f32) -> Result<(f32, f64)> {
        check_target(target)?;
        let tape = self.run(clip)?;
        let (loss, dz) = bce_logit_grad(tape.logit, target, scale);
        let dlast = self.head.backward(&tape.last, &tape.h, dz);
        let (g, hidden) = (clip.len(), self.arch.hidden);
        let mut dhs = vec![0.0; g * hidden];
        dhs[(g - 1) * hidden..].copy_from_slice(&dlast);
        let dxs = self.lstm.backward(&tape.lstm, &dhs, true).expect("dx requested");
        let feat = self.arch.channels[BLOCKS];
        for (t, st) in tape.steps.iter().enumerate() {
            let dpool = &dxs[t * feat..(t + 1) * feat];
            let out = &st.blocks.last().unwrap().out;
            let plane = out.plane();
            let mut dout = Feature::zeros(out.c, out.h, out.w);
            for (c, chunk) in dout.data.chunks_mut(plane).enumerate() {
                chunk.fill(dpool[c] / plane as f32);
            }
            for (i, blk) in self.blocks.iter_mut().enumerate().rev() {
                let bt = &st.blocks[i];
                relu_backward(&bt.out.data, &mut dout.data);
                let mut dya = blk.b.backward(&bt.cb, &dout, true).unwrap();
                relu_backward(&bt.ya.data, &mut dya.data);
                let mut din = blk.a.backward(&bt.ca, &dya, true).unwrap();
                let ds = blk.shortcut.backward(&bt.cs, &dout, true).unwrap();
                din.add_assign(&ds);
                dout = din;
            }
            relu_backward(&st.y_stem.data, &mut dout.data);
            self.stem.backward(&st.c_stem, &dout, false);
        }
        Ok((tape.logit, loss))
    }

    pub fn to_checkpoint(&self, epoch: usize, seed: u64) -> Checkpoint {
        Checkpoint {
            fingerprint: self.shape.fingerprint(ModuleKind::Forgery, epoch, seed),
            arch: serde_json::to_value(self.arch).expect("arch serialises"),
            weights: self.export_weights(),
            aux: Vec::new(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, shape: ModelShape, seed: u64) -> Result<Self> {
        ck.fingerprint
            .check_compatible(&shape.fingerprint(ModuleKind::Forgery, 0, seed))?;
        let arch: ForgeryArch = serde_json::from_value(ck.arch.clone())
            .map_err(|e| Error::Checkpoint(format!("forgery architecture: {e}")))?;
        let mut net = Self::new(arch, shape, &mut Init::Zeros)?;
        net.import_weights(&ck.weights).map_err(Error::Checkpoint)?;
        Ok(net)
    }
}

impl Module for ForgeryNet {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.stem.weight, &self.stem.bias];
        for b in &self.blocks {
            v.extend([&b.a.weight, &b.a.bias, &b.b.weight, &b.b.bias, &b.shortcut.weight, &b.shortcut.bias]);
        }
        v.extend([&self.lstm.w_ih, &self.lstm.w_hh, &self.lstm.bias]);
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.stem.weight, &mut self.stem.bias];
        for b in &mut self.blocks {
            v.extend([
                &mut b.a.weight,
                &mut b.a.bias,
                &mut b.b.weight,
                &mut b.b.bias,
                &mut b.shortcut.weight,
                &mut b.shortcut.bias,
            ]);
        }
        v.extend([&mut self.lstm.w_ih, &mut self.lstm.w_hh, &mut self.lstm.bias]);
        v.extend(self.head.params_mut());
        v
    }
}

use serde::{Deserialize, Serialize};

use super::{loss, tile_to_working_size, window_tensor, Checkpoint, ModelShape, ModuleKind, Standardizer};
use crate::csi::CsiWindow;
use crate::error::{Error, Result};
use crate::nn::{
    relu_backward, relu_in_place, sigmoid, Conv2d, ConvCache, ConvTranspose2x2, Feature, Init, Module, Param,
};

const LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentorArch {
    /// Channel width at full resolution and after each of the four
    /// downsampling stages.
    pub channels: [usize; LEVELS + 1],
}

impl Default for SegmentorArch {
    fn default() -> Self {
        Self {
            channels: [8, 16, 24, 32, 48],
        }
    }
}

#[derive(Debug, Clone)]
struct Down {
    down: Conv2d,
    refine: Conv2d,
}

#[derive(Debug, Clone)]
struct Up {
    up: ConvTranspose2x2,
    fuse: Conv2d,
}

/// U-shaped encoder/decoder over the tiled CSI window.
#[derive(Debug, Clone)]
pub struct SegmentorNet {
    pub arch: SegmentorArch,
    pub shape: ModelShape,
    pub norm: Standardizer,
    stem_in: Conv2d,
    stem: Conv2d,
    downs: Vec<Down>,
    /// `ups[i]` maps level `i + 1` back to level `i`.
    ups: Vec<Up>,
    head: Conv2d,
}

struct DownTape {
    c_down: ConvCache,
    y_down: Feature,
    c_refine: ConvCache,
}

struct UpTape {
    y_up: Feature,
    c_fuse: ConvCache,
}

struct Tape {
    c_stem_in: ConvCache,
    y_stem_in: Feature,
    c_stem: ConvCache,
    /// Encoder outputs per level, after ReLU.
    enc: Vec<Feature>,
    downs: Vec<DownTape>,
    /// Decoder outputs per level (index 0 is full resolution).
    dec: Vec<Feature>,
    ups: Vec<UpTape>,
    c_head: ConvCache,
    logits: Feature,
}

fn relu(mut f: Feature) -> Feature {
    relu_in_place(&mut f.data);
    f
}

impl SegmentorNet {
    pub fn new(arch: SegmentorArch, shape: ModelShape, init: &mut Init) -> Result<Self> {
        shape.validate()?;
        let ch = arch.channels;
        if ch.iter().any(|&c| c == 0) {
            return Err(Error::Config("segmentor channel widths must be positive".into()));
        }
        let cin = shape.m * shape.dims.k;
        let stem_in = Conv2d::square(cin, ch[0], 1, 1, init);
        let stem = Conv2d::square(ch[0], ch[0], 3, 1, init);
        let downs = (0..LEVELS)
            .map(|i| Down {
                down: Conv2d::square(ch[i], ch[i + 1], 3, 2, init),
                refine: Conv2d::square(ch[i + 1], ch[i + 1], 3, 1, init),
            })
            .collect();
        let ups = (0..LEVELS)
            .map(|i| Up {
                up: ConvTranspose2x2::new(ch[i + 1], ch[i], init),
                fuse: Conv2d::square(2 * ch[i], ch[i], 3, 1, init),
            })
            .collect();
        let head = Conv2d::square(ch[0], 1, 1, 1, init);
        Ok(Self {
            arch,
            shape,
            norm: Standardizer::identity(shape.dims.len()),
            stem_in,
            stem,
            downs,
            ups,
            head,
        })
    }

    /// Standardised, tiled network input for a window.
    pub fn prepare(&self, w: &CsiWindow) -> Result<Feature> {
        self.shape.check_window(w)?;
        Ok(tile_to_working_size(
            &window_tensor(w, &self.norm),
            self.shape.height,
            self.shape.width,
        ))
    }

    fn run(&self, x: &Feature) -> Result<Tape> {
        let (h, w) = (self.shape.height, self.shape.width);
        if x.h % 16 != 0 || x.w % 16 != 0 {
            return Err(Error::Config(format!("input {}x{} is not a multiple of 16", x.h, x.w)));
        }
        if x.c != self.stem_in.cin || (x.h, x.w) != (h, w) {
            return Err(Error::Dimension(format!(
                "segmentor expects {}x{}x{}, got {}x{}x{}",
                self.stem_in.cin, h, w, x.c, x.h, x.w
            )));
        }
        let (y, c_stem_in) = self.stem_in.forward(x);
        let y_stem_in = relu(y);
        let (y, c_stem) = self.stem.forward(&y_stem_in);
        let mut enc = vec![relu(y)];
        let mut downs = Vec::with_capacity(LEVELS);
        for d in &self.downs {
            let (y, c_down) = d.down.forward(enc.last().unwrap());
            let y_down = relu(y);
            let (y, c_refine) = d.refine.forward(&y_down);
            enc.push(relu(y));
            downs.push(DownTape {
                c_down,
                y_down,
                c_refine,
            });
        }
        // dec[LEVELS] is the bottleneck; decode towards level 0.
        let mut dec: Vec<Option<Feature>> = vec![None; LEVELS + 1];
        dec[LEVELS] = Some(enc[LEVELS].clone());
        let mut ups: Vec<Option<UpTape>> = (0..LEVELS).map(|_| None).collect();
        for i in (0..LEVELS).rev() {
            let u = &self.ups[i];
            let y_up = relu(u.up.forward(dec[i + 1].as_ref().unwrap()));
            let cat = Feature::concat(&y_up, &enc[i]);
            let (y, c_fuse) = u.fuse.forward(&cat);
            dec[i] = Some(relu(y));
            ups[i] = Some(UpTape { y_up, c_fuse });
        }
        let dec: Vec<Feature> = dec.into_iter().map(Option::unwrap).collect();
        let (logits, c_head) = self.head.forward(&dec[0]);
        Ok(Tape {
            c_stem_in,
            y_stem_in,
            c_stem,
            enc,
            downs,
            dec,
            ups: ups.into_iter().map(Option::unwrap).collect(),
            c_head,
            logits,
        })
    }

    /// Logit map `1 x H x W` for a tiled input.
    pub fn logits(&self, tiled: &Feature) -> Result<Feature> {
        let l = self.run(tiled)?.logits;
        if l.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("segmentor produced a non-finite logit".into()));
        }
        Ok(l)
    }

    /// Probability map for a tiled input, row-major `H x W`.
    pub fn segment(&self, tiled: &Feature) -> Result<Vec<f32>> {
        Ok(self.logits(tiled)?.data.into_iter().map(sigmoid).collect())
    }

    /// Probability map for a raw window.
    pub fn predict(&self, w: &CsiWindow) -> Result<Vec<f32>> {
        self.segment(&self.prepare(w)?)
    }

    /// Forward and backward for one sample. `target` is a row-major 0/1
    /// map at the working size. Returns the sample's loss and its
    /// probability map.
    pub fn accumulate(
        &mut self,
        w: &CsiWindow,
        target: &[f32],
        lambda_b: f64,
        smooth: f64,
        scale: f32,
    ) -> Result<(f64, Vec<f32>)> {
        let x = self.prepare(w)?;
        self.accumulate_tiled(&x, target, lambda_b, smooth, scale)
    }

    pub fn accumulate_tiled(
        &mut self,
        x: &Feature,
        target: &[f32],
        lambda_b: f64,
        smooth: f64,
        scale: f32,
    ) -> Result<(f64, Vec<f32>)> {
        let (h, w) = (self.shape.height, self.shape.width);
        if target.len() != h * w {
            return Err(Error::Dimension(format!("target has {} pixels, expected {}", target.len(), h * w)));
        }
        let tape = self.run(x)?;
        let z: Vec<f64> = tape.logits.data.iter().map(|&v| v as f64).collect();
        let t: Vec<f64> = target.iter().map(|&v| v as f64).collect();
        let (loss, grad) = loss::segmentor_loss_grad(&z, &t, lambda_b, smooth)?;
        let dlogits = Feature::new(1, h, w, grad.iter().map(|&g| g as f32 * scale).collect());
        self.backward(&tape, &dlogits);
        let probs = tape.logits.data.iter().map(|&v| sigmoid(v)).collect();
        Ok((loss, probs))
    }

    fn backward(&mut self, tape: &Tape, dlogits: &Feature) {
        let mut d_dec = self.head.backward(&tape.c_head, dlogits, true).unwrap();
        let mut d_skip: Vec<Option<Feature>> = vec![None; LEVELS + 1];
        for i in 0..LEVELS {
            let u = &mut self.ups[i];
            let ut = &tape.ups[i];
            relu_backward(&tape.dec[i].data, &mut d_dec.data);
            let d_cat = u.fuse.backward(&ut.c_fuse, &d_dec, true).unwrap();
            let (mut d_up, d_enc) = d_cat.split(ut.y_up.c);
            d_skip[i] = Some(d_enc);
            relu_backward(&ut.y_up.data, &mut d_up.data);
            d_dec = u.up.backward(&tape.dec[i + 1], &d_up, true).unwrap();
        }
        // d_dec now holds the gradient of the bottleneck enc[LEVELS].
        let mut d_enc = d_dec;
        for i in (0..LEVELS).rev() {
            let d = &mut self.downs[i];
            let dt = &tape.downs[i];
            relu_backward(&tape.enc[i + 1].data, &mut d_enc.data);
            let mut g = d.refine.backward(&dt.c_refine, &d_enc, true).unwrap();
            relu_backward(&dt.y_down.data, &mut g.data);
            let mut below = d.down.backward(&dt.c_down, &g, true).unwrap();
            below.add_assign(d_skip[i].as_ref().unwrap());
            d_enc = below;
        }
        relu_backward(&tape.enc[0].data, &mut d_enc.data);
        let mut g = self.stem.backward(&tape.c_stem, &d_enc, true).unwrap();
        relu_backward(&tape.y_stem_in.data, &mut g.data);
        self.stem_in.backward(&tape.c_stem_in, &g, false);
    }

    pub fn to_checkpoint(&self, epoch: usize, seed: u64) -> Checkpoint {
        Checkpoint {
            fingerprint: self.shape.fingerprint(ModuleKind::Segmentor, epoch, seed),
            arch: serde_json::to_value(self.arch).expect("arch serialises"),
            weights: self.export_weights(),
            aux: self.norm.to_flat(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, shape: ModelShape, seed: u64) -> Result<Self> {
        ck.fingerprint
            .check_compatible(&shape.fingerprint(ModuleKind::Segmentor, 0, seed))?;
        let arch: SegmentorArch = serde_json::from_value(ck.arch.clone())
            .map_err(|e| Error::Checkpoint(format!("segmentor architecture: {e}")))?;
        let mut net = Self::new(arch, shape, &mut Init::Zeros)?;
        net.import_weights(&ck.weights).map_err(Error::Checkpoint)?;
        net.norm = Standardizer::from_flat(&ck.aux, shape.dims.len())?;
        Ok(net)
    }
}

impl Module for SegmentorNet {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.stem_in.weight, &self.stem_in.bias, &self.stem.weight, &self.stem.bias];
        for d in &self.downs {
            v.extend([&d.down.weight, &d.down.bias, &d.refine.weight, &d.refine.bias]);
        }
        for u in &self.ups {
            v.extend([&u.up.weight, &u.up.bias, &u.fuse.weight, &u.fuse.bias]);
        }
        v.extend([&self.head.weight, &self.head.bias]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![
            &mut self.stem_in.weight,
            &mut self.stem_in.bias,
            &mut self.stem.weight,
            &mut self.stem.bias,
        ];
        for d in &mut self.downs {
            v.extend([&mut d.down.weight, &mut d.down.bias, &mut d.refine.weight, &mut d.refine.bias]);
        }
        for u in &mut self.ups {
            v.extend([&mut u.up.weight, &mut u.up.bias, &mut u.fuse.weight, &mut u.fuse.bias]);
        }
        v.extend([&mut self.head.weight, &mut self.head.bias]);
        v
    }
}

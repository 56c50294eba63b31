use super::Param;

pub trait Optimizer {
    /// Applies one update using the gradients currently stored in `params`.
    fn step(&mut self, params: Vec<&mut Param>, lr: f64);
}

fn ensure_state(state: &mut Vec<Vec<f32>>, params: &[&mut Param]) {
    if state.len() != params.len() {
        *state = params.iter().map(|p| vec![0.0; p.len()]).collect();
    }
}

/// RMSprop with optional heavy-ball momentum and L2 weight decay, following
/// the common `v = a*v + (1-a)*g^2; buf = mu*buf + g/(sqrt(v)+eps)` form.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub alpha: f32,
    pub eps: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    square_avg: Vec<Vec<f32>>,
    buffer: Vec<Vec<f32>>,
}

impl RmsProp {
    pub fn new(momentum: f32, weight_decay: f32) -> Self {
        Self {
            alpha: 0.99,
            eps: 1e-8,
            momentum,
            weight_decay,
            square_avg: Vec::new(),
            buffer: Vec::new(),
        }
    }
}

impl Optimizer for RmsProp {
    fn step(&mut self, mut params: Vec<&mut Param>, lr: f64) {
        ensure_state(&mut self.square_avg, &params);
        ensure_state(&mut self.buffer, &params);
        let lr = lr as f32;
        for (pi, p) in params.iter_mut().enumerate() {
            let v = &mut self.square_avg[pi];
            let buf = &mut self.buffer[pi];
            for j in 0..p.value.len() {
                let g = p.grad[j] + self.weight_decay * p.value[j];
                v[j] = self.alpha * v[j] + (1.0 - self.alpha) * g * g;
                let upd = g / (v[j].sqrt() + self.eps);
                if self.momentum > 0.0 {
                    buf[j] = self.momentum * buf[j] + upd;
                    p.value[j] -= lr * buf[j];
                } else {
                    p.value[j] -= lr * upd;
                }
            }
        }
    }
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(beta1: f32, beta2: f32, weight_decay: f32) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, mut params: Vec<&mut Param>, lr: f64) {
        ensure_state(&mut self.m, &params);
        ensure_state(&mut self.v, &params);
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let step = lr as f32 / bc1;
        for (pi, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            for j in 0..p.value.len() {
                let g = p.grad[j] + self.weight_decay * p.value[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                p.value[j] -= step * m[j] / ((v[j] / bc2).sqrt() + self.eps);
            }
        }
    }
}

//! Minimal MLP with manual reverse-mode gradients.
//!
//! The networks are two hidden layers at most, so hand-written backprop is
//! both fast and exactly checkable against finite differences (the
//! load-bearing property for every SAC update downstream). Batches are
//! stored column-wise: one sample per column.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Linear {
    pub fn zeros_like(other: &Linear) -> Linear {
        Linear {
            w: DMatrix::zeros(other.w.nrows(), other.w.ncols()),
            b: DVector::zeros(other.b.len()),
        }
    }
}

/// Affine-relu stack: relu on hidden layers, linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub layers: Vec<Linear>,
}

/// Per-layer inputs captured during a forward pass; `acts[0]` is the network
/// input and `acts[i]` the post-activation input to layer `i`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub acts: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// He-initialized network (weights ~ N(0, 2/fan_in), zero biases).
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Mlp {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for k in 0..sizes.len() - 1 {
            let (n_in, n_out) = (sizes[k], sizes[k + 1]);
            let std = (2.0 / n_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std > 0");
            let w = DMatrix::from_fn(n_out, n_in, |_, _| rng.sample(normal));
            layers.push(Linear {
                w,
                b: DVector::zeros(n_out),
            });
        }
        Mlp {
            sizes: sizes.to_vec(),
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.len() + l.b.len())
            .sum()
    }

    /// Batched forward pass; input is (n_in x batch).
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        assert_eq!(x.nrows(), self.input_dim(), "input dimension mismatch");
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        let out = acts.last().unwrap().clone();
        (out, MlpCache { acts })
    }

    /// Reverse-mode gradients. `grad_out` is dL/d(output), same shape as the
    /// forward output; returns per-layer parameter gradients (summed over the
    /// batch — divide by batch size for a mean loss) and dL/d(input).
    pub fn backward(&self, cache: &MlpCache, grad_out: &DMatrix<f64>) -> (Vec<Linear>, DMatrix<f64>) {
        assert_eq!(cache.acts.len(), self.layers.len() + 1, "stale cache");
        let mut grads: Vec<Linear> = self.layers.iter().map(Linear::zeros_like).collect();
        let mut d = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                // relu mask: the cached activation is already rectified
                let a = &cache.acts[i + 1];
                d.zip_apply(a, |g, act| {
                    if act <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            grads[i].w = &d * cache.acts[i].transpose();
            grads[i].b = d.column_sum();
            d = self.layers[i].w.transpose() * d;
        }
        (grads, d)
    }
}

/// Adam over a `Vec<Linear>` parameter set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Linear>,
    v: Vec<Linear>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: net.layers.iter().map(Linear::zeros_like).collect(),
            v: net.layers.iter().map(Linear::zeros_like).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &[Linear]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let upd = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64, b1: f64, b2: f64, eps: f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
            };
            for k in 0..g.w.len() {
                upd(
                    &mut net.layers[i].w[k],
                    &mut self.m[i].w[k],
                    &mut self.v[i].w[k],
                    g.w[k],
                    self.lr,
                    self.beta1,
                    self.beta2,
                    self.eps,
                );
            }
            for k in 0..g.b.len() {
                upd(
                    &mut net.layers[i].b[k],
                    &mut self.m[i].b[k],
                    &mut self.v[i].b[k],
                    g.b[k],
                    self.lr,
                    self.beta1,
                    self.beta2,
                    self.eps,
                );
            }
        }
    }
}

/// Adam for a single scalar (the entropy temperature's log-alpha).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub lr: f64,
    t: u64,
    m: f64,
    v: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> ScalarAdam {
        ScalarAdam {
            lr,
            t: 0,
            m: 0.0,
            v: 0.0,
        }
    }

    pub fn step(&mut self, p: &mut f64, g: f64) {
        self.t += 1;
        self.m = 0.9 * self.m + 0.1 * g;
        self.v = 0.999 * self.v + 0.001 * g * g;
        let mh = self.m / (1.0 - 0.9f64.powi(self.t as i32));
        let vh = self.v / (1.0 - 0.999f64.powi(self.t as i32));
        *p -= self.lr * mh / (vh.sqrt() + 1e-8);
    }
}

/// Polyak-average `src` into `dst`: dst = (1-tau) dst + tau src.
pub fn polyak_update(dst: &mut Mlp, src: &Mlp, tau: f64) {
    for (d, s) in dst.layers.iter_mut().zip(src.layers.iter()) {
        d.w = &d.w * (1.0 - tau) + &s.w * tau;
        d.b = &d.b * (1.0 - tau) + &s.b * tau;
    }
}

/// Central finite differences of a scalar loss wrt every parameter, checked
/// against the analytic gradients. Test-only oracle shared across rl tests.
#[cfg(test)]
pub(crate) fn fd_check<L: Fn(&Mlp) -> f64>(
    net: &Mlp,
    loss: L,
    analytic: &[Linear],
    h: f64,
    rel_tol: f64,
) {
    let mut net = net.clone();
    for li in 0..net.layers.len() {
        for k in 0..net.layers[li].w.len() {
            let orig = net.layers[li].w[k];
            net.layers[li].w[k] = orig + h;
            let lp = loss(&net);
            net.layers[li].w[k] = orig - h;
            let lm = loss(&net);
            net.layers[li].w[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = analytic[li].w[k];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                (fd - an).abs() / denom < rel_tol,
                "layer {li} w[{k}]: fd {fd} vs analytic {an}"
            );
        }
        for k in 0..net.layers[li].b.len() {
            let orig = net.layers[li].b[k];
            net.layers[li].b[k] = orig + h;
            let lp = loss(&net);
            net.layers[li].b[k] = orig - h;
            let lm = loss(&net);
            net.layers[li].b[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = analytic[li].b[k];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                (fd - an).abs() / denom < rel_tol,
                "layer {li} b[{k}]: fd {fd} vs analytic {an}"
            );
        }
    }
}

//! Squashed-Gaussian policy head.
//!
//! The actor MLP emits (mean, log_std) per action dimension; actions are
//! tanh-squashed into (-1, 1) with the change-of-variables correction applied
//! to the log-density.

use super::mlp::Mlp;
use nalgebra::{DMatrix, DVector, RowDVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Numerical floor inside the tanh correction log(1 - a^2 + eps).
pub const SQUASH_EPS: f64 = 1e-6;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyNet {
    pub net: Mlp,
    pub act_dim: usize,
}

impl PolicyNet {
    pub fn new<R: Rng>(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> PolicyNet {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * act_dim);
        PolicyNet {
            net: Mlp::new(&sizes, rng),
            act_dim,
        }
    }

    /// (mean, clamped log_std), each (act_dim x batch).
    pub fn dist(&self, obs: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let out = self.net.forward(obs);
        split_dist(&out, self.act_dim)
    }
}

pub fn split_dist(out: &DMatrix<f64>, act_dim: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mu = out.rows(0, act_dim).into_owned();
    let mut log_std = out.rows(act_dim, act_dim).into_owned();
    log_std.apply(|v| *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    (mu, log_std)
}

/// Squash a pre-activation batch: a = tanh(mu + exp(log_std) * eps), with the
/// per-sample log-density of the squashed distribution.
pub fn squash(
    mu: &DMatrix<f64>,
    log_std: &DMatrix<f64>,
    eps: &DMatrix<f64>,
) -> (DMatrix<f64>, RowDVector<f64>) {
    let (d, n) = (mu.nrows(), mu.ncols());
    let mut a = DMatrix::zeros(d, n);
    let mut logp = RowDVector::zeros(n);
    for c in 0..n {
        for r in 0..d {
            let std = log_std[(r, c)].exp();
            let u = mu[(r, c)] + std * eps[(r, c)];
            let t = u.tanh();
            a[(r, c)] = t;
            logp[c] += -0.5 * eps[(r, c)] * eps[(r, c)]
                - log_std[(r, c)]
                - HALF_LN_2PI
                - (1.0 - t * t + SQUASH_EPS).ln();
        }
    }
    (a, logp)
}

/// Single-state convenience sampler: returns the action and its log-density.
/// With `deterministic`, eps = 0 so a = tanh(mean).
pub fn sample_action<R: Rng>(
    policy: &PolicyNet,
    s: &DVector<f64>,
    rng: &mut R,
    deterministic: bool,
) -> (DVector<f64>, f64) {
    let obs = DMatrix::from_column_slice(s.len(), 1, s.as_slice());
    let (mu, log_std) = policy.dist(&obs);
    let eps = if deterministic {
        DMatrix::zeros(policy.act_dim, 1)
    } else {
        DMatrix::from_fn(policy.act_dim, 1, |_, _| rng.sample(StandardNormal))
    };
    let (a, logp) = squash(&mu, &log_std, &eps);
    (a.column(0).into_owned(), logp[0])
}

/// Log-density of the squashed policy evaluated at a given action (used by
/// the quadrature check); the inverse squash is atanh.
pub fn log_prob_at(mu: f64, log_std: f64, a: f64) -> f64 {
    let u = a.atanh();
    let std = log_std.exp();
    let z = (u - mu) / std;
    -0.5 * z * z - log_std - HALF_LN_2PI - (1.0 - a * a + SQUASH_EPS).ln()
}

//! Soft actor-critic: twin critics with target networks, reparameterized
//! actor, and automatic entropy temperature.
//!
//! Every loss is written as a pure function of (parameters, batch, explicit
//! noise) so the analytic gradients can be checked against central finite
//! differences — the correctness anchor for the whole learner.

use super::mlp::{polyak_update, Adam, Linear, Mlp, ScalarAdam};
use super::policy::{split_dist, squash, PolicyNet, LOG_STD_MAX, LOG_STD_MIN, SQUASH_EPS};
use super::replay::{Batch, ReplayBuffer};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacHyperparams {
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// None selects the canonical -dim(action).
    pub target_entropy: Option<f64>,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Uniform-random environment steps before learning starts.
    pub warmup_steps: usize,
    /// Gradient updates are run every this many environment steps.
    pub update_every: usize,
}

impl Default for SacHyperparams {
    fn default() -> Self {
        SacHyperparams {
            gamma: 0.99,
            tau: 0.005,
            lr: 3e-4,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            target_entropy: None,
            hidden: vec![256, 256],
            seed: 0,
            warmup_steps: 5000,
            update_every: 1,
        }
    }
}

impl SacHyperparams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(format!("gamma {} outside (0,1)", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("tau {} outside (0,1]", self.tau));
        }
        if self.lr <= 0.0 {
            return Err(format!("lr {} not positive", self.lr));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err("batch_size and buffer_capacity must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SacAgent {
    pub policy: PolicyNet,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub hyper: SacHyperparams,
    pub obs_dim: usize,
    pub act_dim: usize,
    opt_policy: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    opt_alpha: ScalarAdam,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossReport {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub mean_log_prob: f64,
}

impl SacAgent {
    pub fn new<R: Rng>(obs_dim: usize, act_dim: usize, hyper: SacHyperparams, rng: &mut R) -> SacAgent {
        let policy = PolicyNet::new(obs_dim, act_dim, &hyper.hidden, rng);
        let mut q_sizes = vec![obs_dim + act_dim];
        q_sizes.extend_from_slice(&hyper.hidden);
        q_sizes.push(1);
        let q1 = Mlp::new(&q_sizes, rng);
        let q2 = Mlp::new(&q_sizes, rng);
        let q1_target = q1.clone();
        let q2_target = q2.clone();
        let lr = hyper.lr;
        let target_entropy = hyper.target_entropy.unwrap_or(-(act_dim as f64));
        SacAgent {
            opt_policy: Adam::new(&policy.net, lr),
            opt_q1: Adam::new(&q1, lr),
            opt_q2: Adam::new(&q2, lr),
            opt_alpha: ScalarAdam::new(lr),
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            log_alpha: 0.0,
            target_entropy,
            hyper,
            obs_dim,
            act_dim,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// One SAC gradient step on a batch sampled from `buffer`.
    pub fn update<R: Rng>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> LossReport {
        let batch = buffer.sample(self.hyper.batch_size, rng);
        let n = batch.obs.ncols();
        let eps_next = DMatrix::from_fn(self.act_dim, n, |_, _| rng.sample(StandardNormal));
        let eps = DMatrix::from_fn(self.act_dim, n, |_, _| rng.sample(StandardNormal));
        self.update_with_noise(&batch, &eps_next, &eps)
    }

    /// Deterministic core of `update`, exposed for gradient testing.
    pub fn update_with_noise(
        &mut self,
        batch: &Batch,
        eps_next: &DMatrix<f64>,
        eps: &DMatrix<f64>,
    ) -> LossReport {
        let y = critic_targets(
            &self.policy,
            &self.q1_target,
            &self.q2_target,
            batch,
            eps_next,
            self.alpha(),
            self.hyper.gamma,
        );

        let (q1_loss, g1) = critic_loss(&self.q1, &batch.obs, &batch.actions, &y);
        let (q2_loss, g2) = critic_loss(&self.q2, &batch.obs, &batch.actions, &y);
        self.opt_q1.step(&mut self.q1, &g1);
        self.opt_q2.step(&mut self.q2, &g2);

        let (a_loss, ga, mean_logp) =
            actor_loss(&self.policy, &self.q1, &self.q2, &batch.obs, eps, self.alpha());
        self.opt_policy.step(&mut self.policy.net, &ga);

        let g_alpha = alpha_grad(mean_logp, self.target_entropy);
        self.opt_alpha.step(&mut self.log_alpha, g_alpha);

        polyak_update(&mut self.q1_target, &self.q1, self.hyper.tau);
        polyak_update(&mut self.q2_target, &self.q2, self.hyper.tau);

        LossReport {
            q1_loss,
            q2_loss,
            actor_loss: a_loss,
            alpha: self.alpha(),
            mean_log_prob: mean_logp,
        }
    }
}

fn stack_input(obs: &DMatrix<f64>, act: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(obs.nrows() + act.nrows(), obs.ncols());
    x.rows_mut(0, obs.nrows()).copy_from(obs);
    x.rows_mut(obs.nrows(), act.nrows()).copy_from(act);
    x
}

/// Bellman targets y = r + gamma (1-d) (min_i Q_target_i(s', a') - alpha log pi(a'|s')),
/// with a' drawn via the explicit noise `eps_next`.
pub fn critic_targets(
    policy: &PolicyNet,
    q1_target: &Mlp,
    q2_target: &Mlp,
    batch: &Batch,
    eps_next: &DMatrix<f64>,
    alpha: f64,
    gamma: f64,
) -> DVector<f64> {
    let (mu, log_std) = policy.dist(&batch.next_obs);
    let (a_next, logp) = squash(&mu, &log_std, eps_next);
    let x = stack_input(&batch.next_obs, &a_next);
    let v1 = q1_target.forward(&x);
    let v2 = q2_target.forward(&x);
    let n = batch.obs.ncols();
    DVector::from_fn(n, |c, _| {
        let q_min = v1[(0, c)].min(v2[(0, c)]);
        batch.rewards[c] + gamma * (1.0 - batch.dones[c]) * (q_min - alpha * logp[c])
    })
}

/// Mean-squared Bellman error of one critic and its parameter gradients.
pub fn critic_loss(
    q: &Mlp,
    obs: &DMatrix<f64>,
    act: &DMatrix<f64>,
    y: &DVector<f64>,
) -> (f64, Vec<Linear>) {
    let n = obs.ncols() as f64;
    let x = stack_input(obs, act);
    let (v, cache) = q.forward_cached(&x);
    let mut grad_out = DMatrix::zeros(1, obs.ncols());
    let mut loss = 0.0;
    for c in 0..obs.ncols() {
        let e = v[(0, c)] - y[c];
        loss += e * e / n;
        grad_out[(0, c)] = 2.0 * e / n;
    }
    let (grads, _) = q.backward(&cache, &grad_out);
    (loss, grads)
}

/// Reparameterized actor loss
/// L = mean_c [ alpha * log pi(a_c|s_c) - min_i Q_i(s_c, a_c) ]
/// with a_c = tanh(mu + sigma * eps_c), and its gradients wrt the actor
/// parameters (critics held fixed). Also returns mean log-prob for the
/// temperature update.
pub fn actor_loss(
    policy: &PolicyNet,
    q1: &Mlp,
    q2: &Mlp,
    obs: &DMatrix<f64>,
    eps: &DMatrix<f64>,
    alpha: f64,
) -> (f64, Vec<Linear>, f64) {
    let d = policy.act_dim;
    let n = obs.ncols();
    let nf = n as f64;

    let (out, actor_cache) = policy.net.forward_cached(obs);
    let (mu, log_std) = split_dist(&out, d);
    let (a, logp) = squash(&mu, &log_std, eps);

    let x = stack_input(obs, &a);
    let (v1, c1) = q1.forward_cached(&x);
    let (v2, c2) = q2.forward_cached(&x);

    let mut loss = 0.0;
    let mut g1 = DMatrix::zeros(1, n);
    let mut g2 = DMatrix::zeros(1, n);
    for c in 0..n {
        let (qmin, first) = if v1[(0, c)] <= v2[(0, c)] {
            (v1[(0, c)], true)
        } else {
            (v2[(0, c)], false)
        };
        loss += (alpha * logp[c] - qmin) / nf;
        if first {
            g1[(0, c)] = -1.0 / nf;
        } else {
            g2[(0, c)] = -1.0 / nf;
        }
    }
    // dL/da through the selected critic's input
    let (_, dx1) = q1.backward(&c1, &g1);
    let (_, dx2) = q2.backward(&c2, &g2);
    let da_critic = dx1.rows(obs.nrows(), d) + dx2.rows(obs.nrows(), d);

    // assemble dL/d(mu) and dL/d(log_std); log_std gradients vanish where the
    // clamp is active
    let mut grad_head = DMatrix::zeros(2 * d, n);
    for c in 0..n {
        for r in 0..d {
            let t = a[(r, c)];
            let sech2 = 1.0 - t * t;
            let sigma = log_std[(r, c)].exp();
            // d(log pi)/du from the tanh correction term
            let dcorr_du = 2.0 * t * sech2 / (sech2 + SQUASH_EPS);
            let dl_du = (alpha / nf) * dcorr_du + da_critic[(r, c)] * sech2;
            grad_head[(r, c)] = dl_du;
            let raw = out[(d + r, c)];
            if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                grad_head[(d + r, c)] = dl_du * sigma * eps[(r, c)] - alpha / nf;
            }
        }
    }
    let (grads, _) = policy.net.backward(&actor_cache, &grad_head);
    let mean_logp = logp.sum() / nf;
    (loss, grads, mean_logp)
}

/// Gradient of the temperature loss L = -log_alpha * (mean log pi + target_entropy)
/// wrt log_alpha; alpha rises while policy entropy is below target.
pub fn alpha_grad(mean_log_prob: f64, target_entropy: f64) -> f64 {
    -(mean_log_prob + target_entropy)
}

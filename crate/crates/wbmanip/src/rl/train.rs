//! SAC training loop and the paper-protocol evaluator.

use super::policy::sample_action;
use super::replay::{ReplayBuffer, Transition};
use super::sac::{LossReport, SacAgent, SacHyperparams};
use crate::env::{
    action_dim, obs_dim, observe, sample_cabinet, Action, AgentMode, CabinetRanges, Env, EnvParams,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSetup {
    pub mode: AgentMode,
    /// Cabinet seeds cycled uniformly at random per episode.
    pub cabinet_seeds: Vec<u64>,
    pub hyper: SacHyperparams,
    pub env_params: EnvParams,
    pub ranges: CabinetRanges,
    /// Observation noise applied during training and evaluation.
    pub noise_sigma: f64,
    pub total_steps: usize,
    /// Steps between learning-curve points.
    pub curve_interval: usize,
    /// Deterministic eval episodes per curve point (on training cabinets).
    pub eval_episodes_per_point: usize,
}

impl TrainSetup {
    pub fn new(mode: AgentMode, cabinet_seeds: Vec<u64>, hyper: SacHyperparams, total_steps: usize) -> Self {
        TrainSetup {
            mode,
            cabinet_seeds,
            hyper,
            env_params: EnvParams::default(),
            ranges: CabinetRanges::default(),
            noise_sigma: 0.0,
            total_steps,
            curve_interval: 5000,
            eval_episodes_per_point: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    /// Mean undiscounted return over episodes finished since the last point.
    pub avg_return: f64,
    /// Deterministic-action success rate on the training cabinets.
    pub eval_success: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub agent: SacAgent,
    pub curve: Vec<CurvePoint>,
    pub episodes: usize,
    pub last_losses: LossReport,
}

fn random_action<R: Rng>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0))
}

/// Standard SAC loop: uniform-random warmup, then one gradient update per
/// `update_every` environment steps. Fully determined by (setup, seed).
pub fn train(setup: &TrainSetup) -> TrainOutcome {
    assert!(!setup.cabinet_seeds.is_empty(), "need at least one cabinet");
    let mut rng = ChaCha8Rng::seed_from_u64(setup.hyper.seed);
    let od = obs_dim(setup.mode);
    let ad = action_dim(setup.mode);
    let mut agent = SacAgent::new(od, ad, setup.hyper.clone(), &mut rng);
    let mut buffer = ReplayBuffer::new(setup.hyper.buffer_capacity);

    let new_env = |rng: &mut ChaCha8Rng| {
        let cab_seed = setup.cabinet_seeds[rng.gen_range(0..setup.cabinet_seeds.len())];
        let cabinet = sample_cabinet(cab_seed, &setup.ranges);
        let ep_seed: u64 = rng.gen();
        Env::reset(setup.mode, cabinet, ep_seed, setup.env_params.clone())
    };

    let mut env = new_env(&mut rng);
    let mut obs = observe(&env, setup.noise_sigma, &mut rng);
    let mut curve = Vec::new();
    let mut episodes = 0usize;
    let mut ep_return = 0.0;
    let mut returns_in_interval: Vec<f64> = Vec::new();
    let mut last_losses = LossReport::default();

    for step in 1..=setup.total_steps {
        let flat = if step <= setup.hyper.warmup_steps {
            random_action(ad, &mut rng)
        } else {
            sample_action(&agent.policy, &obs, &mut rng, false).0
        };
        let action = Action::from_flat(&flat);
        let (r, done, info) = env.step(&action).expect("action dims are fixed");
        let next_obs = observe(&env, setup.noise_sigma, &mut rng);
        ep_return += r;
        buffer.push(Transition {
            obs: obs.clone(),
            action: flat,
            reward: r,
            next_obs: next_obs.clone(),
            // bootstrap through timeouts: only true task termination is final
            done: info.success,
        });
        obs = next_obs;

        if done {
            episodes += 1;
            returns_in_interval.push(ep_return);
            ep_return = 0.0;
            env = new_env(&mut rng);
            obs = observe(&env, setup.noise_sigma, &mut rng);
        }

        if step > setup.hyper.warmup_steps
            && step % setup.hyper.update_every == 0
            && buffer.len() >= setup.hyper.batch_size
        {
            last_losses = agent.update(&buffer, &mut rng);
        }

        if step % setup.curve_interval == 0 {
            let avg_return = if returns_in_interval.is_empty() {
                0.0
            } else {
                returns_in_interval.iter().sum::<f64>() / returns_in_interval.len() as f64
            };
            returns_in_interval.clear();
            let eval_success = if setup.eval_episodes_per_point > 0 {
                quick_eval(&agent, setup, step as u64)
            } else {
                0.0
            };
            curve.push(CurvePoint {
                step,
                avg_return,
                eval_success,
            });
        }
    }

    TrainOutcome {
        agent,
        curve,
        episodes,
        last_losses,
    }
}

/// Cheap deterministic success estimate used for curve points.
fn quick_eval(agent: &SacAgent, setup: &TrainSetup, salt: u64) -> f64 {
    let mut successes = 0usize;
    let n = setup.eval_episodes_per_point;
    for ep in 0..n {
        let cab_seed = setup.cabinet_seeds[ep % setup.cabinet_seeds.len()];
        let ep_seed = 0x5eed_0000_u64 ^ salt.wrapping_mul(31).wrapping_add(ep as u64);
        if rollout_episode(agent, setup, cab_seed, ep_seed).0 {
            successes += 1;
        }
    }
    successes as f64 / n as f64
}

/// One deterministic-action episode; returns (success, length).
pub fn rollout_episode(
    agent: &SacAgent,
    setup: &TrainSetup,
    cabinet_seed: u64,
    episode_seed: u64,
) -> (bool, usize) {
    let cabinet = sample_cabinet(cabinet_seed, &setup.ranges);
    let mut env = Env::reset(setup.mode, cabinet, episode_seed, setup.env_params.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed ^ 0x0b5e);
    loop {
        let obs = observe(&env, setup.noise_sigma, &mut rng);
        let (flat, _) = sample_action(&agent.policy, &obs, &mut rng, true);
        let (_, done, info) = env.step(&Action::from_flat(&flat)).expect("fixed dims");
        if done {
            return (info.success, env.state.step_count);
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalSummary {
    pub success_rate: f64,
    pub avg_length: f64,
    pub episodes: usize,
    /// Per-eval-seed success rates, for confidence intervals.
    pub per_seed: [f64; 3],
}

/// Paper protocol: 3 evaluation seeds x `episodes_per_seed` deterministic
/// episodes, cabinets cycled round-robin; failed episodes count their full
/// length (the 200-step timeout).
pub fn evaluate(
    agent: &SacAgent,
    setup: &TrainSetup,
    cabinet_seeds: &[u64],
    episodes_per_seed: usize,
) -> EvalSummary {
    let eval_seeds = [0u64, 1, 2];
    let mut per_seed = [0.0; 3];
    let mut total_success = 0usize;
    let mut total_len = 0usize;
    for (si, &s) in eval_seeds.iter().enumerate() {
        let mut seed_success = 0usize;
        for ep in 0..episodes_per_seed {
            let cab_seed = cabinet_seeds[ep % cabinet_seeds.len()];
            let ep_seed = s
                .wrapping_mul(0x9e37_79b9)
                .wrapping_add(ep as u64)
                .wrapping_add(0xe0a0);
            let (ok, len) = rollout_episode(agent, setup, cab_seed, ep_seed);
            if ok {
                seed_success += 1;
                total_success += 1;
            }
            total_len += len;
        }
        per_seed[si] = seed_success as f64 / episodes_per_seed as f64;
    }
    let episodes = eval_seeds.len() * episodes_per_seed;
    EvalSummary {
        success_rate: total_success as f64 / episodes as f64,
        avg_length: total_len as f64 / episodes as f64,
        episodes,
        per_seed,
    }
}

//! Clipped policy-gradient optimization of the one-shot response world, with
//! a KL-penalized reward against the initial policy and low-variance KL
//! measurement.
//!
//! Episodes are single responses, so ratios and advantages live at the
//! sequence level; there is no value network, just an EMA baseline with
//! batch advantage normalization.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::combine::{intra_variance, Combiner, CombineError};
use crate::nn::{ForwardTrace, Gradients, NnError, Optimizer};
use crate::rm::RewardEnsemble;
use crate::seed;
use crate::world::{GenConfig, PolicyModel, Prompt, Response, World, WorldError, WorldSpec};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PpoError {
    #[error("invalid ppo config: {0}")]
    BadConfig(&'static str),
    #[error("non-finite {quantity} at step {step}, minibatch {minibatch}")]
    NonFinite {
        step: usize,
        minibatch: usize,
        quantity: &'static str,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Combine(#[from] CombineError),
}

/// PPO-style training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub steps: usize,
    pub rollouts_per_step: usize,
    pub minibatch: usize,
    pub ppo_epochs: usize,
    pub clip: f64,
    /// KL-penalty weight applied inside the reward.
    pub beta: f64,
    pub learning_rate: f64,
    pub baseline_ema: f64,
    /// Gold scores are logged on rollouts but never drive updates; turning
    /// this off must not change the parameter trajectory.
    pub log_gold: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            steps: 3000,
            rollouts_per_step: 256,
            minibatch: 32,
            ppo_epochs: 4,
            clip: 0.2,
            beta: 0.0,
            learning_rate: 1e-3,
            baseline_ema: 0.9,
            log_gold: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        if self.steps == 0 || self.rollouts_per_step == 0 || self.minibatch == 0 {
            return Err(PpoError::BadConfig("steps, rollouts and minibatch must be >= 1"));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(PpoError::BadConfig("clip must lie in (0, 1)"));
        }
        if self.rollouts_per_step % self.minibatch != 0 {
            return Err(PpoError::BadConfig(
                "rollouts_per_step must be divisible by minibatch",
            ));
        }
        if !(0.0..1.0).contains(&self.baseline_ema) {
            return Err(PpoError::BadConfig("baseline_ema must lie in [0, 1)"));
        }
        if self.beta < 0.0 {
            return Err(PpoError::BadConfig("beta must be non-negative"));
        }
        if self.ppo_epochs == 0 {
            return Err(PpoError::BadConfig("ppo_epochs must be >= 1"));
        }
        Ok(())
    }
}

/// Reward with the KL penalty folded in: `r - beta (log pi - log pi_init)`.
pub fn penalized_reward(r: f64, logp_current: f64, logp_init: f64, beta: f64) -> f64 {
    r - beta * (logp_current - logp_init)
}

/// The clipped surrogate for one sample:
/// `min(ratio * adv, clamp(ratio, 1-clip, 1+clip) * adv)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clamped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clamped * advantage)
}

/// Per-step statistics; rollout columns describe the policy before that
/// step's update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoRow {
    pub step: usize,
    /// Low-variance KL estimate vs the initial policy, from this step's
    /// rollouts.
    pub kl_nats: f64,
    pub proxy_mean: f64,
    pub gold_mean: f64,
    pub variance_mean: f64,
    pub penalized_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoTrajectory {
    pub rows: Vec<PpoRow>,
}

impl PpoTrajectory {
    pub fn final_gold(&self) -> f64 {
        self.rows.last().map(|r| r.gold_mean).unwrap_or(f64::NAN)
    }

    pub fn final_kl(&self) -> f64 {
        self.rows.last().map(|r| r.kl_nats).unwrap_or(f64::NAN)
    }
}

/// Monte Carlo estimate of `E_pi[log pi - log pi_init]`. Unbiased for the
/// true KL but high-variance, and can come out negative on finite samples.
pub fn measure_kl_naive(
    policy: &PolicyModel,
    policy_init: &PolicyModel,
    spec: &WorldSpec,
    prompts: &[Prompt],
    gen: &GenConfig,
    samples: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> f64 {
    debug_assert!(samples >= 1);
    let mut total = 0.0;
    for i in 0..samples {
        let prompt = &prompts[i % prompts.len()];
        let (response, lp) = policy.sample_with(spec, prompt, gen, rng);
        let lp_init = policy_init.logprob(spec, prompt, &response, gen);
        total += lp - lp_init;
    }
    total / samples as f64
}

/// Monte Carlo estimate of `E_pi[(log pi - log pi_init)^2 / 2]`: the
/// low-variance measurement used for optimization curves. Never negative.
pub fn measure_kl(
    policy: &PolicyModel,
    policy_init: &PolicyModel,
    spec: &WorldSpec,
    prompts: &[Prompt],
    gen: &GenConfig,
    samples: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> f64 {
    debug_assert!(samples >= 1);
    let mut total = 0.0;
    for i in 0..samples {
        let prompt = &prompts[i % prompts.len()];
        let (response, lp) = policy.sample_with(spec, prompt, gen, rng);
        let lp_init = policy_init.logprob(spec, prompt, &response, gen);
        let d = lp - lp_init;
        total += 0.5 * d * d;
    }
    total / samples as f64
}

fn exact_expectation(
    policy: &PolicyModel,
    policy_init: &PolicyModel,
    spec: &WorldSpec,
    prompts: &[Prompt],
    gen: &GenConfig,
    f: impl Fn(f64) -> f64,
) -> Result<f64, WorldError> {
    let mut total = 0.0;
    for prompt in prompts {
        let lp_cur = policy.logprob_all(spec, prompt, gen)?;
        let lp_init = policy_init.logprob_all(spec, prompt, gen)?;
        let mut acc = 0.0;
        for (&c, &i) in lp_cur.iter().zip(lp_init.iter()) {
            if c == f64::NEG_INFINITY {
                continue;
            }
            acc += libm::exp(c) * f(c - i);
        }
        total += acc;
    }
    Ok(total / prompts.len() as f64)
}

/// Exact-sum version of [`measure_kl_naive`] over an enumerable world; this
/// equals the true KL divergence.
pub fn measure_kl_naive_exact(
    policy: &PolicyModel,
    policy_init: &PolicyModel,
    spec: &WorldSpec,
    prompts: &[Prompt],
    gen: &GenConfig,
) -> Result<f64, WorldError> {
    exact_expectation(policy, policy_init, spec, prompts, gen, |d| d)
}

/// Exact-sum version of [`measure_kl`] over an enumerable world.
pub fn measure_kl_exact(
    policy: &PolicyModel,
    policy_init: &PolicyModel,
    spec: &WorldSpec,
    prompts: &[Prompt],
    gen: &GenConfig,
) -> Result<f64, WorldError> {
    exact_expectation(policy, policy_init, spec, prompts, gen, |d| 0.5 * d * d)
}

struct Rollout {
    prompt_idx: usize,
    response: Response,
    logp_snapshot: f64,
    logp_init: f64,
    advantage: f64,
}

/// Sum of per-position log-softmax probabilities of the response tokens
/// under the current network (untruncated sampling).
fn sequence_logprob(
    policy: &PolicyModel,
    spec: &WorldSpec,
    prompt: &Prompt,
    response: &Response,
    trace: &mut ForwardTrace,
) -> Result<f64, NnError> {
    let mut lp = 0.0;
    for (pos, &t) in response.tokens().iter().enumerate() {
        let input = PolicyModel::step_input(spec, prompt, &response.tokens()[..pos]);
        policy.net.forward_trace(&input, trace)?;
        let logits = trace.output();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(logits.iter().map(|&z| libm::exp(z - max)).sum::<f64>());
        lp += logits[t as usize] - lse;
    }
    Ok(lp)
}

/// Optimize the world's initial policy against an ensemble combiner.
///
/// Each step samples untruncated rollouts, folds the KL penalty into the
/// reward, normalizes advantages and runs several clipped-surrogate passes
/// over shuffled minibatches. Gold scores are logged on the same rollouts
/// and never influence updates. `on_row` sees each statistics row as soon as
/// it is complete, so partial trajectories survive an abort.
pub fn run_ppo(
    world: &World,
    ensemble: &RewardEnsemble,
    combiner: &Combiner,
    cfg: &PpoConfig,
    run_seed: u64,
    mut on_row: impl FnMut(&PpoRow),
) -> Result<(PolicyModel, PpoTrajectory), PpoError> {
    cfg.validate()?;
    let spec = &world.spec;
    let prompts = &world.prompts;
    let gen = GenConfig::UNTRUNCATED;

    let mut policy = world.policy_init.clone();
    policy.temperature = gen.temperature;
    policy.top_p = gen.top_p;
    let init = &world.policy_init;

    let mut opt = Optimizer::adam(cfg.learning_rate);
    let mut rng = seed::rng(run_seed, "ppo", 0);
    let mut baseline: Option<f64> = None;
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut grads = Gradients::zeros_like(&policy.net);
    let mut trace = ForwardTrace::default();

    let r_count = cfg.rollouts_per_step;
    let mut order: Vec<usize> = (0..r_count).collect();

    for step in 1..=cfg.steps {
        // Rollout phase: sample from the current policy, snapshot its
        // log-probabilities, score with the ensemble.
        let mut rollouts = Vec::with_capacity(r_count);
        let mut member_buf: Vec<f64> = vec![0.0; ensemble.k()];
        let mut proxy_sum = 0.0;
        let mut gold_sum = 0.0;
        let mut var_sum = 0.0;
        let mut pen_sum = 0.0;
        let mut kl_sum = 0.0;
        for i in 0..r_count {
            let prompt_idx = i % prompts.len();
            let prompt = &prompts[prompt_idx];
            let (response, logp_snapshot) = policy.sample_with(spec, prompt, &gen, &mut rng);
            let logp_init = init.logprob(spec, prompt, &response, &gen);
            for (slot, member) in member_buf.iter_mut().zip(ensemble.members()) {
                *slot = member.score(&world.embedding, prompt, &response);
            }
            let combined = combiner.combine(&member_buf)?;
            let penalized = penalized_reward(combined, logp_snapshot, logp_init, cfg.beta);
            proxy_sum += combined;
            var_sum += intra_variance(&member_buf);
            pen_sum += penalized;
            let d = logp_snapshot - logp_init;
            kl_sum += 0.5 * d * d;
            if cfg.log_gold {
                gold_sum += world.gold_score(prompt, &response);
            }
            rollouts.push(Rollout {
                prompt_idx,
                response,
                logp_snapshot,
                logp_init,
                advantage: penalized,
            });
        }
        let inv_r = 1.0 / r_count as f64;
        let batch_mean = pen_sum * inv_r;

        let row = PpoRow {
            step,
            kl_nats: kl_sum * inv_r,
            proxy_mean: proxy_sum * inv_r,
            gold_mean: if cfg.log_gold { gold_sum * inv_r } else { f64::NAN },
            variance_mean: var_sum * inv_r,
            penalized_mean: batch_mean,
        };

        // Advantages: subtract the EMA baseline, then normalize to zero
        // mean and unit variance; a zero-variance batch contributes nothing.
        let b = match baseline {
            None => batch_mean,
            Some(prev) => cfg.baseline_ema * prev + (1.0 - cfg.baseline_ema) * batch_mean,
        };
        baseline = Some(b);
        for r in &mut rollouts {
            r.advantage -= b;
        }
        let adv_mean = rollouts.iter().map(|r| r.advantage).sum::<f64>() * inv_r;
        let adv_var = rollouts
            .iter()
            .map(|r| (r.advantage - adv_mean) * (r.advantage - adv_mean))
            .sum::<f64>()
            * inv_r;
        let adv_std = libm::sqrt(adv_var);
        if adv_std < 1e-8 {
            for r in &mut rollouts {
                r.advantage = 0.0;
            }
        } else {
            for r in &mut rollouts {
                r.advantage = (r.advantage - adv_mean) / adv_std;
            }
        }

        // Update phase: clipped-surrogate ascent over shuffled minibatches.
        for _ in 0..cfg.ppo_epochs {
            order.shuffle(&mut rng);
            for (mb_index, mb) in order.chunks(cfg.minibatch).enumerate() {
                grads.zero();
                let inv_m = 1.0 / mb.len() as f64;
                for &j in mb {
                    let rollout = &rollouts[j];
                    let prompt = &prompts[rollout.prompt_idx];
                    let lp_cur =
                        sequence_logprob(&policy, spec, prompt, &rollout.response, &mut trace)?;
                    let ratio = libm::exp(lp_cur - rollout.logp_snapshot);
                    if !ratio.is_finite() {
                        return Err(PpoError::NonFinite {
                            step,
                            minibatch: mb_index,
                            quantity: "ratio",
                        });
                    }
                    let adv = rollout.advantage;
                    let unclipped = ratio * adv;
                    let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
                    // Gradient flows only through the unclipped branch; when
                    // the clipped branch is strictly smaller the sample is
                    // clipped out and contributes nothing.
                    let coef = if unclipped <= clipped { adv * ratio } else { 0.0 };
                    if coef == 0.0 {
                        continue;
                    }
                    // d(-surrogate)/d(logits_t) = coef (softmax - onehot).
                    let scale = coef * inv_m;
                    for (pos, &t) in rollout.response.tokens().iter().enumerate() {
                        let input = PolicyModel::step_input(
                            spec,
                            prompt,
                            &rollout.response.tokens()[..pos],
                        );
                        policy.net.forward_trace(&input, &mut trace)?;
                        let logits = trace.output();
                        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exp_sum: f64 =
                            logits.iter().map(|&z| libm::exp(z - max)).sum();
                        let mut upstream: Vec<f64> = logits
                            .iter()
                            .map(|&z| scale * (libm::exp(z - max) / exp_sum))
                            .collect();
                        upstream[t as usize] -= scale;
                        policy.net.backward(&trace, &upstream, &mut grads)?;
                    }
                }
                opt.step(&mut policy.net, &grads).map_err(|e| match e {
                    NnError::NonFiniteGradient { .. } => PpoError::NonFinite {
                        step,
                        minibatch: mb_index,
                        quantity: "gradient",
                    },
                    other => PpoError::Nn(other),
                })?;
            }
        }

        on_row(&row);
        rows.push(row);
    }

    Ok((policy, PpoTrajectory { rows }))
}

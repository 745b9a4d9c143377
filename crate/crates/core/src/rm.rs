//! Proxy reward-model training on pairwise preferences, and ensembles of
//! identically trained models differing only in head seed and shuffle order.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{ForwardTrace, Gradients, Network, NnError, Optimizer, OptimizerKind};
use crate::pref::PreferenceDataset;
use crate::world::{reward_input, Embedding, Prompt, Response};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RmError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("pair references prompt {id} outside the prompt set")]
    UnknownPrompt { id: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Reward-model training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmHyper {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl Default for RmHyper {
    fn default() -> Self {
        RmHyper {
            epochs: 5,
            learning_rate: 1e-2,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Recorded once training finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub head_seed: u64,
    pub shuffle_seed: u64,
    pub final_val_accuracy: f64,
    pub final_val_loss: f64,
}

/// Per-epoch learning curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// A trained scalar-output reward model sharing the gold model's input
/// layout (same embedding table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyRewardModel {
    pub net: Network,
    pub head_seed: u64,
    pub meta: TrainingMeta,
}

impl ProxyRewardModel {
    pub fn score(&self, emb: &Embedding, prompt: &Prompt, response: &Response) -> f64 {
        let input = reward_input(prompt, response, emb);
        self.net.forward_scalar(&input).expect("proxy input shape")
    }
}

/// Members trained on identical data and hyperparameters, differing only in
/// scalar-head initialization and shuffle order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEnsemble {
    members: Vec<ProxyRewardModel>,
}

impl RewardEnsemble {
    pub fn new(members: Vec<ProxyRewardModel>) -> RewardEnsemble {
        RewardEnsemble { members }
    }

    pub fn members(&self) -> &[ProxyRewardModel] {
        &self.members
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }
}

/// Pairwise cross-entropy: `-log sigmoid(r_chosen - r_rejected)`, computed
/// as a softplus of the negated margin so large margins cannot overflow.
pub fn bt_loss(r_chosen: f64, r_rejected: f64) -> f64 {
    softplus(-(r_chosen - r_rejected))
}

fn softplus(x: f64) -> f64 {
    let m = if x > 0.0 { x } else { 0.0 };
    m + libm::log1p(libm::exp(-libm::fabs(x)))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// d(bt_loss)/d(r_chosen); the rejected-side gradient is its negation.
pub fn bt_loss_grad(r_chosen: f64, r_rejected: f64) -> f64 {
    sigmoid(r_chosen - r_rejected) - 1.0
}

/// Train one reward model: clone the shared trunk, re-draw the scalar head
/// from `head_seed`, then run minibatch gradient descent on the mean
/// pairwise cross-entropy with a per-epoch shuffle stream.
#[allow(clippy::too_many_arguments)]
pub fn train_rm(
    emb: &Embedding,
    prompts: &[Prompt],
    trunk_init: &Network,
    head_seed: u64,
    train_set: &PreferenceDataset,
    val_set: &PreferenceDataset,
    hyper: &RmHyper,
    shuffle_seed: u64,
) -> Result<(ProxyRewardModel, Vec<EpochStats>), RmError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(RmError::EmptyDataset);
    }
    let mut net = trunk_init.clone();
    let head_layer = net.spec().num_layers() - 1;
    net.reinit_layer(head_layer, head_seed);

    let mut opt = Optimizer::new(hyper.optimizer, hyper.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grads = Gradients::zeros_like(&net);
    let mut trace_c = ForwardTrace::default();
    let mut trace_r = ForwardTrace::default();
    let mut curves = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            grads.zero();
            let inv_m = 1.0 / batch.len() as f64;
            for &i in batch {
                let pair = &train_set.pairs[i];
                let prompt = prompts
                    .get(pair.prompt_id)
                    .ok_or(RmError::UnknownPrompt { id: pair.prompt_id })?;
                let (chosen, rejected) = pair.chosen_rejected();
                let in_c = reward_input(prompt, chosen, emb);
                let in_r = reward_input(prompt, rejected, emb);
                net.forward_trace(&in_c, &mut trace_c)?;
                net.forward_trace(&in_r, &mut trace_r)?;
                let r_c = trace_c.output()[0];
                let r_r = trace_r.output()[0];
                epoch_loss += bt_loss(r_c, r_r);
                let d_chosen = bt_loss_grad(r_c, r_r);
                net.backward(&trace_c, &[d_chosen * inv_m], &mut grads)?;
                net.backward(&trace_r, &[-d_chosen * inv_m], &mut grads)?;
            }
            opt.step(&mut net, &grads)?;
        }
        let model_view = ProxyRewardModel {
            net: net.clone(),
            head_seed,
            meta: TrainingMeta {
                epochs: epoch + 1,
                head_seed,
                shuffle_seed,
                final_val_accuracy: 0.0,
                final_val_loss: 0.0,
            },
        };
        let (val_accuracy, val_loss) = validate_rm(&model_view, emb, prompts, val_set)?;
        curves.push(EpochStats {
            epoch: epoch + 1,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            val_accuracy,
        });
    }

    let (final_val_accuracy, final_val_loss) = curves
        .last()
        .map(|s| (s.val_accuracy, s.val_loss))
        .unwrap_or((0.5, bt_loss(0.0, 0.0)));
    let model = ProxyRewardModel {
        net,
        head_seed,
        meta: TrainingMeta {
            epochs: hyper.epochs,
            head_seed,
            shuffle_seed,
            final_val_accuracy,
            final_val_loss,
        },
    };
    Ok((model, curves))
}

/// Fraction of pairs whose score ordering matches the (possibly noisy)
/// label — ties count one half — plus the mean pairwise cross-entropy.
pub fn validate_rm(
    model: &ProxyRewardModel,
    emb: &Embedding,
    prompts: &[Prompt],
    val_set: &PreferenceDataset,
) -> Result<(f64, f64), RmError> {
    if val_set.is_empty() {
        return Err(RmError::EmptyDataset);
    }
    let mut correct = 0.0;
    let mut loss = 0.0;
    for pair in &val_set.pairs {
        let prompt = prompts
            .get(pair.prompt_id)
            .ok_or(RmError::UnknownPrompt { id: pair.prompt_id })?;
        let (chosen, rejected) = pair.chosen_rejected();
        let s_c = model.score(emb, prompt, chosen);
        let s_r = model.score(emb, prompt, rejected);
        correct += if s_c > s_r {
            1.0
        } else if s_c == s_r {
            0.5
        } else {
            0.0
        };
        loss += bt_loss(s_c, s_r);
    }
    let n = val_set.len() as f64;
    Ok((correct / n, loss / n))
}

/// Train `k` members from the shared trunk checkpoint. Member `i` uses head
/// seed `base_seed + i` and shuffle seed `base_seed + 1000 + i`; every
/// member sees the full training set.
#[allow(clippy::too_many_arguments)]
pub fn train_ensemble(
    k: usize,
    emb: &Embedding,
    prompts: &[Prompt],
    trunk_init: &Network,
    train_set: &PreferenceDataset,
    val_set: &PreferenceDataset,
    hyper: &RmHyper,
    base_seed: u64,
) -> Result<RewardEnsemble, RmError> {
    debug_assert!(k >= 1);
    let mut members = Vec::with_capacity(k);
    for i in 0..k as u64 {
        let (member, _) = train_rm(
            emb,
            prompts,
            trunk_init,
            base_seed + i,
            train_set,
            val_set,
            hyper,
            base_seed + 1000 + i,
        )?;
        members.push(member);
    }
    Ok(RewardEnsemble { members })
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use crate::nn::{Activation, NetworkSpec};
    use crate::pref::{generate_pairs, inject_noise, label_with_gold, split_dataset};
    use crate::seed;
    use crate::world::{build_world, GenConfig, World, WorldSpec};
    use alloc::string::ToString;

    pub fn tiny_world() -> World {
        build_world(WorldSpec {
            vocab_size: 4,
            response_length: 2,
            embed_dim: 3,
            prompt_dim: 2,
            n_prompts: 4,
            master_seed: 17,
            gold_hidden: alloc::vec![24],
            policy_hidden: alloc::vec![8],
            embed_scale: 1.0,
            embed_tail: 0.0,
            policy_logit_gain: 1.0,
            rare_token_bias: 0.0,
        })
        .unwrap()
    }

    pub fn tiny_dataset(world: &World, pairs_per_prompt: usize, noise: f64) -> PreferenceDataset {
        let mut rng = seed::rng(23, "pairs", 0);
        let (cands, _) = generate_pairs(
            &world.policy_init,
            &world.spec,
            &world.prompts,
            pairs_per_prompt,
            &GenConfig::default(),
            &mut rng,
        );
        let pairs = label_with_gold(&world.gold, world, cands).unwrap();
        let ds = PreferenceDataset {
            pairs,
            noise_rate: 0.0,
            seed: 23,
            world_hash: "test".to_string(),
        };
        inject_noise(ds, noise, &mut seed::rng(23, "noise", 0)).unwrap()
    }

    pub fn proxy_trunk(world: &World, hidden: &[usize], trunk_seed: u64) -> Network {
        let spec = NetworkSpec::with_hidden(
            world.spec.reward_input_width(),
            hidden,
            1,
            Activation::Tanh,
        )
        .unwrap();
        Network::init(spec, trunk_seed)
    }

    pub fn tiny_ensemble_k(k: usize) -> (World, RewardEnsemble) {
        let world = tiny_world();
        let ds = tiny_dataset(&world, 32, 0.25);
        let (train, val) = split_dataset(&ds, 0.2, &mut seed::rng(23, "split", 0)).unwrap();
        let trunk = proxy_trunk(&world, &[8], 31);
        let hyper = RmHyper {
            epochs: 2,
            ..RmHyper::default()
        };
        let ensemble = train_ensemble(
            k,
            &world.embedding,
            &world.prompts,
            &trunk,
            &train,
            &val,
            &hyper,
            100,
        )
        .unwrap();
        (world, ensemble)
    }

    pub fn tiny_ensemble() -> (World, RewardEnsemble) {
        tiny_ensemble_k(3)
    }
}

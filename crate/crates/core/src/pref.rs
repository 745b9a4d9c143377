//! Preference data: pair generation, gold labeling, controlled label noise
//! and train/validation splitting.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::world::{GenConfig, GoldRewardModel, Prompt, Response, World, WorldError};

/// How many resampling attempts before a colliding pair is accepted as-is.
const COLLISION_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PrefError {
    #[error("validation fraction {0} outside (0, 0.5)")]
    BadValFraction(f64),
    #[error("noise rate {0} outside [0, 1]")]
    BadNoiseRate(f64),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Which of the two responses the label prefers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrefLabel {
    A,
    B,
}

impl PrefLabel {
    pub fn flipped(self) -> PrefLabel {
        match self {
            PrefLabel::A => PrefLabel::B,
            PrefLabel::B => PrefLabel::A,
        }
    }
}

/// A generated response pair before gold scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub prompt_id: usize,
    pub response_a: Response,
    pub response_b: Response,
}

/// A labeled preference comparison. `flipped` records whether label noise
/// inverted the gold-derived label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: usize,
    pub response_a: Response,
    pub response_b: Response,
    pub gold_a: f64,
    pub gold_b: f64,
    pub label: PrefLabel,
    pub flipped: bool,
}

impl PreferencePair {
    /// (chosen, rejected) according to the current label.
    pub fn chosen_rejected(&self) -> (&Response, &Response) {
        match self.label {
            PrefLabel::A => (&self.response_a, &self.response_b),
            PrefLabel::B => (&self.response_b, &self.response_a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub pairs: Vec<PreferencePair>,
    pub noise_rate: f64,
    pub seed: u64,
    pub world_hash: String,
}

impl PreferenceDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn flipped_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.flipped).count()
    }
}

/// Sample `pairs_per_prompt` response pairs per prompt from the policy.
/// Collisions (identical responses) are resampled up to a bounded number of
/// times, then accepted; the second return value counts such acceptances.
pub fn generate_pairs(
    policy: &crate::world::PolicyModel,
    world_spec: &crate::world::WorldSpec,
    prompts: &[Prompt],
    pairs_per_prompt: usize,
    gen: &GenConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<CandidatePair>, u64) {
    debug_assert!(pairs_per_prompt >= 1);
    let mut pairs = Vec::with_capacity(prompts.len() * pairs_per_prompt);
    let mut collision_warnings = 0;
    for prompt in prompts {
        for _ in 0..pairs_per_prompt {
            let (a, _) = policy.sample_with(world_spec, prompt, gen, rng);
            let mut b = policy.sample_with(world_spec, prompt, gen, rng).0;
            let mut retries = 0;
            while b == a && retries < COLLISION_RETRIES {
                b = policy.sample_with(world_spec, prompt, gen, rng).0;
                retries += 1;
            }
            if b == a {
                collision_warnings += 1;
            }
            pairs.push(CandidatePair {
                prompt_id: prompt.id,
                response_a: a,
                response_b: b,
            });
        }
    }
    (pairs, collision_warnings)
}

/// Score both responses with the gold model and label the higher one.
/// Exact ties go to A by convention.
pub fn label_with_gold(
    gold: &GoldRewardModel,
    world: &World,
    pairs: Vec<CandidatePair>,
) -> Result<Vec<PreferencePair>, PrefError> {
    pairs
        .into_iter()
        .map(|pair| {
            let prompt = world.prompt(pair.prompt_id)?;
            let gold_a = gold.score(&world.embedding, prompt, &pair.response_a);
            let gold_b = gold.score(&world.embedding, prompt, &pair.response_b);
            let label = if gold_b > gold_a { PrefLabel::B } else { PrefLabel::A };
            Ok(PreferencePair {
                prompt_id: pair.prompt_id,
                response_a: pair.response_a,
                response_b: pair.response_b,
                gold_a,
                gold_b,
                label,
                flipped: false,
            })
        })
        .collect()
}

/// Invert the labels of exactly `round(noise_rate * n)` pairs, chosen by a
/// seeded shuffle. Applying the same selection twice restores the labels.
pub fn inject_noise(
    mut dataset: PreferenceDataset,
    noise_rate: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PreferenceDataset, PrefError> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(PrefError::BadNoiseRate(noise_rate));
    }
    let n = dataset.pairs.len();
    let n_flip = libm::round(noise_rate * n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for &i in order.iter().take(n_flip) {
        let pair = &mut dataset.pairs[i];
        pair.label = pair.label.flipped();
        pair.flipped = !pair.flipped;
    }
    dataset.noise_rate = noise_rate;
    Ok(dataset)
}

/// Seeded shuffle then split: validation gets `floor(val_fraction * n)`
/// pairs, the rest train. Both halves keep the dataset metadata.
pub fn split_dataset(
    dataset: &PreferenceDataset,
    val_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(PreferenceDataset, PreferenceDataset), PrefError> {
    if !(val_fraction > 0.0 && val_fraction < 0.5) {
        return Err(PrefError::BadValFraction(val_fraction));
    }
    let mut order: Vec<usize> = (0..dataset.pairs.len()).collect();
    order.shuffle(rng);
    let n_val = libm::floor(val_fraction * dataset.pairs.len() as f64) as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let take = |idx: &[usize]| PreferenceDataset {
        pairs: idx.iter().map(|&i| dataset.pairs[i].clone()).collect(),
        noise_rate: dataset.noise_rate,
        seed: dataset.seed,
        world_hash: dataset.world_hash.clone(),
    };
    Ok((take(train_idx), take(val_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::world::{build_world, WorldSpec};
    use alloc::string::ToString;
    use alloc::vec::Vec;

    fn test_world() -> World {
        build_world(WorldSpec {
            vocab_size: 8,
            response_length: 3,
            embed_dim: 4,
            prompt_dim: 3,
            n_prompts: 4,
            master_seed: 5,
            gold_hidden: alloc::vec![16],
            policy_hidden: alloc::vec![8],
            embed_scale: 1.0,
            embed_tail: 0.0,
            policy_logit_gain: 1.0,
            rare_token_bias: 0.0,
        })
        .unwrap()
    }

    fn labeled_dataset(world: &World, pairs_per_prompt: usize, seed: u64) -> PreferenceDataset {
        let mut rng = seed::rng(seed, "pairs", 0);
        let (cands, _) = generate_pairs(
            &world.policy_init,
            &world.spec,
            &world.prompts,
            pairs_per_prompt,
            &GenConfig::default(),
            &mut rng,
        );
        let pairs = label_with_gold(&world.gold, world, cands).unwrap();
        PreferenceDataset {
            pairs,
            noise_rate: 0.0,
            seed,
            world_hash: "test".to_string(),
        }
    }

    #[test]
    fn pair_counts_and_determinism() {
        let world = test_world();
        let gen = GenConfig::default();
        let mut rng = seed::rng(1, "pairs", 0);
        let (a, _) =
            generate_pairs(&world.policy_init, &world.spec, &world.prompts, 16, &gen, &mut rng);
        assert_eq!(a.len(), 4 * 16);
        let mut rng = seed::rng(1, "pairs", 0);
        let (b, _) =
            generate_pairs(&world.policy_init, &world.spec, &world.prompts, 16, &gen, &mut rng);
        assert_eq!(a, b);
    }

    #[test]
    fn near_deterministic_policy_warns_about_collisions() {
        let world = test_world();
        let mut rng = seed::rng(2, "pairs", 0);
        let (pairs, warnings) = generate_pairs(
            &world.policy_init,
            &world.spec,
            &world.prompts,
            4,
            &GenConfig::GREEDY,
            &mut rng,
        );
        assert!(warnings > 0);
        assert!(pairs.iter().any(|p| p.response_a == p.response_b));
    }

    #[test]
    fn labeling_prefers_higher_gold_score() {
        let world = test_world();
        let ds = labeled_dataset(&world, 32, 3);
        for pair in &ds.pairs {
            let (chosen, rejected) = pair.chosen_rejected();
            let prompt = world.prompt(pair.prompt_id).unwrap();
            assert!(world.gold_score(prompt, chosen) >= world.gold_score(prompt, rejected));
            match pair.label {
                PrefLabel::A => assert!(pair.gold_a >= pair.gold_b),
                PrefLabel::B => assert!(pair.gold_b > pair.gold_a),
            }
        }
    }

    #[test]
    fn gold_ties_break_toward_a() {
        let mut world = test_world();
        // Constant gold: every comparison is a tie.
        for layer in &mut world.gold.net.params_mut().layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let ds = labeled_dataset(&world, 8, 4);
        assert!(ds.pairs.iter().all(|p| p.label == PrefLabel::A));
        assert!(ds.pairs.iter().all(|p| p.gold_a == p.gold_b));
    }

    #[test]
    fn labels_invariant_to_center_shift() {
        let world = test_world();
        let mut shifted = world.clone();
        shifted.gold.center += 17.5;
        let a = labeled_dataset(&world, 16, 5);
        let b = labeled_dataset(&shifted, 16, 5);
        for (x, y) in a.pairs.iter().zip(b.pairs.iter()) {
            assert_eq!(x.label, y.label);
        }
    }

    #[test]
    fn noise_rate_zero_changes_nothing() {
        let world = test_world();
        let ds = labeled_dataset(&world, 16, 6);
        let before = ds.clone();
        let out = inject_noise(ds, 0.0, &mut seed::rng(6, "noise", 0)).unwrap();
        assert_eq!(out.pairs, before.pairs);
        assert_eq!(out.flipped_count(), 0);
    }

    #[test]
    fn noise_rate_one_inverts_everything() {
        let world = test_world();
        let ds = labeled_dataset(&world, 16, 7);
        let before = ds.clone();
        let out = inject_noise(ds, 1.0, &mut seed::rng(7, "noise", 0)).unwrap();
        assert_eq!(out.flipped_count(), out.pairs.len());
        for (x, y) in before.pairs.iter().zip(out.pairs.iter()) {
            assert_eq!(y.label, x.label.flipped());
        }
    }

    #[test]
    fn quarter_noise_flips_exactly_a_quarter() {
        let world = test_world();
        // 4 prompts x 512 = 2048 pairs, the desk default.
        let ds = labeled_dataset(&world, 512, 8);
        assert_eq!(ds.len(), 2048);
        let out = inject_noise(ds, 0.25, &mut seed::rng(8, "noise", 0)).unwrap();
        assert_eq!(out.flipped_count(), 512);
    }

    #[test]
    fn flip_count_is_exact_for_random_rates() {
        let world = test_world();
        let base = labeled_dataset(&world, 40, 9);
        let mut rng = seed::rng(9, "rates", 0);
        for trial in 0..50u64 {
            use rand::Rng;
            let rate: f64 = rng.random();
            let n = rng.random_range(1..=base.len());
            let ds = PreferenceDataset {
                pairs: base.pairs[..n].to_vec(),
                ..base.clone()
            };
            let out = inject_noise(ds, rate, &mut seed::rng(trial, "noise", 1)).unwrap();
            assert_eq!(
                out.flipped_count(),
                libm::round(rate * n as f64) as usize,
                "rate {rate} n {n}"
            );
        }
    }

    #[test]
    fn double_noise_with_same_selection_restores_labels() {
        let world = test_world();
        let ds = labeled_dataset(&world, 32, 10);
        let before = ds.clone();
        let once = inject_noise(ds, 0.3, &mut seed::rng(10, "noise", 0)).unwrap();
        let twice = inject_noise(once, 0.3, &mut seed::rng(10, "noise", 0)).unwrap();
        for (x, y) in before.pairs.iter().zip(twice.pairs.iter()) {
            assert_eq!(x.label, y.label);
            assert!(!y.flipped);
        }
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let world = test_world();
        let ds = labeled_dataset(&world, 512, 11);
        assert_eq!(ds.len(), 2048);
        let (train, val) = split_dataset(&ds, 0.1, &mut seed::rng(11, "split", 0)).unwrap();
        assert_eq!(val.len(), 204);
        assert_eq!(train.len(), 1844);
        assert_eq!(train.world_hash, ds.world_hash);
        assert_eq!(val.noise_rate, ds.noise_rate);
    }

    #[test]
    fn split_preserves_multiset_and_is_seed_stable() {
        let world = test_world();
        let ds = labeled_dataset(&world, 24, 12);
        let (t1, v1) = split_dataset(&ds, 0.25, &mut seed::rng(12, "split", 0)).unwrap();
        let (t2, v2) = split_dataset(&ds, 0.25, &mut seed::rng(12, "split", 0)).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);

        let mut merged: Vec<_> = t1.pairs.iter().chain(v1.pairs.iter()).collect();
        let mut original: Vec<_> = ds.pairs.iter().collect();
        let key = |p: &&PreferencePair| {
            (
                p.prompt_id,
                p.response_a.tokens().to_vec(),
                p.response_b.tokens().to_vec(),
            )
        };
        merged.sort_by_key(key);
        original.sort_by_key(key);
        assert_eq!(merged, original);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let world = test_world();
        let ds = labeled_dataset(&world, 8, 13);
        for bad in [0.0, 0.5, 0.9, -0.1] {
            assert!(split_dataset(&ds, bad, &mut seed::rng(13, "split", 0)).is_err());
        }
    }
}

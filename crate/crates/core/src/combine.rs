//! Ensemble score combination: mean, worst-case (minimum), and
//! uncertainty-weighted (mean minus a variance penalty) objectives, plus the
//! intra-ensemble variance they are built from.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rm::RewardEnsemble;
use crate::world::{Embedding, Prompt, Response};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CombineError {
    #[error("cannot combine an empty score list")]
    EmptyScores,
    #[error("member index {member} out of range for ensemble of {k}")]
    MemberOutOfRange { member: usize, k: usize },
}

/// How to turn the k member scores for one (prompt, response) into a single
/// optimization reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Combiner {
    /// One ensemble member's raw score.
    Single { member: usize },
    /// Arithmetic mean of all members.
    Mean,
    /// Worst-case optimization: the minimum member score.
    Wco,
    /// Uncertainty-weighted optimization: mean minus `lambda` times the
    /// population variance of member scores.
    Uwo { lambda: f64 },
}

impl Combiner {
    pub fn combine(&self, scores: &[f64]) -> Result<f64, CombineError> {
        if scores.is_empty() {
            return Err(CombineError::EmptyScores);
        }
        match *self {
            Combiner::Single { member } => {
                scores
                    .get(member)
                    .copied()
                    .ok_or(CombineError::MemberOutOfRange {
                        member,
                        k: scores.len(),
                    })
            }
            Combiner::Mean => Ok(mean(scores)),
            Combiner::Wco => Ok(scores.iter().cloned().fold(f64::INFINITY, f64::min)),
            Combiner::Uwo { lambda } => Ok(mean(scores) - lambda * intra_variance(scores)),
        }
    }

    /// Short tag used in CSV columns and file names, e.g. `uwo0.5`,
    /// `single2`.
    pub fn tag(&self) -> String {
        use core::fmt::Write;
        let mut s = String::new();
        match *self {
            Combiner::Single { member } => write!(s, "single{member}").unwrap(),
            Combiner::Mean => s.push_str("mean"),
            Combiner::Wco => s.push_str("wco"),
            Combiner::Uwo { lambda } => write!(s, "uwo{lambda}").unwrap(),
        }
        s
    }

    /// Family name without parameters: single, mean, wco or uwo.
    pub fn family(&self) -> &'static str {
        match self {
            Combiner::Single { .. } => "single",
            Combiner::Mean => "mean",
            Combiner::Wco => "wco",
            Combiner::Uwo { .. } => "uwo",
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Combiner::Uwo { lambda } => *lambda,
            _ => 0.0,
        }
    }
}

fn mean(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Population variance (1/k divisor) of member scores; the quantity the
/// uncertainty-weighted objective penalizes. Two passes for clarity: the
/// mean, then squared deviations from it.
pub fn intra_variance(scores: &[f64]) -> f64 {
    debug_assert!(!scores.is_empty());
    let m = mean(scores);
    scores.iter().map(|&s| (s - m) * (s - m)).sum::<f64>() / scores.len() as f64
}

/// Member-score matrix and combined scores for a batch of responses against
/// one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchScores {
    /// Combined score per response.
    pub combined: Vec<f64>,
    /// `member_scores[r][i]` is member i's score of response r.
    pub member_scores: Vec<Vec<f64>>,
}

impl BatchScores {
    pub fn variance(&self, response: usize) -> f64 {
        intra_variance(&self.member_scores[response])
    }
}

/// Evaluate every ensemble member on every response, then combine.
pub fn batch_combine(
    ensemble: &RewardEnsemble,
    combiner: &Combiner,
    emb: &Embedding,
    prompt: &Prompt,
    responses: &[Response],
) -> Result<BatchScores, CombineError> {
    let mut member_scores = Vec::with_capacity(responses.len());
    let mut combined = Vec::with_capacity(responses.len());
    for response in responses {
        let scores: Vec<f64> = ensemble
            .members()
            .iter()
            .map(|m| m.score(emb, prompt, response))
            .collect();
        combined.push(combiner.combine(&scores)?);
        member_scores.push(scores);
    }
    Ok(BatchScores {
        combined,
        member_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::Rng;

    #[test]
    fn wco_takes_minimum() {
        assert_eq!(Combiner::Wco.combine(&[1.0, 2.0, 0.5]).unwrap(), 0.5);
    }

    #[test]
    fn uwo_hand_arithmetic() {
        // mean 1, population variance 1, lambda 0.5 -> 0.5
        let r = Combiner::Uwo { lambda: 0.5 }.combine(&[0.0, 2.0]).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn mean_hand_arithmetic() {
        assert_eq!(Combiner::Mean.combine(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
    }

    #[test]
    fn all_modes_reduce_on_singleton() {
        let modes = [
            Combiner::Single { member: 0 },
            Combiner::Mean,
            Combiner::Wco,
            Combiner::Uwo { lambda: 3.5 },
        ];
        for mode in modes {
            assert_eq!(mode.combine(&[0.73]).unwrap(), 0.73, "{mode:?}");
        }
    }

    #[test]
    fn empty_scores_is_an_error() {
        assert_eq!(
            Combiner::Mean.combine(&[]),
            Err(CombineError::EmptyScores)
        );
    }

    #[test]
    fn single_out_of_range_is_an_error() {
        assert_eq!(
            Combiner::Single { member: 3 }.combine(&[1.0, 2.0]),
            Err(CombineError::MemberOutOfRange { member: 3, k: 2 })
        );
    }

    #[test]
    fn variance_examples() {
        assert_eq!(intra_variance(&[4.2, 4.2, 4.2]), 0.0);
        assert_eq!(intra_variance(&[0.0, 2.0]), 1.0);
    }

    #[test]
    fn variance_is_shift_invariant() {
        let mut rng = crate::seed::rng(1, "combine", 0);
        for _ in 0..1000 {
            let k = rng.random_range(1..=8);
            let scores: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
            let c: f64 = rng.random_range(-10.0..10.0);
            let shifted: Vec<f64> = scores.iter().map(|&s| s + c).collect();
            let (a, b) = (intra_variance(&scores), intra_variance(&shifted));
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    /// Dominance, shift equivariance, monotonicity and lambda-affinity over
    /// ten thousand random score lists.
    #[test]
    fn combiner_algebra_properties() {
        let mut rng = crate::seed::rng(2, "combine", 0);
        for _ in 0..10_000 {
            let k = rng.random_range(1..=7);
            let scores: Vec<f64> = (0..k).map(|_| rng.random_range(-10.0..10.0)).collect();
            let lambda: f64 = rng.random_range(0.0..4.0);
            let mean_v = Combiner::Mean.combine(&scores).unwrap();
            let wco_v = Combiner::Wco.combine(&scores).unwrap();
            let uwo_v = Combiner::Uwo { lambda }.combine(&scores).unwrap();
            let uwo0_v = Combiner::Uwo { lambda: 0.0 }.combine(&scores).unwrap();

            // Dominance: conservative objectives never exceed the mean.
            assert!(wco_v <= mean_v + 1e-12);
            assert!(uwo_v <= mean_v + 1e-12);
            // At lambda = 0, UWO equals the mean exactly.
            assert_eq!(uwo0_v, mean_v);

            // Shift equivariance for the three ensemble modes.
            let c: f64 = rng.random_range(-5.0..5.0);
            let shifted: Vec<f64> = scores.iter().map(|&s| s + c).collect();
            for mode in [Combiner::Mean, Combiner::Wco, Combiner::Uwo { lambda }] {
                let orig = mode.combine(&scores).unwrap();
                let moved = mode.combine(&shifted).unwrap();
                assert!(
                    (moved - (orig + c)).abs() <= 1e-9 * (1.0 + orig.abs() + c.abs()),
                    "{mode:?}: {moved} vs {}",
                    orig + c
                );
            }

            // Monotonicity of mean and wco: raising one member never lowers
            // the combined value. (UWO is deliberately non-monotone.)
            let idx = rng.random_range(0..k);
            let bump: f64 = rng.random_range(0.0..3.0);
            let mut raised = scores.clone();
            raised[idx] += bump;
            assert!(Combiner::Mean.combine(&raised).unwrap() >= mean_v - 1e-12);
            assert!(Combiner::Wco.combine(&raised).unwrap() >= wco_v - 1e-12);

            // UWO is affine in lambda: value at lambda equals
            // mean - lambda * variance by construction; check midpoint.
            let half = Combiner::Uwo { lambda: lambda / 2.0 }.combine(&scores).unwrap();
            let expect_half = (mean_v + uwo_v) / 2.0;
            assert!((half - expect_half).abs() <= 1e-9 * (1.0 + half.abs()));
        }
    }

    #[test]
    fn batch_combine_matches_scalar_path() {
        use crate::rm::tests_support::tiny_ensemble;
        let (world, ensemble) = tiny_ensemble();
        let prompt = &world.prompts[0];
        let responses: Vec<Response> = crate::world::enumerate_responses(&world.spec)
            .unwrap()
            .take(6)
            .collect();
        let combiner = Combiner::Uwo { lambda: 0.5 };
        let batch =
            batch_combine(&ensemble, &combiner, &world.embedding, prompt, &responses).unwrap();
        for (r, response) in responses.iter().enumerate() {
            let scores: Vec<f64> = ensemble
                .members()
                .iter()
                .map(|m| m.score(&world.embedding, prompt, response))
                .collect();
            assert_eq!(batch.member_scores[r], scores);
            assert_eq!(batch.combined[r], combiner.combine(&scores).unwrap());
        }
    }

    #[test]
    fn uwo_at_lambda_zero_selects_like_mean() {
        use crate::rm::tests_support::tiny_ensemble;
        let (world, ensemble) = tiny_ensemble();
        let prompt = &world.prompts[1];
        let responses: Vec<Response> = crate::world::enumerate_responses(&world.spec)
            .unwrap()
            .collect();
        let by_mean = batch_combine(
            &ensemble,
            &Combiner::Mean,
            &world.embedding,
            prompt,
            &responses,
        )
        .unwrap();
        let by_uwo0 = batch_combine(
            &ensemble,
            &Combiner::Uwo { lambda: 0.0 },
            &world.embedding,
            prompt,
            &responses,
        )
        .unwrap();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .unwrap()
                .0
        };
        assert_eq!(argmax(&by_mean.combined), argmax(&by_uwo0.combined));
        assert_eq!(by_mean.combined, by_uwo0.combined);
    }

    #[test]
    fn mean_with_k1_returns_raw_scores() {
        use crate::rm::tests_support::tiny_ensemble_k;
        let (world, ensemble) = tiny_ensemble_k(1);
        let prompt = &world.prompts[0];
        let responses: Vec<Response> = crate::world::enumerate_responses(&world.spec)
            .unwrap()
            .take(4)
            .collect();
        let batch = batch_combine(
            &ensemble,
            &Combiner::Mean,
            &world.embedding,
            prompt,
            &responses,
        )
        .unwrap();
        for (r, response) in responses.iter().enumerate() {
            let raw = ensemble.members()[0].score(&world.embedding, prompt, response);
            assert_eq!(batch.combined[r], raw);
        }
    }

    #[test]
    fn combiner_tags() {
        assert_eq!(Combiner::Mean.tag(), "mean");
        assert_eq!(Combiner::Wco.tag(), "wco");
        assert_eq!(Combiner::Uwo { lambda: 0.5 }.tag(), "uwo0.5");
        assert_eq!(Combiner::Single { member: 2 }.tag(), "single2");
    }
}

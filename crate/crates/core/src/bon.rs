//! Best-of-n evaluation: analytic KL accounting, proxy-argmax selection, the
//! naive Monte Carlo gold estimator and the pool-reusing unbiased estimator.

use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combine::{batch_combine, Combiner, CombineError};
use crate::rm::RewardEnsemble;
use crate::seed;
use crate::world::{GenConfig, PolicyModel, Prompt, Response, World};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BonError {
    #[error("best-of-n needs n >= 1, got {0}")]
    ZeroN(usize),
    #[error("n_max {n_max} exceeds pool size {pool}")]
    NMaxExceedsPool { n_max: usize, pool: usize },
    #[error("proxy and gold score lists have different lengths ({proxy} vs {gold})")]
    MisalignedScores { proxy: usize, gold: usize },
    #[error(transparent)]
    Combine(#[from] CombineError),
}

/// Analytic KL of best-of-n selection from the base policy, in nats:
/// `log n - (n - 1) / n`.
pub fn kl_bon(n: usize) -> Result<f64, BonError> {
    if n == 0 {
        return Err(BonError::ZeroN(0));
    }
    Ok(libm::log(n as f64) - (n as f64 - 1.0) / n as f64)
}

/// Index of the maximum score; ties go to the smallest original index.
pub fn bon_select(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if s > scores[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Weights of the unbiased estimator over ascending-sorted positions:
/// `w[i-1] = C(i-1, n-1) / C(N, n)` for 1-based rank i, zero below rank n.
/// Computed by the downward recurrence `w_{i-1} = w_i (i - n) / (i - 1)`
/// from the exact top weight `w_N = n / N`, so nothing ever overflows.
pub fn bon_weights(pool: usize, n: usize) -> Result<Vec<f64>, BonError> {
    if n == 0 {
        return Err(BonError::ZeroN(0));
    }
    if n > pool {
        return Err(BonError::NMaxExceedsPool { n_max: n, pool });
    }
    let mut weights = vec![0.0; pool];
    let mut w = n as f64 / pool as f64;
    let mut i = pool;
    while i >= n {
        weights[i - 1] = w;
        if w == 0.0 {
            break;
        }
        if i > n {
            w *= (i - n) as f64 / (i - 1) as f64;
        }
        i -= 1;
    }
    Ok(weights)
}

/// Unbiased best-of-n curves from one shared pool: expected gold score and
/// expected proxy score of the proxy-argmax among n pool draws, for every
/// n in `1..=n_max`. Sorting is ascending by proxy score, stable in the
/// original index.
pub fn bon_unbiased_curves(
    proxy_scores: &[f64],
    gold_scores: &[f64],
    n_max: usize,
) -> Result<(Vec<f64>, Vec<f64>), BonError> {
    if proxy_scores.len() != gold_scores.len() {
        return Err(BonError::MisalignedScores {
            proxy: proxy_scores.len(),
            gold: gold_scores.len(),
        });
    }
    let pool = proxy_scores.len();
    if n_max == 0 {
        return Err(BonError::ZeroN(0));
    }
    if n_max > pool {
        return Err(BonError::NMaxExceedsPool { n_max, pool });
    }

    let mut order: Vec<usize> = (0..pool).collect();
    order.sort_by(|&a, &b| proxy_scores[a].partial_cmp(&proxy_scores[b]).unwrap());
    let gold_sorted: Vec<f64> = order.iter().map(|&i| gold_scores[i]).collect();
    let proxy_sorted: Vec<f64> = order.iter().map(|&i| proxy_scores[i]).collect();

    let mut gold_curve = Vec::with_capacity(n_max);
    let mut proxy_curve = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut w = n as f64 / pool as f64;
        let mut gold_acc = 0.0;
        let mut proxy_acc = 0.0;
        let mut i = pool;
        while i >= n {
            gold_acc += w * gold_sorted[i - 1];
            proxy_acc += w * proxy_sorted[i - 1];
            if w == 0.0 {
                break;
            }
            if i > n {
                w *= (i - n) as f64 / (i - 1) as f64;
            }
            i -= 1;
        }
        gold_curve.push(gold_acc);
        proxy_curve.push(proxy_acc);
    }
    Ok((gold_curve, proxy_curve))
}

/// Gold-score curve only; see [`bon_unbiased_curves`].
pub fn bon_unbiased_curve(
    proxy_scores: &[f64],
    gold_scores: &[f64],
    n_max: usize,
) -> Result<Vec<f64>, BonError> {
    Ok(bon_unbiased_curves(proxy_scores, gold_scores, n_max)?.0)
}

/// Naive Monte Carlo estimate: average over trials of the gold score of the
/// proxy-argmax among n fresh policy samples.
#[allow(clippy::too_many_arguments)]
pub fn bon_naive_estimate(
    policy: &PolicyModel,
    spec: &crate::world::WorldSpec,
    prompt: &Prompt,
    gen: &GenConfig,
    proxy_fn: impl Fn(&Response) -> f64,
    gold_fn: impl Fn(&Response) -> f64,
    n: usize,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    debug_assert!(n >= 1 && trials >= 1);
    let mut total = 0.0;
    for _ in 0..trials {
        let samples: Vec<Response> = (0..n)
            .map(|_| policy.sample_with(spec, prompt, gen, rng).0)
            .collect();
        let scores: Vec<f64> = samples.iter().map(&proxy_fn).collect();
        let best = bon_select(&scores).expect("n >= 1");
        total += gold_fn(&samples[best]);
    }
    total / trials as f64
}

/// One row of a best-of-n optimization curve, averaged over prompts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonRow {
    pub n: usize,
    pub kl_nats: f64,
    pub proxy_mean: f64,
    pub gold_mean: f64,
    pub gold_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonCurve {
    pub rows: Vec<BonRow>,
    pub n_pool: usize,
    pub seed: u64,
    /// Per-prompt unbiased gold estimate at `n_max`, for win-rate
    /// comparisons.
    pub final_gold_per_prompt: Vec<f64>,
    /// Highest-combined-score pool member per prompt.
    pub pool_argmax: Vec<Response>,
}

impl BonCurve {
    pub fn final_gold(&self) -> f64 {
        self.rows.last().map(|r| r.gold_mean).unwrap_or(f64::NAN)
    }

    pub fn peak_gold(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.gold_mean)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn initial_gold(&self) -> f64 {
        self.rows.first().map(|r| r.gold_mean).unwrap_or(f64::NAN)
    }
}

/// Run best-of-n for every combiner against one shared sample pool per
/// prompt: `n_pool` policy samples are drawn once, scored once by every
/// ensemble member and the gold model, and reused across all combiners and
/// every n (the point of the unbiased estimator).
#[allow(clippy::too_many_arguments)]
pub fn run_bon_experiment(
    world: &World,
    policy: &PolicyModel,
    ensemble: &RewardEnsemble,
    combiners: &[Combiner],
    gen: &GenConfig,
    n_pool: usize,
    n_max: usize,
    experiment_seed: u64,
) -> Result<Vec<(Combiner, BonCurve)>, BonError> {
    if n_max == 0 {
        return Err(BonError::ZeroN(0));
    }
    if n_max > n_pool {
        return Err(BonError::NMaxExceedsPool { n_max, pool: n_pool });
    }
    let n_prompts = world.prompts.len();
    let mut gold_sum = vec![vec![0.0; n_max]; combiners.len()];
    let mut gold_sumsq = vec![vec![0.0; n_max]; combiners.len()];
    let mut proxy_sum = vec![vec![0.0; n_max]; combiners.len()];
    let mut final_per_prompt = vec![Vec::with_capacity(n_prompts); combiners.len()];
    let mut pool_argmax = vec![Vec::with_capacity(n_prompts); combiners.len()];

    for prompt in &world.prompts {
        let mut rng = seed::rng(experiment_seed, "bon-pool", prompt.id as u64);
        let pool: Vec<Response> = (0..n_pool)
            .map(|_| policy.sample_with(&world.spec, prompt, gen, &mut rng).0)
            .collect();
        let gold_scores: Vec<f64> = pool.iter().map(|r| world.gold_score(prompt, r)).collect();
        // Score every member once; combiners reuse the matrix.
        let member_matrix =
            batch_combine(ensemble, &Combiner::Mean, &world.embedding, prompt, &pool)?
                .member_scores;

        for (ci, combiner) in combiners.iter().enumerate() {
            let combined: Vec<f64> = member_matrix
                .iter()
                .map(|scores| combiner.combine(scores))
                .collect::<Result<_, _>>()?;
            let (gold_curve, proxy_curve) =
                bon_unbiased_curves(&combined, &gold_scores, n_max)?;
            for n in 0..n_max {
                gold_sum[ci][n] += gold_curve[n];
                gold_sumsq[ci][n] += gold_curve[n] * gold_curve[n];
                proxy_sum[ci][n] += proxy_curve[n];
            }
            final_per_prompt[ci].push(gold_curve[n_max - 1]);
            let best = bon_select(&combined).expect("pool not empty");
            pool_argmax[ci].push(pool[best].clone());
        }
    }

    let p = n_prompts as f64;
    let mut out = Vec::with_capacity(combiners.len());
    for (ci, combiner) in combiners.iter().enumerate() {
        {
            let rows = (0..n_max)
                .map(|idx| {
                    let n = idx + 1;
                    let mean = gold_sum[ci][idx] / p;
                    // Sample standard deviation across prompts over sqrt(P).
                    let var = if n_prompts > 1 {
                        ((gold_sumsq[ci][idx] - p * mean * mean) / (p - 1.0)).max(0.0)
                    } else {
                        0.0
                    };
                    Ok(BonRow {
                        n,
                        kl_nats: kl_bon(n)?,
                        proxy_mean: proxy_sum[ci][idx] / p,
                        gold_mean: mean,
                        gold_stderr: libm::sqrt(var / p),
                    })
                })
                .collect::<Result<Vec<_>, BonError>>()?;
            out.push((
                *combiner,
                BonCurve {
                    rows,
                    n_pool,
                    seed: experiment_seed,
                    final_gold_per_prompt: core::mem::take(&mut final_per_prompt[ci]),
                    pool_argmax: core::mem::take(&mut pool_argmax[ci]),
                },
            ));
        }
    }
    Ok(out)
}

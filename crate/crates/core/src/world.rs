//! Synthetic stand-in for the LLM world.
//!
//! Responses are fixed-length token sequences over a small vocabulary.
//! Prompts are random context vectors. A large frozen random network acts as
//! the gold reward model; a small trainable network is the autoregressive
//! policy. Everything is deterministic given the world's master seed, and
//! when `V^L` is small the whole response space can be enumerated exactly.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Network, NetworkSpec, NnError};
use crate::seed;

/// Worlds with more responses than this refuse exact enumeration.
pub const ENUMERATION_LIMIT: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorldError {
    #[error("world spec field `{0}` must be >= 1")]
    ZeroField(&'static str),
    #[error("response space of {space} sequences exceeds enumeration limit {ENUMERATION_LIMIT}")]
    NotEnumerable { space: u64 },
    #[error("token {token} out of range for vocabulary size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("response has {got} tokens, world expects {expected}")]
    ResponseLength { expected: usize, got: usize },
    #[error("prompt id {id} not in this world's prompt set")]
    UnknownPrompt { id: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Dimensions and master seed of a synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub vocab_size: usize,
    pub response_length: usize,
    pub embed_dim: usize,
    pub prompt_dim: usize,
    pub n_prompts: usize,
    pub master_seed: u64,
    /// Hidden widths of the frozen gold network.
    pub gold_hidden: Vec<usize>,
    /// Hidden widths of the policy network.
    pub policy_hidden: Vec<usize>,
    /// Standard deviation of embedding-table entries. Larger values drive
    /// the gold network's units into saturation, making the gold landscape
    /// rugged relative to what small proxies can represent.
    pub embed_scale: f64,
    /// Log-normal sigma of per-token row scales. Nonzero values create rare
    /// outlier tokens whose feature rows sit far outside the typical range,
    /// the desk analog of degenerate text directions.
    pub embed_tail: f64,
    /// Gain on the initial policy's output-layer weights. Values above 1
    /// concentrate the initial policy the way supervised fine-tuning would,
    /// so nucleus-truncated data covers only a sliver of the response space.
    pub policy_logit_gain: f64,
    /// Strength of the initial policy's token-frequency prior: output biases
    /// are offset by `-rare_token_bias * standardized log row norm`, making
    /// feature-space outlier tokens rare, the way undertrained rare-token
    /// embeddings behave in real language models.
    pub rare_token_bias: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            vocab_size: 16,
            response_length: 4,
            embed_dim: 8,
            prompt_dim: 8,
            n_prompts: 32,
            master_seed: 0,
            gold_hidden: vec![256, 256],
            policy_hidden: vec![32],
            embed_scale: 1.0,
            embed_tail: 0.0,
            policy_logit_gain: 1.0,
            rare_token_bias: 0.0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), WorldError> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("response_length", self.response_length),
            ("embed_dim", self.embed_dim),
            ("prompt_dim", self.prompt_dim),
            ("n_prompts", self.n_prompts),
        ] {
            if v == 0 {
                return Err(WorldError::ZeroField(name));
            }
        }
        Ok(())
    }

    /// `V^L` when it fits in a u64.
    pub fn response_space(&self) -> Option<u64> {
        (self.vocab_size as u64).checked_pow(self.response_length as u32)
    }

    pub fn enumerable(&self) -> bool {
        matches!(self.response_space(), Some(n) if n <= ENUMERATION_LIMIT)
    }

    /// Input width of reward networks: prompt context plus embedded tokens.
    pub fn reward_input_width(&self) -> usize {
        self.prompt_dim + self.response_length * self.embed_dim
    }

    /// Input width of the policy: prompt context plus one-hot token history.
    pub fn policy_input_width(&self) -> usize {
        self.prompt_dim + self.response_length * self.vocab_size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: usize,
    pub context: Vec<f64>,
}

/// A fixed-length token sequence; the unit scored by reward models.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Response {
    tokens: Vec<u32>,
}

impl Response {
    pub fn new(tokens: Vec<u32>, spec: &WorldSpec) -> Result<Response, WorldError> {
        if tokens.len() != spec.response_length {
            return Err(WorldError::ResponseLength {
                expected: spec.response_length,
                got: tokens.len(),
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= spec.vocab_size) {
            return Err(WorldError::TokenOutOfRange {
                token: t,
                vocab: spec.vocab_size,
            });
        }
        Ok(Response { tokens })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Decode the `index`-th response in lexicographic order.
    pub fn from_index(index: u64, vocab_size: usize, response_length: usize) -> Response {
        let mut tokens = vec![0u32; response_length];
        let mut rest = index;
        for slot in tokens.iter_mut().rev() {
            *slot = (rest % vocab_size as u64) as u32;
            rest /= vocab_size as u64;
        }
        debug_assert_eq!(rest, 0);
        Response { tokens }
    }

    /// Position of this response in lexicographic order.
    pub fn to_index(&self, vocab_size: usize) -> u64 {
        self.tokens
            .iter()
            .fold(0u64, |acc, &t| acc * vocab_size as u64 + u64::from(t))
    }
}

/// Token embedding table shared by the gold and proxy reward models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    vocab_size: usize,
    dim: usize,
    table: Vec<f64>,
}

impl Embedding {
    fn random(
        vocab_size: usize,
        dim: usize,
        scale: f64,
        tail: f64,
        rng: &mut ChaCha8Rng,
    ) -> Embedding {
        let mut table = Vec::with_capacity(vocab_size * dim);
        for _ in 0..vocab_size {
            // Per-token row gain with median 1; heavy-tailed when tail > 0.
            let z: f64 = StandardNormal.sample(rng);
            let row_scale = scale * libm::exp(tail * z);
            for _ in 0..dim {
                let e: f64 = StandardNormal.sample(rng);
                table.push(e * row_scale);
            }
        }
        Embedding {
            vocab_size,
            dim,
            table,
        }
    }

    pub fn row(&self, token: u32) -> &[f64] {
        let t = token as usize;
        debug_assert!(t < self.vocab_size);
        &self.table[t * self.dim..(t + 1) * self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Feature vector seen by reward models: prompt context, then the embedding
/// of every response token in order.
pub fn reward_input(prompt: &Prompt, response: &Response, emb: &Embedding) -> Vec<f64> {
    let mut input = Vec::with_capacity(prompt.context.len() + response.tokens.len() * emb.dim);
    input.extend_from_slice(&prompt.context);
    for &t in response.tokens() {
        input.extend_from_slice(emb.row(t));
    }
    input
}

/// Large frozen scorer standing in for true preferences. `center` is the
/// normalization offset subtracted from every raw score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRewardModel {
    pub net: Network,
    pub center: f64,
}

impl GoldRewardModel {
    pub fn score(&self, emb: &Embedding, prompt: &Prompt, response: &Response) -> f64 {
        let input = reward_input(prompt, response, emb);
        self.net.forward_scalar(&input).expect("gold input shape") - self.center
    }

    fn raw_score(&self, emb: &Embedding, prompt: &Prompt, response: &Response) -> f64 {
        let input = reward_input(prompt, response, emb);
        self.net.forward_scalar(&input).expect("gold input shape")
    }
}

/// Sampling knobs: softmax temperature and nucleus mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            temperature: 1.0,
            top_p: 0.9,
        }
    }
}

impl GenConfig {
    /// Untruncated sampling, as used during PPO training.
    pub const UNTRUNCATED: GenConfig = GenConfig {
        temperature: 1.0,
        top_p: 1.0,
    };

    /// Deterministic argmax decoding (the temperature -> 0 limit).
    pub const GREEDY: GenConfig = GenConfig {
        temperature: 0.0,
        top_p: 1.0,
    };
}

/// Per-step token distribution after temperature and nucleus truncation.
#[derive(Debug, Clone)]
pub struct StepDist {
    /// Probability of each token; exactly zero outside the nucleus.
    pub probs: Vec<f64>,
    /// Log-probability of each token; `-inf` outside the nucleus.
    pub logprobs: Vec<f64>,
    /// Token indices inside the nucleus, in descending-probability order.
    pub nucleus: Vec<u32>,
}

/// Trainable autoregressive policy over responses.
///
/// The network maps (prompt context ++ one-hot history, zero-padded to L
/// slots) to V logits for the next token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub net: Network,
    pub temperature: f64,
    pub top_p: f64,
}

impl PolicyModel {
    /// Build the step input for a given prefix.
    pub fn step_input(spec: &WorldSpec, prompt: &Prompt, prefix: &[u32]) -> Vec<f64> {
        debug_assert!(prefix.len() <= spec.response_length);
        let mut input = vec![0.0; spec.policy_input_width()];
        input[..spec.prompt_dim].copy_from_slice(&prompt.context);
        for (pos, &t) in prefix.iter().enumerate() {
            input[spec.prompt_dim + pos * spec.vocab_size + t as usize] = 1.0;
        }
        input
    }

    pub fn step_logits(&self, spec: &WorldSpec, prompt: &Prompt, prefix: &[u32]) -> Vec<f64> {
        let input = Self::step_input(spec, prompt, prefix);
        self.net.forward(&input).expect("policy input shape")
    }

    /// Temperature scaling, then nucleus truncation and renormalization.
    pub fn step_dist(logits: &[f64], gen: &GenConfig) -> StepDist {
        let v = logits.len();
        if gen.temperature == 0.0 {
            // Argmax mode: point mass, ties to the smallest index.
            let mut best = 0;
            for (i, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = i;
                }
            }
            let mut probs = vec![0.0; v];
            let mut logprobs = vec![f64::NEG_INFINITY; v];
            probs[best] = 1.0;
            logprobs[best] = 0.0;
            return StepDist {
                probs,
                logprobs,
                nucleus: vec![best as u32],
            };
        }

        let scaled: Vec<f64> = logits.iter().map(|&z| z / gen.temperature).collect();
        let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp_sum: f64 = scaled.iter().map(|&z| libm::exp(z - max)).sum();
        let lse = max + libm::log(exp_sum);
        let logprobs_full: Vec<f64> = scaled.iter().map(|&z| z - lse).collect();
        let probs_full: Vec<f64> = logprobs_full.iter().map(|&lp| libm::exp(lp)).collect();

        let mut order: Vec<u32> = (0..v as u32).collect();
        order.sort_by(|&a, &b| {
            probs_full[b as usize]
                .partial_cmp(&probs_full[a as usize])
                .unwrap()
                .then(a.cmp(&b))
        });

        if gen.top_p >= 1.0 {
            return StepDist {
                probs: probs_full,
                logprobs: logprobs_full,
                nucleus: order,
            };
        }

        // Nucleus: smallest prefix of the descending-probability order whose
        // mass reaches top_p; at least one token always survives.
        let mut kept = 0;
        let mut mass = 0.0;
        for &t in &order {
            mass += probs_full[t as usize];
            kept += 1;
            if mass >= gen.top_p {
                break;
            }
        }
        order.truncate(kept);
        let log_mass = libm::log(mass);
        let mut probs = vec![0.0; v];
        let mut logprobs = vec![f64::NEG_INFINITY; v];
        for &t in &order {
            probs[t as usize] = probs_full[t as usize] / mass;
            logprobs[t as usize] = logprobs_full[t as usize] - log_mass;
        }
        StepDist {
            probs,
            logprobs,
            nucleus: order,
        }
    }

    fn draw(dist: &StepDist, rng: &mut ChaCha8Rng) -> u32 {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for &t in &dist.nucleus {
            cum += dist.probs[t as usize];
            if u < cum {
                return t;
            }
        }
        *dist.nucleus.last().expect("nucleus never empty")
    }

    /// Sample a response with this policy's own temperature and top-p.
    pub fn sample(
        &self,
        spec: &WorldSpec,
        prompt: &Prompt,
        rng: &mut ChaCha8Rng,
    ) -> (Response, f64) {
        let gen = GenConfig {
            temperature: self.temperature,
            top_p: self.top_p,
        };
        self.sample_with(spec, prompt, &gen, rng)
    }

    /// Sample autoregressively; the returned log-probability is under the
    /// truncated, renormalized distribution actually sampled from.
    pub fn sample_with(
        &self,
        spec: &WorldSpec,
        prompt: &Prompt,
        gen: &GenConfig,
        rng: &mut ChaCha8Rng,
    ) -> (Response, f64) {
        let mut prefix: Vec<u32> = Vec::with_capacity(spec.response_length);
        let mut logprob = 0.0;
        for _ in 0..spec.response_length {
            let logits = self.step_logits(spec, prompt, &prefix);
            let dist = Self::step_dist(&logits, gen);
            let t = Self::draw(&dist, rng);
            logprob += dist.logprobs[t as usize];
            prefix.push(t);
        }
        (Response { tokens: prefix }, logprob)
    }

    /// Log-probability of `response` under the same truncated distributions
    /// sampling uses; `-inf` when a token falls outside the nucleus.
    pub fn logprob(
        &self,
        spec: &WorldSpec,
        prompt: &Prompt,
        response: &Response,
        gen: &GenConfig,
    ) -> f64 {
        let mut logprob = 0.0;
        for (pos, &t) in response.tokens().iter().enumerate() {
            let logits = self.step_logits(spec, prompt, &response.tokens()[..pos]);
            let dist = Self::step_dist(&logits, gen);
            logprob += dist.logprobs[t as usize];
            if logprob == f64::NEG_INFINITY {
                return logprob;
            }
        }
        logprob
    }

    /// Log-probabilities of every response in lexicographic order, computed
    /// level by level over the prefix tree. Requires an enumerable world.
    pub fn logprob_all(
        &self,
        spec: &WorldSpec,
        prompt: &Prompt,
        gen: &GenConfig,
    ) -> Result<Vec<f64>, WorldError> {
        let space = spec
            .response_space()
            .filter(|&n| n <= ENUMERATION_LIMIT)
            .ok_or(WorldError::NotEnumerable {
                space: spec.response_space().unwrap_or(u64::MAX),
            })?;
        let v = spec.vocab_size;
        let mut level: Vec<f64> = vec![0.0];
        let mut prefix = vec![0u32; spec.response_length];
        for depth in 0..spec.response_length {
            let mut next = vec![f64::NEG_INFINITY; level.len() * v];
            for (i, &lp) in level.iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                // Decode prefix `i` at this depth (big-endian base-V digits).
                let mut rest = i;
                for slot in prefix[..depth].iter_mut().rev() {
                    *slot = (rest % v) as u32;
                    rest /= v;
                }
                let logits = self.step_logits(spec, prompt, &prefix[..depth]);
                let dist = Self::step_dist(&logits, gen);
                for t in 0..v {
                    next[i * v + t] = lp + dist.logprobs[t];
                }
            }
            level = next;
        }
        debug_assert_eq!(level.len() as u64, space);
        Ok(level)
    }
}

/// All responses of an enumerable world in lexicographic order.
pub fn enumerate_responses(spec: &WorldSpec) -> Result<ResponseIter, WorldError> {
    match spec.response_space() {
        Some(space) if space <= ENUMERATION_LIMIT => Ok(ResponseIter {
            next: 0,
            space,
            vocab_size: spec.vocab_size,
            response_length: spec.response_length,
        }),
        other => Err(WorldError::NotEnumerable {
            space: other.unwrap_or(u64::MAX),
        }),
    }
}

pub struct ResponseIter {
    next: u64,
    space: u64,
    vocab_size: usize,
    response_length: usize,
}

impl Iterator for ResponseIter {
    type Item = Response;

    fn next(&mut self) -> Option<Response> {
        if self.next >= self.space {
            return None;
        }
        let r = Response::from_index(self.next, self.vocab_size, self.response_length);
        self.next += 1;
        Some(r)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.space - self.next) as usize;
        (left, Some(left))
    }
}

/// A fully built world: prompt set, shared embedding, frozen gold model and
/// the initial policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub spec: WorldSpec,
    pub prompts: Vec<Prompt>,
    pub embedding: Embedding,
    pub gold: GoldRewardModel,
    pub policy_init: PolicyModel,
}

impl World {
    pub fn prompt(&self, id: usize) -> Result<&Prompt, WorldError> {
        self.prompts.get(id).ok_or(WorldError::UnknownPrompt { id })
    }

    pub fn gold_score(&self, prompt: &Prompt, response: &Response) -> f64 {
        self.gold.score(&self.embedding, prompt, response)
    }
}

/// Deterministically build prompts, embedding, gold model and initial policy
/// from the spec's master seed.
pub fn build_world(spec: WorldSpec) -> Result<World, WorldError> {
    spec.validate()?;
    let master = spec.master_seed;

    let mut prompt_rng = seed::rng(master, "prompts", 0);
    let prompts = (0..spec.n_prompts)
        .map(|id| Prompt {
            id,
            context: (0..spec.prompt_dim)
                .map(|_| StandardNormal.sample(&mut prompt_rng))
                .collect(),
        })
        .collect();

    let mut emb_rng = seed::rng(master, "embedding", 0);
    let embedding = Embedding::random(
        spec.vocab_size,
        spec.embed_dim,
        spec.embed_scale,
        spec.embed_tail,
        &mut emb_rng,
    );

    let gold_spec = NetworkSpec::with_hidden(
        spec.reward_input_width(),
        &spec.gold_hidden,
        1,
        Activation::Tanh,
    )?;
    let gold = GoldRewardModel {
        net: Network::init(gold_spec, seed::derive(master, "gold", 0)),
        center: 0.0,
    };

    let policy_spec = NetworkSpec::with_hidden(
        spec.policy_input_width(),
        &spec.policy_hidden,
        spec.vocab_size,
        Activation::Tanh,
    )?;
    let mut policy_net = Network::init(policy_spec, seed::derive(master, "policy_init", 0));
    let last = policy_net.spec().num_layers() - 1;
    if spec.policy_logit_gain != 1.0 {
        for w in policy_net.params_mut().layers[last].weights.iter_mut() {
            *w *= spec.policy_logit_gain;
        }
    }
    if spec.rare_token_bias != 0.0 {
        // Token-frequency prior: the farther out a token's embedding row,
        // the rarer the initial policy makes it.
        let log_norms: Vec<f64> = (0..spec.vocab_size as u32)
            .map(|t| {
                let norm: f64 = embedding.row(t).iter().map(|x| x * x).sum::<f64>();
                0.5 * libm::log(norm.max(1e-300))
            })
            .collect();
        let mean = log_norms.iter().sum::<f64>() / log_norms.len() as f64;
        let var = log_norms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
            / log_norms.len() as f64;
        let std = libm::sqrt(var).max(1e-12);
        for (t, &ln) in log_norms.iter().enumerate() {
            policy_net.params_mut().layers[last].biases[t] -=
                spec.rare_token_bias * (ln - mean) / std;
        }
    }
    let policy_init = PolicyModel {
        net: policy_net,
        temperature: 1.0,
        top_p: 1.0,
    };

    Ok(World {
        spec,
        prompts,
        embedding,
        gold,
        policy_init,
    })
}

/// Result of centering the gold model on the initial policy's scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizeStats {
    pub center: f64,
    pub sample_std: f64,
    pub standard_error: f64,
}

/// Set the gold model's center to the Monte Carlo mean of raw gold scores
/// over policy samples spread round-robin across all prompts.
pub fn normalize_gold(
    gold: &mut GoldRewardModel,
    policy: &PolicyModel,
    prompts: &[Prompt],
    emb: &Embedding,
    spec: &WorldSpec,
    gen: &GenConfig,
    n_samples: usize,
    rng: &mut ChaCha8Rng,
) -> NormalizeStats {
    debug_assert!(n_samples >= 1);
    // Welford accumulation: exact for constant scores, stable otherwise.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n_samples {
        let prompt = &prompts[i % prompts.len()];
        let (response, _) = policy.sample_with(spec, prompt, gen, rng);
        let raw = gold.raw_score(emb, prompt, &response);
        let count = (i + 1) as f64;
        let delta = raw - mean;
        mean += delta / count;
        m2 += delta * (raw - mean);
    }
    let n = n_samples as f64;
    let sample_std = libm::sqrt((m2 / n).max(0.0));
    gold.center = mean;
    NormalizeStats {
        center: mean,
        sample_std,
        standard_error: sample_std / libm::sqrt(n),
    }
}

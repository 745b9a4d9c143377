//! Experiment configuration: a single TOML file with sweepable axes, resolved
//! into self-contained cells addressed by a content hash.
//!
//! Unknown keys are rejected so a typo cannot silently misconfigure a sweep.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rmlab_core::combine::Combiner;
use rmlab_core::nn::{Activation, OptimizerKind};
use rmlab_core::world::{GenConfig, WorldSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {got} (this build understands {SCHEMA_VERSION})")]
    SchemaVersion { got: u32 },
    #[error("config field error: {0}")]
    Invalid(String),
    #[error("unknown combiner spec `{0}` (expected single[:i], mean, wco or uwo:<lambda>)")]
    BadCombiner(String),
}

/// World geometry; the master seed is derived per experiment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub vocab_size: usize,
    pub response_length: usize,
    pub embed_dim: usize,
    pub prompt_dim: usize,
    pub n_prompts: usize,
    pub gold_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
    pub embed_scale: f64,
    pub embed_tail: f64,
    pub policy_logit_gain: f64,
    pub rare_token_bias: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        let spec = WorldSpec::default();
        WorldConfig {
            vocab_size: spec.vocab_size,
            response_length: spec.response_length,
            embed_dim: spec.embed_dim,
            prompt_dim: spec.prompt_dim,
            n_prompts: spec.n_prompts,
            gold_hidden: spec.gold_hidden,
            policy_hidden: spec.policy_hidden,
            embed_scale: spec.embed_scale,
            embed_tail: spec.embed_tail,
            policy_logit_gain: spec.policy_logit_gain,
            rare_token_bias: spec.rare_token_bias,
        }
    }
}

impl WorldConfig {
    pub fn to_spec(&self, master_seed: u64) -> WorldSpec {
        WorldSpec {
            vocab_size: self.vocab_size,
            response_length: self.response_length,
            embed_dim: self.embed_dim,
            prompt_dim: self.prompt_dim,
            n_prompts: self.n_prompts,
            master_seed,
            gold_hidden: self.gold_hidden.clone(),
            policy_hidden: self.policy_hidden.clone(),
            embed_scale: self.embed_scale,
            embed_tail: self.embed_tail,
            policy_logit_gain: self.policy_logit_gain,
            rare_token_bias: self.rare_token_bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Total preference pairs; sweep axis. Must divide evenly across prompts.
    pub pairs: Vec<usize>,
    pub noise_rate: f64,
    pub val_fraction: f64,
    pub temperature: f64,
    pub top_p: f64,
    /// Monte Carlo samples for centering the gold model.
    pub normalize_samples: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            pairs: vec![2048],
            noise_rate: 0.25,
            val_fraction: 0.1,
            temperature: 1.0,
            top_p: 0.9,
            normalize_samples: 10_000,
        }
    }
}

impl DatasetConfig {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            temperature: self.temperature,
            top_p: self.top_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmConfig {
    /// Trunk hidden widths; sweep axis (one entry per size point).
    pub hidden: Vec<Vec<usize>>,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl Default for RmConfig {
    fn default() -> Self {
        let hyper = rmlab_core::rm::RmHyper::default();
        RmConfig {
            hidden: vec![vec![16]],
            activation: Activation::Relu,
            epochs: hyper.epochs,
            learning_rate: hyper.learning_rate,
            batch_size: hyper.batch_size,
            optimizer: hyper.optimizer,
        }
    }
}

impl RmConfig {
    pub fn hyper(&self) -> rmlab_core::rm::RmHyper {
        rmlab_core::rm::RmHyper {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// Ensemble cardinality; sweep axis.
    pub k: Vec<usize>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { k: vec![5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "lowercase")]
pub enum OptimizerSection {
    Bon(BonSection),
    Ppo(PpoSection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BonSection {
    pub n_pool: usize,
    pub n_max: usize,
}

impl Default for BonSection {
    fn default() -> Self {
        BonSection {
            n_pool: 2048,
            n_max: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoSection {
    pub steps: usize,
    pub rollouts_per_step: usize,
    pub minibatch: usize,
    pub ppo_epochs: usize,
    pub clip: f64,
    /// KL-penalty weights; sweep axis.
    pub beta: Vec<f64>,
    pub learning_rate: f64,
    pub baseline_ema: f64,
}

impl Default for PpoSection {
    fn default() -> Self {
        let cfg = rmlab_core::ppo::PpoConfig::default();
        PpoSection {
            steps: cfg.steps,
            rollouts_per_step: cfg.rollouts_per_step,
            minibatch: cfg.minibatch,
            ppo_epochs: cfg.ppo_epochs,
            clip: cfg.clip,
            beta: vec![cfg.beta],
            learning_rate: cfg.learning_rate,
            baseline_ema: cfg.baseline_ema,
        }
    }
}

impl PpoSection {
    pub fn to_core(&self, beta: f64) -> rmlab_core::ppo::PpoConfig {
        rmlab_core::ppo::PpoConfig {
            steps: self.steps,
            rollouts_per_step: self.rollouts_per_step,
            minibatch: self.minibatch,
            ppo_epochs: self.ppo_epochs,
            clip: self.clip,
            beta,
            learning_rate: self.learning_rate,
            baseline_ema: self.baseline_ema,
            log_gold: true,
        }
    }
}

/// The whole experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub rm: RmConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    /// Combiner grid: `single` (expands over members), `single:<i>`, `mean`,
    /// `wco`, `uwo:<lambda>`.
    #[serde(default = "default_combiners")]
    pub combiners: Vec<String>,
    pub optimizer: OptimizerSection,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_combiners() -> Vec<String> {
    vec![
        "single".to_string(),
        "mean".to_string(),
        "wco".to_string(),
        "uwo:0.5".to_string(),
    ]
}

/// A combiner entry before member expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CombinerSpec {
    /// All member indices `0..k`, reported as the single-RM average.
    SingleAll,
    Fixed(Combiner),
}

pub fn parse_combiner(s: &str) -> Result<CombinerSpec, ConfigError> {
    let s = s.trim();
    if s == "single" {
        return Ok(CombinerSpec::SingleAll);
    }
    if s == "mean" {
        return Ok(CombinerSpec::Fixed(Combiner::Mean));
    }
    if s == "wco" {
        return Ok(CombinerSpec::Fixed(Combiner::Wco));
    }
    if let Some(rest) = s.strip_prefix("single:") {
        let member: usize = rest
            .parse()
            .map_err(|_| ConfigError::BadCombiner(s.to_string()))?;
        return Ok(CombinerSpec::Fixed(Combiner::Single { member }));
    }
    if let Some(rest) = s.strip_prefix("uwo:") {
        let lambda: f64 = rest
            .parse()
            .map_err(|_| ConfigError::BadCombiner(s.to_string()))?;
        if lambda < 0.0 {
            return Err(ConfigError::BadCombiner(s.to_string()));
        }
        return Ok(CombinerSpec::Fixed(Combiner::Uwo { lambda }));
    }
    Err(ConfigError::BadCombiner(s.to_string()))
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion {
                got: self.schema_version,
            });
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must not be empty".into()));
        }
        if self.dataset.pairs.is_empty() {
            return Err(ConfigError::Invalid("dataset.pairs must not be empty".into()));
        }
        for &pairs in &self.dataset.pairs {
            if pairs == 0 || pairs % self.world.n_prompts != 0 {
                return Err(ConfigError::Invalid(format!(
                    "dataset.pairs value {pairs} must be a positive multiple of n_prompts ({})",
                    self.world.n_prompts
                )));
            }
        }
        if self.ensemble.k.is_empty() || self.ensemble.k.contains(&0) {
            return Err(ConfigError::Invalid("ensemble.k values must be >= 1".into()));
        }
        if self.combiners.is_empty() {
            return Err(ConfigError::Invalid("combiners must not be empty".into()));
        }
        for c in &self.combiners {
            parse_combiner(c)?;
        }
        if let OptimizerSection::Ppo(ppo) = &self.optimizer {
            if ppo.beta.is_empty() {
                return Err(ConfigError::Invalid("optimizer.beta must not be empty".into()));
            }
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes. The combiner grid stays inside
    /// each cell so that one trained ensemble serves every combiner.
    pub fn cells(&self) -> Vec<CellConfig> {
        let mut cells = Vec::new();
        for &pairs in &self.dataset.pairs {
            for hidden in &self.rm.hidden {
                for &k in &self.ensemble.k {
                    let betas: Vec<Option<f64>> = match &self.optimizer {
                        OptimizerSection::Bon(_) => vec![None],
                        OptimizerSection::Ppo(p) => p.beta.iter().map(|&b| Some(b)).collect(),
                    };
                    for beta in betas {
                        cells.push(CellConfig {
                            schema_version: self.schema_version,
                            world: self.world.clone(),
                            dataset: ResolvedDataset {
                                pairs,
                                noise_rate: self.dataset.noise_rate,
                                val_fraction: self.dataset.val_fraction,
                                temperature: self.dataset.temperature,
                                top_p: self.dataset.top_p,
                                normalize_samples: self.dataset.normalize_samples,
                            },
                            rm: ResolvedRm {
                                hidden: hidden.clone(),
                                activation: self.rm.activation,
                                epochs: self.rm.epochs,
                                learning_rate: self.rm.learning_rate,
                                batch_size: self.rm.batch_size,
                                optimizer: self.rm.optimizer,
                            },
                            k,
                            combiners: self.combiners.clone(),
                            optimizer: match &self.optimizer {
                                OptimizerSection::Bon(b) => ResolvedOptimizer::Bon {
                                    n_pool: b.n_pool,
                                    n_max: b.n_max,
                                },
                                OptimizerSection::Ppo(p) => ResolvedOptimizer::Ppo {
                                    section: p.clone(),
                                    beta: beta.unwrap(),
                                },
                            },
                        });
                    }
                }
            }
        }
        cells
    }
}

/// One fully resolved sweep point; `(cell hash, seed)` determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub schema_version: u32,
    pub world: WorldConfig,
    pub dataset: ResolvedDataset,
    pub rm: ResolvedRm,
    pub k: usize,
    pub combiners: Vec<String>,
    pub optimizer: ResolvedOptimizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDataset {
    pub pairs: usize,
    pub noise_rate: f64,
    pub val_fraction: f64,
    pub temperature: f64,
    pub top_p: f64,
    pub normalize_samples: usize,
}

impl ResolvedDataset {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            temperature: self.temperature,
            top_p: self.top_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRm {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl ResolvedRm {
    pub fn hyper(&self) -> rmlab_core::rm::RmHyper {
        rmlab_core::rm::RmHyper {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ResolvedOptimizer {
    Bon { n_pool: usize, n_max: usize },
    Ppo { section: PpoSection, beta: f64 },
}

impl ResolvedOptimizer {
    pub fn beta(&self) -> f64 {
        match self {
            ResolvedOptimizer::Bon { .. } => 0.0,
            ResolvedOptimizer::Ppo { beta, .. } => *beta,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ResolvedOptimizer::Bon { .. } => "bon",
            ResolvedOptimizer::Ppo { .. } => "ppo",
        }
    }
}

impl CellConfig {
    /// Content hash over the canonical JSON encoding; seeds are not part of
    /// the hash (they index the run directory next to it).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("cell serializes");
        let digest = Sha256::digest(&canonical);
        hex_prefix(&digest, 16)
    }

    /// Combiners of this cell with `single` expanded over the k members.
    pub fn expanded_combiners(&self) -> Result<Vec<Combiner>, ConfigError> {
        let mut out = Vec::new();
        for spec in &self.combiners {
            match parse_combiner(spec)? {
                CombinerSpec::SingleAll => {
                    for member in 0..self.k {
                        out.push(Combiner::Single { member });
                    }
                }
                CombinerSpec::Fixed(c) => out.push(c),
            }
        }
        Ok(out)
    }
}

pub fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in bytes {
        use std::fmt::Write;
        write!(s, "{b:02x}").unwrap();
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1

[optimizer]
kind = "bon"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.dataset.pairs, vec![2048]);
        assert_eq!(cfg.ensemble.k, vec![5]);
        assert_eq!(cfg.cells().len(), 1);
    }

    #[test]
    fn roundtrips_losslessly() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let text = cfg.to_toml();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = r#"
schema_version = 1
totally_unknown = 3

[optimizer]
kind = "bon"
"#;
        assert!(ExperimentConfig::from_toml(bad).is_err());

        let bad_nested = r#"
schema_version = 1

[world]
vocab_sized = 16

[optimizer]
kind = "bon"
"#;
        assert!(ExperimentConfig::from_toml(bad_nested).is_err());
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let bad = r#"
schema_version = 2

[optimizer]
kind = "bon"
"#;
        assert!(matches!(
            ExperimentConfig::from_toml(bad),
            Err(ConfigError::SchemaVersion { got: 2 })
        ));
    }

    #[test]
    fn combiner_grammar() {
        assert_eq!(parse_combiner("mean").unwrap(), CombinerSpec::Fixed(Combiner::Mean));
        assert_eq!(parse_combiner("wco").unwrap(), CombinerSpec::Fixed(Combiner::Wco));
        assert_eq!(parse_combiner("single").unwrap(), CombinerSpec::SingleAll);
        assert_eq!(
            parse_combiner("single:3").unwrap(),
            CombinerSpec::Fixed(Combiner::Single { member: 3 })
        );
        assert_eq!(
            parse_combiner("uwo:0.25").unwrap(),
            CombinerSpec::Fixed(Combiner::Uwo { lambda: 0.25 })
        );
        assert!(parse_combiner("uwo:-1").is_err());
        assert!(parse_combiner("median").is_err());
    }

    #[test]
    fn cells_are_the_axis_product() {
        let text = r#"
schema_version = 1
seeds = [0, 1, 2]

[dataset]
pairs = [512, 2048]

[ensemble]
k = [2, 3, 5]

[optimizer]
kind = "ppo"
beta = [0.0, 0.01]
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        // 2 pair counts x 1 rm size x 3 k values x 2 betas
        assert_eq!(cfg.cells().len(), 12);
        // Hashes are distinct and stable.
        let hashes: std::collections::BTreeSet<String> =
            cfg.cells().iter().map(|c| c.hash()).collect();
        assert_eq!(hashes.len(), 12);
        assert_eq!(
            cfg.cells()[0].hash(),
            ExperimentConfig::from_toml(text).unwrap().cells()[0].hash()
        );
    }

    #[test]
    fn single_expansion_follows_k() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let cell = &cfg.cells()[0];
        let combiners = cell.expanded_combiners().unwrap();
        // 5 singles + mean + wco + uwo
        assert_eq!(combiners.len(), 8);
        assert_eq!(combiners[0], Combiner::Single { member: 0 });
        assert_eq!(combiners[4], Combiner::Single { member: 4 });
    }

    #[test]
    fn pairs_must_divide_prompts() {
        let bad = r#"
schema_version = 1

[dataset]
pairs = [100]

[optimizer]
kind = "bon"
"#;
        assert!(ExperimentConfig::from_toml(bad).is_err());
    }
}

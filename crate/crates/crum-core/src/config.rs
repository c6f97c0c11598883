//! Declarative run configuration: one TOML document covering data, click
//! simulation, model shapes, training budgets, ablations, and seeding.
//!
//! Every field has a default, so an empty document is a valid run and a
//! config file only states what it changes. The resolved struct hashes to a
//! stable hex digest that checkpoints and manifests carry, tying every
//! artifact back to the exact configuration that produced it.

use crate::click::ClickModelConfig;
use crate::error::{CrumError, Result};
use crate::evaluator::{Evaluator, EvaluatorArch, EvaluatorTrainConfig};
use crate::graph::Gat;
use crate::ranker::{PointwiseTrainConfig, RankerKind};
use crate::rerank::{Reranker, RerankerArch, RerankerTrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Tensor-name prefix of the attention stack in every checkpoint.
pub const GAT_PREFIX: &str = "gat";

/// Where the ranked lists come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Generated lists with a hidden linear relevance function.
    Synthetic,
    /// A LETOR-format text file on disk.
    Letor,
}

/// `[data]`: dataset source, truncation, and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// LETOR file to read when `source = "letor"`.
    pub path: Option<PathBuf>,
    /// Synthetic request count.
    pub requests: usize,
    /// Synthetic list length before truncation.
    pub items_per_request: usize,
    /// Synthetic feature width; LETOR files carry their own.
    pub feature_dim: usize,
    /// Lists longer than this keep only their top initial positions.
    pub n_max: usize,
    /// Train / tuning / test request fractions; must sum to 1.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            path: None,
            requests: 200,
            items_per_request: 10,
            feature_dim: 20,
            n_max: 10,
            split: [0.8, 0.0, 0.2],
        }
    }
}

/// `[initial]`: which first-pass ranking each request gets, and the
/// pointwise scorer's training budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialRankerConfig {
    pub kind: RankerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
}

impl Default for InitialRankerConfig {
    fn default() -> Self {
        let t = PointwiseTrainConfig::default();
        InitialRankerConfig {
            kind: RankerKind::Pointwise,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            validation_fraction: t.validation_fraction,
        }
    }
}

impl InitialRankerConfig {
    pub fn train_config(&self) -> PointwiseTrainConfig {
        PointwiseTrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
        }
    }
}

/// `[gat]`: shape of the position-aware attention stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig {
            layers: 2,
            heads: 4,
            width: 64,
        }
    }
}

/// `[evaluator]`: context-aware click evaluator shape and training budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorConfig {
    /// Hidden width of each sequence-scan direction.
    pub hidden: usize,
    /// Hidden layer widths of the prediction head.
    pub mlp: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        let t = EvaluatorTrainConfig::default();
        EvaluatorConfig {
            hidden: 64,
            mlp: vec![1024, 512, 128, 64],
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            validation_fraction: t.validation_fraction,
        }
    }
}

impl EvaluatorConfig {
    pub fn train_config(&self) -> EvaluatorTrainConfig {
        EvaluatorTrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
        }
    }
}

/// `[reranker]`: pairwise reranker shape and training budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankerConfig {
    /// Hidden layer widths of the scoring head.
    pub mlp: Vec<usize>,
    /// Logistic sharpness of the pairwise loss.
    pub sigma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    /// Preference pairs drawn per list.
    pub pairs_per_list: usize,
    /// Redraw the pairs every epoch instead of fixing them up front.
    pub resample_pairs: bool,
}

impl Default for RerankerConfig {
    fn default() -> Self {
        let t = RerankerTrainConfig::default();
        RerankerConfig {
            mlp: vec![1024, 512, 128, 64],
            sigma: 1.0,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            validation_fraction: t.validation_fraction,
            pairs_per_list: t.pairs_per_list,
            resample_pairs: t.resample_pairs,
        }
    }
}

impl RerankerConfig {
    pub fn train_config(&self) -> RerankerTrainConfig {
        RerankerTrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            pairs_per_list: self.pairs_per_list,
            resample_pairs: self.resample_pairs,
        }
    }
}

/// `[ablation]`: which model component a run removes. At most one flag may
/// be set, so each run maps to exactly one named variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Drop the sequence scan; the head reads item rows directly.
    pub disable_lstm: bool,
    /// Drop the attention stack everywhere (evaluator and reranker).
    pub disable_gat: bool,
    /// Keep the attention stack in the evaluator but feed the reranker raw
    /// features and position only.
    pub disable_reranker_graph: bool,
}

impl AblationConfig {
    /// Name of the model variant this flag combination produces.
    pub fn variant_name(&self) -> &'static str {
        match (self.disable_lstm, self.disable_gat, self.disable_reranker_graph) {
            (false, false, false) => "full",
            (true, false, false) => "no-lstm",
            (false, true, false) => "no-graph",
            (false, false, true) => "no-reranker-graph",
            _ => "invalid",
        }
    }

    fn validate(&self) -> Result<()> {
        let set = [self.disable_lstm, self.disable_gat, self.disable_reranker_graph]
            .iter()
            .filter(|&&f| f)
            .count();
        if set > 1 {
            return Err(CrumError::Config(
                "at most one ablation flag may be set per run".into(),
            ));
        }
        Ok(())
    }
}

/// `[run]`: seeding and safety caps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    /// Longest list the exhaustive permutation check will enumerate.
    pub oracle_n_cap: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 17,
            oracle_n_cap: 8,
        }
    }
}

/// The whole run: parsed from TOML, validated, hashed into artifact headers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub click: ClickModelConfig,
    pub initial: InitialRankerConfig,
    pub gat: GatConfig,
    pub evaluator: EvaluatorConfig,
    pub reranker: RerankerConfig,
    pub ablation: AblationConfig,
    pub run: RunSection,
}

impl RunConfig {
    /// Parses and validates a TOML document; omitted fields take defaults.
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CrumError::Config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and validates a TOML config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// The fully resolved document, defaults included.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CrumError::Serde(e.to_string()))
    }

    /// Hex digest of the resolved configuration. Field order is fixed by the
    /// struct definitions, so equal configs hash equally regardless of how
    /// the TOML was formatted.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.source == DataSource::Letor && d.path.is_none() {
            return Err(CrumError::Config(
                "letor source needs a file path".into(),
            ));
        }
        if d.source == DataSource::Synthetic
            && (d.requests == 0 || d.items_per_request == 0 || d.feature_dim == 0)
        {
            return Err(CrumError::Config(
                "synthetic data needs positive request count, list length, and feature width"
                    .into(),
            ));
        }
        if d.n_max == 0 {
            return Err(CrumError::Config("n_max must be at least 1".into()));
        }
        let split_sum: f64 = d.split.iter().sum();
        if d.split.iter().any(|&r| r < 0.0) || (split_sum - 1.0).abs() > 1e-9 {
            return Err(CrumError::Config(format!(
                "split fractions must be nonnegative and sum to 1, got {:?}",
                d.split
            )));
        }
        if d.split[0] <= 0.0 {
            return Err(CrumError::Config(
                "the training fraction must be positive".into(),
            ));
        }

        self.click.validate()?;
        self.initial.train_config().validate()?;
        self.evaluator.train_config().validate()?;
        self.reranker.train_config().validate()?;
        self.ablation.validate()?;

        if self.evaluator.hidden == 0 {
            return Err(CrumError::Config(
                "evaluator hidden width must be positive".into(),
            ));
        }
        if self.evaluator.mlp.contains(&0) || self.reranker.mlp.contains(&0) {
            return Err(CrumError::Config(
                "hidden layer widths must be positive".into(),
            ));
        }
        if self.reranker.sigma <= 0.0 || !self.reranker.sigma.is_finite() {
            return Err(CrumError::Config(format!(
                "sigma must be positive and finite, got {}",
                self.reranker.sigma
            )));
        }
        if self.run.oracle_n_cap == 0 {
            return Err(CrumError::Config(
                "the exhaustive-check cap must be at least 1".into(),
            ));
        }
        // Exercises the attention-stack shape checks (head count divides
        // width, positive dimensions) without committing to a feature width.
        self.gat_model(1)?;
        Ok(())
    }

    /// The attention stack for a given item feature width.
    pub fn gat_model(&self, feature_dim: usize) -> Result<Gat> {
        Gat::new(
            GAT_PREFIX,
            self.gat.layers,
            self.gat.heads,
            self.gat.width,
            self.data.n_max,
            feature_dim,
        )
    }

    /// Width of the per-item context vector the attention stack emits.
    pub fn graph_width(&self, feature_dim: usize) -> usize {
        if self.gat.layers == 0 {
            feature_dim
        } else {
            self.gat.width
        }
    }

    /// Evaluator shape under the run's ablation flags.
    pub fn evaluator_arch(&self, feature_dim: usize) -> EvaluatorArch {
        let use_graph = !self.ablation.disable_gat;
        EvaluatorArch {
            feature_dim,
            n_max: self.data.n_max,
            graph_width: if use_graph { self.graph_width(feature_dim) } else { 0 },
            hidden: self.evaluator.hidden,
            mlp_hidden: self.evaluator.mlp.clone(),
            use_lstm: !self.ablation.disable_lstm,
            use_graph,
        }
    }

    /// Evaluator built from the run's shape settings.
    pub fn evaluator_model(&self, feature_dim: usize) -> Result<Evaluator> {
        Evaluator::new(self.evaluator_arch(feature_dim))
    }

    /// Reranker shape under the run's ablation flags.
    pub fn reranker_arch(&self, feature_dim: usize) -> RerankerArch {
        let use_graph = !self.ablation.disable_gat && !self.ablation.disable_reranker_graph;
        RerankerArch {
            feature_dim,
            n_max: self.data.n_max,
            graph_width: if use_graph { self.graph_width(feature_dim) } else { 0 },
            mlp_hidden: self.reranker.mlp.clone(),
            use_graph,
        }
    }

    /// Reranker built from the run's shape settings.
    pub fn reranker_model(&self, feature_dim: usize) -> Result<Reranker> {
        Reranker::new(self.reranker_arch(feature_dim), self.reranker.sigma)
    }
}

//! Experiment configuration (TOML).
//!
//! Every key is optional and falls back to the default listed on the field.
//! Unknown keys are rejected. Relative directories are resolved against the
//! config file's own directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::align::Aggregation;
use crate::error::{Error, Result};
use crate::fsio;
use crate::graph::AdjacencyMode;
use crate::reconstruction::{AttentionConfig, SimilarityChannel, Truncation};
use crate::training::{ModelConfig, TrainConfig};

/// Dictionary sizes swept by the dictionary-size study unless overridden.
pub const DEFAULT_N_SUP_SWEEP: [usize; 6] = [10, 100, 200, 500, 1000, 2000];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// 256
    pub d: usize,
    /// 3
    pub layers: usize,
    /// 1.0
    pub tau: f64,
    /// 0.001
    pub tau_a: f64,
    /// 2000
    pub n_sup: usize,
    /// Integer = count, float = fraction of n_sup. 0.5
    pub k: Truncation,
    /// 0.2
    pub lambda: f64,
    /// 0.01
    pub beta: f64,
    /// 3e-5
    pub lr: f64,
    /// 100
    pub epochs: usize,
    /// 512; 0 = every (anomaly, normal) pair
    pub pairs_per_graph: usize,
    /// 0; trial `i` uses `seed + i`
    pub seed: u64,
    /// "sym_norm" | "raw"
    pub adjacency: AdjacencyMode,
    /// "structure" | "per_channel"
    pub similarity_channel: SimilarityChannel,
    /// false
    pub signed_sqrt: bool,
    /// "median" | "mean"
    pub aggregation: Aggregation,
    /// false
    pub tie_qk: bool,
    /// none
    pub patience: Option<usize>,
    /// 5
    pub trials: usize,
    /// false: normalize a test graph with statistics pooled over the
    /// training graphs and itself.
    pub strict_train_median: bool,
    pub train_dirs: Vec<PathBuf>,
    pub test_dirs: Vec<PathBuf>,
    pub aux_dirs: Vec<PathBuf>,
    /// Load this checkpoint instead of training (one model for all trials).
    pub checkpoint: Option<PathBuf>,
    /// "report"
    pub out_dir: PathBuf,
    /// Aux dictionary merge without retraining.
    pub case_aux_merge: bool,
    /// Continued training on train ∪ aux.
    pub case_aux_finetune: bool,
    /// Epochs of continued training; defaults to `epochs`.
    pub aux_epochs: Option<usize>,
    /// Dictionary-size sweep.
    pub case_n_sup: bool,
    pub n_sup_sweep: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        Self {
            d: model.d,
            layers: model.layers,
            tau: model.tau,
            tau_a: model.attention.tau_a,
            n_sup: model.n_sup,
            k: model.attention.truncation,
            lambda: train.lambda,
            beta: train.beta,
            lr: train.lr,
            epochs: train.epochs,
            pairs_per_graph: train.pairs_per_graph,
            seed: train.seed,
            adjacency: model.adjacency,
            similarity_channel: model.attention.similarity,
            signed_sqrt: model.attention.signed_sqrt,
            aggregation: model.aggregation,
            tie_qk: model.tie_qk,
            patience: train.patience,
            trials: 5,
            strict_train_median: false,
            train_dirs: Vec::new(),
            test_dirs: Vec::new(),
            aux_dirs: Vec::new(),
            checkpoint: None,
            out_dir: PathBuf::from("report"),
            case_aux_merge: false,
            case_aux_finetune: false,
            aux_epochs: None,
            case_n_sup: false,
            n_sup_sweep: DEFAULT_N_SUP_SWEEP.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse a config file and resolve its relative paths.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fsio::read_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.train_dirs.iter_mut().for_each(fix);
        self.test_dirs.iter_mut().for_each(fix);
        self.aux_dirs.iter_mut().for_each(fix);
        if let Some(c) = self.checkpoint.as_mut() {
            fix(c);
        }
        fix(&mut self.out_dir);
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            layers: self.layers,
            tau: self.tau,
            aggregation: self.aggregation,
            adjacency: self.adjacency,
            attention: AttentionConfig {
                truncation: self.k,
                tau_a: self.tau_a,
                signed_sqrt: self.signed_sqrt,
                similarity: self.similarity_channel,
            },
            n_sup: self.n_sup,
            tie_qk: self.tie_qk,
        }
    }

    /// Training settings for one trial.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            lambda: self.lambda,
            beta: self.beta,
            pairs_per_graph: self.pairs_per_graph,
            seed,
            patience: self.patience,
            ..TrainConfig::default()
        }
    }

    /// Check values and that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config(self.seed).validate()?;
        self.k.resolve(self.n_sup)?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.checkpoint.is_none() && self.train_dirs.is_empty() {
            return Err(Error::Config("need train_dirs or a checkpoint".into()));
        }
        if self.case_aux_finetune && self.checkpoint.is_some() && self.train_dirs.is_empty() {
            return Err(Error::Config("case_aux_finetune needs train_dirs".into()));
        }
        if self.case_n_sup {
            if self.train_dirs.is_empty() {
                return Err(Error::Config("case_n_sup needs train_dirs to rebuild dictionaries".into()));
            }
            if self.n_sup_sweep.is_empty() {
                return Err(Error::Config("n_sup_sweep is empty".into()));
            }
            for &s in &self.n_sup_sweep {
                self.k
                    .resolve(s)
                    .map_err(|e| Error::Config(format!("n_sup_sweep value {s}: {e}")))?;
            }
        }
        if self.aux_epochs == Some(0) {
            return Err(Error::Config("aux_epochs must be >= 1".into()));
        }
        let dirs = self.train_dirs.iter().chain(&self.test_dirs).chain(&self.aux_dirs);
        for dir in dirs {
            if !dir.is_dir() {
                return Err(Error::Config(format!("graph directory {} does not exist", dir.display())));
            }
        }
        if let Some(c) = &self.checkpoint {
            if !c.is_file() {
                return Err(Error::Config(format!("checkpoint {} does not exist", c.display())));
            }
        }
        Ok(())
    }
}

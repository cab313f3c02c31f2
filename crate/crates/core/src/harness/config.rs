//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ProbeConfig;
use crate::embedding::ClusterSpec;
use crate::error::{Error, Result};
use crate::graph::TripleSet;
use crate::trainer::{BatchMode, StopMode, TrainConfig};
use crate::transformer::BaseInit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub num_clusters: usize,
    pub cluster_size: usize,
    pub intra_radius: f64,
    pub center_min_separation: f64,
    /// Similarity hops used for neighbourhood closures (prompt subgraphs, audits).
    pub closure_depth: usize,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            dim: 128,
            epsilon: 0.4,
            num_clusters: 27,
            cluster_size: 5,
            intra_radius: 0.19,
            center_min_separation: 1.0,
            closure_depth: 1,
        }
    }
}

impl SpaceConfig {
    pub fn cluster_spec(&self) -> ClusterSpec {
        ClusterSpec::uniform(
            self.vocab_size,
            self.num_clusters,
            self.cluster_size,
            self.intra_radius,
            self.center_min_separation,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_known: usize,
    pub n_unknown: usize,
    pub n_test: usize,
    /// Distinct answers drawn from each answer cluster.
    pub answers_per_cluster: usize,
    /// Isolated answer tokens shared by the unknown split.
    pub unknown_answer_pool: usize,
    pub min_cluster_size: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_known: 40,
            n_unknown: 40,
            n_test: 50,
            answers_per_cluster: 2,
            unknown_answer_pool: 10,
            min_cluster_size: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    Convergence,
    /// Early stop against the training split itself.
    EarlyStop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch: BatchMode,
    pub stop: StopKind,
    pub loss_threshold: f64,
    pub patience: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            // Longer runs keep widening each trained basin until shifted
            // subjects past the (γ/τ)² bound get captured too.
            max_epochs: 200,
            batch: BatchMode::PerExample,
            stop: StopKind::Convergence,
            loss_threshold: 0.01,
            patience: 20,
        }
    }
}

impl TrainSettings {
    pub fn to_train_config(&self, train_set: &TripleSet, seed: u64) -> TrainConfig {
        let stop = match self.stop {
            StopKind::Convergence => StopMode::Convergence {
                loss_threshold: self.loss_threshold,
            },
            StopKind::EarlyStop => StopMode::EarlyStop {
                eval: train_set.clone(),
                patience: self.patience,
            },
        };
        TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            batch: self.batch,
            stop,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodConfig {
    pub gammas: Vec<f64>,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            gammas: vec![0.86, 0.82, 0.55, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IclConfig {
    pub demos: usize,
    pub smalldata_fraction: f64,
}

impl Default for IclConfig {
    fn default() -> Self {
        Self {
            demos: 4,
            smalldata_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            out_dir: None,
        }
    }
}

/// Everything one experiment run depends on besides the seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub space: SpaceConfig,
    pub model: BaseInit,
    pub dataset: DatasetConfig,
    pub train: TrainSettings,
    pub probe: ProbeConfig,
    pub ood: OodConfig,
    pub icl: IclConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let s = &self.space;
        if s.num_clusters * s.cluster_size + 2 > s.vocab_size {
            return fail(format!(
                "{} clusters of {} plus two relations exceed vocab_size {}",
                s.num_clusters, s.cluster_size, s.vocab_size
            ));
        }
        let d = &self.dataset;
        if d.n_known != d.n_unknown {
            return fail(format!(
                "n_known ({}) must equal n_unknown ({})",
                d.n_known, d.n_unknown
            ));
        }
        if d.answers_per_cluster == 0 || d.answers_per_cluster > d.min_cluster_size {
            return fail("answers_per_cluster must lie in [1, min_cluster_size]".into());
        }
        if d.n_unknown > 0 && d.unknown_answer_pool == 0 {
            return fail("unknown_answer_pool must be >= 1".into());
        }
        if self.ood.gammas.is_empty() {
            return fail("ood.gammas must be non-empty".into());
        }
        if let Some(g) = self.ood.gammas.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return fail(format!("gamma {g} outside [0, 1]"));
        }
        if self.icl.demos == 0 {
            return fail("icl.demos must be >= 1".into());
        }
        let f = self.icl.smalldata_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return fail(format!("smalldata_fraction {f} outside (0, 1]"));
        }
        if self.run.seeds.is_empty() {
            return fail("run.seeds must be non-empty".into());
        }
        self.probe.validate()?;
        self.train
            .to_train_config(&TripleSet::new(), 0)
            .validate()?;
        Ok(())
    }
}

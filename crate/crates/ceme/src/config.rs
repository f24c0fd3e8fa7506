//! Experiment configuration (TOML). Every table has defaults, so a config file
//! only needs the values it changes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ceme_core::eval::EvalConfig;
use ceme_core::gpdata::GeneratorConfig;
use ceme_core::scm::Variant;
use ceme_core::semisynth::{ColumnSpec, SemisynthConfig};
use ceme_core::vi::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Synthetic,
    Semisynthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub master_seed: u64,
    /// Worker threads; 0 means one per available core.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "all_variants")]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub synthetic: SyntheticGrid,
    #[serde(default)]
    pub semisynthetic: SemisyntheticSource,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub pilot: PilotThresholds,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

fn all_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticGrid {
    pub noise_levels: Vec<f64>,
    pub n_train: Vec<usize>,
    pub replicates: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub generator: GeneratorConfig,
}

impl Default for SyntheticGrid {
    fn default() -> Self {
        Self {
            noise_levels: vec![0.1, 0.2, 0.4],
            n_train: vec![1000, 4000, 16_000],
            replicates: 200,
            n_val: 8000,
            n_test: 20_000,
            generator: GeneratorConfig::default(),
        }
    }
}

/// Where the semisynthetic table comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemisyntheticSource {
    /// CSV with a header row; empty cells and `NA` are missing.
    pub table: Option<PathBuf>,
    /// Generated stand-in table, used when `table` is absent.
    pub stand_in_rows: usize,
    pub stand_in_missing: usize,
    pub columns: Option<ColumnSpec>,
    pub pipeline: SemisynthConfig,
}

impl Default for SemisyntheticSource {
    fn default() -> Self {
        Self {
            table: None,
            stand_in_rows: 3000,
            stand_in_missing: 20,
            columns: None,
            pipeline: SemisynthConfig::default(),
        }
    }
}

impl SemisyntheticSource {
    pub fn column_spec(&self) -> ColumnSpec {
        self.columns.clone().unwrap_or_else(|| {
            if self.table.is_some() {
                ColumnSpec::education_wage()
            } else {
                ColumnSpec::stand_in()
            }
        })
    }
}

/// Partial [`TrainConfig`]; unset fields keep the preset value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub hidden: Option<Vec<usize>>,
    pub n_importance_samples: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub initial_term_weight: Option<f64>,
    pub anneal_epochs: Option<usize>,
    pub lr_patience: Option<usize>,
    pub lr_factor: Option<f64>,
    pub early_stop_patience: Option<usize>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub max_epochs: Option<usize>,
    pub restarts: Option<usize>,
}

impl TrainOverrides {
    fn apply(&self, c: &mut TrainConfig) {
        macro_rules! take {
            ($($f:ident),*) => {$( if let Some(v) = &self.$f { c.$f = v.clone(); } )*};
        }
        take!(
            hidden,
            n_importance_samples,
            batch_size,
            learning_rate,
            weight_decay,
            initial_term_weight,
            anneal_epochs,
            lr_patience,
            lr_factor,
            early_stop_patience,
            beta1,
            beta2,
            max_epochs,
            restarts
        );
    }
}

/// `common` applies to every variant, then the per-variant table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub common: TrainOverrides,
    pub ceme: TrainOverrides,
    pub ceme_plus: TrainOverrides,
    pub oracle: TrainOverrides,
    pub naive: TrainOverrides,
}

/// Pass conditions checked by `pilot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotThresholds {
    /// Datasets on which CEME must have lower RMSE than Naive.
    pub min_rmse_wins: usize,
    /// CEME⁺ median RMSE may exceed CEME's by at most this factor.
    pub ceme_plus_slack: f64,
    pub max_median_abs_rel_tau: f64,
    pub rel_sigma_low: f64,
    pub rel_sigma_high: f64,
}

impl Default for PilotThresholds {
    fn default() -> Self {
        Self {
            min_rmse_wins: 8,
            ceme_plus_slack: 1.2,
            max_median_abs_rel_tau: 0.25,
            rel_sigma_low: -0.1,
            rel_sigma_high: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative table paths are relative to the config file.
        if let (Some(t), Some(dir)) = (&cfg.semisynthetic.table, path.parent()) {
            if t.is_relative() {
                cfg.semisynthetic.table = Some(dir.join(t));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            bail!("no variants selected");
        }
        self.eval.validate()?;
        if self.kind == ExperimentKind::Synthetic {
            let g = &self.synthetic;
            if g.noise_levels.is_empty() || g.n_train.is_empty() || g.replicates == 0 {
                bail!("synthetic grid is empty");
            }
            if g.noise_levels.iter().any(|l| !(*l >= 0.0)) {
                bail!("noise levels must be non-negative");
            }
            if g.n_train.iter().chain([&g.n_val, &g.n_test]).any(|&n| n < 2) {
                bail!("every split needs at least two rows");
            }
            for &n in &g.n_train {
                for &v in &self.variants {
                    self.train_config(v, n).validate()?;
                }
            }
        } else {
            for &v in &self.variants {
                self.train_config(v, 0).validate()?;
            }
        }
        Ok(())
    }

    /// Preset for the experiment kind with overrides applied.
    pub fn train_config(&self, variant: Variant, n_train: usize) -> TrainConfig {
        let mut c = match self.kind {
            ExperimentKind::Synthetic => TrainConfig::synthetic(variant, n_train),
            ExperimentKind::Semisynthetic => TrainConfig::education_wage(),
        };
        self.train.common.apply(&mut c);
        let specific = match variant {
            Variant::Ceme => &self.train.ceme,
            Variant::CemePlus => &self.train.ceme_plus,
            Variant::Oracle => &self.train.oracle,
            Variant::Naive => &self.train.naive,
        };
        specific.apply(&mut c);
        c
    }

    /// Default `jobs = 0` resolves to the number of available cores.
    pub fn worker_count(&self) -> usize {
        if self.jobs > 0 {
            self.jobs
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

/// The configuration `pilot` runs when none is given.
pub const PILOT_TOML: &str = include_str!("../../../configs/pilot.toml");

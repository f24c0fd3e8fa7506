//! On-disk layout of a run directory.
//!
//! ```text
//! <out>/manifest.json
//! <out>/datasets/<id>/{train,val,test}.csv, truth.json, manifest.json
//! <out>/runs/<id>/<variant>/restart_<r>.json, restart_<r>.model.json, cell.json
//! <out>/results/<id>/<variant>.json, <variant>.predictions.csv
//! <out>/results/{aggregate,failures}.csv, results/plots/<metric>.csv
//! ```

use std::path::{Path, PathBuf};

use anyhow::Result;
use ceme_core::eval::GroundTruth;
use ceme_core::gpdata::SyntheticTruth;
use ceme_core::scm::Variant;
use ceme_core::semisynth::SemisyntheticTruth;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn dataset_dir(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(id)
    }

    pub fn split(&self, id: &str, split: &str) -> PathBuf {
        self.dataset_dir(id).join(format!("{split}.csv"))
    }

    pub fn truth(&self, id: &str) -> PathBuf {
        self.dataset_dir(id).join("truth.json")
    }

    pub fn dataset_manifest(&self, id: &str) -> PathBuf {
        self.dataset_dir(id).join("manifest.json")
    }

    pub fn cell_dir(&self, id: &str, v: Variant) -> PathBuf {
        self.root.join("runs").join(id).join(v.as_str())
    }

    pub fn cell(&self, id: &str, v: Variant) -> PathBuf {
        self.cell_dir(id, v).join("cell.json")
    }

    pub fn restart_record(&self, id: &str, v: Variant, r: usize) -> PathBuf {
        self.cell_dir(id, v).join(format!("restart_{r}.json"))
    }

    pub fn restart_model(&self, id: &str, v: Variant, r: usize) -> PathBuf {
        self.cell_dir(id, v).join(format!("restart_{r}.model.json"))
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn report(&self, id: &str, v: Variant) -> PathBuf {
        self.results().join(id).join(format!("{}.json", v.as_str()))
    }

    pub fn predictions(&self, id: &str, v: Variant) -> PathBuf {
        self.results().join(id).join(format!("{}.predictions.csv", v.as_str()))
    }

    pub fn aggregate(&self) -> PathBuf {
        self.results().join("aggregate.csv")
    }

    pub fn failures(&self) -> PathBuf {
        self.results().join("failures.csv")
    }

    pub fn plot(&self, metric: &str) -> PathBuf {
        self.results().join("plots").join(format!("{metric}.csv"))
    }

    pub fn exists(path: &Path) -> bool {
        path.is_file()
    }
}

/// Ground truth checkpoint of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthFile {
    Synthetic(SyntheticTruth),
    Semisynthetic(SemisyntheticTruth),
}

impl TruthFile {
    pub fn as_truth(&self) -> &dyn GroundTruth {
        match self {
            TruthFile::Synthetic(t) => t,
            TruthFile::Semisynthetic(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub id: String,
    pub noise_level: f64,
    pub replicate: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub tau: f64,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows_dropped: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub seed: u64,
    pub failed: bool,
    /// `None` when no finite score was reached.
    pub best_val_score: Option<f64>,
    pub epochs: usize,
}

/// Completion marker of one (dataset, variant) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub dataset_id: String,
    pub variant: Variant,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_restart: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub restarts: Vec<RestartSummary>,
}

pub fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p)?;
    Ok(())
}

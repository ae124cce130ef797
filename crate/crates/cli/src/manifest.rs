use std::fs;
use std::path::{Path, PathBuf};

use atk_core::data::MeanStd;
use atk_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::args::DataArgs;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.atkc";
pub const METRICS_FILE: &str = "metrics.json";

/// Everything needed to re-launch a run, plus where its results live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// `train-teacher` or `distill`.
    pub command: String,
    /// Full architecture tag of the trained network.
    pub arch: String,
    pub data: String,
    pub subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub teacher: Option<PathBuf>,
    pub config: TrainConfig,
    /// Training-split channel statistics used for normalization.
    pub norm: Option<MeanStd>,
    pub out: PathBuf,
    /// Filled in when the run completes.
    pub final_test_error: Option<f64>,
}

impl RunManifest {
    pub fn data_args(&self) -> DataArgs {
        DataArgs {
            data: self.data.clone(),
            subset: self.subset,
            test_subset: self.test_subset,
        }
    }

    pub fn load(path: &Path) -> std::io::Result<RunManifest> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(dir.join(MANIFEST_FILE), text + "\n")
    }
}

//! TOML run configuration. Every field is optional; command-line flags win
//! over file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stylecav::cluster::Linkage;
use stylecav::encoder::Detector;
use stylecav::taskgen::SplitName;
use stylecav::training::LossKind;

use crate::CliError;

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub corpus: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub taskgen: TaskgenSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub stel: StelSection,
    #[serde(default)]
    pub cluster: ClusterSection,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub min_posts: Option<usize>,
    pub per_domain: Option<usize>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskgenSection {
    /// "conversation", "domain", "random" or "all".
    pub cc: Option<String>,
    pub n: Option<usize>,
    pub ratios: Option<[f64; 3]>,
    pub split: Option<SplitName>,
    pub split_file: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub train_tasks: Option<PathBuf>,
    pub dev_tasks: Option<PathBuf>,
    pub loss: Option<LossKind>,
    pub margin: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub warmup_fraction: Option<f64>,
    pub learning_rate: Option<f64>,
    pub d_embed: Option<usize>,
    pub hidden: Option<usize>,
    pub hash_dim: Option<usize>,
    pub ngram_orders: Option<Vec<usize>>,
    pub explicit_features: Option<Vec<Detector>>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub models: Option<Vec<PathBuf>>,
    pub tasks: Option<Vec<PathBuf>>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StelSection {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub k: Option<usize>,
    pub k_values: Option<Vec<usize>>,
    pub full_grid: Option<bool>,
    pub trials: Option<usize>,
    pub linkage: Option<Linkage>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// First present value, or a usage error naming the flag.
pub fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(file).ok_or_else(|| CliError::Usage(format!("missing --{name} (or set it in the config file)")))
}

use std::path::{Path, PathBuf};

use bofex::bag_of_features::BofConfig;
use bofex::consistency::ConsistencyConfig;
use bofex::evaluation::experiment::ExperimentConfig;
use bofex::fcmh::FcmhTrainConfig;
use bofex::gbm::TrainConfig;
use bofex::synthgen::GenConfig;
use bofex::telemetry::ValidityLimits;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// The whole config file: one table per command.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    /// Root for default artifact paths.
    pub workdir: Option<PathBuf>,
    /// Channel validity limits; built-in defaults when absent.
    pub limits: Option<PathBuf>,
    pub gen: GenConfig,
    pub train_codebooks: CodebookSection,
    pub featurize: FeaturizeSection,
    pub train_gbm: TrainConfig,
    pub train_fcmh: FcmhSection,
    pub explain: ExplainSection,
    pub evaluate: ExperimentConfig,
    pub tsne: TsneSection,
    pub report: ReportSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CodebookSection {
    pub seed: u64,
    pub corpus_every_minutes: usize,
    #[serde(flatten)]
    pub bof: BofConfig,
}

impl Default for CodebookSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        CodebookSection {
            seed: 0,
            corpus_every_minutes: e.corpus_every_minutes,
            bof: e.bof,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizeSection {
    pub positive_stride: usize,
    pub negative_stride: usize,
    pub blackout_seconds: i64,
}

impl Default for FeaturizeSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        FeaturizeSection {
            positive_stride: e.positive_stride,
            negative_stride: e.negative_stride,
            blackout_seconds: e.blackout_seconds,
        }
    }
}

impl FeaturizeSection {
    pub fn as_experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            positive_stride: self.positive_stride,
            negative_stride: self.negative_stride,
            blackout_seconds: self.blackout_seconds,
            ..ExperimentConfig::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FcmhSection {
    /// Balanced subsample size per accident type.
    pub max_samples: usize,
    #[serde(flatten)]
    pub train: FcmhTrainConfig,
}

impl Default for FcmhSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        FcmhSection {
            max_samples: e.fcmh_max_samples,
            train: e.fcmh,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainSection {
    pub m_percent: f64,
    /// Grid steps between explained alarm moments.
    pub stride: usize,
    /// Fixed alarm threshold for every type. When unset, thresholds are fit
    /// on the predictions at the default coverage targets.
    pub threshold: Option<f64>,
    pub blackout_seconds: i64,
    /// Features listed per record, by decreasing Shapley value.
    pub top_features: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        ExplainSection {
            m_percent: e.shap_m_percent,
            stride: e.explain_stride,
            threshold: None,
            blackout_seconds: e.blackout_seconds,
            top_features: 10,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneSection {
    /// Index into the evaluation's explained cases. When unset, the first
    /// case with at least two alarm moments is used.
    pub case: Option<usize>,
    #[serde(flatten)]
    pub consistency: ConsistencyConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportSection {
    pub max_cases: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { max_cases: 12 }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn limits(&self) -> CliResult<ValidityLimits> {
        match &self.limits {
            Some(p) => Ok(ValidityLimits::load(p)?),
            None => Ok(ValidityLimits::default()),
        }
    }
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result};
use crate::cohort::InclusionCriteria;
use crate::preprocess::{ApsVariable, ApsWeightTable};
use crate::resample::SmoteConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub input: PathBuf,
    /// Data dictionary JSON. Without one, every non-administrative CSV
    /// column is a clinical feature.
    pub dictionary: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    pub k_best: usize,
    pub n_target: usize,
    /// Always kept and never eliminated.
    pub include: Vec<String>,
    /// Never considered.
    pub exclude: Vec<String>,
    /// The selected set fails if any VIF reaches this.
    pub vif_max: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            k_best: 50,
            n_target: 7,
            include: Vec::new(),
            exclude: Vec::new(),
            vif_max: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    pub bootstrap_replicates: usize,
    pub ci_level: f64,
    pub threshold: f64,
    pub calibration_bins: usize,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            bootstrap_replicates: 2000,
            ci_level: 0.95,
            threshold: 0.5,
            calibration_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub n_repeats: usize,
    /// Number of random patients in the golden file next to the bundle.
    pub golden_cases: usize,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            n_repeats: 20,
            golden_cases: 100,
        }
    }
}

/// Source columns for base excess.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseExcessColumns {
    pub hco3: String,
    pub hb: String,
    pub ph: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApsConfig {
    /// Source column for each scored variable.
    pub columns: BTreeMap<ApsVariable, String>,
    /// Defaults to the built-in illustrative table.
    #[serde(default)]
    pub weights: Option<ApsWeightTable>,
}

/// Derived scores appended as extra feature columns after imputation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DerivedConfig {
    pub base_excess: Option<BaseExcessColumns>,
    pub aps_iii: Option<ApsConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub seed: u64,
    pub split_ratio: f64,
    /// Outcome window in days after ICU admission.
    pub followup_days: f64,
    pub horizons: Vec<u32>,
    pub knn_k: usize,
    /// Columns missing in more than this fraction of rows are dropped.
    pub missing_threshold: f64,
    pub inclusion: InclusionCriteria,
    pub select: SelectConfig,
    /// `seed` here is ignored; the stage seed is derived from the global one.
    pub smote: SmoteConfig,
    pub evaluate: EvaluateConfig,
    pub explain: ExplainConfig,
    pub derived: DerivedConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            seed: 0,
            split_ratio: 0.7,
            followup_days: 90.0,
            horizons: crate::HORIZONS.to_vec(),
            knn_k: 5,
            missing_threshold: 0.8,
            inclusion: InclusionCriteria::default(),
            select: SelectConfig::default(),
            smote: SmoteConfig::default(),
            evaluate: EvaluateConfig::default(),
            explain: ExplainConfig::default(),
            derived: DerivedConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Read TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?
        };
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio must be in (0, 1), got {}", self.split_ratio));
        }
        if self.horizons.is_empty() || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return bad("horizons must be nonempty and strictly ascending".into());
        }
        if self.horizons[0] == 0 {
            return bad("horizons must be positive".into());
        }
        if !(self.followup_days >= *self.horizons.last().unwrap() as f64) {
            return bad(format!(
                "followup_days {} is shorter than the last horizon",
                self.followup_days
            ));
        }
        if self.knn_k == 0 {
            return bad("knn_k must be positive".into());
        }
        if !(self.missing_threshold > 0.0 && self.missing_threshold <= 1.0) {
            return bad("missing_threshold must be in (0, 1]".into());
        }
        if self.select.k_best == 0 || self.select.n_target == 0 {
            return bad("select.k_best and select.n_target must be positive".into());
        }
        if let Some(f) = self.select.include.iter().find(|f| self.select.exclude.contains(f)) {
            return bad(format!("`{f}` is both included and excluded"));
        }
        if !(self.select.vif_max > 1.0) {
            return bad("select.vif_max must exceed 1".into());
        }
        if self.evaluate.bootstrap_replicates == 0 {
            return bad("evaluate.bootstrap_replicates must be positive".into());
        }
        if !(self.evaluate.ci_level > 0.0 && self.evaluate.ci_level < 1.0) {
            return bad("evaluate.ci_level must be in (0, 1)".into());
        }
        if self.explain.n_repeats == 0 {
            return bad("explain.n_repeats must be positive".into());
        }
        self.smote
            .validate()
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }

    /// SHA-256 of the configuration without its paths, so relocating the
    /// input or output leaves the hash unchanged.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        crate::sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        crate::rng::stage_seed(self.seed, stage)
    }
}

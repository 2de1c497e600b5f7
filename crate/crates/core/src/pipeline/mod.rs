//! Stage orchestration. Every stage reads its inputs from and writes its
//! outputs to `paths.output_dir` as CSV and JSON, so any stage can be re-run
//! on its own. Stage `s` draws randomness only from
//! `rng::stage_seed(seed, s)`.

mod config;
mod io;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::*;
pub use stages::{
    model_file, svg_file, BaselineRow, CoxMetrics, FeatureInfo, HorizonExplanation, MetricsFile,
    SelectionFile, SplitFile, AUGMENTED, BASELINE, BUNDLE, COHORT, COHORT_FILTERED, COX,
    DICTIONARY, EXCLUSIONS, EXPLAIN, FEATURES, FEATURE_INFO, GOLDEN, METRICS, METRICS_TEXT,
    NORM_STATS, OUTCOMES, SELECTION, SPLIT,
};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Filter,
    Preprocess,
    Split,
    Select,
    Resample,
    Train,
    Evaluate,
    Explain,
    Nomogram,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Ingest,
        Stage::Filter,
        Stage::Preprocess,
        Stage::Split,
        Stage::Select,
        Stage::Resample,
        Stage::Train,
        Stage::Evaluate,
        Stage::Explain,
        Stage::Nomogram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Filter => "filter",
            Stage::Preprocess => "preprocess",
            Stage::Split => "split",
            Stage::Select => "select",
            Stage::Resample => "resample",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
            Stage::Nomogram => "nomogram",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn record_file(self) -> String {
        format!("stage_{}.json", self.name())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Summary of one stage run, persisted as `stage_<name>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub seed: u64,
    pub rows_in: usize,
    pub rows_out: usize,
    pub cols_out: usize,
    pub outputs: Vec<String>,
    /// Named row and column counts merged into the manifest.
    pub shapes: BTreeMap<String, usize>,
    pub notes: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub input_sha256: Option<String>,
    /// Records of the stages found in the output directory, in pipeline order.
    pub stages: Vec<StageRecord>,
    pub shapes: BTreeMap<String, usize>,
    /// SHA-256 of every other file in the output directory.
    pub artifacts: BTreeMap<String, String>,
}

fn prepare(cfg: &PipelineConfig) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.paths.output_dir).map_err(|e| {
        PipelineError::InvalidConfig(format!("{}: {e}", cfg.paths.output_dir.display()))
    })
}

fn run_one(cfg: &PipelineConfig, stage: Stage) -> Result<StageRecord> {
    let started = std::time::Instant::now();
    let cx = stages::Ctx { cfg, stage };
    let record = match stage {
        Stage::Ingest => stages::ingest(&cx),
        Stage::Filter => stages::filter(&cx),
        Stage::Preprocess => stages::preprocess(&cx),
        Stage::Split => stages::split(&cx),
        Stage::Select => stages::select(&cx),
        Stage::Resample => stages::resample(&cx),
        Stage::Train => stages::train(&cx),
        Stage::Evaluate => stages::evaluate(&cx),
        Stage::Explain => stages::explain(&cx),
        Stage::Nomogram => stages::nomogram(&cx),
    }?;
    io::write_json(&cfg.paths.output_dir.join(stage.record_file()), &record).map_err(|message| {
        PipelineError::Stage {
            stage: stage.name(),
            message,
        }
    })?;
    log::info!(
        "{stage}: {} -> {} rows, {} columns ({:.2?})",
        record.rows_in,
        record.rows_out,
        record.cols_out,
        started.elapsed()
    );
    Ok(record)
}

/// Run a single stage from the intermediates already in the output
/// directory, then refresh the manifest.
pub fn run_stage(cfg: &PipelineConfig, stage: Stage) -> Result<StageRecord> {
    prepare(cfg)?;
    let record = run_one(cfg, stage)?;
    write_manifest(cfg)?;
    Ok(record)
}

/// Run every stage in order and write the manifest.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    prepare(cfg)?;
    for stage in Stage::ALL {
        run_one(cfg, stage)?;
    }
    write_manifest(cfg)
}

/// Assemble `manifest.json` from the stage records and files present in the
/// output directory.
pub fn write_manifest(cfg: &PipelineConfig) -> Result<Manifest> {
    let dir = &cfg.paths.output_dir;
    let manifest_err = |message: String| PipelineError::Stage {
        stage: "manifest",
        message,
    };
    let mut stages = Vec::new();
    for stage in Stage::ALL {
        let path = dir.join(stage.record_file());
        if path.exists() {
            stages.push(io::read_json::<StageRecord>(&path).map_err(manifest_err)?);
        }
    }
    let mut shapes = BTreeMap::new();
    for s in &stages {
        shapes.extend(s.shapes.iter().map(|(k, v)| (k.clone(), *v)));
    }
    let input_sha256 = stages
        .iter()
        .find(|s| s.stage == Stage::Ingest.name())
        .and_then(|s| s.notes.get("input_sha256"))
        .and_then(|v| v.as_str())
        .map(str::to_string);
    let manifest = Manifest {
        tool: "icu-risk".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        stage_seeds: Stage::ALL
            .iter()
            .map(|s| (s.name().to_string(), cfg.stage_seed(s.name())))
            .collect(),
        input_sha256,
        stages,
        shapes,
        artifacts: hash_artifacts(dir).map_err(manifest_err)?,
    };
    io::write_json(&dir.join(MANIFEST), &manifest).map_err(manifest_err)?;
    Ok(manifest)
}

fn hash_artifacts(dir: &Path) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    for entry in entries {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == MANIFEST || !entry.path().is_file() {
            continue;
        }
        let bytes = std::fs::read(entry.path()).map_err(|e| format!("{name}: {e}"))?;
        out.insert(name, crate::sha256_hex(&bytes));
    }
    Ok(out)
}

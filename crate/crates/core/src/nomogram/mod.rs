//! Point-scale nomograms for the logistic models, their SVG rendering and
//! the JSON bundle consumed by the browser calculator.

mod bundle;
mod svg;

pub use bundle::{
    export_bundle, load_bundle, Bundle, BundleHorizon, GoldenCase, GoldenFile, HorizonPrediction,
    SCHEMA_VERSION,
};
pub use svg::render_svg;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LogisticModel, ModelError};
use crate::stats::sigmoid;
use crate::Patient;

#[derive(Debug, Error, PartialEq)]
pub enum NomogramError {
    #[error("feature `{feature}`: range ({lo}, {hi}) is not a finite interval with lo < hi")]
    DegenerateRange { feature: String, lo: f64, hi: f64 },
    #[error("expected {expected} ranges, got {got}")]
    RangeCount { expected: usize, got: usize },
    #[error("bundle is missing horizons {0:?}")]
    IncompleteBundle(Vec<u32>),
    #[error("unsupported bundle schema_version {0}")]
    SchemaMismatch(u32),
    #[error("models and nomograms do not line up: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(String),
    #[error("json: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, NomogramError>;

/// Largest per-feature point span.
pub const MAX_POINTS: f64 = 100.0;

/// Bound on the linear-interpolation error of the probability table.
pub const PROB_MAP_TOLERANCE: f64 = 2.5e-7;

/// One feature's point axis. Points are affine in the (clamped) value:
/// `max_points * (v - lo) / (hi - lo)`, or `max_points * (hi - v) / (hi -
/// lo)` when `descending`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NomogramAxis {
    pub name: String,
    pub unit: String,
    pub lo: f64,
    pub hi: f64,
    /// Standardized model coefficient.
    pub coefficient: f64,
    /// Higher values give fewer points (negative coefficient).
    pub descending: bool,
    pub max_points: f64,
    /// Zero coefficient: every value scores 0.
    pub flat: bool,
}

impl NomogramAxis {
    /// Position of `v` along the axis in `[0, 1]` after clamping, in the
    /// direction of increasing points, and whether clamping happened.
    pub fn position(&self, v: f64) -> (f64, bool) {
        let c = v.clamp(self.lo, self.hi);
        let span = self.hi - self.lo;
        let t = if self.descending { (self.hi - c) / span } else { (c - self.lo) / span };
        (t, c != v)
    }

    pub fn points(&self, v: f64) -> f64 {
        self.max_points * self.position(v).0
    }
}

/// Uniform table of probabilities over total points, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMap {
    pub total_points: Vec<f64>,
    pub probability: Vec<f64>,
}

impl ProbMap {
    pub fn len(&self) -> usize {
        self.total_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total_points.is_empty()
    }

    pub fn lookup(&self, total: f64) -> f64 {
        let n = self.len();
        if n == 1 {
            return self.probability[0];
        }
        let max = self.total_points[n - 1];
        let t = total.clamp(0.0, max);
        let step = max / (n - 1) as f64;
        let i = ((t / step).floor() as usize).min(n - 2);
        let frac = (t - self.total_points[i]) / (self.total_points[i + 1] - self.total_points[i]);
        self.probability[i] + frac * (self.probability[i + 1] - self.probability[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NomogramSpec {
    pub horizon_days: u32,
    pub axes: Vec<NomogramAxis>,
    pub max_points_per_feature: f64,
    /// Sum of the axis spans; the total-points axis runs from 0 to this.
    pub total_points_max: f64,
    /// Model logit is exactly `logit_offset + logit_per_point * total` for
    /// in-range values.
    pub logit_offset: f64,
    pub logit_per_point: f64,
    pub prob_map: ProbMap,
    /// SHA-256 of the source model's JSON.
    pub model_ref: String,
}

/// Per-feature points for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientScore {
    pub points: Vec<f64>,
    pub total: f64,
    /// Features whose values were clamped to the axis ends.
    pub clamped: Vec<String>,
}

/// Build the nomogram for `model` over raw-unit `ranges` (one per feature,
/// in model order).
///
/// Feature `i` spans `|beta_i| * (z(hi) - z(lo))` logit units; spans are
/// rescaled so the largest is [`MAX_POINTS`].
pub fn build_nomogram(model: &LogisticModel, ranges: &[(f64, f64)]) -> Result<NomogramSpec> {
    let d = model.n_features();
    if ranges.len() != d {
        return Err(NomogramError::RangeCount {
            expected: d,
            got: ranges.len(),
        });
    }
    for (name, &(lo, hi)) in model.feature_names.iter().zip(ranges) {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(NomogramError::DegenerateRange {
                feature: name.clone(),
                lo,
                hi,
            });
        }
    }
    let logit_spans: Vec<f64> = (0..d)
        .map(|i| {
            let s = model.norm_stats[i];
            model.coefficients[i].abs() * (s.z(ranges[i].1) - s.z(ranges[i].0))
        })
        .collect();
    let widest = logit_spans.iter().cloned().fold(0.0, f64::max);
    let logit_per_point = widest / MAX_POINTS;

    let mut logit_offset = model.intercept;
    let mut axes = Vec::with_capacity(d);
    for i in 0..d {
        let beta = model.coefficients[i];
        let (lo, hi) = ranges[i];
        let s = model.norm_stats[i];
        logit_offset += beta * s.z(if beta < 0.0 { hi } else { lo });
        axes.push(NomogramAxis {
            name: model.feature_names[i].clone(),
            unit: model.units.get(i).cloned().unwrap_or_default(),
            lo,
            hi,
            coefficient: beta,
            descending: beta < 0.0,
            max_points: if widest > 0.0 {
                MAX_POINTS * (logit_spans[i] / widest)
            } else {
                0.0
            },
            flat: beta == 0.0,
        });
    }
    let total_points_max: f64 = axes.iter().map(|a| a.max_points).sum();
    let prob_map = build_prob_map(logit_offset, logit_per_point, total_points_max);
    let model_json = serde_json::to_vec(model).map_err(|e| NomogramError::Json(e.to_string()))?;
    Ok(NomogramSpec {
        horizon_days: model.horizon_days,
        axes,
        max_points_per_feature: MAX_POINTS,
        total_points_max,
        logit_offset,
        logit_per_point,
        prob_map,
        model_ref: crate::sha256_hex(&model_json),
    })
}

/// At least 1001 entries; more when needed so that linear interpolation of
/// the sigmoid stays within [`PROB_MAP_TOLERANCE`]. The error of linear
/// interpolation is at most `h^2 / 8 * max|p''|`, and
/// `|d^2 sigmoid / dT^2| <= k^2 / (6 * sqrt(3))` for slope `k`.
fn build_prob_map(offset: f64, slope: f64, total_max: f64) -> ProbMap {
    if total_max == 0.0 {
        return ProbMap {
            total_points: vec![0.0],
            probability: vec![sigmoid(offset)],
        };
    }
    let curvature = slope * slope / (6.0 * 3f64.sqrt());
    let h_max = (8.0 * PROB_MAP_TOLERANCE / curvature).sqrt();
    let intervals = ((total_max / h_max).ceil() as usize).max(1000);
    let step = total_max / intervals as f64;
    let total_points: Vec<f64> = (0..=intervals).map(|i| i as f64 * step).collect();
    let probability = total_points
        .iter()
        .map(|t| sigmoid(offset + slope * t))
        .collect();
    ProbMap {
        total_points,
        probability,
    }
}

impl NomogramSpec {
    pub fn feature_names(&self) -> Vec<String> {
        self.axes.iter().map(|a| a.name.clone()).collect()
    }

    /// Points for raw values in axis order. Out-of-range values are clamped
    /// and reported.
    pub fn score_raw(&self, raw: &[f64]) -> PatientScore {
        let mut clamped = Vec::new();
        let points: Vec<f64> = self
            .axes
            .iter()
            .zip(raw)
            .map(|(a, &v)| {
                let (pos, c) = a.position(v);
                if c {
                    log::warn!("{} = {v} clamped to [{}, {}]", a.name, a.lo, a.hi);
                    clamped.push(a.name.clone());
                }
                a.max_points * pos
            })
            .collect();
        PatientScore {
            total: points.iter().sum(),
            points,
            clamped,
        }
    }

    pub fn probability(&self, total: f64) -> f64 {
        self.prob_map.lookup(total)
    }
}

/// Per-feature and total points for `x`.
pub fn score_patient(spec: &NomogramSpec, x: &Patient) -> Result<PatientScore> {
    let names = spec.feature_names();
    let raw = crate::model::raw_vector(&names, x)?;
    Ok(spec.score_raw(&raw))
}

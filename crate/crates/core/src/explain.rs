//! Permutation importance and exact additive attributions for the logistic
//! models.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluate::{auroc, EvalError};
use crate::model::{LogisticModel, ModelError};
use crate::preprocess::FeatureMatrix;
use crate::rng::stream_rng;
use crate::Patient;

#[derive(Debug, Error, PartialEq)]
pub enum ExplainError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("empty {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(EvalError),
    #[error("csv: {0}")]
    Csv(String),
}

impl From<EvalError> for ExplainError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::SingleClass => ExplainError::SingleClass,
            other => ExplainError::Eval(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, ExplainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    Permutation,
    LinearAdditive,
}

/// Per-feature importances. For `Permutation`, `values` are mean AUROC
/// drops sorted descending and `base_value` is the unpermuted AUROC. For
/// `LinearAdditive`, `values` are logit contributions in model order and
/// `base_value` is the logit at the background mean, so
/// `base_value + sum(values)` is the logit of the explained point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub method: AttributionMethod,
    pub feature_names: Vec<String>,
    pub values: Vec<f64>,
    pub base_value: f64,
}

impl AttributionReport {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Mean over `n_repeats` shuffles of `AUROC(base) - AUROC(column j
/// shuffled)`. Shuffle `r` of feature `j` uses RNG stream `j * n_repeats +
/// r`.
pub fn permutation_importance(
    model: &LogisticModel,
    x_test: &FeatureMatrix,
    labels: &[bool],
    n_repeats: usize,
    seed: u64,
) -> Result<AttributionReport> {
    if n_repeats == 0 {
        return Err(ExplainError::Empty("repeats"));
    }
    let z = model.z_rows(x_test)?;
    let base_scores: Vec<f64> = z.iter().map(|r| model.logit_z(r)).collect();
    let base = auroc(&base_scores, labels)?;
    let d = model.n_features();
    let drops: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|j| {
            let column: Vec<f64> = z.iter().map(|r| r[j]).collect();
            let mut total = 0.0;
            for r in 0..n_repeats {
                let mut shuffled = column.clone();
                shuffled.shuffle(&mut stream_rng(seed, (j * n_repeats + r) as u64));
                let scores: Vec<f64> = z
                    .iter()
                    .zip(&shuffled)
                    .map(|(row, &v)| {
                        let mut row = row.clone();
                        row[j] = v;
                        model.logit_z(&row)
                    })
                    .collect();
                total += base - auroc(&scores, labels).expect("labels already checked");
            }
            total / n_repeats as f64
        })
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| drops[b].total_cmp(&drops[a]).then(a.cmp(&b)));
    Ok(AttributionReport {
        method: AttributionMethod::Permutation,
        feature_names: order.iter().map(|&j| model.feature_names[j].clone()).collect(),
        values: order.iter().map(|&j| drops[j]).collect(),
        base_value: base,
    })
}

/// Mean z-score of each model feature over `background`.
pub fn background_mean_z(model: &LogisticModel, background: &FeatureMatrix) -> Result<Vec<f64>> {
    if background.n_rows() == 0 {
        return Err(ExplainError::Empty("background"));
    }
    let z = model.z_rows(background)?;
    let n = z.len() as f64;
    Ok((0..model.n_features())
        .map(|j| z.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect())
}

/// `beta_i * (z_i(x) - mean_z_i)` per feature, from raw values in model
/// order and precomputed background means.
pub fn attribute_raw(model: &LogisticModel, mean_z: &[f64], raw: &[f64]) -> AttributionReport {
    let z = model.standardize(raw);
    AttributionReport {
        method: AttributionMethod::LinearAdditive,
        feature_names: model.feature_names.clone(),
        values: model
            .coefficients
            .iter()
            .zip(z.iter().zip(mean_z))
            .map(|(b, (zi, mi))| b * (zi - mi))
            .collect(),
        base_value: model.logit_z(mean_z),
    }
}

/// Exact additive (Shapley) decomposition of the logit at `x` relative to
/// the background mean profile.
pub fn linear_attribution(
    model: &LogisticModel,
    background: &FeatureMatrix,
    x: &Patient,
) -> Result<AttributionReport> {
    let raw = model.raw_vector(x)?;
    Ok(attribute_raw(model, &background_mean_z(model, background)?, &raw))
}

/// Attributions for every row of a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSummary {
    pub feature_names: Vec<String>,
    pub base_value: f64,
    /// One row per instance, columns in `feature_names` order.
    pub values: Vec<Vec<f64>>,
    pub mean_abs: Vec<f64>,
    /// Feature names by mean |attribution|, largest first.
    pub ranking: Vec<String>,
}

impl AttributionSummary {
    /// Instance × feature matrix with a leading row index.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| ExplainError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for (i, row) in self.values.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| ExplainError::Csv(e.to_string()))
    }
}

pub fn summary_distribution(
    model: &LogisticModel,
    x_test: &FeatureMatrix,
    background: &FeatureMatrix,
) -> Result<AttributionSummary> {
    if x_test.n_rows() == 0 {
        return Err(ExplainError::Empty("test set"));
    }
    let mean_z = background_mean_z(model, background)?;
    let z = model.z_rows(x_test)?;
    let values: Vec<Vec<f64>> = z
        .iter()
        .map(|row| {
            model
                .coefficients
                .iter()
                .zip(row.iter().zip(&mean_z))
                .map(|(b, (zi, mi))| b * (zi - mi))
                .collect()
        })
        .collect();
    let d = model.n_features();
    let n = values.len() as f64;
    let mean_abs: Vec<f64> = (0..d)
        .map(|j| {
            let mut col: Vec<f64> = values.iter().map(|r| r[j].abs()).collect();
            // order-independent sum
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / n
        })
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    Ok(AttributionSummary {
        feature_names: model.feature_names.clone(),
        base_value: model.logit_z(&mean_z),
        values,
        mean_abs,
        ranking: order.iter().map(|&j| model.feature_names[j].clone()).collect(),
    })
}

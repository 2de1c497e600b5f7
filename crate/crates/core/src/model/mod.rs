//! Horizon-specific logistic models and the Cox proportional-hazards model.

mod cox;
mod logistic;

pub use cox::{cox_partial_loglik, fit_cox, CoxModel, CoxOptions};
pub use logistic::{fit_logistic, logistic_objective, LogisticModel, LogisticOptions};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::SurvivalOutcome;
use crate::preprocess::{zscore_fit_transform, FeatureMatrix, NormStat, PreprocessError};
use crate::rng::stream_rng;
use crate::Patient;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("no convergence after {iterations} iterations (gradient max-norm {gradient_norm:e})")]
    NonConvergence { iterations: usize, gradient_norm: f64 },
    #[error("no events observed")]
    NoEvents,
    #[error("missing features: {}", .0.join(", "))]
    MissingFeature(Vec<String>),
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("time must be >= 0, got {0}")]
    InvalidTime(f64),
    #[error("split ratio must be in (0, 1), got {0}")]
    InvalidSplit(f64),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Optimizer bookkeeping stored with each fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub iterations: usize,
    /// Max-norm of the mean-scaled gradient at the solution.
    pub gradient_norm: f64,
    /// Mean (per-observation) log-likelihood at the solution.
    pub log_likelihood: f64,
    pub l2: f64,
    pub n_obs: usize,
}

/// Where a model came from, for reproducibility audits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

/// Label 1 iff death was observed on or before `horizon_days`.
pub fn binarize_outcome(outcomes: &[SurvivalOutcome], horizon_days: f64) -> Vec<bool> {
    outcomes
        .iter()
        .map(|o| o.event && o.time_days <= horizon_days)
        .collect()
}

/// Stratified train/test split. Within each class the indices are shuffled
/// and the first `round(ratio * n_class)` go to training. Both index lists
/// are returned sorted.
pub fn stratified_split(labels: &[bool], ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(ModelError::InvalidSplit(ratio));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (stream, class) in [false, true].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut stream_rng(seed, stream as u64));
        let cut = (ratio * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Z-scored view of `x` plus the stats that map raw values onto it.
pub(crate) fn standardized(x: &FeatureMatrix) -> Result<(FeatureMatrix, Vec<NormStat>)> {
    if x.has_missing() {
        return Err(PreprocessError::HasMissing.into());
    }
    match &x.norm_stats {
        Some(stats) => Ok((x.clone(), stats.clone())),
        None => {
            let z = zscore_fit_transform(x)?;
            let stats = z.norm_stats.clone().expect("fit sets stats");
            Ok((z, stats))
        }
    }
}

/// Raw values of the named features, in order, or every missing name.
pub(crate) fn raw_vector(names: &[String], patient: &Patient) -> Result<Vec<f64>> {
    let missing: Vec<String> = names
        .iter()
        .filter(|n| !patient.get(*n).is_some_and(|v| v.is_finite()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(ModelError::MissingFeature(missing));
    }
    Ok(names.iter().map(|n| patient[n]).collect())
}

/// Columns of `m` matching `names`, expressed as z-scores under `stats`.
pub(crate) fn z_rows(m: &FeatureMatrix, names: &[String], stats: &[NormStat]) -> Result<Vec<Vec<f64>>> {
    let missing: Vec<String> = names
        .iter()
        .filter(|n| m.column_index(n).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(ModelError::MissingFeature(missing));
    }
    let cols: Vec<usize> = names.iter().map(|n| m.column_index(n).unwrap()).collect();
    Ok((0..m.n_rows())
        .map(|i| {
            cols.iter()
                .zip(stats)
                .map(|(&j, target)| {
                    let v = m.values[(i, j)];
                    match &m.norm_stats {
                        Some(src) if src[j] == *target => v,
                        Some(src) => target.z(src[j].raw(v)),
                        None => target.z(v),
                    }
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_by_horizon() {
        let o = [
            SurvivalOutcome::new(6.0, true),
            SurvivalOutcome::new(6.0, false),
            SurvivalOutcome::new(10.0, true),
        ];
        assert_eq!(binarize_outcome(&o, 7.0), [true, false, false]);
        assert_eq!(binarize_outcome(&o, 14.0), [true, false, true]);
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let labels: Vec<bool> = (0..100).map(|i| i % 4 == 0).collect();
        let (train, test) = stratified_split(&labels, 0.7, 5).unwrap();
        assert_eq!(train.len() + test.len(), 100);
        assert_eq!(train.iter().filter(|&&i| labels[i]).count(), 18);
        assert_eq!(test.iter().filter(|&&i| labels[i]).count(), 7);
        assert_eq!(stratified_split(&labels, 0.7, 5).unwrap(), (train, test));
    }

    #[test]
    fn split_ratio_validated() {
        assert_eq!(
            stratified_split(&[true, false], 1.0, 1),
            Err(ModelError::InvalidSplit(1.0))
        );
        assert!(stratified_split(&[true, false], 0.0, 1).is_err());
    }
}

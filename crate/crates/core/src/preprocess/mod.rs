//! Feature matrices, missingness filtering, imputation, normalization and
//! derived clinical scores.

mod impute;
mod scores;

pub use impute::knn_impute;
pub use scores::{
    aps_iii_score, base_excess, ApsBin, ApsIiiInput, ApsVariable, ApsVariableWeights,
    ApsWeightTable, APS_III_MAX,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::CohortTable;
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("missingness threshold must be in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("column `{column}` has {observed} observed rows, fewer than k = {k}")]
    InsufficientDonors {
        column: String,
        observed: usize,
        k: usize,
    },
    #[error("row {0} has no observed values")]
    EmptyRow(usize),
    #[error("k must be positive")]
    ZeroK,
    #[error("column `{0}` is constant")]
    ConstantColumn(String),
    #[error("matrix still has missing values")]
    HasMissing,
    #[error("normalization stats do not match the matrix columns: {0}")]
    StatsMismatch(String),
    #[error("{variable} = {value} outside the physiologic range {range}")]
    OutOfPhysiologicRange {
        variable: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid APS III weight table: {0}")]
    InvalidWeightTable(String),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// Mean and sample standard deviation of one column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStat {
    pub mean: f64,
    pub sd: f64,
}

impl NormStat {
    pub fn z(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.sd
    }

    pub fn raw(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// Named normalization stats, the JSON sidecar written next to normalized
/// matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub names: Vec<String>,
    pub stats: Vec<NormStat>,
}

impl NormStats {
    pub fn get(&self, name: &str) -> Option<NormStat> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.stats[i])
    }
}

/// Rows are patients, columns are features. Missing slots hold NaN and are
/// flagged in `missing`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: DMatrix<f64>,
    pub missing: DMatrix<bool>,
    pub names: Vec<String>,
    pub units: Vec<String>,
    /// Present when `values` hold z-scores under these stats.
    pub norm_stats: Option<Vec<NormStat>>,
}

impl FeatureMatrix {
    /// Build from row-major values where NaN marks a missing slot.
    pub fn from_rows(rows: &[Vec<f64>], names: Vec<String>, units: Vec<String>) -> Self {
        let d = names.len();
        assert_eq!(units.len(), d, "one unit per column");
        let n = rows.len();
        let values = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let missing = values.map(|v| v.is_nan());
        Self {
            values,
            missing,
            names,
            units,
            norm_stats: None,
        }
    }

    /// Complete matrix with unit-less columns, handy in tests and examples.
    pub fn from_columns(columns: &[Vec<f64>], names: &[&str]) -> Self {
        let n = columns.first().map_or(0, Vec::len);
        let values = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
        let missing = values.map(|v| v.is_nan());
        Self {
            values,
            missing,
            names: names.iter().map(|s| s.to_string()).collect(),
            units: vec![String::new(); columns.len()],
            norm_stats: None,
        }
    }

    pub fn from_cohort(table: &CohortTable) -> Self {
        let names: Vec<String> = table.dictionary.names().map(str::to_string).collect();
        let units = table
            .dictionary
            .entries
            .iter()
            .map(|e| e.unit.clone())
            .collect();
        let rows: Vec<Vec<f64>> = table
            .records
            .iter()
            .map(|r| {
                names
                    .iter()
                    .map(|n| r.clinical_values.get(n).copied().flatten().unwrap_or(f64::NAN))
                    .collect()
            })
            .collect();
        Self::from_rows(&rows, names, units)
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    pub fn observed_column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows())
            .filter(|&i| !self.missing[(i, j)])
            .map(|i| self.values[(i, j)])
            .collect()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    pub fn missing_fraction(&self, j: usize) -> f64 {
        if self.n_rows() == 0 {
            return 0.0;
        }
        let count = self.missing.column(j).iter().filter(|&&m| m).count();
        count as f64 / self.n_rows() as f64
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let n = self.n_rows();
        Self {
            values: DMatrix::from_fn(n, cols.len(), |i, k| self.values[(i, cols[k])]),
            missing: DMatrix::from_fn(n, cols.len(), |i, k| self.missing[(i, cols[k])]),
            names: cols.iter().map(|&j| self.names[j].clone()).collect(),
            units: cols.iter().map(|&j| self.units[j].clone()).collect(),
            norm_stats: self
                .norm_stats
                .as_ref()
                .map(|s| cols.iter().map(|&j| s[j]).collect()),
        }
    }

    pub fn select_named(&self, names: &[String]) -> Result<Self> {
        let cols = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| PreprocessError::UnknownFeature(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_columns(&cols))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let d = self.n_cols();
        Self {
            values: DMatrix::from_fn(rows.len(), d, |k, j| self.values[(rows[k], j)]),
            missing: DMatrix::from_fn(rows.len(), d, |k, j| self.missing[(rows[k], j)]),
            names: self.names.clone(),
            units: self.units.clone(),
            norm_stats: self.norm_stats.clone(),
        }
    }

    /// Stack `other` below `self`; columns must match.
    pub fn vstack(&self, other: &FeatureMatrix) -> Self {
        assert_eq!(self.names, other.names, "column mismatch in vstack");
        let n = self.n_rows();
        let pick = |i: usize, j: usize| {
            if i < n {
                self.values[(i, j)]
            } else {
                other.values[(i - n, j)]
            }
        };
        let values = DMatrix::from_fn(n + other.n_rows(), self.n_cols(), pick);
        let missing = values.map(|v| v.is_nan());
        Self {
            values,
            missing,
            names: self.names.clone(),
            units: self.units.clone(),
            norm_stats: self.norm_stats.clone(),
        }
    }

    /// Values in raw clinical units, undoing z-scoring when stats are present.
    pub fn raw_values(&self) -> DMatrix<f64> {
        match &self.norm_stats {
            None => self.values.clone(),
            Some(stats) => DMatrix::from_fn(self.n_rows(), self.n_cols(), |i, j| {
                stats[j].raw(self.values[(i, j)])
            }),
        }
    }

    pub fn named_stats(&self) -> Option<NormStats> {
        self.norm_stats.as_ref().map(|s| NormStats {
            names: self.names.clone(),
            stats: s.clone(),
        })
    }

    /// Append a fully observed column.
    pub fn with_column(&self, name: &str, unit: &str, column: &[f64]) -> Self {
        assert_eq!(column.len(), self.n_rows());
        let d = self.n_cols();
        let values = DMatrix::from_fn(self.n_rows(), d + 1, |i, j| {
            if j < d {
                self.values[(i, j)]
            } else {
                column[i]
            }
        });
        let missing = values.map(|v| v.is_nan());
        let mut names = self.names.clone();
        names.push(name.to_string());
        let mut units = self.units.clone();
        units.push(unit.to_string());
        Self {
            values,
            missing,
            names,
            units,
            norm_stats: None,
        }
    }
}

/// Drop columns whose missing fraction exceeds `threshold`.
pub fn drop_high_missingness(
    m: &FeatureMatrix,
    threshold: f64,
) -> Result<(FeatureMatrix, Vec<String>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PreprocessError::InvalidThreshold(threshold));
    }
    let (keep, drop): (Vec<usize>, Vec<usize>) =
        (0..m.n_cols()).partition(|&j| m.missing_fraction(j) <= threshold);
    let dropped = drop.iter().map(|&j| m.names[j].clone()).collect();
    Ok((m.select_columns(&keep), dropped))
}

/// Fit per-column mean and sample sd, then standardize.
pub fn zscore_fit_transform(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if m.has_missing() {
        return Err(PreprocessError::HasMissing);
    }
    let stats = (0..m.n_cols())
        .map(|j| {
            let col = m.column(j);
            let sd = stats::sample_sd(&col);
            if !(sd > 0.0) || !sd.is_finite() {
                return Err(PreprocessError::ConstantColumn(m.names[j].clone()));
            }
            Ok(NormStat {
                mean: stats::mean(&col),
                sd,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    zscore_apply(
        m,
        &NormStats {
            names: m.names.clone(),
            stats,
        },
    )
}

/// Standardize raw columns with previously fitted stats, matched by name.
pub fn zscore_apply(m: &FeatureMatrix, stats: &NormStats) -> Result<FeatureMatrix> {
    if m.has_missing() {
        return Err(PreprocessError::HasMissing);
    }
    if m.norm_stats.is_some() {
        return Err(PreprocessError::StatsMismatch(
            "matrix is already normalized".into(),
        ));
    }
    let per_col = m
        .names
        .iter()
        .map(|n| {
            stats
                .get(n)
                .ok_or_else(|| PreprocessError::StatsMismatch(format!("no stats for `{n}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = per_col.iter().position(|s| !(s.sd > 0.0)) {
        return Err(PreprocessError::ConstantColumn(m.names[bad].clone()));
    }
    let values = DMatrix::from_fn(m.n_rows(), m.n_cols(), |i, j| per_col[j].z(m.values[(i, j)]));
    Ok(FeatureMatrix {
        values,
        missing: m.missing.clone(),
        names: m.names.clone(),
        units: m.units.clone(),
        norm_stats: Some(per_col),
    })
}

/// Per-column (lo, hi) percentile ranges in raw units.
pub fn percentile_ranges(m: &FeatureMatrix, lo_q: f64, hi_q: f64) -> Vec<(f64, f64)> {
    let raw = m.raw_values();
    (0..m.n_cols())
        .map(|j| {
            let mut col: Vec<f64> = (0..m.n_rows())
                .filter(|&i| !m.missing[(i, j)])
                .map(|i| raw[(i, j)])
                .collect();
            col.sort_by(|a, b| a.total_cmp(b));
            (
                stats::quantile_sorted(&col, lo_q),
                stats::quantile_sorted(&col, hi_q),
            )
        })
        .collect()
}

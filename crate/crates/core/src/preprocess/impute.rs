use rayon::prelude::*;

use super::{FeatureMatrix, PreprocessError, Result};
use crate::stats;

/// Scale-normalized distance over the columns observed in both rows:
/// `sqrt(sum(((a_j - b_j) / sd_j)^2) / shared)`. Infinite when no column is
/// shared.
fn row_distance(m: &FeatureMatrix, scale: &[f64], a: usize, b: usize) -> f64 {
    let mut sum = 0.0;
    let mut shared = 0usize;
    for j in 0..m.n_cols() {
        if m.missing[(a, j)] || m.missing[(b, j)] {
            continue;
        }
        let diff = (m.values[(a, j)] - m.values[(b, j)]) / scale[j];
        sum += diff * diff;
        shared += 1;
    }
    if shared == 0 {
        f64::INFINITY
    } else {
        (sum / shared as f64).sqrt()
    }
}

/// Replace each missing cell with the mean of that column over the `k`
/// nearest rows that observe it. Observed cells are left untouched and only
/// originally observed values act as donors.
pub fn knn_impute(m: &FeatureMatrix, k: usize) -> Result<FeatureMatrix> {
    if k == 0 {
        return Err(PreprocessError::ZeroK);
    }
    if !m.has_missing() {
        return Ok(m.clone());
    }
    let (n, d) = (m.n_rows(), m.n_cols());
    for i in 0..n {
        if (0..d).all(|j| m.missing[(i, j)]) {
            return Err(PreprocessError::EmptyRow(i));
        }
    }
    let mut scale = Vec::with_capacity(d);
    for j in 0..d {
        let observed = m.observed_column(j);
        if observed.len() < n && observed.len() < k {
            return Err(PreprocessError::InsufficientDonors {
                column: m.names[j].clone(),
                observed: observed.len(),
                k,
            });
        }
        let sd = stats::sample_sd(&observed);
        scale.push(if sd > 0.0 && sd.is_finite() { sd } else { 1.0 });
    }

    let filled: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let gaps: Vec<usize> = (0..d).filter(|&j| m.missing[(i, j)]).collect();
            if gaps.is_empty() {
                return Vec::new();
            }
            let mut ranked: Vec<(f64, usize)> = (0..n)
                .filter(|&r| r != i)
                .map(|r| (row_distance(m, &scale, i, r), r))
                .collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            gaps.into_iter()
                .map(|j| {
                    let donors: Vec<f64> = ranked
                        .iter()
                        .filter(|(_, r)| !m.missing[(*r, j)])
                        .take(k)
                        .map(|(_, r)| m.values[(*r, j)])
                        .collect();
                    (j, stats::mean(&donors))
                })
                .collect()
        })
        .collect();

    let mut out = m.clone();
    for (i, cells) in filled.into_iter().enumerate() {
        for (j, v) in cells {
            out.values[(i, j)] = v;
            out.missing[(i, j)] = false;
        }
    }
    Ok(out)
}

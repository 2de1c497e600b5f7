use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{raw_vector, z_rows, FitMeta, ModelError, Provenance, Result};
use crate::cohort::SurvivalOutcome;
use crate::preprocess::{FeatureMatrix, NormStat};
use crate::stats;
use crate::Patient;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// Cox proportional-hazards model on z-scored covariates with a Breslow
/// baseline cumulative hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    /// Log hazard ratios per standard deviation.
    pub coefficients: Vec<f64>,
    pub feature_names: Vec<String>,
    pub norm_stats: Vec<NormStat>,
    /// `(event time, cumulative hazard)` steps, times ascending. The hazard
    /// is 0 before the first step.
    pub baseline_cumhaz: Vec<(f64, f64)>,
    pub fit_meta: FitMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Subjects ordered by descending time, with event times grouped.
struct RiskOrder {
    order: Vec<usize>,
    /// `[start, end)` ranges into `order` sharing one time value.
    groups: Vec<(usize, usize)>,
}

impl RiskOrder {
    fn new(outcomes: &[SurvivalOutcome]) -> Self {
        let mut order: Vec<usize> = (0..outcomes.len()).collect();
        order.sort_by(|&a, &b| {
            outcomes[b]
                .time_days
                .total_cmp(&outcomes[a].time_days)
                .then(a.cmp(&b))
        });
        let mut groups = Vec::new();
        let mut start = 0;
        while start < order.len() {
            let t = outcomes[order[start]].time_days;
            let mut end = start + 1;
            while end < order.len() && outcomes[order[end]].time_days == t {
                end += 1;
            }
            groups.push((start, end));
            start = end;
        }
        Self { order, groups }
    }
}

/// Mean Breslow partial log-likelihood, gradient and (optionally) the
/// negative Hessian, all divided by the number of subjects.
fn partial_loglik(
    z: &[Vec<f64>],
    outcomes: &[SurvivalOutcome],
    beta: &[f64],
    ro: &RiskOrder,
    with_info: bool,
) -> (f64, Vec<f64>, DMatrix<f64>) {
    let d = beta.len();
    let eta: Vec<f64> = z
        .iter()
        .map(|row| row.iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect();
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; d];
    let mut s2 = DMatrix::<f64>::zeros(if with_info { d } else { 0 }, if with_info { d } else { 0 });
    let mut value = 0.0;
    let mut grad = vec![0.0; d];
    let mut info = DMatrix::<f64>::zeros(d, d);

    for &(start, end) in &ro.groups {
        // everyone at this time joins the risk set before their events count
        for &i in &ro.order[start..end] {
            let w = (eta[i] - shift).exp();
            s0 += w;
            for a in 0..d {
                s1[a] += w * z[i][a];
                if with_info {
                    for b in 0..d {
                        s2[(a, b)] += w * z[i][a] * z[i][b];
                    }
                }
            }
        }
        let events: Vec<usize> = ro.order[start..end]
            .iter()
            .copied()
            .filter(|&i| outcomes[i].event)
            .collect();
        if events.is_empty() {
            continue;
        }
        let m = events.len() as f64;
        let log_s0 = s0.ln() + shift;
        for &i in &events {
            value += eta[i] - log_s0;
            for a in 0..d {
                grad[a] += z[i][a];
            }
        }
        for a in 0..d {
            grad[a] -= m * s1[a] / s0;
        }
        if with_info {
            for a in 0..d {
                for b in 0..d {
                    info[(a, b)] += m * (s2[(a, b)] / s0 - (s1[a] / s0) * (s1[b] / s0));
                }
            }
        }
    }
    let inv_n = 1.0 / outcomes.len() as f64;
    value *= inv_n;
    grad.iter_mut().for_each(|g| *g *= inv_n);
    info.iter_mut().for_each(|h| *h *= inv_n);
    (value, grad, info)
}

/// Mean Breslow partial log-likelihood and gradient at `beta`, for rows of
/// covariates `z`.
pub fn cox_partial_loglik(z: &[Vec<f64>], outcomes: &[SurvivalOutcome], beta: &[f64]) -> (f64, Vec<f64>) {
    let (v, g, _) = partial_loglik(z, outcomes, beta, &RiskOrder::new(outcomes), false);
    (v, g)
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, g| m.max(g.abs()))
}

/// Fit by Newton with step halving on the Breslow partial likelihood.
///
/// Covariates are z-scored with the matrix's own stats (or freshly fitted
/// ones). Zero-variance columns carry no information: their coefficient is
/// held at 0 and they are left out of the Newton system.
pub fn fit_cox(x: &FeatureMatrix, outcomes: &[SurvivalOutcome], opts: &CoxOptions) -> Result<CoxModel> {
    if outcomes.len() != x.n_rows() {
        return Err(ModelError::LengthMismatch {
            what: "outcomes",
            expected: x.n_rows(),
            got: outcomes.len(),
        });
    }
    if !outcomes.iter().any(|o| o.event) {
        return Err(ModelError::NoEvents);
    }
    if x.has_missing() {
        return Err(crate::preprocess::PreprocessError::HasMissing.into());
    }
    let d = x.n_cols();
    let norm_stats: Vec<NormStat> = match &x.norm_stats {
        Some(s) => s.clone(),
        None => (0..d)
            .map(|j| {
                let col = x.column(j);
                let sd = stats::sample_sd(&col);
                NormStat {
                    mean: stats::mean(&col),
                    sd: if sd > 0.0 { sd } else { 1.0 },
                }
            })
            .collect(),
    };
    let z_all = z_rows(x, &x.names, &norm_stats)?;
    let active: Vec<usize> = (0..d)
        .filter(|&j| {
            let first = z_all.first().map(|r| r[j]);
            z_all.iter().any(|r| Some(r[j]) != first)
        })
        .collect();
    let z: Vec<Vec<f64>> = z_all
        .iter()
        .map(|r| active.iter().map(|&j| r[j]).collect())
        .collect();

    let ro = RiskOrder::new(outcomes);
    let k = active.len();
    let mut beta = vec![0.0; k];
    let (mut value, mut grad, mut info) = partial_loglik(&z, outcomes, &beta, &ro, true);
    let mut iterations = 0;
    while max_norm(&grad) >= opts.tol {
        if iterations == opts.max_iter {
            return Err(ModelError::NonConvergence {
                iterations,
                gradient_norm: max_norm(&grad),
            });
        }
        iterations += 1;
        let rhs = DVector::from_column_slice(&grad);
        let Some(step) = info.clone().cholesky().map(|c| c.solve(&rhs)) else {
            return Err(ModelError::NonConvergence {
                iterations,
                gradient_norm: max_norm(&grad),
            });
        };
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let (v, g, h) = partial_loglik(&z, outcomes, &trial, &ro, true);
            if v >= value || scale < 1e-10 {
                beta = trial;
                value = v;
                grad = g;
                info = h;
                break;
            }
            scale *= 0.5;
        }
    }

    let mut coefficients = vec![0.0; d];
    for (b, &j) in beta.iter().zip(&active) {
        coefficients[j] = *b;
    }
    let baseline_cumhaz = breslow_baseline(&z_all, outcomes, &coefficients, &ro);
    Ok(CoxModel {
        coefficients,
        feature_names: x.names.clone(),
        norm_stats,
        baseline_cumhaz,
        fit_meta: FitMeta {
            iterations,
            gradient_norm: max_norm(&grad),
            log_likelihood: value,
            l2: 0.0,
            n_obs: outcomes.len(),
        },
        provenance: None,
    })
}

/// Breslow estimate: at each event time `t_k`, the hazard increment is
/// `d_k / sum over the risk set of exp(eta)`.
fn breslow_baseline(
    z: &[Vec<f64>],
    outcomes: &[SurvivalOutcome],
    beta: &[f64],
    ro: &RiskOrder,
) -> Vec<(f64, f64)> {
    let risk: Vec<f64> = z
        .iter()
        .map(|row| row.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>().exp())
        .collect();
    let mut s0 = 0.0;
    let mut increments = Vec::new();
    for &(start, end) in &ro.groups {
        for &i in &ro.order[start..end] {
            s0 += risk[i];
        }
        let deaths = ro.order[start..end]
            .iter()
            .filter(|&&i| outcomes[i].event)
            .count();
        if deaths > 0 {
            increments.push((outcomes[ro.order[start]].time_days, deaths as f64 / s0));
        }
    }
    increments.reverse();
    let mut cum = 0.0;
    increments
        .into_iter()
        .map(|(t, h)| {
            cum += h;
            (t, cum)
        })
        .collect()
}

impl CoxModel {
    pub fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.norm_stats).map(|(v, s)| s.z(*v)).collect()
    }

    /// Coefficients per raw unit of each covariate.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.norm_stats)
            .map(|(b, s)| b / s.sd)
            .collect()
    }

    pub fn linear_predictor_raw(&self, raw: &[f64]) -> f64 {
        self.standardize(raw)
            .iter()
            .zip(&self.coefficients)
            .map(|(z, b)| z * b)
            .sum()
    }

    /// Baseline cumulative hazard, right-continuous step function.
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        let idx = self.baseline_cumhaz.partition_point(|(time, _)| *time <= t);
        if idx == 0 {
            0.0
        } else {
            self.baseline_cumhaz[idx - 1].1
        }
    }

    pub fn survival_raw(&self, raw: &[f64], t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(ModelError::InvalidTime(t));
        }
        Ok((-self.cumulative_hazard(t) * self.linear_predictor_raw(raw).exp()).exp())
    }

    pub fn survival(&self, patient: &Patient, t: f64) -> Result<f64> {
        self.survival_raw(&raw_vector(&self.feature_names, patient)?, t)
    }

    /// Linear predictors (risk scores) for the rows of `m`.
    pub fn risk_scores(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(z_rows(m, &self.feature_names, &self.norm_stats)?
            .iter()
            .map(|z| z.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum())
            .collect())
    }
}

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{raw_vector, standardized, z_rows, FitMeta, ModelError, Provenance, Result};
use crate::preprocess::{percentile_ranges, FeatureMatrix, NormStat};
use crate::stats::sigmoid;
use crate::Patient;

/// Probabilities are kept inside `[P_FLOOR, 1 - P_FLOOR]`.
const P_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self {
            l2: 1e-6,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    /// Coefficients on the z-scored features.
    pub coefficients: Vec<f64>,
    pub horizon_days: u32,
    pub feature_names: Vec<String>,
    pub units: Vec<String>,
    pub norm_stats: Vec<NormStat>,
    /// Raw-unit (1st, 99th) percentile ranges of the training features.
    pub reference_ranges: Vec<(f64, f64)>,
    pub fit_meta: FitMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Mean penalized log-likelihood and its gradient.
///
/// `params = [intercept, beta_1, .., beta_d]`; `z` is n x d. The ridge term
/// `l2 / 2 * |beta|^2` leaves the intercept unpenalized.
pub fn logistic_objective(z: &DMatrix<f64>, y: &[bool], l2: f64, params: &[f64]) -> (f64, Vec<f64>) {
    let (n, d) = (z.nrows(), z.ncols());
    let mut value = 0.0;
    let mut grad = vec![0.0; d + 1];
    for i in 0..n {
        let mut eta = params[0];
        for j in 0..d {
            eta += params[j + 1] * z[(i, j)];
        }
        let yi = if y[i] { 1.0 } else { 0.0 };
        value += yi * eta - softplus(eta);
        let r = yi - sigmoid(eta);
        grad[0] += r;
        for j in 0..d {
            grad[j + 1] += r * z[(i, j)];
        }
    }
    let inv_n = 1.0 / n as f64;
    value *= inv_n;
    for g in grad.iter_mut() {
        *g *= inv_n;
    }
    for j in 0..d {
        value -= 0.5 * l2 * params[j + 1] * params[j + 1];
        grad[j + 1] -= l2 * params[j + 1];
    }
    (value, grad)
}

/// Negative Hessian of the mean objective.
fn information(z: &DMatrix<f64>, l2: f64, params: &[f64]) -> DMatrix<f64> {
    let (n, d) = (z.nrows(), z.ncols());
    let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut row = vec![1.0; d + 1];
    for i in 0..n {
        let mut eta = params[0];
        for j in 0..d {
            row[j + 1] = z[(i, j)];
            eta += params[j + 1] * row[j + 1];
        }
        let p = sigmoid(eta);
        let w = p * (1.0 - p);
        for a in 0..=d {
            let wa = w * row[a];
            for b in a..=d {
                h[(a, b)] += wa * row[b];
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for a in 0..=d {
        for b in a..=d {
            h[(a, b)] *= inv_n;
            h[(b, a)] = h[(a, b)];
        }
        if a > 0 {
            h[(a, a)] += l2;
        }
    }
    h
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, g| m.max(g.abs()))
}

/// Solve `h x = g`, adding diagonal jitter if `h` is numerically singular.
fn newton_direction(h: DMatrix<f64>, g: &[f64]) -> Option<DVector<f64>> {
    let rhs = DVector::from_column_slice(g);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut m = h.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = m.cholesky() {
            return Some(chol.solve(&rhs));
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 100.0 };
    }
    None
}

/// Fit by damped Newton (IRLS) on the mean penalized log-likelihood.
///
/// If `x` carries no normalization stats it is z-scored first, so the
/// model always maps raw clinical values through its own stats.
pub fn fit_logistic(x: &FeatureMatrix, labels: &[bool], opts: &LogisticOptions) -> Result<LogisticModel> {
    if labels.len() != x.n_rows() {
        return Err(ModelError::LengthMismatch {
            what: "labels",
            expected: x.n_rows(),
            got: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(ModelError::SingleClass);
    }
    let (zm, stats) = standardized(x)?;
    let z = &zm.values;
    let d = z.ncols();

    let mut params = vec![0.0; d + 1];
    let (mut value, mut grad) = logistic_objective(z, labels, opts.l2, &params);
    let mut iterations = 0;
    while max_norm(&grad) >= opts.tol {
        if iterations == opts.max_iter {
            return Err(ModelError::NonConvergence {
                iterations,
                gradient_norm: max_norm(&grad),
            });
        }
        iterations += 1;
        let Some(step) = newton_direction(information(z, opts.l2, &params), &grad) else {
            return Err(ModelError::NonConvergence {
                iterations,
                gradient_norm: max_norm(&grad),
            });
        };
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = params
                .iter()
                .zip(step.iter())
                .map(|(p, s)| p + scale * s)
                .collect();
            let (v, g) = logistic_objective(z, labels, opts.l2, &trial);
            if v >= value || scale < 1e-10 {
                params = trial;
                value = v;
                grad = g;
                break;
            }
            scale *= 0.5;
        }
    }

    let separated = (0..z.nrows()).all(|i| {
        let eta = params[0] + (0..d).map(|j| params[j + 1] * z[(i, j)]).sum::<f64>();
        if labels[i] { eta > 14.0 } else { eta < -14.0 }
    });
    if separated {
        return Err(ModelError::NonConvergence {
            iterations,
            gradient_norm: max_norm(&grad),
        });
    }

    Ok(LogisticModel {
        intercept: params[0],
        coefficients: params[1..].to_vec(),
        horizon_days: 0,
        feature_names: x.names.clone(),
        units: x.units.clone(),
        norm_stats: stats,
        reference_ranges: percentile_ranges(&zm, 0.01, 0.99),
        fit_meta: FitMeta {
            iterations,
            gradient_norm: max_norm(&grad),
            log_likelihood: value + 0.5 * opts.l2 * params[1..].iter().map(|b| b * b).sum::<f64>(),
            l2: opts.l2,
            n_obs: labels.len(),
        },
        provenance: None,
    })
}

impl LogisticModel {
    pub fn with_horizon(mut self, horizon_days: u32) -> Self {
        self.horizon_days = horizon_days;
        self
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.len()
    }

    pub fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(&self.norm_stats).map(|(v, s)| s.z(*v)).collect()
    }

    pub fn logit_z(&self, z: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(z)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    pub fn logit_raw(&self, raw: &[f64]) -> f64 {
        self.logit_z(&self.standardize(raw))
    }

    /// Probability for raw values in `feature_names` order.
    pub fn predict_prob_raw(&self, raw: &[f64]) -> f64 {
        sigmoid(self.logit_raw(raw)).clamp(P_FLOOR, 1.0 - P_FLOOR)
    }

    pub fn predict_prob(&self, patient: &Patient) -> Result<f64> {
        Ok(self.predict_prob_raw(&self.raw_vector(patient)?))
    }

    pub fn raw_vector(&self, patient: &Patient) -> Result<Vec<f64>> {
        raw_vector(&self.feature_names, patient)
    }

    /// Rows of `m` in this model's z-space (columns matched by name).
    pub fn z_rows(&self, m: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        z_rows(m, &self.feature_names, &self.norm_stats)
    }

    pub fn logits(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self.z_rows(m)?.iter().map(|z| self.logit_z(z)).collect())
    }

    pub fn predict_matrix(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self
            .logits(m)?
            .into_iter()
            .map(|l| sigmoid(l).clamp(P_FLOOR, 1.0 - P_FLOOR))
            .collect())
    }

    /// Training means in raw units (the z-space origin).
    pub fn training_means(&self) -> Vec<f64> {
        self.norm_stats.iter().map(|s| s.mean).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn planted(n: usize, beta: &[f64], intercept: f64, seed: u64) -> (FeatureMatrix, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols = vec![Vec::with_capacity(n); beta.len()];
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let mut eta = intercept;
            for (j, b) in beta.iter().enumerate() {
                let v: f64 = StandardNormal.sample(&mut rng);
                cols[j].push(v);
                eta += b * v;
            }
            y.push(rng.random::<f64>() < sigmoid(eta));
        }
        let names: Vec<String> = (0..beta.len()).map(|j| format!("x{j}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        (FeatureMatrix::from_columns(&cols, &refs), y)
    }

    #[test]
    fn recovers_planted_coefficients() {
        let (x, y) = planted(50_000, &[1.0, -1.0], 0.0, 7);
        let m = fit_logistic(&x, &y, &LogisticOptions::default()).unwrap();
        // coefficients are on the z-scale; convert to the unit-variance draw
        for (j, truth) in [1.0, -1.0].iter().enumerate() {
            let raw_beta = m.coefficients[j] / m.norm_stats[j].sd;
            assert!((raw_beta - truth).abs() < 0.05, "beta {j} = {raw_beta}");
        }
        assert!(m.fit_meta.gradient_norm < 1e-8);
    }

    #[test]
    fn null_features_shrink_to_zero() {
        let (x, y) = planted(10_000, &[0.0, 0.0, 0.0], -0.5, 3);
        let m = fit_logistic(&x, &y, &LogisticOptions::default()).unwrap();
        for b in &m.coefficients {
            assert!(b.abs() < 0.05, "{b}");
        }
    }

    #[test]
    fn intercept_only_balanced() {
        let x = FeatureMatrix::from_columns(&[], &[]);
        let x = FeatureMatrix {
            values: DMatrix::zeros(4, 0),
            missing: DMatrix::from_element(4, 0, false),
            ..x
        };
        let m = fit_logistic(&x, &[true, false, true, false], &LogisticOptions::default()).unwrap();
        assert!(m.intercept.abs() < 1e-12);
        assert_eq!(m.predict_prob_raw(&[]), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        let (x, _) = planted(20, &[1.0], 0.0, 1);
        assert_eq!(
            fit_logistic(&x, &[true; 20], &LogisticOptions::default()),
            Err(ModelError::SingleClass)
        );
    }

    #[test]
    fn separable_data_does_not_converge() {
        let x = FeatureMatrix::from_columns(&[vec![-2.0, -1.0, 1.0, 2.0]], &["x"]);
        let opts = LogisticOptions {
            l2: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            fit_logistic(&x, &[false, false, true, true], &opts),
            Err(ModelError::NonConvergence { .. })
        ));
    }

    #[test]
    fn prediction_guards() {
        let (x, y) = planted(500, &[1.0, 0.5], 0.2, 9);
        let mut m = fit_logistic(&x, &y, &LogisticOptions::default()).unwrap();
        let at_mean = m.training_means();
        assert!((m.predict_prob_raw(&at_mean) - sigmoid(m.intercept)).abs() < 1e-15);
        assert_eq!(m.predict_prob_raw(&[1e300, 1e300]), 1.0 - P_FLOOR);
        assert_eq!(m.predict_prob_raw(&[-1e300, -1e300]), P_FLOOR);
        m.coefficients = vec![0.0, 0.0];
        m.intercept = 0.0;
        assert_eq!(m.predict_prob_raw(&[3.0, -40.0]), 0.5);
    }

    #[test]
    fn missing_feature_names_all_absent() {
        let (x, y) = planted(200, &[1.0, 0.5], 0.0, 2);
        let m = fit_logistic(&x, &y, &LogisticOptions::default()).unwrap();
        let mut p = Patient::new();
        p.insert("x1".into(), 0.3);
        assert_eq!(
            m.predict_prob(&p),
            Err(ModelError::MissingFeature(vec!["x0".into()]))
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y) = planted(200, &[0.8, -0.3, 0.0], 0.1, 4);
        let z = crate::preprocess::zscore_fit_transform(&x).unwrap().values;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let p: Vec<f64> = (0..4).map(|_| rng.random_range(-1.5..1.5)).collect();
            let (_, g) = logistic_objective(&z, &y, 1e-3, &p);
            let h = 1e-5;
            for k in 0..4 {
                let mut up = p.clone();
                let mut dn = p.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (logistic_objective(&z, &y, 1e-3, &up).0
                    - logistic_objective(&z, &y, 1e-3, &dn).0)
                    / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1e-3), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn row_permutation_invariance() {
        let (x, y) = planted(800, &[0.7, -0.4, 0.2], -0.3, 21);
        let m1 = fit_logistic(&x, &y, &LogisticOptions::default()).unwrap();
        let perm: Vec<usize> = (0..800).rev().collect();
        let xp = x.select_rows(&perm);
        let yp: Vec<bool> = perm.iter().map(|&i| y[i]).collect();
        let m2 = fit_logistic(&xp, &yp, &LogisticOptions::default()).unwrap();
        assert!((m1.intercept - m2.intercept).abs() < 1e-12);
        for (a, b) in m1.coefficients.iter().zip(&m2.coefficients) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_in_each_feature() {
        let (x, y) = planted(1000, &[0.9, -0.6], 0.0, 5);
        let m = fit_logistic(&x, &y, &LogisticOptions::default()).unwrap();
        let base = m.training_means();
        for j in 0..2 {
            let mut lo = base.clone();
            let mut hi = base.clone();
            lo[j] -= 1.0;
            hi[j] += 1.0;
            let delta = m.predict_prob_raw(&hi) - m.predict_prob_raw(&lo);
            assert_eq!(delta > 0.0, m.coefficients[j] > 0.0);
        }
    }

    #[test]
    fn json_roundtrip_exact() {
        let (x, y) = planted(300, &[0.5, 0.5], 0.0, 8);
        let m = fit_logistic(&x, &y, &LogisticOptions::default())
            .unwrap()
            .with_horizon(7);
        let back: LogisticModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}

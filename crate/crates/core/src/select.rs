//! F-test filtering, recursive feature elimination and VIF screening.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{fit_logistic, LogisticOptions, ModelError};
use crate::preprocess::FeatureMatrix;
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum SelectError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("labels length {labels} does not match {rows} rows")]
    LengthMismatch { labels: usize, rows: usize },
    #[error("k = {k} exceeds the {d} available features")]
    KExceedsDimensions { k: usize, d: usize },
    #[error("{protected} protected features exceed the target of {target}")]
    TooManyProtected { protected: usize, target: usize },
    #[error("model fit failed at elimination step {iteration}: {source}")]
    Fit { iteration: usize, source: ModelError },
    #[error("columns `{}` and `{}` are exactly collinear", .0.0, .0.1)]
    SingularDesign((String, String)),
    #[error("VIF needs at least 2 columns, got {0}")]
    TooFewColumns(usize),
    #[error("column `{0}` is constant")]
    ConstantColumn(String),
    #[error("matrix has missing values")]
    HasMissing,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, SelectError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMethod {
    FTest,
    Rfe,
    Vif,
}

/// Features with their scores. Infinite F statistics are stored as
/// `f64::MAX` so every score stays finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub method: RankingMethod,
    pub names: Vec<String>,
    pub scores: Vec<f64>,
    #[serde(default)]
    pub eliminated_order: Vec<String>,
}

impl FeatureRanking {
    pub fn score(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.scores[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ranking serializes")
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| SelectError::Io(e.to_string()))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SelectError::Io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| SelectError::Io(e.to_string()))
    }
}

fn check_labels(n: usize, labels: &[bool]) -> Result<()> {
    if labels.len() != n {
        return Err(SelectError::LengthMismatch {
            labels: labels.len(),
            rows: n,
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == n {
        return Err(SelectError::SingleClass);
    }
    Ok(())
}

/// Two-group one-way ANOVA F statistic, `(SSB / 1) / (SSW / (n - 2))`.
///
/// Returns `+inf` when the within-class variance is zero but the class means
/// differ, and 0 when the feature is constant.
pub fn f_score(feature: &[f64], labels: &[bool]) -> Result<f64> {
    if feature.len() < 4 {
        return Err(SelectError::TooFewObservations {
            needed: 4,
            got: feature.len(),
        });
    }
    check_labels(feature.len(), labels)?;
    let n = feature.len() as f64;
    let mut sum = [0.0; 2];
    let mut count = [0.0; 2];
    for (&x, &l) in feature.iter().zip(labels) {
        sum[l as usize] += x;
        count[l as usize] += 1.0;
    }
    let group_mean = [sum[0] / count[0], sum[1] / count[1]];
    let grand = stats::mean(feature);
    let ssb: f64 = (0..2)
        .map(|g| count[g] * (group_mean[g] - grand).powi(2))
        .sum();
    let ssw: f64 = feature
        .iter()
        .zip(labels)
        .map(|(&x, &l)| (x - group_mean[l as usize]).powi(2))
        .sum();
    // relative cutoff so exact-separation features are not lost to rounding
    let scale = feature.iter().fold(0.0f64, |m, x| m.max((x - grand).abs()));
    let tiny = (scale * 1e-12).powi(2) * n;
    if ssw <= tiny {
        return Ok(if ssb <= tiny { 0.0 } else { f64::INFINITY });
    }
    Ok(ssb / (ssw / (n - 2.0)))
}

fn finite_score(s: f64) -> f64 {
    if s.is_infinite() {
        f64::MAX
    } else {
        s
    }
}

/// Top `k` features by F statistic, descending, ties kept in column order.
pub fn select_k_best(m: &FeatureMatrix, labels: &[bool], k: usize) -> Result<FeatureRanking> {
    let d = m.n_cols();
    if k > d {
        return Err(SelectError::KExceedsDimensions { k, d });
    }
    if m.has_missing() {
        return Err(SelectError::HasMissing);
    }
    check_labels(m.n_rows(), labels)?;
    let scores = (0..d)
        .into_par_iter()
        .map(|j| f_score(&m.column(j), labels))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(FeatureRanking {
        method: RankingMethod::FTest,
        names: order.iter().map(|&j| m.names[j].clone()).collect(),
        scores: order.iter().map(|&j| finite_score(scores[j])).collect(),
        eliminated_order: Vec::new(),
    })
}

/// Recursive feature elimination with the logistic fitter.
///
/// Each round refits on the surviving columns and drops the unprotected
/// feature with the smallest |standardized coefficient| (earliest column on
/// ties). The result lists survivors by |coefficient| from the final fit.
pub fn rfe(
    m: &FeatureMatrix,
    labels: &[bool],
    n_target: usize,
    protected: &[String],
    opts: &LogisticOptions,
) -> Result<FeatureRanking> {
    let d = m.n_cols();
    if n_target > d {
        return Err(SelectError::KExceedsDimensions { k: n_target, d });
    }
    for p in protected {
        if m.column_index(p).is_none() {
            return Err(SelectError::UnknownFeature(p.clone()));
        }
    }
    if protected.len() > n_target {
        return Err(SelectError::TooManyProtected {
            protected: protected.len(),
            target: n_target,
        });
    }
    check_labels(m.n_rows(), labels)?;
    let mut active: Vec<usize> = (0..d).collect();
    let mut eliminated = Vec::new();
    let mut iteration = 0;
    loop {
        let model = fit_logistic(&m.select_columns(&active), labels, opts)
            .map_err(|source| SelectError::Fit { iteration, source })?;
        if active.len() == n_target {
            let mut ranked: Vec<(usize, f64)> = active
                .iter()
                .zip(&model.coefficients)
                .map(|(&j, b)| (j, b.abs()))
                .collect();
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            return Ok(FeatureRanking {
                method: RankingMethod::Rfe,
                names: ranked.iter().map(|(j, _)| m.names[*j].clone()).collect(),
                scores: ranked.iter().map(|(_, s)| *s).collect(),
                eliminated_order: eliminated,
            });
        }
        let (pos, _) = active
            .iter()
            .zip(&model.coefficients)
            .enumerate()
            .filter(|(_, (&j, _))| !protected.contains(&m.names[j]))
            .map(|(pos, (_, b))| (pos, b.abs()))
            .fold((usize::MAX, f64::INFINITY), |best, cur| {
                if cur.1 < best.1 {
                    cur
                } else {
                    best
                }
            });
        let j = active.remove(pos);
        log::debug!("rfe step {iteration}: drop {}", m.names[j]);
        eliminated.push(m.names[j].clone());
        iteration += 1;
    }
}

/// Variance inflation factors `1 / (1 - R_j^2)`, each from the least-squares
/// regression (with intercept) of column `j` on the others. Sorted
/// descending.
pub fn vif(m: &FeatureMatrix) -> Result<FeatureRanking> {
    let (n, d) = (m.n_rows(), m.n_cols());
    if d < 2 {
        return Err(SelectError::TooFewColumns(d));
    }
    if n <= d {
        return Err(SelectError::TooFewObservations { needed: d + 1, got: n });
    }
    if m.has_missing() {
        return Err(SelectError::HasMissing);
    }
    let mut centered = m.values.clone();
    for j in 0..d {
        let col = m.column(j);
        let mu = stats::mean(&col);
        if stats::sample_sd(&col) == 0.0 {
            return Err(SelectError::ConstantColumn(m.names[j].clone()));
        }
        centered.column_mut(j).add_scalar_mut(-mu);
    }
    check_collinear(&centered, &m.names)?;

    let scores: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|j| {
            let y = centered.column(j).clone_owned();
            let others: Vec<usize> = (0..d).filter(|&c| c != j).collect();
            let x = DMatrix::from_fn(n, d - 1, |i, c| centered[(i, others[c])]);
            let qr = x.clone().qr();
            let qty = qr.q().transpose() * &y;
            let coef = qr
                .r()
                .solve_upper_triangular(&qty)
                .unwrap_or_else(|| DVector::zeros(d - 1));
            let resid = &y - &x * coef;
            let rss = resid.norm_squared();
            let tss = y.norm_squared();
            if rss == 0.0 {
                f64::MAX
            } else {
                (tss / rss).max(1.0)
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(FeatureRanking {
        method: RankingMethod::Vif,
        names: order.iter().map(|&j| m.names[j].clone()).collect(),
        scores: order.iter().map(|&j| scores[j]).collect(),
        eliminated_order: Vec::new(),
    })
}

/// Fails when some column lies in the span of the preceding ones, naming it
/// together with its most correlated predecessor.
fn check_collinear(centered: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let d = centered.ncols();
    let r = centered.clone().qr().r();
    for k in 0..d {
        let norm = centered.column(k).norm();
        if r[(k, k)].abs() > 1e-10 * norm {
            continue;
        }
        let partner = (0..k)
            .max_by(|&a, &b| {
                let ca = corr(centered, a, k).abs();
                let cb = corr(centered, b, k).abs();
                ca.total_cmp(&cb).then(b.cmp(&a))
            })
            .unwrap_or(0);
        return Err(SelectError::SingularDesign((
            names[partner].clone(),
            names[k].clone(),
        )));
    }
    Ok(())
}

fn corr(centered: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    let ca = centered.column(a);
    let cb = centered.column(b);
    ca.dot(&cb) / (ca.norm() * cb.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Between and within sums of squares written out longhand.
    fn anova_oracle(x: &[f64], y: &[bool]) -> f64 {
        let g0: Vec<f64> = x.iter().zip(y).filter(|p| !*p.1).map(|p| *p.0).collect();
        let g1: Vec<f64> = x.iter().zip(y).filter(|p| *p.1).map(|p| *p.0).collect();
        let m0 = g0.iter().sum::<f64>() / g0.len() as f64;
        let m1 = g1.iter().sum::<f64>() / g1.len() as f64;
        let m = x.iter().sum::<f64>() / x.len() as f64;
        let ssb = g0.len() as f64 * (m0 - m).powi(2) + g1.len() as f64 * (m1 - m).powi(2);
        let ssw = g0.iter().map(|v| (v - m0).powi(2)).sum::<f64>()
            + g1.iter().map(|v| (v - m1).powi(2)).sum::<f64>();
        (ssb / 1.0) / (ssw / (x.len() as f64 - 2.0))
    }

    #[test]
    fn f_score_hand_example() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [false, false, true, true];
        // SSB = 4, SSW = 1, df = 2 -> F = 8
        assert_eq!(anova_oracle(&x, &y), 8.0);
        assert!((f_score(&x, &y).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn f_score_degenerate_cases() {
        let y = [false, true, false, true, true];
        assert_eq!(f_score(&[2.0; 5], &y).unwrap(), 0.0);
        let x: Vec<f64> = y.iter().map(|&l| l as u8 as f64).collect();
        assert_eq!(f_score(&x, &y).unwrap(), f64::INFINITY);
        assert_eq!(f_score(&[1.0; 4], &[true; 4]), Err(SelectError::SingleClass));
        assert!(matches!(
            f_score(&[1.0, 2.0, 3.0], &[true, false, true]),
            Err(SelectError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn k_best_edge_cases() {
        let y = vec![false, false, true, true, false, true];
        let sep: Vec<f64> = y.iter().map(|&l| if l { 5.0 } else { 1.0 }).collect();
        let m = FeatureMatrix::from_columns(
            &[vec![0.3, 0.1, 0.2, 0.5, 0.9, 0.4], sep, vec![1.0, 2.0, 1.5, 2.5, 1.0, 3.0]],
            &["a", "sep", "c"],
        );
        let one = select_k_best(&m, &y, 1).unwrap();
        assert_eq!(one.names, ["sep"]);
        assert_eq!(one.scores, [f64::MAX]);
        let all = select_k_best(&m, &y, 3).unwrap();
        assert_eq!(all.names.len(), 3);
        assert!(all.scores.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(
            select_k_best(&m, &y, 4),
            Err(SelectError::KExceedsDimensions { k: 4, d: 3 })
        );
    }

    #[test]
    fn ranking_json_shape() {
        let r = FeatureRanking {
            method: RankingMethod::Rfe,
            names: vec!["a".into()],
            scores: vec![1.5],
            eliminated_order: vec!["b".into()],
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["method"], "rfe");
        assert_eq!(v["eliminated_order"][0], "b");
        assert_eq!(serde_json::from_value::<FeatureRanking>(v).unwrap(), r);
    }

    fn gaussian_matrix(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..d)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    /// R² from the normal equations `(X'X) b = X'y`, solved by Gauss-Jordan.
    fn vif_oracle(cols: &[Vec<f64>], j: usize) -> f64 {
        let n = cols[0].len();
        let mut design: Vec<Vec<f64>> = vec![vec![1.0; n]];
        for (c, col) in cols.iter().enumerate() {
            if c != j {
                design.push(col.clone());
            }
        }
        let p = design.len();
        let mut a = vec![vec![0.0; p + 1]; p];
        for r in 0..p {
            for c in 0..p {
                a[r][c] = (0..n).map(|i| design[r][i] * design[c][i]).sum();
            }
            a[r][p] = (0..n).map(|i| design[r][i] * cols[j][i]).sum();
        }
        for piv in 0..p {
            let div = a[piv][piv];
            for c in 0..=p {
                a[piv][c] /= div;
            }
            for r in 0..p {
                if r != piv {
                    let f = a[r][piv];
                    for c in 0..=p {
                        a[r][c] -= f * a[piv][c];
                    }
                }
            }
        }
        let fitted: Vec<f64> = (0..n)
            .map(|i| (0..p).map(|r| a[r][p] * design[r][i]).sum())
            .collect();
        let mean = cols[j].iter().sum::<f64>() / n as f64;
        let rss: f64 = (0..n).map(|i| (cols[j][i] - fitted[i]).powi(2)).sum();
        let tss: f64 = cols[j].iter().map(|v| (v - mean).powi(2)).sum();
        1.0 / (1.0 - (1.0 - rss / tss))
    }

    #[test]
    fn vif_matches_normal_equations() {
        let mut cols = gaussian_matrix(60, 4, 3);
        for i in 0..60 {
            cols[3][i] += 0.8 * cols[0][i] - 0.5 * cols[1][i];
        }
        let names = ["a", "b", "c", "d"];
        let r = vif(&FeatureMatrix::from_columns(&cols, &names)).unwrap();
        for (j, name) in names.iter().enumerate() {
            let want = vif_oracle(&cols, j);
            let got = r.score(name).unwrap();
            assert!((got - want).abs() < 1e-9 * want, "{name}: {got} vs {want}");
        }
        assert!(r.scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn vif_orthogonal_columns_are_one() {
        let cols = vec![
            vec![1.0, -1.0, 1.0, -1.0, 0.0],
            vec![1.0, 1.0, -1.0, -1.0, 0.0],
            vec![1.0, -1.0, -1.0, 1.0, 0.0],
        ];
        let r = vif(&FeatureMatrix::from_columns(&cols, &["a", "b", "c"])).unwrap();
        for s in r.scores {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vif_near_duplicate_is_huge() {
        let mut cols = gaussian_matrix(200, 3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dup: Vec<f64> = cols[0]
            .iter()
            .map(|v| v + 1e-6 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        cols.push(dup);
        let r = vif(&FeatureMatrix::from_columns(&cols, &["a", "b", "c", "a2"])).unwrap();
        assert!(r.score("a").unwrap() > 1e6);
        assert!(r.score("a2").unwrap() > 1e6);
        assert!(r.score("b").unwrap() < 2.0);
    }

    #[test]
    fn vif_exact_duplicate_names_pair() {
        let mut cols = gaussian_matrix(30, 3, 2);
        cols[2] = cols[0].iter().map(|v| 2.0 * v + 1.0).collect();
        assert_eq!(
            vif(&FeatureMatrix::from_columns(&cols, &["a", "b", "c"])),
            Err(SelectError::SingularDesign(("a".into(), "c".into())))
        );
    }

    #[test]
    fn vif_preconditions() {
        let cols = gaussian_matrix(10, 1, 1);
        assert_eq!(
            vif(&FeatureMatrix::from_columns(&cols, &["a"])),
            Err(SelectError::TooFewColumns(1))
        );
        let cols = vec![vec![1.0, 2.0, 3.0], vec![1.0; 3]];
        assert_eq!(
            vif(&FeatureMatrix::from_columns(&cols, &["a", "k"])),
            Err(SelectError::ConstantColumn("k".into()))
        );
    }

    fn logistic_labels(cols: &[Vec<f64>], beta: &[f64], seed: u64) -> Vec<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cols[0].len())
            .map(|i| {
                let eta: f64 = beta.iter().enumerate().map(|(j, b)| b * cols[j][i]).sum();
                rng.random::<f64>() < stats::sigmoid(eta)
            })
            .collect()
    }

    #[test]
    fn rfe_identity_and_protection() {
        let cols = gaussian_matrix(300, 4, 5);
        let y = logistic_labels(&cols, &[1.0, -1.0, 0.5, 0.0], 6);
        let m = FeatureMatrix::from_columns(&cols, &["a", "b", "c", "d"]);
        let opts = LogisticOptions::default();
        let same = rfe(&m, &y, 4, &[], &opts).unwrap();
        assert!(same.eliminated_order.is_empty());
        let mut names = same.names.clone();
        names.sort();
        assert_eq!(names, ["a", "b", "c", "d"]);

        let kept = rfe(&m, &y, 1, &["d".to_string()], &opts).unwrap();
        assert_eq!(kept.names, ["d"]);
        assert_eq!(kept.eliminated_order.len(), 3);
        assert!(matches!(
            rfe(&m, &y, 1, &["c".into(), "d".into()], &opts),
            Err(SelectError::TooManyProtected { .. })
        ));
    }

    #[test]
    fn rfe_propagates_fit_failure() {
        let y = vec![false, false, false, true, true, true];
        let sep: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        let m = FeatureMatrix::from_columns(&[sep, vec![0.1, 0.4, 0.2, 0.3, 0.5, 0.0]], &["s", "n"]);
        let opts = LogisticOptions {
            l2: 0.0,
            ..LogisticOptions::default()
        };
        assert!(matches!(
            rfe(&m, &y, 1, &[], &opts),
            Err(SelectError::Fit { iteration: 0, .. })
        ));
    }

    #[test]
    fn rfe_drops_noise_first() {
        let mut hits = 0;
        for seed in 0..20 {
            let cols = gaussian_matrix(400, 3, 100 + seed);
            let y = logistic_labels(&cols, &[1.0, 0.0, -0.8], 200 + seed);
            let m = FeatureMatrix::from_columns(&cols, &["s1", "noise", "s2"]);
            let r = rfe(&m, &y, 2, &[], &LogisticOptions::default()).unwrap();
            hits += (r.eliminated_order == ["noise"]) as usize;
        }
        assert!(hits >= 18, "noise dropped first in {hits}/20");
    }

    proptest! {
        #[test]
        fn f_score_affine_invariant(
            xs in prop::collection::vec(-50.0f64..50.0, 8..40),
            a in prop_oneof![-20.0f64..-0.1, 0.1f64..20.0],
            b in -100.0f64..100.0,
        ) {
            let y: Vec<bool> = (0..xs.len()).map(|i| i % 3 == 0).collect();
            let f1 = f_score(&xs, &y).unwrap();
            let moved: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let f2 = f_score(&moved, &y).unwrap();
            prop_assume!(f1.is_finite());
            prop_assert!((f1 - f2).abs() <= 1e-9 * f1.abs().max(1e-12));
            prop_assert!((f1 - anova_oracle(&xs, &y)).abs() <= 1e-9 * f1.abs().max(1e-12));
        }

        #[test]
        fn vif_permutation_invariant(seed in 0u64..1000, rot in 1usize..4) {
            let cols = gaussian_matrix(25, 4, seed);
            let names = ["a", "b", "c", "d"];
            let r1 = vif(&FeatureMatrix::from_columns(&cols, &names)).unwrap();
            let mut pc = cols.clone();
            pc.rotate_left(rot);
            let mut pn = names.to_vec();
            pn.rotate_left(rot);
            let r2 = vif(&FeatureMatrix::from_columns(&pc, &pn)).unwrap();
            for n in names {
                let (s1, s2) = (r1.score(n).unwrap(), r2.score(n).unwrap());
                prop_assert!(s1 >= 1.0);
                prop_assert!((s1 - s2).abs() < 1e-9 * s1);
            }
        }

        #[test]
        fn k_best_then_rfe_matches_direct(seed in 0u64..200) {
            let cols = gaussian_matrix(200, 5, seed);
            let y = logistic_labels(&cols, &[1.2, 0.0, -0.7, 0.3, 0.0], seed + 1);
            let names = ["a", "b", "c", "d", "e"];
            let m = FeatureMatrix::from_columns(&cols, &names);
            let opts = LogisticOptions::default();
            let direct = rfe(&m, &y, 2, &[], &opts).unwrap();
            let kb = select_k_best(&m, &y, 5).unwrap();
            let reordered = m.select_named(&kb.names).unwrap();
            let composed = rfe(&reordered, &y, 2, &[], &opts).unwrap();
            let mut a = direct.names.clone();
            let mut b = composed.names.clone();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}

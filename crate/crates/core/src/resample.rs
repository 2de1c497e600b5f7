//! Threshold-weighted SMOTE for a continuous target.

use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::FeatureMatrix;
use crate::rng::stream_rng;
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("need at least k_neighbors + 1 = {needed} instances, got {got}")]
    TooFewInstances { needed: usize, got: usize },
    #[error("invalid SMOTE configuration: {0}")]
    InvalidConfig(String),
    #[error("target length {y} does not match {rows} rows")]
    LengthMismatch { y: usize, rows: usize },
    #[error("feature matrix has missing values")]
    HasMissing,
    #[error("empty target")]
    Empty,
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, ResampleError>;

/// Half-width of the uniform target noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDelta {
    /// 0.05 times the sample sd of the target.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoteConfig {
    /// Ascending interval boundaries; intervals are right-closed.
    pub thresholds: Vec<f64>,
    /// One weight per interval, `thresholds.len() + 1` in total.
    pub weights: Vec<f64>,
    pub n_synthetic: usize,
    pub k_neighbors: usize,
    pub delta: NoiseDelta,
    /// Draw the `k_neighbors` at random from this many nearest rows.
    /// `None` uses exactly the k nearest.
    #[serde(default)]
    pub pool_size: Option<usize>,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![7.0, 35.0],
            weights: vec![40.0, 20.0, 1.0],
            n_synthetic: 2000,
            k_neighbors: 5,
            delta: NoiseDelta::Auto,
            pool_size: None,
            seed: 0,
        }
    }
}

impl SmoteConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ResampleError::InvalidConfig(msg));
        if self.thresholds.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("thresholds must be strictly ascending".into());
        }
        if self.thresholds.iter().any(|t| !t.is_finite()) {
            return bad("thresholds must be finite".into());
        }
        if self.weights.len() != self.thresholds.len() + 1 {
            return bad(format!(
                "{} thresholds need {} weights, got {}",
                self.thresholds.len(),
                self.thresholds.len() + 1,
                self.weights.len()
            ));
        }
        if self.weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return bad("weights must be positive".into());
        }
        if self.k_neighbors == 0 {
            return bad("k_neighbors must be positive".into());
        }
        if let NoiseDelta::Fixed(d) = self.delta {
            if !(d >= 0.0 && d.is_finite()) {
                return bad(format!("delta must be nonnegative, got {d}"));
            }
        }
        if let Some(p) = self.pool_size {
            if p < self.k_neighbors {
                return bad(format!("pool_size {p} is below k_neighbors {}", self.k_neighbors));
            }
        }
        Ok(())
    }

    /// Index of the interval holding `y`: the number of thresholds below it.
    pub fn interval(&self, y: f64) -> usize {
        self.thresholds.partition_point(|&t| t < y)
    }

    pub fn resolve_delta(&self, y: &[f64]) -> f64 {
        match self.delta {
            NoiseDelta::Auto => {
                let sd = stats::sample_sd(y);
                if sd.is_finite() {
                    0.05 * sd
                } else {
                    0.0
                }
            }
            NoiseDelta::Fixed(d) => d,
        }
    }
}

/// Per-instance draw probabilities `w(interval(y_i)) / sum_j w(interval(y_j))`.
pub fn sampling_probabilities(y: &[f64], cfg: &SmoteConfig) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(ResampleError::Empty);
    }
    cfg.validate()?;
    let w: Vec<f64> = y.iter().map(|&v| cfg.weights[cfg.interval(v)]).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Where a synthetic row came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOrigin {
    pub seed: usize,
    pub neighbors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    /// Original rows first, then the synthetic ones.
    pub x: FeatureMatrix,
    pub y: Vec<f64>,
    /// One entry per synthetic row.
    pub origins: Vec<SyntheticOrigin>,
    pub delta_used: f64,
}

impl Augmented {
    pub fn n_original(&self) -> usize {
        self.y.len() - self.origins.len()
    }

    pub fn is_synthetic(&self, row: usize) -> bool {
        row >= self.n_original()
    }

    /// Feature columns, the target as `target`, and a `synthetic` flag.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let err = |e: csv::Error| ResampleError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = self.x.names.clone();
        header.push("target".into());
        header.push("synthetic".into());
        w.write_record(&header).map_err(err)?;
        for i in 0..self.y.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[i].to_string());
            rec.push(self.is_synthetic(i).to_string());
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| ResampleError::Csv(e.to_string()))
    }
}

/// Rows of `x` rescaled to unit sample sd per column, for distances.
fn distance_space(x: &FeatureMatrix) -> Vec<Vec<f64>> {
    let scale: Vec<f64> = (0..x.n_cols())
        .map(|j| {
            let sd = stats::sample_sd(&x.column(j));
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (0..x.n_rows())
        .map(|i| x.row(i).iter().zip(&scale).map(|(v, s)| v / s).collect())
        .collect()
}

fn nearest(space: &[Vec<f64>], i: usize, m: usize) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = space
        .iter()
        .enumerate()
        .filter(|(r, _)| *r != i)
        .map(|(r, row)| {
            let d: f64 = row.iter().zip(&space[i]).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, r)
        })
        .collect();
    let m = m.min(ranked.len());
    ranked.select_nth_unstable_by(m - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(m);
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().map(|(_, r)| r).collect()
}

/// Generate `cfg.n_synthetic` rows. Each draws a seed instance by
/// [`sampling_probabilities`], takes k neighbours from its nearest rows
/// (Euclidean on unit-variance columns), and sets target and features to the
/// neighbour means plus uniform noise. The target noise is U(-δ, δ); feature
/// `j` gets U(-h_j, h_j) with `h_j = δ · sd(x_j) / sd(y)`.
///
/// Sample `s` uses its own RNG stream, so output is independent of the
/// thread count.
pub fn smote_augment(x: &FeatureMatrix, y: &[f64], cfg: &SmoteConfig) -> Result<Augmented> {
    cfg.validate()?;
    let n = x.n_rows();
    if y.len() != n {
        return Err(ResampleError::LengthMismatch { y: y.len(), rows: n });
    }
    if x.has_missing() {
        return Err(ResampleError::HasMissing);
    }
    let delta = cfg.resolve_delta(y);
    if cfg.n_synthetic == 0 {
        return Ok(Augmented {
            x: x.clone(),
            y: y.to_vec(),
            origins: Vec::new(),
            delta_used: delta,
        });
    }
    if n < cfg.k_neighbors + 1 {
        return Err(ResampleError::TooFewInstances {
            needed: cfg.k_neighbors + 1,
            got: n,
        });
    }
    let probs = sampling_probabilities(y, cfg)?;
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let space = distance_space(x);
    let sd_y = stats::sample_sd(y);
    let half_width: Vec<f64> = (0..x.n_cols())
        .map(|j| {
            if sd_y > 0.0 {
                delta * stats::sample_sd(&x.column(j)) / sd_y
            } else {
                0.0
            }
        })
        .collect();
    let pool = cfg.pool_size.unwrap_or(cfg.k_neighbors).min(n - 1);
    let k = cfg.k_neighbors;

    let rows: Vec<(Vec<f64>, f64, SyntheticOrigin)> = (0..cfg.n_synthetic)
        .into_par_iter()
        .map(|s| {
            let mut rng = stream_rng(cfg.seed, s as u64);
            let u: f64 = rng.random::<f64>() * acc;
            let seed = cumulative.partition_point(|&c| c <= u).min(n - 1);
            let near = nearest(&space, seed, pool);
            let neighbors: Vec<usize> = if pool > k {
                let mut picked: Vec<usize> =
                    sample(&mut rng, pool, k).into_iter().map(|p| near[p]).collect();
                picked.sort_unstable();
                picked
            } else {
                near
            };
            let kf = neighbors.len() as f64;
            let target = neighbors.iter().map(|&r| y[r]).sum::<f64>() / kf + uniform(&mut rng, delta);
            let feats: Vec<f64> = (0..x.n_cols())
                .map(|j| {
                    let m = neighbors.iter().map(|&r| x.values[(r, j)]).sum::<f64>() / kf;
                    m + uniform(&mut rng, half_width[j])
                })
                .collect();
            (feats, target, SyntheticOrigin { seed, neighbors })
        })
        .collect();

    let synth_rows: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
    let mut synth = FeatureMatrix::from_rows(&synth_rows, x.names.clone(), x.units.clone());
    synth.norm_stats = x.norm_stats.clone();
    let mut out_y = y.to_vec();
    out_y.extend(rows.iter().map(|r| r.1));
    Ok(Augmented {
        x: x.vstack(&synth),
        y: out_y,
        origins: rows.into_iter().map(|r| r.2).collect(),
        delta_used: delta,
    })
}

fn uniform<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.random_range(-half_width..half_width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy(n: usize) -> (FeatureMatrix, Vec<f64>) {
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.91).cos() + i as f64 * 0.01).collect();
        let y: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 17) % 60) as f64).collect();
        (FeatureMatrix::from_columns(&[a, b], &["a", "b"]), y)
    }

    #[test]
    fn default_weights_example() {
        let cfg = SmoteConfig::default();
        let p = sampling_probabilities(&[3.0, 10.0, 40.0], &cfg).unwrap();
        let want = [40.0 / 61.0, 20.0 / 61.0, 1.0 / 61.0];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn boundaries_are_right_closed() {
        let cfg = SmoteConfig::default();
        assert_eq!(cfg.interval(7.0), 0);
        assert_eq!(cfg.interval(7.0 + 1e-9), 1);
        assert_eq!(cfg.interval(35.0), 1);
        assert_eq!(cfg.interval(35.5), 2);
    }

    #[test]
    fn uniform_cases() {
        let cfg = SmoteConfig {
            weights: vec![1.0; 3],
            ..SmoteConfig::default()
        };
        let p = sampling_probabilities(&[1.0, 20.0, 50.0, 3.0], &cfg).unwrap();
        assert!(p.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let p = sampling_probabilities(&[1.0, 2.0, 3.0, 4.0, 5.0], &SmoteConfig::default()).unwrap();
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn config_validation() {
        let mut cfg = SmoteConfig::default();
        cfg.weights.pop();
        assert!(cfg.validate().is_err());
        let cfg = SmoteConfig {
            thresholds: vec![35.0, 7.0],
            ..SmoteConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SmoteConfig {
            weights: vec![1.0, 0.0, 1.0],
            ..SmoteConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_synthetic_is_identity() {
        let (x, y) = toy(10);
        let cfg = SmoteConfig {
            n_synthetic: 0,
            ..SmoteConfig::default()
        };
        let out = smote_augment(&x, &y, &cfg).unwrap();
        assert_eq!(out.x, x);
        assert_eq!(out.y, y);
    }

    #[test]
    fn default_shape() {
        let (x, y) = toy(300);
        let cfg = SmoteConfig {
            seed: 4,
            ..SmoteConfig::default()
        };
        let out = smote_augment(&x, &y, &cfg).unwrap();
        assert_eq!(out.x.n_rows(), 2300);
        assert_eq!(out.x.n_cols(), 2);
        assert_eq!(out.y.len(), 2300);
        for i in 0..300 {
            assert_eq!(out.x.row(i), x.row(i));
            assert_eq!(out.y[i], y[i]);
        }
        assert!(!out.x.has_missing());
    }

    #[test]
    fn single_neighbour_without_noise_copies_target() {
        let (x, y) = toy(40);
        let cfg = SmoteConfig {
            n_synthetic: 200,
            k_neighbors: 1,
            delta: NoiseDelta::Fixed(0.0),
            seed: 11,
            ..SmoteConfig::default()
        };
        let out = smote_augment(&x, &y, &cfg).unwrap();
        for (s, o) in out.origins.iter().enumerate() {
            assert_eq!(out.y[40 + s], y[o.neighbors[0]]);
            assert_eq!(out.x.row(40 + s), x.row(o.neighbors[0]));
        }
    }

    #[test]
    fn too_few_instances() {
        let (x, y) = toy(5);
        assert_eq!(
            smote_augment(&x, &y, &SmoteConfig::default()),
            Err(ResampleError::TooFewInstances { needed: 6, got: 5 })
        );
    }

    #[test]
    fn seed_draw_frequencies_follow_weights() {
        let (x, y) = toy(120);
        let cfg = SmoteConfig {
            n_synthetic: 10_000,
            seed: 21,
            ..SmoteConfig::default()
        };
        let counts = y.iter().fold([0usize; 3], |mut c, &v| {
            c[cfg.interval(v)] += 1;
            c
        });
        let expected = 40.0 * counts[0] as f64
            / (40.0 * counts[0] as f64 + 20.0 * counts[1] as f64 + counts[2] as f64);
        let out = smote_augment(&x, &y, &cfg).unwrap();
        let first = out
            .origins
            .iter()
            .filter(|o| cfg.interval(y[o.seed]) == 0)
            .count() as f64
            / 10_000.0;
        let se = (expected * (1.0 - expected) / 10_000.0).sqrt();
        assert!((first - expected).abs() < 4.0 * se, "{first} vs {expected}");
    }

    #[test]
    fn pool_draws_k_from_larger_set() {
        let (x, y) = toy(60);
        let cfg = SmoteConfig {
            n_synthetic: 50,
            pool_size: Some(12),
            seed: 3,
            ..SmoteConfig::default()
        };
        let out = smote_augment(&x, &y, &cfg).unwrap();
        let space = distance_space(&x);
        for o in &out.origins {
            assert_eq!(o.neighbors.len(), 5);
            let pool = nearest(&space, o.seed, 12);
            assert!(o.neighbors.iter().all(|r| pool.contains(r)));
        }
    }

    #[test]
    fn csv_has_synthetic_flag() {
        let (x, y) = toy(10);
        let cfg = SmoteConfig {
            n_synthetic: 3,
            k_neighbors: 2,
            ..SmoteConfig::default()
        };
        let out = smote_augment(&x, &y, &cfg).unwrap();
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "a,b,target,synthetic");
        assert_eq!(lines.len(), 14);
        assert!(lines[10].ends_with(",false"));
        assert!(lines[11].ends_with(",true"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn synthetic_targets_stay_near_neighbours(seed in any::<u64>(), k in 1usize..6, delta in 0.0f64..3.0) {
            let (x, y) = toy(30);
            let cfg = SmoteConfig {
                n_synthetic: 40,
                k_neighbors: k,
                delta: NoiseDelta::Fixed(delta),
                seed,
                ..SmoteConfig::default()
            };
            let out = smote_augment(&x, &y, &cfg).unwrap();
            for (s, o) in out.origins.iter().enumerate() {
                let nb: Vec<f64> = o.neighbors.iter().map(|&r| y[r]).collect();
                let lo = nb.iter().cloned().fold(f64::INFINITY, f64::min) - delta;
                let hi = nb.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + delta;
                prop_assert!(out.y[30 + s] >= lo - 1e-12 && out.y[30 + s] <= hi + 1e-12);
            }
            prop_assert_eq!(smote_augment(&x, &y, &cfg).unwrap(), out);
        }

        #[test]
        fn probabilities_sum_to_one(ys in prop::collection::vec(0.0f64..90.0, 1..200)) {
            let p = sampling_probabilities(&ys, &SmoteConfig::default()).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

//! Synthetic cohorts with a planted logistic ground truth.
//!
//! Each feature is drawn standard normal, the death-by-horizon probabilities
//! follow `sigmoid(intercept_h + coefficients . z)`, and the raw clinical value
//! reported in the table is `loc_j + scale_j * z_j`. One uniform draw per
//! patient places the death time, so the three horizon labels are nested.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    CohortError, CohortTable, DataDictionary, DictionaryEntry, PatientRecord, Result,
};
use crate::stats::sigmoid;
use crate::HORIZONS;

const DAY_SECONDS: i64 = 86_400;
/// Deaths after the last horizon are placed in (28, 90] days.
const LATE_DEATH_END_DAYS: i64 = 90;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCohortSpec {
    pub n_patients: usize,
    pub n_features: usize,
    /// Logit-scale effect per standard-normal feature.
    pub planted_coefficients: Vec<f64>,
    /// Intercepts for the 7, 14 and 28 day horizons, nondecreasing.
    pub planted_intercepts: [f64; 3],
    pub missingness_rate: f64,
    pub censoring_rate: f64,
    pub seed: u64,
    /// Fraction of 28-day survivors who die in (28, 90] days.
    #[serde(default = "default_late_death_fraction")]
    pub late_death_fraction: f64,
}

fn default_late_death_fraction() -> f64 {
    0.3
}

impl SyntheticCohortSpec {
    pub fn new(planted_coefficients: Vec<f64>, planted_intercepts: [f64; 3], seed: u64) -> Self {
        Self {
            n_patients: 1000,
            n_features: planted_coefficients.len(),
            planted_coefficients,
            planted_intercepts,
            missingness_rate: 0.0,
            censoring_rate: 0.0,
            seed,
            late_death_fraction: default_late_death_fraction(),
        }
    }

    /// Seven informative features spread among thirteen pure-noise ones,
    /// with event rates rising across the horizons.
    pub fn benchmark(n_patients: usize, seed: u64) -> Self {
        let planted = [1.0, -0.9, 0.8, -0.7, 0.6, -0.5, 0.5];
        let mut coefficients = vec![0.0; 20];
        for (k, b) in planted.into_iter().enumerate() {
            coefficients[3 * k] = b;
        }
        Self {
            n_patients,
            missingness_rate: 0.05,
            ..Self::new(coefficients, [-2.5, -1.8, -1.2], seed)
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CohortError::InvalidSpec(m));
        if self.n_features == 0 {
            return bad("n_features must be positive".into());
        }
        if self.planted_coefficients.len() != self.n_features {
            return bad(format!(
                "{} coefficients for {} features",
                self.planted_coefficients.len(),
                self.n_features
            ));
        }
        if !(0.0..1.0).contains(&self.missingness_rate) {
            return bad("missingness_rate must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return bad("censoring_rate must be in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.late_death_fraction) {
            return bad("late_death_fraction must be in [0, 1]".into());
        }
        let b = self.planted_intercepts;
        if !(b[0] <= b[1] && b[1] <= b[2]) {
            return bad("planted intercepts must be nondecreasing across horizons".into());
        }
        Ok(())
    }
}

/// The generating model of a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleModel {
    pub feature_names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercepts: [f64; 3],
    /// Raw value = loc + scale * z.
    pub loc: Vec<f64>,
    pub scale: Vec<f64>,
}

impl OracleModel {
    pub fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.loc.iter().zip(&self.scale))
            .map(|(x, (l, s))| (x - l) / s)
            .collect()
    }

    /// Planted logit for horizon index `h` (0, 1, 2 for 7, 14, 28 days).
    pub fn logit_z(&self, h: usize, z: &[f64]) -> f64 {
        self.intercepts[h]
            + self
                .coefficients
                .iter()
                .zip(z)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    pub fn probability(&self, h: usize, raw: &[f64]) -> f64 {
        sigmoid(self.logit_z(h, &self.standardize(raw)))
    }

    /// Names of features with a nonzero planted coefficient.
    pub fn informative_features(&self) -> Vec<String> {
        self.feature_names
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, b)| **b != 0.0)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Monte-Carlo AUROC of the true risk for horizon index `h`.
    ///
    /// Scores are the planted probabilities of `n` fresh draws; labels enter
    /// through their probabilities, so each pair (i, j) contributes
    /// `p_i (1 - p_j)` to the positive-above-negative mass.
    pub fn bayes_auroc(&self, h: usize, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probs: Vec<f64> = (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..self.coefficients.len())
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                sigmoid(self.logit_z(h, &z))
            })
            .collect();
        probs.sort_by(|a, b| a.total_cmp(b));
        // ascending scores: negatives mass below each positive
        let mut neg_below = 0.0;
        let mut concordant = 0.0;
        let mut i = 0;
        while i < probs.len() {
            let mut j = i;
            while j < probs.len() && probs[j] == probs[i] {
                j += 1;
            }
            let group_pos: f64 = probs[i..j].iter().sum();
            let group_neg: f64 = probs[i..j].iter().map(|p| 1.0 - p).sum();
            let self_pair: f64 = probs[i..j].iter().map(|p| p * (1.0 - p)).sum();
            concordant += group_pos * neg_below + 0.5 * (group_pos * group_neg - self_pair);
            neg_below += group_neg;
            i = j;
        }
        let total_pos: f64 = probs.iter().sum();
        let total_neg: f64 = probs.iter().map(|p| 1.0 - p).sum();
        let self_pairs: f64 = probs.iter().map(|p| p * (1.0 - p)).sum();
        concordant / (total_pos * total_neg - self_pairs)
    }
}

fn feature_name(j: usize) -> String {
    format!("feat_{:02}", j + 1)
}

fn presentation(j: usize) -> (f64, f64) {
    (10.0 * (j + 1) as f64, 1.0 + (j % 4) as f64)
}

fn base_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2150, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

/// Whole seconds uniformly in `(lo_days, hi_days]`.
fn seconds_in(rng: &mut ChaCha8Rng, lo_days: i64, hi_days: i64) -> i64 {
    let width = (hi_days - lo_days) * DAY_SECONDS;
    lo_days * DAY_SECONDS + 1 + rng.random_range(0..width)
}

/// Generate a cohort whose outcomes follow the planted logistic model.
pub fn generate_synthetic_cohort(spec: &SyntheticCohortSpec) -> Result<(CohortTable, OracleModel)> {
    spec.validate()?;
    let d = spec.n_features;
    let names: Vec<String> = (0..d).map(feature_name).collect();
    let (loc, scale): (Vec<f64>, Vec<f64>) = (0..d).map(presentation).unzip();
    let oracle = OracleModel {
        feature_names: names.clone(),
        coefficients: spec.planted_coefficients.clone(),
        intercepts: spec.planted_intercepts,
        loc: loc.clone(),
        scale: scale.clone(),
    };
    let dictionary = DataDictionary::new(
        names
            .iter()
            .map(|n| DictionaryEntry {
                name: n.clone(),
                unit: "unit".into(),
                expected_range: None,
            })
            .collect(),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let start = base_time();
    let mut records = Vec::with_capacity(spec.n_patients);
    for i in 0..spec.n_patients {
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let u: f64 = rng.random();
        let p: Vec<f64> = (0..HORIZONS.len())
            .map(|h| sigmoid(oracle.logit_z(h, &z)))
            .collect();
        let late_cut = p[2] + (1.0 - p[2]) * spec.late_death_fraction;
        let death_secs = if u < p[0] {
            Some(seconds_in(&mut rng, 1, 7))
        } else if u < p[1] {
            Some(seconds_in(&mut rng, 7, 14))
        } else if u < p[2] {
            Some(seconds_in(&mut rng, 14, 28))
        } else if u < late_cut {
            Some(seconds_in(&mut rng, 28, LATE_DEATH_END_DAYS))
        } else {
            None
        };

        let admission = start + Duration::minutes(37 * i as i64);
        let mut los_secs = seconds_in(&mut rng, 1, 14);
        let age = 18.0 + 72.0 * rng.random::<f64>();

        let censored: bool = rng.random::<f64>() < spec.censoring_rate;
        let censor_secs = seconds_in(&mut rng, 1, 28);
        let (death_secs, last_seen_secs) = match (censored, death_secs) {
            (true, Some(t)) if t > censor_secs => (None, Some(censor_secs)),
            (true, None) => (None, Some(censor_secs)),
            (_, t) => (t, None),
        };
        if let Some(t) = death_secs {
            los_secs = los_secs.min(t);
        }
        if let Some(t) = last_seen_secs {
            los_secs = los_secs.min(t);
        }

        let mut clinical_values = BTreeMap::new();
        let mut observed = 0;
        let mut masked = Vec::with_capacity(d);
        for _ in 0..d {
            let missing = rng.random::<f64>() < spec.missingness_rate;
            masked.push(missing);
            if !missing {
                observed += 1;
            }
        }
        if observed == 0 {
            masked[0] = false;
        }
        for j in 0..d {
            let value = (!masked[j]).then(|| loc[j] + scale[j] * z[j]);
            clinical_values.insert(names[j].clone(), value);
        }

        records.push(PatientRecord {
            subject_id: format!("S{:06}", i + 1),
            stay_id: "1".into(),
            admission_time: admission,
            discharge_time: admission + Duration::seconds(los_secs),
            icu_los_days: los_secs as f64 / DAY_SECONDS as f64,
            age_years: age,
            death_time: death_secs.map(|s| admission + Duration::seconds(s)),
            last_seen_time: last_seen_secs.map(|s| admission + Duration::seconds(s)),
            clinical_values,
        });
    }
    Ok((
        CohortTable {
            records,
            dictionary,
        },
        oracle,
    ))
}

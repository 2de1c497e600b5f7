use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_nomogram, NomogramError, NomogramSpec, Result};
use crate::explain::attribute_raw;
use crate::model::LogisticModel;
use crate::rng::stream_rng;
use crate::{Patient, HORIZONS};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything the browser calculator needs for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleHorizon {
    pub horizon_days: u32,
    pub model: LogisticModel,
    /// Raw-unit background profile for attributions.
    pub background_means: Vec<f64>,
    pub nomogram: NomogramSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub schema_version: u32,
    pub generator: String,
    pub horizons: Vec<BundleHorizon>,
}

/// Prediction for one horizon, as shown by the calculator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonPrediction {
    pub horizon_days: u32,
    /// From the logistic formula.
    pub probability: f64,
    /// From the nomogram's total points and probability table.
    pub nomogram_probability: f64,
    pub feature_names: Vec<String>,
    pub points: Vec<f64>,
    pub total_points: f64,
    pub attributions: Vec<f64>,
    pub base_value: f64,
    pub clamped: Vec<String>,
}

fn check_horizons(found: &[u32]) -> Result<()> {
    let missing: Vec<u32> = HORIZONS
        .iter()
        .copied()
        .filter(|h| !found.contains(h))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(NomogramError::IncompleteBundle(missing))
    }
}

impl Bundle {
    /// Pair each model with its nomogram and background. The models need
    /// not be ordered but every standard horizon must be present.
    pub fn new(
        models: &[LogisticModel],
        specs: &[NomogramSpec],
        background_means: &[Vec<f64>],
    ) -> Result<Self> {
        if models.len() != specs.len() || models.len() != background_means.len() {
            return Err(NomogramError::Mismatch(format!(
                "{} models, {} nomograms, {} backgrounds",
                models.len(),
                specs.len(),
                background_means.len()
            )));
        }
        let mut horizons = Vec::new();
        for ((m, s), bg) in models.iter().zip(specs).zip(background_means) {
            if m.horizon_days != s.horizon_days {
                return Err(NomogramError::Mismatch(format!(
                    "model horizon {} paired with nomogram horizon {}",
                    m.horizon_days, s.horizon_days
                )));
            }
            if bg.len() != m.n_features() || s.axes.len() != m.n_features() {
                return Err(NomogramError::Mismatch(format!(
                    "horizon {}: feature counts differ",
                    m.horizon_days
                )));
            }
            horizons.push(BundleHorizon {
                horizon_days: m.horizon_days,
                model: m.clone(),
                background_means: bg.clone(),
                nomogram: s.clone(),
            });
        }
        horizons.sort_by_key(|h| h.horizon_days);
        check_horizons(&horizons.iter().map(|h| h.horizon_days).collect::<Vec<_>>())?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            generator: format!("icu-risk {}", env!("CARGO_PKG_VERSION")),
            horizons,
        })
    }

    /// Bundle with nomograms over each model's reference ranges and the
    /// training means as background.
    pub fn from_models(models: &[LogisticModel]) -> Result<Self> {
        let specs = models
            .iter()
            .map(|m| build_nomogram(m, &m.reference_ranges))
            .collect::<Result<Vec<_>>>()?;
        let backgrounds: Vec<Vec<f64>> = models.iter().map(|m| m.training_means()).collect();
        Self::new(models, &specs, &backgrounds)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| NomogramError::Json(e.to_string()))?;
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| NomogramError::Json("schema_version missing".into()))?;
        if version != SCHEMA_VERSION as u64 {
            return Err(NomogramError::SchemaMismatch(version as u32));
        }
        let bundle: Bundle =
            serde_json::from_value(value).map_err(|e| NomogramError::Json(e.to_string()))?;
        check_horizons(&bundle.horizons.iter().map(|h| h.horizon_days).collect::<Vec<_>>())?;
        Ok(bundle)
    }

    pub fn horizon(&self, days: u32) -> Option<&BundleHorizon> {
        self.horizons.iter().find(|h| h.horizon_days == days)
    }

    pub fn predict(&self, patient: &Patient) -> Result<Vec<HorizonPrediction>> {
        self.horizons
            .iter()
            .map(|h| {
                let raw = h.model.raw_vector(patient)?;
                let score = h.nomogram.score_raw(&raw);
                let mean_z = h.model.standardize(&h.background_means);
                let attr = attribute_raw(&h.model, &mean_z, &raw);
                Ok(HorizonPrediction {
                    horizon_days: h.horizon_days,
                    probability: h.model.predict_prob_raw(&raw),
                    nomogram_probability: h.nomogram.probability(score.total),
                    feature_names: h.model.feature_names.clone(),
                    points: score.points,
                    total_points: score.total,
                    attributions: attr.values,
                    base_value: attr.base_value,
                    clamped: score.clamped,
                })
            })
            .collect()
    }

    /// Features used by any horizon, with the range inside every horizon's
    /// nomogram axes.
    pub fn common_ranges(&self) -> BTreeMap<String, (f64, f64)> {
        let mut out: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        for h in &self.horizons {
            for a in &h.nomogram.axes {
                out.entry(a.name.clone())
                    .and_modify(|r| *r = (r.0.max(a.lo), r.1.min(a.hi)))
                    .or_insert((a.lo, a.hi));
            }
        }
        out
    }

    /// Patient at the training means of the first horizon's model.
    pub fn default_patient(&self) -> Patient {
        let mut p = Patient::new();
        for h in self.horizons.iter().rev() {
            for (name, v) in h.model.feature_names.iter().zip(&h.model.training_means()) {
                p.insert(name.clone(), *v);
            }
        }
        p
    }
}

/// Write the bundle for three horizon models and their nomograms.
pub fn export_bundle(
    models: &[LogisticModel],
    specs: &[NomogramSpec],
    background_means: &[Vec<f64>],
    path: &Path,
) -> Result<Bundle> {
    let bundle = Bundle::new(models, specs, background_means)?;
    std::fs::write(path, bundle.to_json()).map_err(|e| NomogramError::Io(e.to_string()))?;
    Ok(bundle)
}

pub fn load_bundle(path: &Path) -> Result<Bundle> {
    let text = std::fs::read_to_string(path).map_err(|e| NomogramError::Io(e.to_string()))?;
    Bundle::from_json(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenCase {
    pub patient: Patient,
    pub predictions: Vec<HorizonPrediction>,
}

/// Reference predictions for cross-checking other consumers of a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenFile {
    pub schema_version: u32,
    /// SHA-256 of the bundle file these cases were computed from.
    pub bundle_sha256: String,
    pub tolerance: f64,
    pub cases: Vec<GoldenCase>,
}

impl GoldenFile {
    /// `n` patients drawn uniformly inside every horizon's axis ranges;
    /// the first case is the training-mean patient.
    pub fn generate(bundle: &Bundle, bundle_json: &str, n: usize, seed: u64) -> Result<Self> {
        let ranges = bundle.common_ranges();
        let mut cases = Vec::with_capacity(n);
        for i in 0..n {
            let patient = if i == 0 {
                bundle.default_patient()
            } else {
                let mut rng = stream_rng(seed, i as u64);
                ranges
                    .iter()
                    .map(|(name, &(lo, hi))| {
                        let v = if lo < hi { rng.random_range(lo..=hi) } else { lo };
                        (name.clone(), v)
                    })
                    .collect()
            };
            let predictions = bundle.predict(&patient)?;
            cases.push(GoldenCase {
                patient,
                predictions,
            });
        }
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            bundle_sha256: crate::sha256_hex(bundle_json.as_bytes()),
            tolerance: 1e-6,
            cases,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("golden file serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nomogram::tests::hand_model;
    use crate::stats::sigmoid;

    fn models() -> Vec<LogisticModel> {
        [(7, -2.0), (14, -1.5), (28, -1.0)]
            .iter()
            .map(|&(h, b0)| hand_model(vec![0.8, -0.4, 0.3], b0, h))
            .collect()
    }

    #[test]
    fn reload_predicts_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bundle.json");
        let ms = models();
        let specs: Vec<_> = ms.iter().map(|m| build_nomogram(m, &m.reference_ranges).unwrap()).collect();
        let bg: Vec<_> = ms.iter().map(|m| m.training_means()).collect();
        let b = export_bundle(&ms, &specs, &bg, &path).unwrap();
        let back = load_bundle(&path).unwrap();
        assert_eq!(back, b);
        let golden = GoldenFile::generate(&back, &b.to_json(), 100, 3).unwrap();
        for case in &golden.cases {
            for (h, pred) in back.horizons.iter().zip(&case.predictions) {
                let direct = ms.iter().find(|m| m.horizon_days == h.horizon_days).unwrap();
                assert!((direct.predict_prob(&case.patient).unwrap() - pred.probability).abs() < 1e-12);
                assert!((pred.probability - pred.nomogram_probability).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn training_mean_patient_gets_intercept() {
        let b = Bundle::from_models(&models()).unwrap();
        let preds = b.predict(&b.default_patient()).unwrap();
        for (h, p) in b.horizons.iter().zip(&preds) {
            assert!((p.probability - sigmoid(h.model.intercept)).abs() < 1e-15);
            assert!(p.attributions.iter().all(|a| *a == 0.0));
        }
    }

    #[test]
    fn missing_horizon_and_schema() {
        let ms = models();
        assert_eq!(
            Bundle::from_models(&[ms[0].clone(), ms[2].clone()]),
            Err(NomogramError::IncompleteBundle(vec![14]))
        );
        let mut v: serde_json::Value = serde_json::from_str(&Bundle::from_models(&ms).unwrap().to_json()).unwrap();
        v["schema_version"] = 2.into();
        assert_eq!(Bundle::from_json(&v.to_string()), Err(NomogramError::SchemaMismatch(2)));
        v["schema_version"] = 1.into();
        v["horizons"].as_array_mut().unwrap().remove(1);
        assert_eq!(Bundle::from_json(&v.to_string()), Err(NomogramError::IncompleteBundle(vec![14])));
    }
}

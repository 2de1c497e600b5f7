//! Derived clinical scores.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PreprocessError, Result};

/// Upper end of the APS III scale.
pub const APS_III_MAX: f64 = 252.0;

/// The physiological inputs of the APS III score. Two slots are reserved for
/// variables that a site-specific weight table may define.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApsVariable {
    HeartRate,
    MeanArterialPressure,
    RespiratoryRate,
    Pao2Fio2,
    Ph,
    Sodium,
    Potassium,
    Glucose,
    Creatinine,
    Bun,
    Wbc,
    Hematocrit,
    Temperature,
    UrineOutput,
    Gcs,
    Reserved1,
    Reserved2,
}

impl ApsVariable {
    pub const ALL: [ApsVariable; 17] = [
        ApsVariable::HeartRate,
        ApsVariable::MeanArterialPressure,
        ApsVariable::RespiratoryRate,
        ApsVariable::Pao2Fio2,
        ApsVariable::Ph,
        ApsVariable::Sodium,
        ApsVariable::Potassium,
        ApsVariable::Glucose,
        ApsVariable::Creatinine,
        ApsVariable::Bun,
        ApsVariable::Wbc,
        ApsVariable::Hematocrit,
        ApsVariable::Temperature,
        ApsVariable::UrineOutput,
        ApsVariable::Gcs,
        ApsVariable::Reserved1,
        ApsVariable::Reserved2,
    ];
}

/// Half-open bin `[lo, hi)`; a missing bound is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApsBin {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub points: f64,
}

impl ApsBin {
    fn contains(&self, v: f64) -> bool {
        self.lo.is_none_or(|lo| v >= lo) && self.hi.is_none_or(|hi| v < hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApsVariableWeights {
    pub variable: ApsVariable,
    pub unit: String,
    /// Points when the variable is not measured (0 = assumed normal).
    #[serde(default)]
    pub missing_points: f64,
    pub bins: Vec<ApsBin>,
}

impl ApsVariableWeights {
    /// Points for `value`; values outside every bin score 0.
    pub fn points(&self, value: Option<f64>) -> f64 {
        match value {
            None => self.missing_points,
            Some(v) => self
                .bins
                .iter()
                .find(|b| b.contains(v))
                .map_or(0.0, |b| b.points),
        }
    }
}

/// Editable per-variable scoring bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApsWeightTable {
    pub variables: Vec<ApsVariableWeights>,
}

fn bins(spec: &[(Option<f64>, Option<f64>, f64)]) -> Vec<ApsBin> {
    spec.iter()
        .map(|&(lo, hi, points)| ApsBin { lo, hi, points })
        .collect()
}

impl Default for ApsWeightTable {
    /// Illustrative bins shaped like the published APS III table; sites
    /// should replace them with their validated local table.
    fn default() -> Self {
        use ApsVariable::*;
        let n = None;
        let s = Some;
        let row = |variable, unit: &str, spec: &[(Option<f64>, Option<f64>, f64)]| {
            ApsVariableWeights {
                variable,
                unit: unit.into(),
                missing_points: 0.0,
                bins: bins(spec),
            }
        };
        Self {
            variables: vec![
                row(HeartRate, "bpm", &[
                    (n, s(40.0), 8.0), (s(40.0), s(50.0), 5.0), (s(50.0), s(100.0), 0.0),
                    (s(100.0), s(110.0), 1.0), (s(110.0), s(120.0), 5.0),
                    (s(120.0), s(140.0), 7.0), (s(140.0), s(155.0), 13.0), (s(155.0), n, 17.0),
                ]),
                row(MeanArterialPressure, "mmHg", &[
                    (n, s(40.0), 23.0), (s(40.0), s(60.0), 15.0), (s(60.0), s(70.0), 7.0),
                    (s(70.0), s(80.0), 6.0), (s(80.0), s(100.0), 0.0), (s(100.0), s(120.0), 4.0),
                    (s(120.0), s(130.0), 7.0), (s(130.0), s(140.0), 9.0), (s(140.0), n, 10.0),
                ]),
                row(RespiratoryRate, "breaths/min", &[
                    (n, s(6.0), 17.0), (s(6.0), s(12.0), 8.0), (s(12.0), s(14.0), 7.0),
                    (s(14.0), s(25.0), 0.0), (s(25.0), s(35.0), 6.0), (s(35.0), s(40.0), 9.0),
                    (s(40.0), s(50.0), 11.0), (s(50.0), n, 18.0),
                ]),
                row(Pao2Fio2, "mmHg", &[
                    (n, s(100.0), 15.0), (s(100.0), s(200.0), 10.0),
                    (s(200.0), s(300.0), 5.0), (s(300.0), n, 0.0),
                ]),
                row(Ph, "pH", &[
                    (n, s(7.15), 12.0), (s(7.15), s(7.25), 9.0), (s(7.25), s(7.35), 4.0),
                    (s(7.35), s(7.50), 0.0), (s(7.50), s(7.60), 3.0), (s(7.60), n, 12.0),
                ]),
                row(Sodium, "mEq/L", &[
                    (n, s(120.0), 3.0), (s(120.0), s(135.0), 2.0),
                    (s(135.0), s(155.0), 0.0), (s(155.0), n, 4.0),
                ]),
                row(Potassium, "mEq/L", &[
                    (n, s(2.5), 4.0), (s(2.5), s(3.5), 1.0), (s(3.5), s(5.5), 0.0),
                    (s(5.5), s(6.5), 2.0), (s(6.5), n, 4.0),
                ]),
                row(Glucose, "mg/dL", &[
                    (n, s(40.0), 8.0), (s(40.0), s(60.0), 9.0), (s(60.0), s(200.0), 0.0),
                    (s(200.0), s(350.0), 3.0), (s(350.0), n, 5.0),
                ]),
                row(Creatinine, "mg/dL", &[
                    (n, s(0.5), 3.0), (s(0.5), s(1.5), 0.0),
                    (s(1.5), s(1.95), 4.0), (s(1.95), n, 10.0),
                ]),
                row(Bun, "mg/dL", &[
                    (n, s(17.0), 0.0), (s(17.0), s(20.0), 2.0), (s(20.0), s(40.0), 7.0),
                    (s(40.0), s(80.0), 11.0), (s(80.0), n, 12.0),
                ]),
                row(Wbc, "K/uL", &[
                    (n, s(1.0), 19.0), (s(1.0), s(3.0), 5.0), (s(3.0), s(20.0), 0.0),
                    (s(20.0), s(25.0), 1.0), (s(25.0), n, 5.0),
                ]),
                row(Hematocrit, "%", &[
                    (n, s(41.0), 3.0), (s(41.0), s(50.0), 0.0), (s(50.0), n, 3.0),
                ]),
                row(Temperature, "degC", &[
                    (n, s(33.0), 20.0), (s(33.0), s(33.5), 16.0), (s(33.5), s(34.0), 13.0),
                    (s(34.0), s(35.0), 8.0), (s(35.0), s(36.0), 2.0), (s(36.0), s(40.0), 0.0),
                    (s(40.0), n, 4.0),
                ]),
                row(UrineOutput, "mL/day", &[
                    (n, s(400.0), 15.0), (s(400.0), s(600.0), 8.0), (s(600.0), s(900.0), 7.0),
                    (s(900.0), s(1500.0), 5.0), (s(1500.0), s(2000.0), 4.0),
                    (s(2000.0), s(4000.0), 0.0), (s(4000.0), n, 1.0),
                ]),
                row(Gcs, "points", &[
                    (n, s(4.0), 48.0), (s(4.0), s(7.0), 33.0), (s(7.0), s(10.0), 16.0),
                    (s(10.0), s(14.0), 8.0), (s(14.0), s(15.0), 3.0), (s(15.0), n, 0.0),
                ]),
                row(Reserved1, "", &[]),
                row(Reserved2, "", &[]),
            ],
        }
    }
}

impl ApsWeightTable {
    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PreprocessError::InvalidWeightTable(e.to_string()))?;
        let table: Self = serde_json::from_str(&text)
            .map_err(|e| PreprocessError::InvalidWeightTable(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weight table serializes")
    }

    /// Bins must be ordered, non-overlapping and carry nonnegative points.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PreprocessError::InvalidWeightTable(m));
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.variables {
            if !seen.insert(v.variable) {
                return bad(format!("{:?} listed twice", v.variable));
            }
            if v.missing_points < 0.0 {
                return bad(format!("{:?}: negative missing_points", v.variable));
            }
            for (i, b) in v.bins.iter().enumerate() {
                if b.points < 0.0 {
                    return bad(format!("{:?}: negative points", v.variable));
                }
                if let (Some(lo), Some(hi)) = (b.lo, b.hi) {
                    if lo >= hi {
                        return bad(format!("{:?}: empty bin [{lo}, {hi})", v.variable));
                    }
                }
                if i > 0 {
                    let prev_hi = v.bins[i - 1].hi;
                    match (prev_hi, b.lo) {
                        (Some(p), Some(lo)) if lo >= p => {}
                        _ => return bad(format!("{:?}: bins overlap or are unordered", v.variable)),
                    }
                }
            }
        }
        Ok(())
    }
}

/// Measured APS III inputs; absent variables are unmeasured.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ApsIiiInput {
    pub values: BTreeMap<ApsVariable, f64>,
}

impl ApsIiiInput {
    pub fn with(mut self, variable: ApsVariable, value: f64) -> Self {
        self.values.insert(variable, value);
        self
    }
}

/// Weighted sum of per-variable bin points, clamped to `[0, 252]`.
pub fn aps_iii_score(input: &ApsIiiInput, table: &ApsWeightTable) -> f64 {
    table
        .variables
        .iter()
        .map(|w| w.points(input.values.get(&w.variable).copied()))
        .sum::<f64>()
        .clamp(0.0, APS_III_MAX)
}

/// Base excess in mEq/L from bicarbonate (mEq/L), hemoglobin (g/dL) and pH.
pub fn base_excess(hco3: f64, hb: f64, ph: f64) -> Result<f64> {
    if !(hco3 > 0.0) || !hco3.is_finite() {
        return Err(PreprocessError::OutOfPhysiologicRange {
            variable: "hco3",
            value: hco3,
            range: "(0, inf)",
        });
    }
    if !(hb >= 0.0) || !hb.is_finite() {
        return Err(PreprocessError::OutOfPhysiologicRange {
            variable: "hb",
            value: hb,
            range: "[0, inf)",
        });
    }
    if !(6.5..=8.0).contains(&ph) {
        return Err(PreprocessError::OutOfPhysiologicRange {
            variable: "ph",
            value: ph,
            range: "[6.5, 8.0]",
        });
    }
    Ok(hco3 - 24.4 + (2.3 * hb + 7.7) * (ph - 7.4))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn normal_patient() -> ApsIiiInput {
        use ApsVariable::*;
        ApsIiiInput::default()
            .with(HeartRate, 80.0)
            .with(MeanArterialPressure, 90.0)
            .with(RespiratoryRate, 16.0)
            .with(Pao2Fio2, 400.0)
            .with(Ph, 7.4)
            .with(Sodium, 140.0)
            .with(Potassium, 4.0)
            .with(Glucose, 100.0)
            .with(Creatinine, 1.0)
            .with(Bun, 12.0)
            .with(Wbc, 8.0)
            .with(Hematocrit, 45.0)
            .with(Temperature, 37.0)
            .with(UrineOutput, 2500.0)
            .with(Gcs, 15.0)
    }

    #[test]
    fn default_table_is_valid_and_complete() {
        let t = ApsWeightTable::default();
        t.validate().unwrap();
        assert_eq!(t.variables.len(), 17);
        let max: f64 = t
            .variables
            .iter()
            .map(|v| v.bins.iter().map(|b| b.points).fold(0.0, f64::max))
            .sum();
        assert!(max <= APS_III_MAX);
    }

    #[test]
    fn normal_physiology_scores_zero() {
        assert_eq!(aps_iii_score(&normal_patient(), &ApsWeightTable::default()), 0.0);
        assert_eq!(aps_iii_score(&ApsIiiInput::default(), &ApsWeightTable::default()), 0.0);
    }

    #[test]
    fn single_abnormal_variable() {
        let p = normal_patient().with(ApsVariable::Ph, 7.10);
        assert_eq!(aps_iii_score(&p, &ApsWeightTable::default()), 12.0);
    }

    #[test]
    fn clamped_at_252() {
        let t = ApsWeightTable {
            variables: ApsVariable::ALL
                .iter()
                .map(|&variable| ApsVariableWeights {
                    variable,
                    unit: String::new(),
                    missing_points: 20.0,
                    bins: vec![],
                })
                .collect(),
        };
        assert_eq!(aps_iii_score(&ApsIiiInput::default(), &t), 252.0);
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let t = ApsWeightTable::default();
        let back: ApsWeightTable = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(back, t);
        let mut broken = t.clone();
        broken.variables[0].bins.swap(0, 1);
        assert!(broken.validate().is_err());
    }

    #[test]
    fn base_excess_values() {
        for hb in [0.0, 10.0, 20.0] {
            assert_eq!(base_excess(24.4, hb, 7.4).unwrap(), 0.0);
        }
        assert!((base_excess(20.0, 10.0, 7.3).unwrap() - (-7.47)).abs() < 1e-12);
        assert!((base_excess(24.4, 0.0, 7.5).unwrap() - 0.77).abs() < 1e-12);
    }

    #[test]
    fn base_excess_rejects_out_of_range() {
        assert!(base_excess(0.0, 10.0, 7.4).is_err());
        assert!(base_excess(24.0, -1.0, 7.4).is_err());
        assert!(base_excess(24.0, 10.0, 6.4).is_err());
        assert!(base_excess(24.0, 10.0, 8.1).is_err());
        assert!(base_excess(f64::NAN, 10.0, 7.4).is_err());
    }

    proptest! {
        #[test]
        fn score_stays_in_range(vals in proptest::collection::vec(-100.0f64..5000.0, 17)) {
            let mut input = ApsIiiInput::default();
            for (v, x) in ApsVariable::ALL.iter().zip(vals) {
                input.values.insert(*v, x);
            }
            let s = aps_iii_score(&input, &ApsWeightTable::default());
            prop_assert!((0.0..=APS_III_MAX).contains(&s));
        }

        #[test]
        fn moving_to_heavier_bin_never_lowers_score(
            var_idx in 0usize..15, from in 0usize..8, to in 0usize..8
        ) {
            let table = ApsWeightTable::default();
            let w = &table.variables[var_idx];
            prop_assume!(from < w.bins.len() && to < w.bins.len());
            let pick = |b: &ApsBin| match (b.lo, b.hi) {
                (Some(lo), Some(hi)) => 0.5 * (lo + hi),
                (Some(lo), None) => lo + 1.0,
                (None, Some(hi)) => hi - 0.01,
                (None, None) => 0.0,
            };
            let (a, b) = (&w.bins[from], &w.bins[to]);
            prop_assume!(b.points >= a.points);
            let base = normal_patient();
            let s_a = aps_iii_score(&base.clone().with(w.variable, pick(a)), &table);
            let s_b = aps_iii_score(&base.with(w.variable, pick(b)), &table);
            prop_assert!(s_b >= s_a);
        }

        #[test]
        fn base_excess_is_affine(
            hco3 in 1.0f64..50.0, hb in 0.0f64..20.0, ph in 6.6f64..7.9, step in 0.01f64..0.05
        ) {
            // three equally spaced points in each argument are collinear
            let collinear = |f0: f64, f1: f64, f2: f64| (f2 - 2.0 * f1 + f0).abs() < 1e-12;
            let be = |a, b, c| base_excess(a, b, c).unwrap();
            prop_assert!(collinear(be(hco3, hb, ph), be(hco3 + step, hb, ph), be(hco3 + 2.0 * step, hb, ph)));
            prop_assert!(collinear(be(hco3, hb, ph), be(hco3, hb + step, ph), be(hco3, hb + 2.0 * step, ph)));
            prop_assert!(collinear(be(hco3, hb, ph - step), be(hco3, hb, ph), be(hco3, hb, ph + step)));
        }
    }
}

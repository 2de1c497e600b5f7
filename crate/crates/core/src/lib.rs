//! Short-term ICU mortality risk modelling.
//!
//! The crate covers the full modelling path from raw ICU cohort extracts to a
//! deployable point-score nomogram:
//!
//! - [`cohort`]: CSV ingest, inclusion criteria, outcome derivation and a
//!   synthetic cohort generator with a planted logistic ground truth
//! - [`preprocess`]: missingness filtering, KNN imputation, z-scoring and
//!   derived clinical scores (APS III, base excess)
//! - [`select`]: F-test filter, recursive feature elimination, VIF screening
//! - [`resample`]: threshold-weighted SMOTE for a continuous survival target
//! - [`model`]: horizon-specific logistic models and a Breslow Cox model
//! - [`evaluate`]: AUROC, PR-AUC, bootstrap intervals, C-index, calibration
//! - [`explain`]: permutation importance and exact linear attributions
//! - [`nomogram`]: point scales, SVG rendering and the JSON bundle read by the
//!   browser calculator
//! - [`pipeline`]: stage orchestration with persisted intermediates

pub mod cohort;
pub mod evaluate;
pub mod explain;
pub mod model;
pub mod nomogram;
pub mod pipeline;
pub mod preprocess;
pub mod resample;
pub mod rng;
pub mod select;
pub mod stats;

pub use cohort::{CohortTable, DataDictionary, PatientRecord, SurvivalOutcome};
pub use model::{CoxModel, LogisticModel};
pub use nomogram::NomogramSpec;
pub use preprocess::FeatureMatrix;

/// Patient values keyed by feature name, in raw clinical units.
pub type Patient = std::collections::BTreeMap<String, f64>;

/// Prediction horizons used throughout, in days.
pub const HORIZONS: [u32; 3] = [7, 14, 28];

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

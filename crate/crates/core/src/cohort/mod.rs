//! Cohort ingest, inclusion criteria and outcome derivation.

mod synthetic;

pub use synthetic::{generate_synthetic_cohort, OracleModel, SyntheticCohortSpec};

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SUBJECT_ID: &str = "subject_id";
pub const STAY_ID: &str = "stay_id";
pub const ADMISSION_TIME: &str = "admission_time";
pub const DISCHARGE_TIME: &str = "discharge_time";
pub const ICU_LOS_DAYS: &str = "icu_los_days";
pub const AGE_YEARS: &str = "age_years";
pub const DEATH_TIME: &str = "death_time";
pub const LAST_SEEN_TIME: &str = "last_seen_time";

const MANDATORY: [&str; 6] = [
    SUBJECT_ID,
    ADMISSION_TIME,
    DISCHARGE_TIME,
    ICU_LOS_DAYS,
    AGE_YEARS,
    DEATH_TIME,
];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),
    #[error("cannot parse `{value}` in column `{column}` at data row {row}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("file has no data rows")]
    EmptyFile,
    #[error("invalid record at data row {row}: {reason}")]
    InvalidRecord { row: usize, reason: String },
    #[error("invalid timestamps for subject {subject_id}: {reason}")]
    InvalidTimestamp { subject_id: String, reason: String },
    #[error("invalid synthetic cohort spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, CohortError>;

/// One column of the data dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryEntry {
    pub name: String,
    pub unit: String,
    /// Expected physiological range, informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_range: Option<(f64, f64)>,
}

/// Ordered set of clinical columns with their units.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataDictionary {
    pub entries: Vec<DictionaryEntry>,
}

impl DataDictionary {
    pub fn new(entries: Vec<DictionaryEntry>) -> Self {
        Self { entries }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn unit(&self, name: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.unit.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(file)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path)?;
        serde_json::to_writer_pretty(&mut file, self)?;
        file.write_all(b"\n")?;
        Ok(())
    }
}

/// A single ICU stay.
///
/// `admission_time` and `discharge_time` are the ICU in/out timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub subject_id: String,
    pub stay_id: String,
    pub admission_time: NaiveDateTime,
    pub discharge_time: NaiveDateTime,
    pub icu_los_days: f64,
    pub age_years: f64,
    pub death_time: Option<NaiveDateTime>,
    /// Last time the patient was known alive when follow-up ended early.
    pub last_seen_time: Option<NaiveDateTime>,
    pub clinical_values: BTreeMap<String, Option<f64>>,
}

impl PatientRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.discharge_time < self.admission_time {
            return Err("discharge_time precedes admission_time".into());
        }
        if !(self.icu_los_days >= 0.0) {
            return Err(format!("icu_los_days must be >= 0, got {}", self.icu_los_days));
        }
        if !(self.age_years >= 0.0) {
            return Err(format!("age_years must be >= 0, got {}", self.age_years));
        }
        if let Some(death) = self.death_time {
            if death < self.admission_time {
                return Err("death_time precedes admission_time".into());
            }
        }
        Ok(())
    }

    /// Days elapsed from ICU admission to `t`.
    pub fn days_since_admission(&self, t: NaiveDateTime) -> f64 {
        (t - self.admission_time).num_seconds() as f64 / SECONDS_PER_DAY
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    pub records: Vec<PatientRecord>,
    pub dictionary: DataDictionary,
}

impl CohortTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Time to death (days since ICU admission) or censoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub time_days: f64,
    pub event: bool,
}

impl SurvivalOutcome {
    pub fn new(time_days: f64, event: bool) -> Self {
        Self { time_days, event }
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_utc());
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

/// Read a cohort CSV. Data rows are numbered from 1 in errors.
pub fn load_cohort(path: &Path, dictionary: &DataDictionary) -> Result<CohortTable> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_cohort(&text, dictionary)
}

/// Dictionary of every header column that is not an identifier, timestamp,
/// LOS or age column. Units are left empty.
pub fn infer_dictionary(text: &str) -> Result<DataDictionary> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let admin = [STAY_ID, LAST_SEEN_TIME];
    let entries = reader
        .headers()?
        .iter()
        .map(str::trim)
        .filter(|h| !MANDATORY.contains(h) && !admin.contains(h))
        .map(|h| DictionaryEntry {
            name: h.to_string(),
            unit: String::new(),
            expected_range: None,
        })
        .collect();
    Ok(DataDictionary::new(entries))
}

pub fn parse_cohort(text: &str, dictionary: &DataDictionary) -> Result<CohortTable> {
    if text.trim().is_empty() {
        return Err(CohortError::EmptyFile);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let index: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim(), i))
        .collect();
    for col in MANDATORY.iter().copied().chain(dictionary.names()) {
        if !index.contains_key(col) {
            return Err(CohortError::MissingColumn(col.to_string()));
        }
    }
    let stay_col = index.get(STAY_ID).copied();
    let last_seen_col = index.get(LAST_SEEN_TIME).copied();

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = i + 1;
        let cell = |name: &str| row.get(index[name]).unwrap_or("").trim();
        let parse_err = |column: &str, value: &str| CohortError::Parse {
            row: row_no,
            column: column.to_string(),
            value: value.to_string(),
        };
        let ts = |name: &str| -> Result<NaiveDateTime> {
            let v = cell(name);
            parse_timestamp(v).ok_or_else(|| parse_err(name, v))
        };
        let opt_ts = |value: &str, name: &str| -> Result<Option<NaiveDateTime>> {
            if value.is_empty() {
                Ok(None)
            } else {
                parse_timestamp(value)
                    .map(Some)
                    .ok_or_else(|| parse_err(name, value))
            }
        };
        let num = |name: &str| -> Result<f64> {
            let v = cell(name);
            v.parse::<f64>().map_err(|_| parse_err(name, v))
        };

        let subject_id = cell(SUBJECT_ID).to_string();
        if subject_id.is_empty() {
            return Err(CohortError::InvalidRecord {
                row: row_no,
                reason: "empty subject_id".into(),
            });
        }
        let stay_id = match stay_col {
            Some(c) if !row.get(c).unwrap_or("").trim().is_empty() => {
                row.get(c).unwrap_or("").trim().to_string()
            }
            _ => format!("{row_no:08}"),
        };
        let last_seen_time = match last_seen_col {
            Some(c) => opt_ts(row.get(c).unwrap_or("").trim(), LAST_SEEN_TIME)?,
            None => None,
        };

        let mut clinical_values = BTreeMap::new();
        for name in dictionary.names() {
            let v = cell(name);
            let value = if v.is_empty() {
                None
            } else {
                let parsed = v.parse::<f64>().map_err(|_| parse_err(name, v))?;
                if !parsed.is_finite() {
                    return Err(parse_err(name, v));
                }
                Some(parsed)
            };
            clinical_values.insert(name.to_string(), value);
        }

        let record = PatientRecord {
            subject_id,
            stay_id,
            admission_time: ts(ADMISSION_TIME)?,
            discharge_time: ts(DISCHARGE_TIME)?,
            icu_los_days: num(ICU_LOS_DAYS)?,
            age_years: num(AGE_YEARS)?,
            death_time: opt_ts(cell(DEATH_TIME), DEATH_TIME)?,
            last_seen_time,
            clinical_values,
        };
        record.validate().map_err(|reason| CohortError::InvalidRecord {
            row: row_no,
            reason,
        })?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(CohortError::EmptyFile);
    }
    Ok(CohortTable {
        records,
        dictionary: dictionary.clone(),
    })
}

/// Write a cohort in the same CSV layout `load_cohort` reads.
pub fn write_cohort<W: Write>(table: &CohortTable, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = vec![SUBJECT_ID, STAY_ID];
    header.extend_from_slice(&MANDATORY[1..]);
    header.push(LAST_SEEN_TIME);
    header.extend(table.dictionary.names());
    writer.write_record(&header)?;
    for r in &table.records {
        let mut row = vec![
            r.subject_id.clone(),
            r.stay_id.clone(),
            format_timestamp(r.admission_time),
            format_timestamp(r.discharge_time),
            r.icu_los_days.to_string(),
            r.age_years.to_string(),
            r.death_time.map(format_timestamp).unwrap_or_default(),
            r.last_seen_time.map(format_timestamp).unwrap_or_default(),
        ];
        for name in table.dictionary.names() {
            row.push(
                r.clinical_values
                    .get(name)
                    .copied()
                    .flatten()
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            );
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_cohort(table: &CohortTable, path: &Path) -> Result<()> {
    write_cohort(table, File::create(path)?)
}

/// Inclusion thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InclusionCriteria {
    pub min_age: f64,
    pub max_age: f64,
    pub min_icu_days: f64,
}

impl Default for InclusionCriteria {
    fn default() -> Self {
        Self {
            min_age: 18.0,
            max_age: 90.0,
            min_icu_days: 1.0,
        }
    }
}

/// Counts per exclusion reason. Each record is counted under the first
/// reason it fails, checked in the order LOS, 24 h survival, age,
/// duplicate admission.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub input: usize,
    pub short_icu_stay: usize,
    pub died_within_24h: usize,
    pub age_out_of_range: usize,
    pub repeat_admission: usize,
    pub retained: usize,
}

impl ExclusionReport {
    pub fn excluded(&self) -> usize {
        self.short_icu_stay + self.died_within_24h + self.age_out_of_range + self.repeat_admission
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExclusionReason {
    ShortIcuStay,
    DiedWithin24h,
    AgeOutOfRange,
    RepeatAdmission,
}

/// First failing criterion for record `idx`, given the index of each
/// subject's first stay.
fn exclusion_reason(
    record: &PatientRecord,
    idx: usize,
    first_stay: &HashMap<&str, usize>,
    criteria: &InclusionCriteria,
) -> Option<ExclusionReason> {
    if record.icu_los_days < criteria.min_icu_days {
        return Some(ExclusionReason::ShortIcuStay);
    }
    if let Some(death) = record.death_time {
        if record.days_since_admission(death) <= 1.0 {
            return Some(ExclusionReason::DiedWithin24h);
        }
    }
    if record.age_years < criteria.min_age || record.age_years > criteria.max_age {
        return Some(ExclusionReason::AgeOutOfRange);
    }
    if first_stay[record.subject_id.as_str()] != idx {
        return Some(ExclusionReason::RepeatAdmission);
    }
    None
}

/// Apply the cohort inclusion criteria. Retained records keep their input
/// order.
pub fn apply_inclusion(
    table: &CohortTable,
    criteria: &InclusionCriteria,
) -> (CohortTable, ExclusionReport) {
    // earliest admission per subject, ties by stay id
    let mut first_stay: HashMap<&str, usize> = HashMap::new();
    for (i, r) in table.records.iter().enumerate() {
        first_stay
            .entry(r.subject_id.as_str())
            .and_modify(|best| {
                let b = &table.records[*best];
                if (r.admission_time, &r.stay_id) < (b.admission_time, &b.stay_id) {
                    *best = i;
                }
            })
            .or_insert(i);
    }

    let mut report = ExclusionReport {
        input: table.len(),
        ..Default::default()
    };
    let mut records = Vec::new();
    for (i, r) in table.records.iter().enumerate() {
        match exclusion_reason(r, i, &first_stay, criteria) {
            None => records.push(r.clone()),
            Some(ExclusionReason::ShortIcuStay) => report.short_icu_stay += 1,
            Some(ExclusionReason::DiedWithin24h) => report.died_within_24h += 1,
            Some(ExclusionReason::AgeOutOfRange) => report.age_out_of_range += 1,
            Some(ExclusionReason::RepeatAdmission) => report.repeat_admission += 1,
        }
    }
    report.retained = records.len();
    (
        CohortTable {
            records,
            dictionary: table.dictionary.clone(),
        },
        report,
    )
}

/// Survival outcome within `window_days` of ICU admission.
pub fn derive_outcome(record: &PatientRecord, window_days: f64) -> Result<SurvivalOutcome> {
    if let Some(death) = record.death_time {
        let elapsed = record.days_since_admission(death);
        if elapsed <= 0.0 {
            return Err(CohortError::InvalidTimestamp {
                subject_id: record.subject_id.clone(),
                reason: "death_time is not after admission_time".into(),
            });
        }
        if elapsed <= window_days {
            return Ok(SurvivalOutcome::new(elapsed, true));
        }
        return Ok(SurvivalOutcome::new(window_days, false));
    }
    let follow_up = match record.last_seen_time {
        Some(t) => record.days_since_admission(t),
        None => window_days,
    };
    if follow_up <= 0.0 {
        return Err(CohortError::InvalidTimestamp {
            subject_id: record.subject_id.clone(),
            reason: "last_seen_time is not after admission_time".into(),
        });
    }
    Ok(SurvivalOutcome::new(follow_up.min(window_days), false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inferred_dictionary_skips_administrative_columns() {
        let text = "subject_id,stay_id,admission_time,discharge_time,icu_los_days,age_years,death_time,hb,ph\n";
        let d = infer_dictionary(text).unwrap();
        assert_eq!(d.names().collect::<Vec<_>>(), ["hb", "ph"]);
    }

    fn dict() -> DataDictionary {
        DataDictionary::new(vec![
            DictionaryEntry {
                name: "bicarbonate".into(),
                unit: "mEq/L".into(),
                expected_range: Some((5.0, 50.0)),
            },
            DictionaryEntry {
                name: "platelets".into(),
                unit: "K/uL".into(),
                expected_range: None,
            },
        ])
    }

    const HEADER: &str = "subject_id,stay_id,admission_time,discharge_time,icu_los_days,age_years,death_time,bicarbonate,platelets\n";

    fn csv3() -> String {
        format!(
            "{HEADER}\
             1,a,2150-01-01T00:00:00,2150-01-03T00:00:00,2,50,,22,120\n\
             2,b,2150-02-01T00:00:00,2150-02-05T12:00:00,4.5,67,2150-02-05T12:00:00,,40\n\
             3,c,2150-03-01 08:00:00,2150-03-02 09:00:00,1.0417,33,,25.5,\n"
        )
    }

    fn record(subject: &str, stay: &str, day: u32, los: f64, age: f64) -> PatientRecord {
        let adm = NaiveDate::from_ymd_opt(2150, 1, day)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        PatientRecord {
            subject_id: subject.into(),
            stay_id: stay.into(),
            admission_time: adm,
            discharge_time: adm + chrono::Duration::seconds((los * SECONDS_PER_DAY) as i64),
            icu_los_days: los,
            age_years: age,
            death_time: None,
            last_seen_time: None,
            clinical_values: BTreeMap::new(),
        }
    }

    fn table(records: Vec<PatientRecord>) -> CohortTable {
        CohortTable {
            records,
            dictionary: DataDictionary::default(),
        }
    }

    #[test]
    fn loads_three_rows() {
        let t = parse_cohort(&csv3(), &dict()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.records[0].subject_id, "1");
        assert_eq!(t.records[1].clinical_values["bicarbonate"], None);
        assert_eq!(t.records[2].clinical_values["bicarbonate"], Some(25.5));
        assert_eq!(t.records[2].clinical_values["platelets"], None);
        assert!(t.records[1].death_time.is_some());
    }

    #[test]
    fn missing_subject_column() {
        let text = csv3().replacen("subject_id", "patient", 1);
        match parse_cohort(&text, &dict()) {
            Err(CohortError::MissingColumn(c)) => assert_eq!(c, "subject_id"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_dictionary_column() {
        let mut d = dict();
        d.entries.push(DictionaryEntry {
            name: "fibrinogen".into(),
            unit: "mg/dL".into(),
            expected_range: None,
        });
        assert!(matches!(
            parse_cohort(&csv3(), &d),
            Err(CohortError::MissingColumn(c)) if c == "fibrinogen"
        ));
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let text = csv3().replace(",,40\n", ",abc,40\n");
        match parse_cohort(&text, &dict()) {
            Err(CohortError::Parse { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "bicarbonate");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(parse_cohort("", &dict()), Err(CohortError::EmptyFile)));
        assert!(matches!(parse_cohort(HEADER, &dict()), Err(CohortError::EmptyFile)));
    }

    #[test]
    fn rejects_discharge_before_admission() {
        let text = csv3().replace("2150-01-03T00:00:00", "2149-12-31T00:00:00");
        assert!(matches!(
            parse_cohort(&text, &dict()),
            Err(CohortError::InvalidRecord { row: 1, .. })
        ));
    }

    #[test]
    fn write_then_load_roundtrip() {
        let t = parse_cohort(&csv3(), &dict()).unwrap();
        let mut buf = Vec::new();
        write_cohort(&t, &mut buf).unwrap();
        let back = parse_cohort(std::str::from_utf8(&buf).unwrap(), &dict()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn excludes_minors() {
        let t = table(vec![record("1", "a", 1, 3.0, 17.5), record("2", "b", 1, 3.0, 40.0)]);
        let (out, report) = apply_inclusion(&t, &InclusionCriteria::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out.records[0].subject_id, "2");
        assert_eq!(report.age_out_of_range, 1);
        assert_eq!(report.retained, 1);
    }

    #[test]
    fn age_bounds_are_inclusive() {
        let t = table(vec![record("1", "a", 1, 3.0, 18.0), record("2", "b", 1, 3.0, 90.0)]);
        let (out, _) = apply_inclusion(&t, &InclusionCriteria::default());
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn keeps_earliest_admission() {
        let t = table(vec![
            record("7", "late", 10, 3.0, 50.0),
            record("7", "early", 2, 3.0, 50.0),
            record("8", "x", 5, 3.0, 50.0),
        ]);
        let (out, report) = apply_inclusion(&t, &InclusionCriteria::default());
        let stays: Vec<_> = out.records.iter().map(|r| r.stay_id.as_str()).collect();
        assert_eq!(stays, ["early", "x"]);
        assert_eq!(report.repeat_admission, 1);
    }

    #[test]
    fn same_time_admissions_break_ties_by_stay_id() {
        let t = table(vec![record("7", "b", 2, 3.0, 50.0), record("7", "a", 2, 3.0, 50.0)]);
        let (out, _) = apply_inclusion(&t, &InclusionCriteria::default());
        assert_eq!(out.records[0].stay_id, "a");
    }

    #[test]
    fn short_stay_and_early_death() {
        let mut early = record("2", "b", 1, 3.0, 50.0);
        early.death_time = Some(early.admission_time + chrono::Duration::hours(20));
        let mut exactly_24h = record("3", "c", 1, 3.0, 50.0);
        exactly_24h.death_time = Some(exactly_24h.admission_time + chrono::Duration::hours(24));
        let mut later = record("4", "d", 1, 3.0, 50.0);
        later.death_time = Some(later.admission_time + chrono::Duration::hours(25));
        let t = table(vec![record("1", "a", 1, 0.5, 50.0), early, exactly_24h, later]);
        let (out, report) = apply_inclusion(&t, &InclusionCriteria::default());
        assert_eq!(report.short_icu_stay, 1);
        assert_eq!(report.died_within_24h, 2);
        assert_eq!(out.records[0].subject_id, "4");
    }

    #[test]
    fn reason_order_counts_once() {
        // short stay AND minor AND duplicate: counted as short stay only
        let t = table(vec![record("1", "a", 1, 3.0, 40.0), record("1", "b", 3, 0.2, 10.0)]);
        let (_, report) = apply_inclusion(&t, &InclusionCriteria::default());
        assert_eq!(report.short_icu_stay, 1);
        assert_eq!(report.age_out_of_range, 0);
        assert_eq!(report.repeat_admission, 0);
        assert_eq!(report.excluded() + report.retained, report.input);
    }

    #[test]
    fn all_eligible_is_identity() {
        let t = table(vec![record("1", "a", 1, 3.0, 40.0), record("2", "b", 2, 1.0, 80.0)]);
        let (out, report) = apply_inclusion(&t, &InclusionCriteria::default());
        assert_eq!(out, t);
        assert_eq!(report.excluded(), 0);
    }

    #[test]
    fn outcome_definitions() {
        let mut r = record("1", "a", 1, 3.0, 40.0);
        assert_eq!(derive_outcome(&r, 28.0).unwrap(), SurvivalOutcome::new(28.0, false));
        r.death_time = Some(r.admission_time + chrono::Duration::hours(72));
        assert_eq!(derive_outcome(&r, 28.0).unwrap(), SurvivalOutcome::new(3.0, true));
        r.death_time = Some(r.admission_time + chrono::Duration::days(30));
        assert_eq!(derive_outcome(&r, 28.0).unwrap(), SurvivalOutcome::new(28.0, false));
        r.death_time = None;
        r.last_seen_time = Some(r.admission_time + chrono::Duration::days(10));
        assert_eq!(derive_outcome(&r, 28.0).unwrap(), SurvivalOutcome::new(10.0, false));
        assert_eq!(derive_outcome(&r, 7.0).unwrap(), SurvivalOutcome::new(7.0, false));
    }

    #[test]
    fn death_before_admission_is_invalid() {
        let mut r = record("1", "a", 5, 3.0, 40.0);
        r.death_time = Some(r.admission_time - chrono::Duration::hours(1));
        assert!(matches!(
            derive_outcome(&r, 28.0),
            Err(CohortError::InvalidTimestamp { .. })
        ));
    }

    #[test]
    fn report_serializes_integer_counts() {
        let report = ExclusionReport {
            input: 5,
            retained: 2,
            age_out_of_range: 3,
            ..Default::default()
        };
        let v: serde_json::Value = serde_json::to_value(report).unwrap();
        assert_eq!(v["age_out_of_range"], 3);
        assert_eq!(v["retained"], 2);
    }
}

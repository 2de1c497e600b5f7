use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::io::{parse_f64, parse_flag, read_csv, read_json, write_csv, write_json, write_text};
use super::{PipelineConfig, PipelineError, Result, Stage, StageRecord};
use crate::cohort::{
    apply_inclusion, derive_outcome, infer_dictionary, load_cohort, parse_cohort, save_cohort,
    DataDictionary, SurvivalOutcome,
};
use crate::evaluate::{
    c_index, calibration_curve, pr_curve, roc_curve, welch_t_test, write_calibration_csv,
    write_pr_csv, write_roc_csv, MetricReport, ReportOptions, ReportTable, WelchTest,
};
use crate::explain::{permutation_importance, summary_distribution, AttributionReport};
use crate::model::{
    binarize_outcome, fit_cox, fit_logistic, stratified_split, CoxModel, CoxOptions,
    LogisticModel, LogisticOptions, Provenance,
};
use crate::nomogram::{render_svg, Bundle, GoldenFile};
use crate::preprocess::{
    aps_iii_score, base_excess, drop_high_missingness, knn_impute, percentile_ranges,
    zscore_apply, zscore_fit_transform, ApsIiiInput, FeatureMatrix, NormStats,
};
use crate::resample::smote_augment;
use crate::select::{rfe, select_k_best, vif, FeatureRanking};
use crate::stats;

pub const COHORT: &str = "cohort.csv";
pub const DICTIONARY: &str = "dictionary.json";
pub const COHORT_FILTERED: &str = "cohort_filtered.csv";
pub const EXCLUSIONS: &str = "exclusions.json";
pub const FEATURES: &str = "features.csv";
pub const FEATURE_INFO: &str = "features.json";
pub const OUTCOMES: &str = "outcomes.csv";
pub const SPLIT: &str = "split.json";
pub const NORM_STATS: &str = "norm_stats.json";
pub const BASELINE: &str = "baseline.json";
pub const SELECTION: &str = "selection.json";
pub const AUGMENTED: &str = "train_augmented.csv";
pub const COX: &str = "cox.json";
pub const METRICS: &str = "metrics.json";
pub const METRICS_TEXT: &str = "metrics.txt";
pub const EXPLAIN: &str = "explain.json";
pub const BUNDLE: &str = "bundle.json";
pub const GOLDEN: &str = "golden.json";

pub fn model_file(h: u32) -> String {
    format!("model_{h}d.json")
}

pub fn svg_file(h: u32) -> String {
    format!("nomogram_{h}d.svg")
}

/// Feature names and units persisted next to `features.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub names: Vec<String>,
    pub units: Vec<String>,
    /// Removed for excess missingness.
    pub dropped: Vec<String>,
    /// Appended derived scores.
    pub derived: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    /// Horizon of the label used for stratification.
    pub label_horizon: u32,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Train/test comparison of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub feature: String,
    pub unit: String,
    pub train_mean: f64,
    pub train_sd: f64,
    pub test_mean: f64,
    pub test_sd: f64,
    pub welch: Option<WelchTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub label_horizon: u32,
    pub k_used: usize,
    pub selected: Vec<String>,
    pub f_test: FeatureRanking,
    pub rfe: FeatureRanking,
    pub vif: Option<FeatureRanking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxMetrics {
    pub c_index: f64,
    /// Discrimination of `1 - S(h | x)` at each horizon.
    pub reports: Vec<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub logistic: Vec<MetricReport>,
    pub cox: CoxMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonExplanation {
    pub horizon_days: u32,
    pub permutation: AttributionReport,
    /// Features by mean |linear attribution| on the test set.
    pub attribution_ranking: Vec<String>,
    pub attribution_mean_abs: Vec<f64>,
}

/// Stage context: configuration, output paths and error tagging.
pub(crate) struct Ctx<'a> {
    pub cfg: &'a PipelineConfig,
    pub stage: Stage,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.paths.output_dir.join(name)
    }

    fn err(&self, e: impl Display) -> PipelineError {
        PipelineError::Stage {
            stage: self.stage.name(),
            message: e.to_string(),
        }
    }

    fn ok<T, E: Display>(&self, r: std::result::Result<T, E>) -> Result<T> {
        r.map_err(|e| self.err(e))
    }

    fn seed(&self) -> u64 {
        self.cfg.stage_seed(self.stage.name())
    }

    fn record(&self, rows_in: usize, rows_out: usize, cols_out: usize) -> StageRecord {
        StageRecord {
            stage: self.stage.name().to_string(),
            seed: self.seed(),
            rows_in,
            rows_out,
            cols_out,
            outputs: Vec::new(),
            shapes: BTreeMap::new(),
            notes: BTreeMap::new(),
        }
    }

    fn dictionary(&self) -> Result<DataDictionary> {
        self.ok(DataDictionary::load_json(&self.path(DICTIONARY)))
    }

    fn features(&self) -> Result<(Vec<String>, FeatureMatrix)> {
        let info: FeatureInfo = self.ok(read_json(&self.path(FEATURE_INFO)))?;
        let path = self.path(FEATURES);
        let (header, rows) = self.ok(read_csv(&path))?;
        if header.len() != info.names.len() + 1 || header[1..] != info.names[..] {
            return Err(self.err(format!("{FEATURES} header does not match {FEATURE_INFO}")));
        }
        let mut ids = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            ids.push(row[0].clone());
            values.push(
                row[1..]
                    .iter()
                    .map(|c| parse_f64(&path, i, c))
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| self.err(e))?,
            );
        }
        Ok((ids, FeatureMatrix::from_rows(&values, info.names, info.units)))
    }

    fn outcomes(&self, ids: &[String]) -> Result<Vec<SurvivalOutcome>> {
        let path = self.path(OUTCOMES);
        let (_, rows) = self.ok(read_csv(&path))?;
        if rows.len() != ids.len() || rows.iter().zip(ids).any(|(r, id)| &r[0] != id) {
            return Err(self.err(format!("{OUTCOMES} rows do not match {FEATURES}")));
        }
        rows.iter()
            .enumerate()
            .map(|(i, r)| {
                Ok(SurvivalOutcome::new(
                    self.ok(parse_f64(&path, i, &r[1]))?,
                    self.ok(parse_flag(&path, i, &r[2]))?,
                ))
            })
            .collect()
    }

    fn split(&self, ids: &[String]) -> Result<(SplitFile, Vec<usize>, Vec<usize>)> {
        let split: SplitFile = self.ok(read_json(&self.path(SPLIT)))?;
        let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let rows = |list: &[String]| -> Result<Vec<usize>> {
            list.iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| self.err(format!("subject `{id}` in {SPLIT} not in {FEATURES}")))
                })
                .collect()
        };
        let train = rows(&split.train)?;
        let test = rows(&split.test)?;
        Ok((split, train, test))
    }

    fn norm_stats(&self) -> Result<NormStats> {
        self.ok(read_json(&self.path(NORM_STATS)))
    }

    fn selection(&self) -> Result<SelectionFile> {
        self.ok(read_json(&self.path(SELECTION)))
    }

    fn models(&self) -> Result<Vec<LogisticModel>> {
        self.cfg
            .horizons
            .iter()
            .map(|&h| self.ok(read_json(&self.path(&model_file(h)))))
            .collect()
    }

    fn label_horizon(&self) -> u32 {
        *self.cfg.horizons.last().expect("validated")
    }

    /// Raw feature rows, outcomes and train/test row indices.
    fn dataset(&self) -> Result<Dataset> {
        let (ids, m) = self.features()?;
        let outcomes = self.outcomes(&ids)?;
        let (_, train, test) = self.split(&ids)?;
        Ok(Dataset {
            m,
            outcomes,
            train,
            test,
        })
    }
}

struct Dataset {
    m: FeatureMatrix,
    outcomes: Vec<SurvivalOutcome>,
    train: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    fn outcomes_of(&self, rows: &[usize]) -> Vec<SurvivalOutcome> {
        rows.iter().map(|&i| self.outcomes[i]).collect()
    }
}

fn subset_stats(stats: &NormStats, names: &[String]) -> std::result::Result<NormStats, String> {
    let picked = names
        .iter()
        .map(|n| stats.get(n).ok_or_else(|| format!("no normalization stats for `{n}`")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(NormStats {
        names: names.to_vec(),
        stats: picked,
    })
}

fn num(v: f64) -> String {
    v.to_string()
}

pub(crate) fn ingest(cx: &Ctx) -> Result<StageRecord> {
    let input = &cx.cfg.paths.input;
    let bytes = cx.ok(std::fs::read(input).map_err(|e| format!("{}: {e}", input.display())))?;
    let text = cx.ok(String::from_utf8(bytes.clone()))?;
    let dict = match &cx.cfg.paths.dictionary {
        Some(p) => cx.ok(DataDictionary::load_json(p))?,
        None => cx.ok(infer_dictionary(&text))?,
    };
    if dict.is_empty() {
        return Err(cx.err("no clinical feature columns"));
    }
    let table = cx.ok(parse_cohort(&text, &dict))?;
    cx.ok(save_cohort(&table, &cx.path(COHORT)))?;
    cx.ok(dict.save_json(&cx.path(DICTIONARY)))?;
    let mut rec = cx.record(table.len(), table.len(), dict.len());
    rec.outputs = vec![COHORT.into(), DICTIONARY.into()];
    rec.notes.insert("input_sha256".into(), json!(crate::sha256_hex(&bytes)));
    rec.shapes.insert("rows_input".into(), table.len());
    rec.shapes.insert("features_input".into(), dict.len());
    Ok(rec)
}

pub(crate) fn filter(cx: &Ctx) -> Result<StageRecord> {
    let dict = cx.dictionary()?;
    let table = cx.ok(load_cohort(&cx.path(COHORT), &dict))?;
    let (kept, report) = apply_inclusion(&table, &cx.cfg.inclusion);
    if kept.is_empty() {
        return Err(cx.err("no records pass the inclusion criteria"));
    }
    cx.ok(save_cohort(&kept, &cx.path(COHORT_FILTERED)))?;
    cx.ok(write_json(&cx.path(EXCLUSIONS), &report))?;
    let mut rec = cx.record(table.len(), kept.len(), dict.len());
    rec.outputs = vec![COHORT_FILTERED.into(), EXCLUSIONS.into()];
    rec.notes.insert("exclusions".into(), json!(report));
    rec.shapes.insert("rows_included".into(), kept.len());
    Ok(rec)
}

fn column(cx: &Ctx, m: &FeatureMatrix, name: &str, purpose: &str) -> Result<Vec<f64>> {
    m.column_index(name)
        .map(|j| m.column(j))
        .ok_or_else(|| cx.err(format!("{purpose} needs column `{name}`, which is absent or was dropped")))
}

fn add_derived(cx: &Ctx, mut m: FeatureMatrix) -> Result<(FeatureMatrix, Vec<String>)> {
    let mut derived = Vec::new();
    let mut append = |m: &mut FeatureMatrix, name: &str, unit: &str, values: Vec<f64>| -> Result<()> {
        if m.column_index(name).is_some() {
            return Err(cx.err(format!("derived column `{name}` already exists")));
        }
        *m = m.with_column(name, unit, &values);
        derived.push(name.to_string());
        Ok(())
    };
    if let Some(be) = &cx.cfg.derived.base_excess {
        let hco3 = column(cx, &m, &be.hco3, "base excess")?;
        let hb = column(cx, &m, &be.hb, "base excess")?;
        let ph = column(cx, &m, &be.ph, "base excess")?;
        let values = (0..m.n_rows())
            .map(|i| {
                base_excess(hco3[i], hb[i], ph[i]).map_err(|e| cx.err(format!("row {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        append(&mut m, "base_excess", "mEq/L", values)?;
    }
    if let Some(aps) = &cx.cfg.derived.aps_iii {
        let table = aps.weights.clone().unwrap_or_default();
        cx.ok(table.validate())?;
        let sources = aps
            .columns
            .iter()
            .map(|(var, name)| Ok((*var, column(cx, &m, name, "APS III")?)))
            .collect::<Result<Vec<_>>>()?;
        let values = (0..m.n_rows())
            .map(|i| {
                let input = ApsIiiInput {
                    values: sources.iter().map(|(v, col)| (*v, col[i])).collect(),
                };
                aps_iii_score(&input, &table)
            })
            .collect();
        append(&mut m, "aps_iii", "points", values)?;
    }
    Ok((m, derived))
}

pub(crate) fn preprocess(cx: &Ctx) -> Result<StageRecord> {
    let dict = cx.dictionary()?;
    let table = cx.ok(load_cohort(&cx.path(COHORT_FILTERED), &dict))?;
    let outcomes = table
        .records
        .iter()
        .map(|r| derive_outcome(r, cx.cfg.followup_days))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| cx.err(e))?;
    let raw = FeatureMatrix::from_cohort(&table);
    let (kept, dropped) = cx.ok(drop_high_missingness(&raw, cx.cfg.missing_threshold))?;
    if kept.n_cols() == 0 {
        return Err(cx.err("every feature exceeds the missingness threshold"));
    }
    let imputed = cx.ok(knn_impute(&kept, cx.cfg.knn_k))?;
    let (m, derived) = add_derived(cx, imputed)?;

    let ids: Vec<String> = table.records.iter().map(|r| r.subject_id.clone()).collect();
    let mut header = vec!["subject_id".to_string()];
    header.extend(m.names.iter().cloned());
    cx.ok(write_csv(
        &cx.path(FEATURES),
        &header,
        ids.iter().enumerate().map(|(i, id)| {
            let mut row = vec![id.clone()];
            row.extend(m.row(i).into_iter().map(num));
            row
        }),
    ))?;
    cx.ok(write_csv(
        &cx.path(OUTCOMES),
        &["subject_id".into(), "time_days".into(), "event".into()],
        ids.iter().zip(&outcomes).map(|(id, o)| {
            vec![id.clone(), num(o.time_days), u8::from(o.event).to_string()]
        }),
    ))?;
    let info = FeatureInfo {
        names: m.names.clone(),
        units: m.units.clone(),
        dropped: dropped.clone(),
        derived: derived.clone(),
    };
    cx.ok(write_json(&cx.path(FEATURE_INFO), &info))?;

    let mut rec = cx.record(table.len(), m.n_rows(), m.n_cols());
    rec.outputs = vec![FEATURES.into(), FEATURE_INFO.into(), OUTCOMES.into()];
    rec.notes.insert("dropped".into(), json!(dropped));
    rec.notes.insert("derived".into(), json!(derived));
    rec.notes.insert(
        "events_by_horizon".into(),
        json!(cx
            .cfg
            .horizons
            .iter()
            .map(|&h| (h.to_string(), binarize_outcome(&outcomes, h as f64).iter().filter(|&&l| l).count()))
            .collect::<BTreeMap<_, _>>()),
    );
    rec.shapes.insert("features_after_missingness".into(), kept.n_cols());
    rec.shapes.insert("features_preprocessed".into(), m.n_cols());
    Ok(rec)
}

pub(crate) fn split(cx: &Ctx) -> Result<StageRecord> {
    let (ids, m) = cx.features()?;
    let outcomes = cx.outcomes(&ids)?;
    let h = cx.label_horizon();
    let labels = binarize_outcome(&outcomes, h as f64);
    let (train, test) = cx.ok(stratified_split(&labels, cx.cfg.split_ratio, cx.seed()))?;
    if train.is_empty() || test.is_empty() {
        return Err(cx.err("split leaves an empty partition"));
    }
    let pick = |rows: &[usize]| rows.iter().map(|&i| ids[i].clone()).collect::<Vec<_>>();
    let file = SplitFile {
        label_horizon: h,
        train: pick(&train),
        test: pick(&test),
    };
    cx.ok(write_json(&cx.path(SPLIT), &file))?;

    let train_m = m.select_rows(&train);
    let test_m = m.select_rows(&test);
    let z = cx.ok(zscore_fit_transform(&train_m))?;
    cx.ok(write_json(&cx.path(NORM_STATS), &z.named_stats().expect("fit sets stats")))?;

    let baseline: Vec<BaselineRow> = (0..m.n_cols())
        .map(|j| {
            let a = train_m.column(j);
            let b = test_m.column(j);
            BaselineRow {
                feature: m.names[j].clone(),
                unit: m.units[j].clone(),
                train_mean: stats::mean(&a),
                train_sd: stats::sample_sd(&a),
                test_mean: stats::mean(&b),
                test_sd: stats::sample_sd(&b),
                welch: welch_t_test(&a, &b).ok(),
            }
        })
        .collect();
    cx.ok(write_json(&cx.path(BASELINE), &baseline))?;

    let mut rec = cx.record(ids.len(), ids.len(), m.n_cols());
    rec.outputs = vec![SPLIT.into(), NORM_STATS.into(), BASELINE.into()];
    let events = |rows: &[usize]| rows.iter().filter(|&&i| labels[i]).count();
    rec.notes.insert("events_train".into(), json!(events(&train)));
    rec.notes.insert("events_test".into(), json!(events(&test)));
    rec.shapes.insert("rows_train".into(), train.len());
    rec.shapes.insert("rows_test".into(), test.len());
    Ok(rec)
}

pub(crate) fn select(cx: &Ctx) -> Result<StageRecord> {
    let data = cx.dataset()?;
    let stats = cx.norm_stats()?;
    let sel = &cx.cfg.select;
    for name in sel.include.iter().chain(&sel.exclude) {
        if data.m.column_index(name).is_none() {
            return Err(cx.err(format!("unknown feature `{name}` in include/exclude list")));
        }
    }
    let z = cx.ok(zscore_apply(&data.m.select_rows(&data.train), &stats))?;
    let h = cx.label_horizon();
    let labels = binarize_outcome(&data.outcomes_of(&data.train), h as f64);

    let candidates: Vec<String> = z
        .names
        .iter()
        .filter(|n| !sel.exclude.contains(n))
        .cloned()
        .collect();
    if candidates.is_empty() {
        return Err(cx.err("every feature is excluded"));
    }
    let k = sel.k_best.min(candidates.len());
    let zc = cx.ok(z.select_named(&candidates))?;
    let f_test = cx.ok(select_k_best(&zc, &labels, k))?;
    let mut pool = f_test.names.clone();
    for name in &sel.include {
        if !pool.contains(name) {
            pool.push(name.clone());
        }
    }
    let zp = cx.ok(z.select_named(&pool))?;
    let ranking = cx.ok(rfe(&zp, &labels, sel.n_target, &sel.include, &LogisticOptions::default()))?;
    let selected = ranking.names.clone();
    let vif_ranking = if selected.len() >= 2 {
        let v = cx.ok(vif(&cx.ok(z.select_named(&selected))?))?;
        if let Some((name, score)) = v.names.iter().zip(&v.scores).find(|(_, s)| **s >= sel.vif_max) {
            return Err(cx.err(format!(
                "selected feature `{name}` has VIF {score:.3}, at or above the limit {}",
                sel.vif_max
            )));
        }
        Some(v)
    } else {
        None
    };
    let file = SelectionFile {
        label_horizon: h,
        k_used: k,
        selected: selected.clone(),
        f_test,
        rfe: ranking,
        vif: vif_ranking,
    };
    cx.ok(write_json(&cx.path(SELECTION), &file))?;
    let mut rec = cx.record(data.train.len(), data.train.len(), selected.len());
    rec.outputs = vec![SELECTION.into()];
    rec.notes.insert("selected".into(), json!(selected));
    rec.shapes.insert("features_k_best".into(), k);
    rec.shapes.insert("features_selected".into(), selected.len());
    Ok(rec)
}

/// Selected training features in the training z-space, with their stats
/// attached.
fn train_z(cx: &Ctx, data: &Dataset, selected: &[String]) -> Result<FeatureMatrix> {
    let stats = cx.ok(subset_stats(&cx.norm_stats()?, selected))?;
    let m = cx.ok(data.m.select_rows(&data.train).select_named(selected))?;
    cx.ok(zscore_apply(&m, &stats))
}

pub(crate) fn resample(cx: &Ctx) -> Result<StageRecord> {
    let data = cx.dataset()?;
    let selection = cx.selection()?;
    let z = train_z(cx, &data, &selection.selected)?;
    let outcomes = data.outcomes_of(&data.train);
    let y: Vec<f64> = outcomes.iter().map(|o| o.time_days).collect();
    let mut smote = cx.cfg.smote.clone();
    smote.seed = cx.seed();
    let aug = cx.ok(smote_augment(&z, &y, &smote))?;

    let n = aug.n_original();
    let mut events: Vec<bool> = outcomes.iter().map(|o| o.event).collect();
    let mut times = y.clone();
    let mut interval_draws = vec![0usize; smote.weights.len()];
    for (s, origin) in aug.origins.iter().enumerate() {
        let votes = origin.neighbors.iter().filter(|&&r| events[r]).count();
        events.push(2 * votes > origin.neighbors.len());
        times.push(aug.y[n + s].clamp(1e-6, cx.cfg.followup_days));
        interval_draws[smote.interval(y[origin.seed])] += 1;
    }

    let mut header = aug.x.names.clone();
    header.extend(["time_days".into(), "event".into(), "synthetic".into()]);
    cx.ok(write_csv(
        &cx.path(AUGMENTED),
        &header,
        (0..aug.y.len()).map(|i| {
            let mut row: Vec<String> = aug.x.row(i).into_iter().map(num).collect();
            row.push(num(times[i]));
            row.push(u8::from(events[i]).to_string());
            row.push(aug.is_synthetic(i).to_string());
            row
        }),
    ))?;

    let mut rec = cx.record(n, aug.y.len(), aug.x.n_cols());
    rec.outputs = vec![AUGMENTED.into()];
    rec.notes.insert("delta_used".into(), json!(aug.delta_used));
    rec.notes.insert("interval_draws".into(), json!(interval_draws));
    rec.shapes.insert("rows_train".into(), n);
    rec.shapes.insert("n_synthetic".into(), aug.origins.len());
    rec.shapes.insert("rows_after_smote".into(), aug.y.len());
    Ok(rec)
}

struct AugmentedTrain {
    x: FeatureMatrix,
    outcomes: Vec<SurvivalOutcome>,
    synthetic: Vec<bool>,
}

fn load_augmented(cx: &Ctx, units: &BTreeMap<String, String>) -> Result<AugmentedTrain> {
    let path = cx.path(AUGMENTED);
    let (header, rows) = cx.ok(read_csv(&path))?;
    if header.len() < 4 || header[header.len() - 3..] != ["time_days", "event", "synthetic"] {
        return Err(cx.err(format!("{AUGMENTED} has an unexpected header")));
    }
    let d = header.len() - 3;
    let names = header[..d].to_vec();
    let stats = cx.ok(subset_stats(&cx.norm_stats()?, &names))?;
    let mut values = Vec::with_capacity(rows.len());
    let mut outcomes = Vec::with_capacity(rows.len());
    let mut synthetic = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        values.push(
            r[..d]
                .iter()
                .map(|c| parse_f64(&path, i, c))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| cx.err(e))?,
        );
        outcomes.push(SurvivalOutcome::new(
            cx.ok(parse_f64(&path, i, &r[d]))?,
            cx.ok(parse_flag(&path, i, &r[d + 1]))?,
        ));
        synthetic.push(cx.ok(parse_flag(&path, i, &r[d + 2]))?);
    }
    let unit_list = names.iter().map(|n| units.get(n).cloned().unwrap_or_default()).collect();
    let mut x = FeatureMatrix::from_rows(&values, names, unit_list);
    x.norm_stats = Some(stats.stats);
    Ok(AugmentedTrain {
        x,
        outcomes,
        synthetic,
    })
}

pub(crate) fn train(cx: &Ctx) -> Result<StageRecord> {
    let info: FeatureInfo = cx.ok(read_json(&cx.path(FEATURE_INFO)))?;
    let units: BTreeMap<String, String> = info.names.into_iter().zip(info.units).collect();
    let aug = load_augmented(cx, &units)?;
    let original: Vec<usize> = (0..aug.synthetic.len()).filter(|&i| !aug.synthetic[i]).collect();
    let orig_x = aug.x.select_rows(&original);
    let orig_outcomes: Vec<SurvivalOutcome> = original.iter().map(|&i| aug.outcomes[i]).collect();
    let ranges = percentile_ranges(&orig_x, 0.01, 0.99);
    let provenance = Provenance {
        config_hash: cx.cfg.hash(),
        seed: cx.cfg.seed,
    };

    let mut rec = cx.record(aug.synthetic.len(), aug.synthetic.len(), aug.x.n_cols());
    for &h in &cx.cfg.horizons {
        let labels = binarize_outcome(&aug.outcomes, h as f64);
        let mut model = fit_logistic(&aug.x, &labels, &LogisticOptions::default())
            .map_err(|e| cx.err(format!("{h}-day model: {e}")))?
            .with_horizon(h);
        model.reference_ranges = ranges.clone();
        model.provenance = Some(provenance.clone());
        cx.ok(write_json(&cx.path(&model_file(h)), &model))?;
        rec.outputs.push(model_file(h));
        rec.notes.insert(format!("iterations_{h}d"), json!(model.fit_meta.iterations));
    }
    let mut cox: CoxModel = fit_cox(&orig_x, &orig_outcomes, &CoxOptions::default())
        .map_err(|e| cx.err(format!("Cox model: {e}")))?;
    cox.provenance = Some(provenance);
    cx.ok(write_json(&cx.path(COX), &cox))?;
    rec.outputs.push(COX.into());
    rec.shapes.insert("rows_fit_logistic".into(), aug.synthetic.len());
    rec.shapes.insert("rows_fit_cox".into(), original.len());
    Ok(rec)
}

fn write_with<F>(cx: &Ctx, name: &str, f: F) -> Result<()>
where
    F: FnOnce(std::fs::File) -> std::result::Result<(), crate::evaluate::EvalError>,
{
    let path = cx.path(name);
    let file = cx.ok(std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display())))?;
    cx.ok(f(file))
}

pub(crate) fn evaluate(cx: &Ctx) -> Result<StageRecord> {
    let data = cx.dataset()?;
    let test_m = data.m.select_rows(&data.test);
    let test_outcomes = data.outcomes_of(&data.test);
    let ev = &cx.cfg.evaluate;
    let opts = |model: &str, h: u32| ReportOptions {
        threshold: ev.threshold,
        replicates: ev.bootstrap_replicates,
        level: ev.ci_level,
        seed: cx.cfg.stage_seed(&format!("evaluate/{model}/{h}")),
    };

    let mut rec = cx.record(data.test.len(), data.test.len(), 0);
    let mut logistic = Vec::new();
    for model in cx.models()? {
        let h = model.horizon_days;
        let scores = cx.ok(model.predict_matrix(&test_m))?;
        let labels = binarize_outcome(&test_outcomes, h as f64);
        let report = MetricReport::compute("logistic", h, &scores, &labels, &opts("logistic", h))
            .map_err(|e| cx.err(format!("{h}-day test set: {e}")))?;
        let roc = cx.ok(roc_curve(&scores, &labels))?;
        let pr = cx.ok(pr_curve(&scores, &labels))?;
        let cal = cx.ok(calibration_curve(&scores, &labels, ev.calibration_bins))?;
        for (name, result) in [
            (format!("roc_{h}d.csv"), write_with(cx, &format!("roc_{h}d.csv"), |f| write_roc_csv(&roc, f))),
            (format!("pr_{h}d.csv"), write_with(cx, &format!("pr_{h}d.csv"), |f| write_pr_csv(&pr, f))),
            (
                format!("calibration_{h}d.csv"),
                write_with(cx, &format!("calibration_{h}d.csv"), |f| write_calibration_csv(&cal, f)),
            ),
        ] {
            result?;
            rec.outputs.push(name);
        }
        logistic.push(report);
    }

    let cox: CoxModel = cx.ok(read_json(&cx.path(COX)))?;
    let risk = cx.ok(cox.risk_scores(&test_m))?;
    let c = cx.ok(c_index(&risk, &test_outcomes))?;
    let mut cox_reports = Vec::new();
    for &h in &cx.cfg.horizons {
        let base = cox.cumulative_hazard(h as f64);
        let scores: Vec<f64> = risk.iter().map(|eta| 1.0 - (-base * eta.exp()).exp()).collect();
        let labels = binarize_outcome(&test_outcomes, h as f64);
        cox_reports.push(
            MetricReport::compute("cox", h, &scores, &labels, &opts("cox", h))
                .map_err(|e| cx.err(format!("{h}-day Cox evaluation: {e}")))?,
        );
    }
    let metrics = MetricsFile {
        logistic,
        cox: CoxMetrics {
            c_index: c,
            reports: cox_reports,
        },
    };
    cx.ok(write_json(&cx.path(METRICS), &metrics))?;
    let mut all = metrics.logistic.clone();
    all.extend(metrics.cox.reports.iter().cloned());
    let text = format!("{}\nCox C-index (test): {:.4}\n", ReportTable(&all), c);
    cx.ok(write_text(&cx.path(METRICS_TEXT), &text))?;
    rec.outputs.extend([METRICS.into(), METRICS_TEXT.into()]);
    rec.notes.insert(
        "auroc".into(),
        json!(metrics
            .logistic
            .iter()
            .map(|r| (r.horizon_days.to_string(), r.auroc))
            .collect::<BTreeMap<_, _>>()),
    );
    rec.notes.insert("c_index".into(), json!(c));
    Ok(rec)
}

pub(crate) fn explain(cx: &Ctx) -> Result<StageRecord> {
    let data = cx.dataset()?;
    let test_m = data.m.select_rows(&data.test);
    let train_m = data.m.select_rows(&data.train);
    let test_outcomes = data.outcomes_of(&data.test);
    let mut rec = cx.record(data.test.len(), data.test.len(), 0);
    let mut out = Vec::new();
    for model in cx.models()? {
        let h = model.horizon_days;
        let labels = binarize_outcome(&test_outcomes, h as f64);
        let seed = cx.cfg.stage_seed(&format!("explain/{h}"));
        let permutation = cx.ok(permutation_importance(&model, &test_m, &labels, cx.cfg.explain.n_repeats, seed))?;
        let summary = cx.ok(summary_distribution(&model, &test_m, &train_m))?;
        let name = format!("attributions_{h}d.csv");
        let path = cx.path(&name);
        let file = cx.ok(std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display())))?;
        cx.ok(summary.write_csv(file))?;
        rec.outputs.push(name);
        let mean_abs = summary
            .ranking
            .iter()
            .map(|n| {
                let j = summary.feature_names.iter().position(|f| f == n).expect("ranked name");
                summary.mean_abs[j]
            })
            .collect();
        out.push(HorizonExplanation {
            horizon_days: h,
            permutation,
            attribution_ranking: summary.ranking,
            attribution_mean_abs: mean_abs,
        });
    }
    cx.ok(write_json(&cx.path(EXPLAIN), &out))?;
    rec.outputs.push(EXPLAIN.into());
    Ok(rec)
}

pub(crate) fn nomogram(cx: &Ctx) -> Result<StageRecord> {
    let models = cx.models()?;
    let bundle = cx.ok(Bundle::from_models(&models))?;
    let json = bundle.to_json();
    cx.ok(write_text(&cx.path(BUNDLE), &json))?;
    let mut rec = cx.record(0, 0, models.first().map_or(0, |m| m.n_features()));
    rec.outputs.push(BUNDLE.into());
    for h in &bundle.horizons {
        let name = svg_file(h.horizon_days);
        cx.ok(write_text(&cx.path(&name), &render_svg(&h.nomogram)))?;
        rec.outputs.push(name);
        rec.notes.insert(
            format!("prob_map_len_{}d", h.horizon_days),
            json!(h.nomogram.prob_map.len()),
        );
    }
    let golden = cx.ok(GoldenFile::generate(&bundle, &json, cx.cfg.explain.golden_cases, cx.seed()))?;
    cx.ok(write_text(&cx.path(GOLDEN), &golden.to_json()))?;
    rec.outputs.push(GOLDEN.into());
    Ok(rec)
}

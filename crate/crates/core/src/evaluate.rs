//! Discrimination, calibration and group-comparison statistics.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::cohort::SurvivalOutcome;
use crate::rng::stream_rng;
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("no positive labels")]
    NoPositives,
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            what: "labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    Ok(())
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

fn require_both(labels: &[bool]) -> Result<(usize, usize)> {
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((pos, neg))
}

/// Indices sorted by score descending, stable.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Runs of equal scores in `order`, as `[start, end)`.
fn tie_runs(scores: &[f64], order: &[usize]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        runs.push((start, end));
        start = end;
    }
    runs
}

/// Area under the ROC curve by the Mann-Whitney rank sum, ties counted as
/// one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, neg) = require_both(labels)?;
    let order = descending(scores);
    // twice the Mann-Whitney U, kept integral
    let mut twice_u: u128 = 0;
    let mut neg_below = neg as u128;
    for (s, e) in tie_runs(scores, &order) {
        let run = &order[s..e];
        let p = run.iter().filter(|&&i| labels[i]).count() as u128;
        let q = run.len() as u128 - p;
        neg_below -= q;
        twice_u += p * (2 * neg_below + q);
    }
    Ok(twice_u as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Average precision: `sum_k (R_k - R_{k-1}) P_k` over distinct score
/// thresholds, highest first.
pub fn pr_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(EvalError::NoPositives);
    }
    Ok(pr_curve(scores, labels)?
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * w[1].precision)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// ROC points for every distinct threshold (predict positive when
/// `score >= threshold`), starting at (0, 0) with threshold +inf.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    check_lengths(scores, labels)?;
    let (pos, neg) = require_both(labels)?;
    let order = descending(scores);
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (s, e) in tie_runs(scores, &order) {
        for &i in &order[s..e] {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        out.push(RocPoint {
            threshold: scores[order[s]],
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    Ok(out)
}

/// Precision-recall points per distinct threshold, starting at recall 0 with
/// precision 1.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    check_lengths(scores, labels)?;
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(EvalError::NoPositives);
    }
    let order = descending(scores);
    let mut out = vec![PrPoint {
        threshold: f64::INFINITY,
        recall: 0.0,
        precision: 1.0,
    }];
    let (mut tp, mut seen) = (0usize, 0usize);
    for (s, e) in tie_runs(scores, &order) {
        for &i in &order[s..e] {
            tp += labels[i] as usize;
            seen += 1;
        }
        out.push(PrPoint {
            threshold: scores[order[s]],
            recall: tp as f64 / pos as f64,
            precision: tp as f64 / seen as f64,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auroc,
    PrAuc,
}

impl Metric {
    pub fn compute(self, scores: &[f64], labels: &[bool]) -> Result<f64> {
        match self {
            Metric::Auroc => auroc(scores, labels),
            Metric::PrAuc => pr_auc(scores, labels),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub replicates: usize,
    /// Replicates drawn again because the metric was undefined on them.
    pub redraws: usize,
}

/// Percentile bootstrap interval. Each replicate resamples positives and
/// negatives separately with replacement, keeping the class counts, and uses
/// its own RNG stream so the result does not depend on thread count.
pub fn bootstrap_ci(
    scores: &[f64],
    labels: &[bool],
    metric: Metric,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi> {
    check_lengths(scores, labels)?;
    require_both(labels)?;
    if replicates == 0 {
        return Err(EvalError::InvalidArgument("replicates must be positive".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::InvalidArgument(format!("level must be in (0, 1), got {level}")));
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let results: Vec<(f64, usize)> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let mut redraws = 0;
            loop {
                let mut s = Vec::with_capacity(labels.len());
                let mut l = Vec::with_capacity(labels.len());
                for group in [&positives, &negatives] {
                    for _ in 0..group.len() {
                        let i = group[rng.random_range(0..group.len())];
                        s.push(scores[i]);
                        l.push(labels[i]);
                    }
                }
                match metric.compute(&s, &l) {
                    Ok(v) => return (v, redraws),
                    Err(_) => redraws += 1,
                }
            }
        })
        .collect();
    let redraws: usize = results.iter().map(|r| r.1).sum();
    if redraws > 0 {
        log::info!("bootstrap redrew {redraws} degenerate replicates");
    }
    let mut values: Vec<f64> = results.into_iter().map(|r| r.0).collect();
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        lower: stats::quantile_sorted(&values, alpha),
        upper: stats::quantile_sorted(&values, 1.0 - alpha),
        level,
        replicates,
        redraws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    /// `None` when nothing is predicted positive.
    pub ppv: Option<f64>,
    /// `None` when nothing is predicted negative.
    pub npv: Option<f64>,
}

/// 2×2 table with `score >= threshold` predicted positive.
pub fn confusion_at(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Confusion> {
    check_lengths(scores, labels)?;
    require_both(labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    Ok(Confusion {
        threshold,
        tp,
        fp,
        tn,
        fn_,
        sensitivity: tp as f64 / (tp + fn_) as f64,
        specificity: tn as f64 / (tn + fp) as f64,
        ppv: ratio(tp, fp),
        npv: ratio(tn, fn_),
    })
}

/// Fenwick tree of counts over rank positions.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Self(vec![0; n + 1])
    }

    fn add(&mut self, pos: usize) {
        let mut i = pos + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count at positions `< pos`.
    fn prefix(&self, pos: usize) -> u64 {
        let mut i = pos;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's concordance index.
///
/// A pair is comparable when subject `i` has an event at `t_i` and subject
/// `j` either outlives it (`t_j > t_i`) or is censored at the same time. It
/// is concordant when `risk_i > risk_j`; equal risks count one half.
pub fn c_index(risk: &[f64], outcomes: &[SurvivalOutcome]) -> Result<f64> {
    if risk.len() != outcomes.len() {
        return Err(EvalError::LengthMismatch {
            what: "outcomes",
            expected: risk.len(),
            got: outcomes.len(),
        });
    }
    let n = risk.len();
    let mut sorted_risk = risk.to_vec();
    sorted_risk.sort_by(f64::total_cmp);
    sorted_risk.dedup();
    let rank = |r: f64| sorted_risk.partition_point(|&v| v < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| outcomes[b].time_days.total_cmp(&outcomes[a].time_days));
    let mut tree = Fenwick::new(sorted_risk.len());
    let mut later = 0u64;
    let (mut twice_concordant, mut comparable) = (0u64, 0u64);
    let mut start = 0;
    while start < n {
        let t = outcomes[order[start]].time_days;
        let mut end = start + 1;
        while end < n && outcomes[order[end]].time_days == t {
            end += 1;
        }
        let group = &order[start..end];
        let mut censored_here: Vec<f64> = group
            .iter()
            .filter(|&&i| !outcomes[i].event)
            .map(|&i| risk[i])
            .collect();
        censored_here.sort_by(f64::total_cmp);
        for &i in group.iter().filter(|&&i| outcomes[i].event) {
            let r = rank(risk[i]);
            let less = tree.prefix(r);
            let less_eq = tree.prefix(r + 1);
            let c_less = censored_here.partition_point(|&v| v < risk[i]) as u64;
            let c_less_eq = censored_here.partition_point(|&v| v <= risk[i]) as u64;
            comparable += later + censored_here.len() as u64;
            twice_concordant += 2 * (less + c_less) + (less_eq - less) + (c_less_eq - c_less);
        }
        for &i in group {
            tree.add(rank(risk[i]));
        }
        later += group.len() as u64;
        start = end;
    }
    if comparable == 0 {
        return Err(EvalError::NoComparablePairs);
    }
    Ok(twice_concordant as f64 / (2.0 * comparable as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch's two-sample t test with Satterthwaite degrees of freedom and a
/// two-sided p-value.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::DegenerateSample("each sample needs at least 2 values".into()));
    }
    let (va, vb) = (stats::sample_variance(a), stats::sample_variance(b));
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    if !(sa + sb > 0.0) {
        return Err(EvalError::DegenerateSample("both samples have zero variance".into()));
    }
    let t = (stats::mean(a) - stats::mean(b)) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2)
        / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| EvalError::DegenerateSample(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(WelchTest { t, df, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub mean_pred: f64,
    pub observed_rate: f64,
    pub n: usize,
}

/// Equal-frequency calibration bins. Bin edges are pushed forward so a run
/// of tied scores never straddles two bins; empty bins are dropped, so fewer
/// than `bins` may come back.
pub fn calibration_curve(scores: &[f64], labels: &[bool], bins: usize) -> Result<Vec<CalibrationBin>> {
    check_lengths(scores, labels)?;
    require_both(labels)?;
    if bins == 0 {
        return Err(EvalError::InvalidArgument("bins must be positive".into()));
    }
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=bins {
        let mut end = ((k * n) as f64 / bins as f64).round() as usize;
        end = end.max(start);
        while end > 0 && end < n && scores[order[end]] == scores[order[end - 1]] {
            end += 1;
        }
        if end > start {
            let members = &order[start..end];
            let m = members.len() as f64;
            out.push(CalibrationBin {
                mean_pred: members.iter().map(|&i| scores[i]).sum::<f64>() / m,
                observed_rate: members.iter().filter(|&&i| labels[i]).count() as f64 / m,
                n: members.len(),
            });
            start = end;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AurocCi {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: String,
    pub replicates: usize,
}

/// Test-set metrics for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub horizon_days: u32,
    pub n_test: usize,
    pub n_events: usize,
    pub auroc: f64,
    pub auroc_ci: AurocCi,
    /// Whether the percentile interval covers the point estimate; it need
    /// not under skewed resample distributions.
    pub ci_contains_point: bool,
    pub pr_auc: f64,
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub threshold: f64,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            replicates: 2000,
            level: 0.95,
            seed: 0,
        }
    }
}

impl MetricReport {
    pub fn compute(
        model: &str,
        horizon_days: u32,
        scores: &[f64],
        labels: &[bool],
        opts: &ReportOptions,
    ) -> Result<Self> {
        let auc = auroc(scores, labels)?;
        let ci = bootstrap_ci(scores, labels, Metric::Auroc, opts.replicates, opts.level, opts.seed)?;
        let ci_contains_point = ci.lower <= auc && auc <= ci.upper;
        if !ci_contains_point {
            log::warn!(
                "{model} {horizon_days}d: AUROC {auc:.4} outside its interval [{:.4}, {:.4}]",
                ci.lower,
                ci.upper
            );
        }
        let conf = confusion_at(scores, labels, opts.threshold)?;
        Ok(Self {
            model: model.to_string(),
            horizon_days,
            n_test: scores.len(),
            n_events: class_counts(labels).0,
            auroc: auc,
            auroc_ci: AurocCi {
                lower: ci.lower,
                upper: ci.upper,
                level: ci.level,
                method: "percentile_bootstrap_stratified".into(),
                replicates: ci.replicates,
            },
            ci_contains_point,
            pr_auc: pr_auc(scores, labels)?,
            threshold: opts.threshold,
            sensitivity: conf.sensitivity,
            specificity: conf.specificity,
            ppv: conf.ppv,
            npv: conf.npv,
        })
    }
}

/// Plain-text table of several reports.
pub struct ReportTable<'a>(pub &'a [MetricReport]);

impl fmt::Display for ReportTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>7} {:>6} {:>7} {:>7} {:>17} {:>7} {:>7} {:>7}",
            "model", "horizon", "n", "events", "AUROC", "95% CI", "PR-AUC", "sens", "spec"
        )?;
        for r in self.0 {
            writeln!(
                f,
                "{:<12} {:>6}d {:>6} {:>7} {:>7.3} {:>17} {:>7.3} {:>7.3} {:>7.3}",
                r.model,
                r.horizon_days,
                r.n_test,
                r.n_events,
                r.auroc,
                format!("{:.3}-{:.3}", r.auroc_ci.lower, r.auroc_ci.upper),
                r.pr_auc,
                r.sensitivity,
                r.specificity
            )?;
        }
        Ok(())
    }
}

pub fn write_roc_csv<W: Write>(points: &[RocPoint], out: W) -> Result<()> {
    write_points(out, &["threshold", "fpr", "tpr"], points.iter().map(|p| [p.threshold, p.fpr, p.tpr]))
}

pub fn write_pr_csv<W: Write>(points: &[PrPoint], out: W) -> Result<()> {
    write_points(
        out,
        &["threshold", "recall", "precision"],
        points.iter().map(|p| [p.threshold, p.recall, p.precision]),
    )
}

pub fn write_calibration_csv<W: Write>(bins: &[CalibrationBin], out: W) -> Result<()> {
    write_points(
        out,
        &["mean_pred", "observed_rate", "n"],
        bins.iter().map(|b| [b.mean_pred, b.observed_rate, b.n as f64]),
    )
}

fn write_points<W: Write, I: Iterator<Item = [f64; 3]>>(out: W, header: &[&str], rows: I) -> Result<()> {
    let io = |e: csv::Error| EvalError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush().map_err(|e| EvalError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn auroc_oracle(s: &[f64], l: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auroc_trivial_cases() {
        let l = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &l).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &l).unwrap(), 0.5);
        assert_eq!(auroc(&[0.5; 3], &[true; 3]), Err(EvalError::SingleClass));
    }

    #[test]
    fn auroc_eight_points_matches_pairs() {
        let s = [0.9, 0.4, 0.4, 0.7, 0.1, 0.55, 0.7, 0.3];
        let l = [true, false, true, false, false, true, true, false];
        assert_eq!(auroc(&s, &l).unwrap(), auroc_oracle(&s, &l));
        // 16 pairs: 12 wins and 2 ties
        assert_eq!(auroc_oracle(&s, &l), 13.0 / 16.0);
    }

    /// Precision and recall enumerated at every cut of the sorted list.
    #[test]
    fn pr_auc_six_points() {
        let s = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4];
        let l = [true, false, true, true, false, false];
        // cuts after 1, 3 and 4 items add recall 1/3 each at precision 1, 2/3, 3/4
        let want = (1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0;
        assert!((pr_auc(&s, &l).unwrap() - want).abs() < 1e-15);
        assert_eq!(pr_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(pr_auc(&[0.1, 0.2], &[false, false]), Err(EvalError::NoPositives));
    }

    #[test]
    fn pr_auc_random_scores_near_prevalence() {
        let mut rng = stream_rng(5, 0);
        let n = 200_000;
        let l: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.2).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let v = pr_auc(&s, &l).unwrap();
        assert!((v - 0.2).abs() < 0.01, "{v}");
    }

    #[test]
    fn roc_curve_endpoints() {
        let s = [0.9, 0.4, 0.4, 0.7];
        let l = [true, false, true, false];
        let c = roc_curve(&s, &l).unwrap();
        assert_eq!(c.first().unwrap().fpr, 0.0);
        assert_eq!((c.last().unwrap().fpr, c.last().unwrap().tpr), (1.0, 1.0));
        assert_eq!(c.len(), 4);
        let trapezoid: f64 = c
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum();
        assert!((trapezoid - auroc(&s, &l).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn confusion_counts() {
        let s = [0.9, 0.8, 0.6, 0.55, 0.5, 0.45, 0.3, 0.2, 0.1, 0.05];
        let l = [true, true, false, true, false, true, false, false, true, false];
        let c = confusion_at(&s, &l, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (3, 2, 3, 2));
        assert_eq!(c.sensitivity, 0.6);
        assert_eq!(c.specificity, 0.6);
        assert_eq!(c.ppv, Some(0.6));
        assert_eq!(confusion_at(&s, &l, 0.0).unwrap().sensitivity, 1.0);
        let high = confusion_at(&s, &l, 1.0 + 1e-9).unwrap();
        assert_eq!(high.specificity, 1.0);
        assert_eq!(high.ppv, None);
    }

    fn c_index_oracle(r: &[f64], o: &[SurvivalOutcome]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..r.len() {
            for j in 0..r.len() {
                if i == j || !o[i].event {
                    continue;
                }
                let ok = o[i].time_days < o[j].time_days
                    || (o[i].time_days == o[j].time_days && !o[j].event);
                if ok {
                    den += 1.0;
                    num += if r[i] > r[j] {
                        1.0
                    } else if r[i] == r[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    fn so(t: f64, e: bool) -> SurvivalOutcome {
        SurvivalOutcome::new(t, e)
    }

    #[test]
    fn c_index_seven_subjects() {
        let o = [
            so(2.0, true),
            so(5.0, false),
            so(3.0, true),
            so(3.0, false),
            so(8.0, true),
            so(1.0, false),
            so(6.0, true),
        ];
        let r = [2.5, 0.3, 1.1, 1.1, -0.4, 3.0, 0.3];
        assert_eq!(c_index(&r, &o).unwrap(), c_index_oracle(&r, &o));
    }

    #[test]
    fn c_index_trivial_cases() {
        let o: Vec<SurvivalOutcome> = (1..=6).map(|t| so(t as f64, true)).collect();
        let anti: Vec<f64> = (1..=6).map(|t| -(t as f64)).collect();
        assert_eq!(c_index(&anti, &o).unwrap(), 1.0);
        assert_eq!(c_index(&[1.0; 6], &o).unwrap(), 0.5);
        assert_eq!(
            c_index(&[1.0, 2.0], &[so(1.0, false), so(2.0, false)]),
            Err(EvalError::NoComparablePairs)
        );
    }

    /// All uncensored, outcome times encode the binary label (events at
    /// t=1, the rest at t=2 but censored) so every comparable pair is a
    /// positive-negative pair.
    #[test]
    fn c_index_reduces_to_auroc() {
        let s = [0.9, 0.4, 0.4, 0.7, 0.1, 0.55, 0.7, 0.3];
        let l = [true, false, true, false, false, true, true, false];
        let o: Vec<SurvivalOutcome> = l
            .iter()
            .map(|&y| if y { so(1.0, true) } else { so(2.0, false) })
            .collect();
        assert_eq!(c_index(&s, &o).unwrap(), auroc(&s, &l).unwrap());
    }

    #[test]
    fn welch_matches_formula() {
        let a = [5.1, 4.9, 6.2, 5.8, 6.0];
        let b = [4.0, 4.4, 3.9, 5.0, 4.1];
        let ma = a.iter().sum::<f64>() / 5.0;
        let mb = b.iter().sum::<f64>() / 5.0;
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / 4.0;
        let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / 4.0;
        let t = (ma - mb) / (va / 5.0 + vb / 5.0).sqrt();
        let df = (va / 5.0 + vb / 5.0).powi(2) / ((va / 5.0).powi(2) / 4.0 + (vb / 5.0).powi(2) / 4.0);
        let w = welch_t_test(&a, &b).unwrap();
        assert!((w.t - t).abs() < 1e-12);
        assert!((w.df - df).abs() < 1e-12);
        assert!(w.p > 0.0 && w.p < 0.01);
    }

    #[test]
    fn welch_limits() {
        let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
        let same = welch_t_test(&a, &a).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        let shifted: Vec<f64> = a.iter().map(|v| v + 50.0).collect();
        assert!(welch_t_test(&shifted, &a).unwrap().p < 1e-10);
        assert!(welch_t_test(&[1.0], &a).is_err());
        assert!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn calibration_degenerate_bins() {
        let s = vec![0.3; 10];
        let l: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let c = calibration_curve(&s, &l, 10).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c[0].mean_pred - 0.3).abs() < 1e-15);
        assert!((c[0].observed_rate - 0.3).abs() < 1e-15);

        let s = [0.1, 0.2, 0.7, 0.9];
        let l = [false, true, false, true];
        let c = calibration_curve(&s, &l, 10).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c.iter().all(|b| b.n == 1));
    }

    #[test]
    fn calibration_of_true_probabilities() {
        let mut rng = stream_rng(17, 0);
        let n = 100_000;
        let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let l: Vec<bool> = s.iter().map(|&p| rng.random::<f64>() < p).collect();
        let c = calibration_curve(&s, &l, 10).unwrap();
        assert_eq!(c.len(), 10);
        assert!(c.iter().all(|b| (b.mean_pred - b.observed_rate).abs() < 0.05));
    }

    #[test]
    fn bootstrap_separated_and_deterministic() {
        let s: Vec<f64> = (0..400).map(|i| i as f64).collect();
        let l: Vec<bool> = (0..400).map(|i| i >= 300).collect();
        let ci = bootstrap_ci(&s, &l, Metric::Auroc, 500, 0.95, 1).unwrap();
        assert!(ci.lower >= 0.99 && ci.upper <= 1.0);

        let s: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let l: Vec<bool> = (0..200).map(|i| i % 3 == 0).collect();
        let a = bootstrap_ci(&s, &l, Metric::PrAuc, 300, 0.9, 7).unwrap();
        assert_eq!(a, bootstrap_ci(&s, &l, Metric::PrAuc, 300, 0.9, 7).unwrap());
        assert!(a.lower <= a.upper);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let single = pool.install(|| bootstrap_ci(&s, &l, Metric::PrAuc, 300, 0.9, 7).unwrap());
        assert_eq!(a, single);
    }

    #[test]
    fn report_and_table() {
        let s: Vec<f64> = (0..60).map(|i| ((i * 13) % 61) as f64 / 61.0).collect();
        let l: Vec<bool> = s.iter().enumerate().map(|(i, &v)| v > 0.6 || i % 7 == 0).collect();
        let opts = ReportOptions {
            replicates: 200,
            ..ReportOptions::default()
        };
        let r = MetricReport::compute("logistic", 7, &s, &l, &opts).unwrap();
        assert_eq!(r.n_events, l.iter().filter(|&&v| v).count());
        assert!(r.auroc_ci.lower <= r.auroc_ci.upper);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<MetricReport>(&json).unwrap(), r);
        let table = ReportTable(std::slice::from_ref(&r)).to_string();
        assert!(table.lines().nth(1).unwrap().starts_with("logistic"));
    }

    proptest! {
        #[test]
        fn auroc_symmetry_and_monotone_invariance(
            pairs in prop::collection::vec((-100.0f64..100.0, any::<bool>()), 2..60)
        ) {
            let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let l: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(l.iter().any(|&v| v) && l.iter().any(|&v| !v));
            let a = auroc(&s, &l).unwrap();
            prop_assert_eq!(a, auroc_oracle(&s, &l));
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let mut sorted = s.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).all(|w| w[0] < w[1]) {
                prop_assert!((a - (1.0 - auroc(&neg, &l).unwrap())).abs() < 1e-12);
            }
            let mono: Vec<f64> = s.iter().map(|v| (v / 50.0).exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auroc(&mono, &l).unwrap(), a);
        }

        #[test]
        fn c_index_matches_oracle(
            rows in prop::collection::vec((0u8..6, any::<bool>(), 0u8..4), 2..40)
        ) {
            let o: Vec<SurvivalOutcome> = rows.iter().map(|r| so(1.0 + r.0 as f64, r.1)).collect();
            let risk: Vec<f64> = rows.iter().map(|r| r.2 as f64).collect();
            match c_index(&risk, &o) {
                Ok(v) => prop_assert_eq!(v, c_index_oracle(&risk, &o)),
                Err(e) => {
                    prop_assert_eq!(e, EvalError::NoComparablePairs);
                    prop_assert!(c_index_oracle(&risk, &o).is_nan());
                }
            }
        }
    }
}

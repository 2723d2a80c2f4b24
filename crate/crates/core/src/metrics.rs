//! Confusion-based metrics, rank AUROC and point-protocol evaluation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::PointAnnotationSet;
use crate::error::{Error, Result};
use crate::inference::ProbabilityMap;
use crate::raster::Label;

/// Debris is the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

pub fn confusion(pred: &[bool], truth: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        c.add(p, t);
    }
    Ok(c)
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    let n = c.total();
    if n == 0 {
        return Err(Error::UndefinedMetric("accuracy"));
    }
    Ok((c.tp + c.tn) as f64 / n as f64)
}

pub fn precision(c: &ConfusionCounts) -> Result<f64> {
    if c.tp + c.fp == 0 {
        return Err(Error::UndefinedMetric("precision"));
    }
    Ok(c.tp as f64 / (c.tp + c.fp) as f64)
}

pub fn recall(c: &ConfusionCounts) -> Result<f64> {
    if c.tp + c.fn_ == 0 {
        return Err(Error::UndefinedMetric("recall"));
    }
    Ok(c.tp as f64 / (c.tp + c.fn_) as f64)
}

/// Harmonic mean of precision and recall, `2tp / (2tp + fp + fn)`.
pub fn f_score(c: &ConfusionCounts) -> Result<f64> {
    let d = 2 * c.tp + c.fp + c.fn_;
    if d == 0 {
        return Err(Error::UndefinedMetric("f-score"));
    }
    Ok((2 * c.tp) as f64 / d as f64)
}

pub fn jaccard(c: &ConfusionCounts) -> Result<f64> {
    let d = c.tp + c.fp + c.fn_;
    if d == 0 {
        return Err(Error::UndefinedMetric("jaccard"));
    }
    Ok(c.tp as f64 / d as f64)
}

/// Cohen's kappa with chance agreement from the marginal products.
pub fn kappa(c: &ConfusionCounts) -> Result<f64> {
    let n = c.total();
    if n == 0 {
        return Err(Error::UndefinedMetric("kappa"));
    }
    // integer numerators keep the identities exact
    let n2 = (n as u128) * (n as u128);
    let agree = ((c.tp + c.tn) as u128) * n as u128;
    let chance = ((c.tp + c.fp) as u128) * ((c.tp + c.fn_) as u128)
        + ((c.tn + c.fn_) as u128) * ((c.tn + c.fp) as u128);
    if chance == n2 {
        return Err(Error::UndefinedMetric("kappa"));
    }
    Ok((agree as f64 - chance as f64) / (n2 as f64 - chance as f64))
}

/// Mann-Whitney AUROC from average ranks: the fraction of positive/negative
/// pairs ordered correctly, ties counting one half.
pub fn auroc(scores: &[(f64, bool)]) -> Result<f64> {
    if scores.iter().any(|s| s.0.is_nan()) {
        return Err(Error::InvalidParameter("NaN score".into()));
    }
    let pos = scores.iter().filter(|s| s.1).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("auroc"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    // twice the rank sum of positives, kept integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]].0 == scores[order[i]].0 {
            j += 1;
        }
        // ranks i+1..=j average to (i + 1 + j) / 2
        let group_pos = order[i..j].iter().filter(|&&k| scores[k].1).count() as u128;
        rank_sum2 += group_pos * (i + 1 + j) as u128;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    // U = R - P(P+1)/2; doubled to stay integral
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub f_score: Option<f64>,
    pub auroc: Option<f64>,
    pub jaccard: Option<f64>,
    pub kappa: Option<f64>,
    pub tau: f64,
    pub samples: usize,
    pub counts: ConfusionCounts,
}

pub const TABLE_COLUMNS: [&str; 5] = ["accuracy", "f-score", "auroc", "jaccard", "kappa"];

impl MetricsReport {
    /// Scores and binary truth thresholded at `score >= tau`. Metrics whose
    /// denominator vanishes are reported as absent.
    pub fn from_scores(scores: &[(f64, bool)], tau: f64) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::InvalidParameter("no samples".into()));
        }
        let mut counts = ConfusionCounts::default();
        for &(s, t) in scores {
            counts.add(s >= tau, t);
        }
        Ok(MetricsReport {
            accuracy: defined(accuracy(&counts))?,
            f_score: defined(f_score(&counts))?,
            auroc: defined(auroc(scores))?,
            jaccard: defined(jaccard(&counts))?,
            kappa: defined(kappa(&counts))?,
            tau,
            samples: scores.len(),
            counts,
        })
    }

    pub fn values(&self) -> [Option<f64>; 5] {
        [self.accuracy, self.f_score, self.auroc, self.jaccard, self.kappa]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Header line followed by one row per `(name, report)`.
    pub fn table(rows: &[(&str, &MetricsReport)]) -> String {
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}", "model");
        for c in TABLE_COLUMNS {
            let _ = write!(out, "  {c:>8}");
        }
        out.push('\n');
        for (name, r) in rows {
            let _ = write!(out, "{name:<width$}");
            for v in r.values() {
                match v {
                    Some(v) => {
                        let _ = write!(out, "  {v:>8.3}");
                    }
                    None => {
                        let _ = write!(out, "  {:>8}", "n/a");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Reads the map at each annotated pixel and scores it against the point
/// label. Unlabeled points are skipped.
pub fn evaluate_points(map: &ProbabilityMap, points: &PointAnnotationSet, tau: f64) -> Result<MetricsReport> {
    let mut scores = Vec::with_capacity(points.points.len());
    for p in &points.points {
        if p.x >= map.width() || p.y >= map.height() {
            return Err(Error::Window(format!(
                "point ({}, {}) outside {}x{} map",
                p.x,
                p.y,
                map.width(),
                map.height()
            )));
        }
        match p.label {
            Label::Debris => scores.push((map.get(p.x, p.y) as f64, true)),
            Label::Other => scores.push((map.get(p.x, p.y) as f64, false)),
            Label::Unlabeled => {}
        }
    }
    MetricsReport::from_scores(&scores, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn worked_example() {
        let k = c(50, 10, 10, 30);
        assert_eq!(accuracy(&k).unwrap(), 0.8);
        assert!((f_score(&k).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((jaccard(&k).unwrap() - 5.0 / 7.0).abs() < 1e-15);
        assert!((kappa(&k).unwrap() - (0.8 - 0.52) / 0.48).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_independent() {
        let k = c(7, 0, 0, 3);
        for f in [accuracy, f_score, jaccard, kappa] {
            assert_eq!(f(&k).unwrap(), 1.0);
        }
        // predicted positive rate 1/2 independent of a 1/4 positive rate
        assert_eq!(kappa(&c(10, 30, 10, 30)).unwrap(), 0.0);
    }

    #[test]
    fn undefined_metrics_error() {
        assert!(matches!(f_score(&c(0, 0, 0, 5)), Err(Error::UndefinedMetric(_))));
        assert!(matches!(jaccard(&c(0, 0, 0, 5)), Err(Error::UndefinedMetric(_))));
        assert!(matches!(kappa(&c(5, 0, 0, 0)), Err(Error::UndefinedMetric(_))));
        assert!(matches!(accuracy(&c(0, 0, 0, 0)), Err(Error::UndefinedMetric(_))));
        assert!(matches!(auroc(&[(0.1, true)]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn confusion_tally() {
        let pred = [true, true, false, false, true, false, true, false, false, true];
        let truth = [true, false, false, true, true, false, false, false, true, true];
        assert_eq!(confusion(&pred, &truth).unwrap(), c(3, 2, 2, 3));
        let inv: Vec<bool> = pred.iter().map(|p| !p).collect();
        assert_eq!(confusion(&inv, &truth).unwrap(), c(2, 3, 3, 2));
        assert!(confusion(&pred[..3], &truth).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[(0.9, true), (0.8, true), (0.1, false)]).unwrap(), 1.0);
        assert_eq!(auroc(&[(0.4, true), (0.4, false), (0.4, false)]).unwrap(), 0.5);
        // 3 positives x 3 negatives: 6 wins, 1 tie
        let s = [(0.9, true), (0.5, true), (0.3, true), (0.5, false), (0.4, false), (0.1, false)];
        assert_eq!(auroc(&s).unwrap(), 6.5 / 9.0);
    }

    #[test]
    fn table_has_row_labels() {
        let r = MetricsReport::from_scores(&[(0.9, true), (0.1, false)], 0.5).unwrap();
        let t = MetricsReport::table(&[("forest", &r)]);
        assert!(t.lines().next().unwrap().contains("accuracy   f-score     auroc   jaccard     kappa"));
        assert!(t.contains("forest"));
    }
}

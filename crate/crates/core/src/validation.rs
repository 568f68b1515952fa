//! Threshold sweep of a model over a dataset.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{check_compatible, DataSet};
use crate::error::{Error, Result};
use crate::learner::{predict_risk_from_score, score, RiskModel};

/// A ratio that may be 0/0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Value(f64),
    Undefined,
}

impl Metric {
    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Metric::Undefined
        } else {
            Metric::Value(num as f64 / den as f64)
        }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Undefined => None,
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Metric::Value(v) => s.serialize_f64(*v),
            Metric::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Metric::Value(v)),
            Raw::Str(s) if s == "undefined" => Ok(Metric::Undefined),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("unexpected metric `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: Metric,
    pub recall: Metric,
    pub accuracy: Metric,
    pub f1: Metric,
}

impl ThresholdRow {
    pub fn from_counts(threshold: f64, tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let precision = Metric::ratio(tp, tp + fp);
        let recall = Metric::ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Metric::Value(p), Metric::Value(r)) if p + r > 0.0 => Metric::Value(2.0 * p * r / (p + r)),
            _ => Metric::Undefined,
        };
        Self {
            threshold,
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            accuracy: Metric::ratio(tp + tn, tp + fp + tn + fn_),
            f1,
        }
    }
}

/// Rows sharing one integer score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreBin {
    pub score: i64,
    pub positives: u64,
    pub negatives: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationReport {
    pub model_ref: String,
    pub dataset_ref: String,
    pub n: u64,
    pub bias: i64,
    pub rows: Vec<ThresholdRow>,
    pub score_distribution: Vec<ScoreBin>,
}

/// Thresholds 0.05, 0.10, ..., 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

fn normalize_thresholds(thresholds: &[f64]) -> Result<Vec<f64>> {
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::validation(format!("threshold {t} is outside the open interval (0, 1)")));
    }
    let mut out = thresholds.to_vec();
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

impl ValidationReport {
    fn row_at(&self, threshold: f64) -> ThresholdRow {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for bin in &self.score_distribution {
            if predict_risk_from_score(self.bias, bin.score) > threshold {
                tp += bin.positives;
                fp += bin.negatives;
            } else {
                fn_ += bin.positives;
                tn += bin.negatives;
            }
        }
        ThresholdRow::from_counts(threshold, tp, fp, tn, fn_)
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.threshold).collect()
    }

    /// Adds rows for `extra` thresholds. Rows already present are kept as is.
    pub fn add_thresholds(&self, extra: &[f64]) -> Result<Self> {
        let extra = normalize_thresholds(extra)?;
        let mut out = self.clone();
        for t in extra {
            if !out.rows.iter().any(|r| r.threshold == t) {
                out.rows.push(self.row_at(t));
            }
        }
        out.rows.sort_by(|a, b| a.threshold.total_cmp(&b.threshold));
        Ok(out)
    }
}

/// Evaluates `model` on `ds` at each threshold (defaults to
/// [`default_thresholds`]). A row counts as predicted positive when its
/// risk is strictly above the threshold.
pub fn validate(model: &RiskModel, ds: &DataSet, thresholds: Option<&[f64]>) -> Result<ValidationReport> {
    check_compatible(model, ds)?;
    if ds.n_rows() == 0 {
        return Err(Error::validation("cannot validate on a dataset with no rows"));
    }
    let thresholds = match thresholds {
        Some(t) => normalize_thresholds(t)?,
        None => default_thresholds(),
    };
    let mut bins: BTreeMap<i64, (u64, u64)> = BTreeMap::new();
    for i in 0..ds.n_rows() {
        let s = score(model, ds.inputs(i))?;
        let bin = bins.entry(s).or_default();
        if ds.target(i) {
            bin.0 += 1;
        } else {
            bin.1 += 1;
        }
    }
    let mut report = ValidationReport {
        model_ref: String::new(),
        dataset_ref: String::new(),
        n: ds.n_rows() as u64,
        bias: model.bias(),
        rows: Vec::new(),
        score_distribution: bins
            .into_iter()
            .map(|(score, (positives, negatives))| ScoreBin {
                score,
                positives,
                negatives,
            })
            .collect(),
    };
    report.rows = thresholds.iter().map(|&t| report.row_at(t)).collect();
    Ok(report)
}

/// Free-function form of [`ValidationReport::add_thresholds`].
pub fn add_thresholds(report: &ValidationReport, extra: &[f64]) -> Result<ValidationReport> {
    report.add_thresholds(extra)
}

//! Clinician-facing view of a model: the items that carry points and the
//! mapping from total points to risk.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::MAX_ABS_VALUE;
use crate::error::{Error, Result};
use crate::learner::{predict_risk_from_score, RiskModel};
use crate::registry::FeatureRegistry;

/// Largest number of binary items whose achievable totals are enumerated.
const MAX_ENUMERATED_ITEMS: usize = 20;
/// Number of evenly spaced totals shown otherwise.
const SPACED_TOTALS: i64 = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Binary,
    Integer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringItem {
    pub column: String,
    pub label: String,
    pub points: i64,
    pub kind: ItemKind,
    /// Smallest and largest value seen for this column in training data.
    pub min: i64,
    pub max: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub total_points: i64,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringTable {
    pub items: Vec<ScoringItem>,
    pub bias: i64,
    pub risk_rows: Vec<RiskRow>,
}

/// Non-fatal problem met while labelling a table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelWarning {
    pub column: String,
    pub message: String,
}

/// Builds the scoring table for `model`, labelling columns through the
/// registry. Columns the registry cannot resolve keep their raw name and
/// produce a warning.
pub fn to_scoring_table(model: &RiskModel, registry: &FeatureRegistry) -> (ScoringTable, Vec<LabelWarning>) {
    let mut warnings = Vec::new();
    let mut items: Vec<(usize, ScoringItem)> = Vec::new();
    for (j, (column, &points)) in model.columns().iter().zip(model.coefficients()).enumerate() {
        if points == 0 {
            continue;
        }
        let label = match registry.resolve_column(column) {
            Some((spec, None)) => spec.label.clone(),
            Some((spec, Some(value))) => format!("{} = {value}", spec.label),
            None => {
                warnings.push(LabelWarning {
                    column: column.clone(),
                    message: "column does not match any registered feature".into(),
                });
                column.clone()
            }
        };
        let [min, max] = match model.column_ranges() {
            Some(r) => r[j],
            None => {
                if registry.resolve_column(column).is_some_and(|(s, _)| s.is_integer) {
                    warnings.push(LabelWarning {
                        column: column.clone(),
                        message: "no observed value range; assuming 0/1".into(),
                    });
                }
                [0, 1]
            }
        };
        let kind = if min >= 0 && max <= 1 {
            ItemKind::Binary
        } else {
            ItemKind::Integer
        };
        items.push((
            j,
            ScoringItem {
                column: column.clone(),
                label,
                points,
                kind,
                min,
                max,
            },
        ));
    }
    items.sort_by(|(ja, a), (jb, b)| b.points.abs().cmp(&a.points.abs()).then(ja.cmp(jb)));
    let items: Vec<ScoringItem> = items.into_iter().map(|(_, it)| it).collect();
    let risk_rows = achievable_totals(&items)
        .into_iter()
        .map(|total_points| RiskRow {
            total_points,
            risk: predict_risk_from_score(model.bias(), total_points),
        })
        .collect();
    (
        ScoringTable {
            items,
            bias: model.bias(),
            risk_rows,
        },
        warnings,
    )
}

fn achievable_totals(items: &[ScoringItem]) -> Vec<i64> {
    let all_binary = items.iter().all(|it| it.kind == ItemKind::Binary);
    if all_binary && items.len() <= MAX_ENUMERATED_ITEMS {
        let mut totals = BTreeSet::from([0i64]);
        for it in items {
            let shifted: Vec<i64> = totals.iter().map(|t| t + it.points).collect();
            totals.extend(shifted);
        }
        return totals.into_iter().collect();
    }
    let (lo, hi) = items.iter().fold((0i64, 0i64), |(lo, hi), it| {
        let a = it.points * it.min;
        let b = it.points * it.max;
        (lo + a.min(b), hi + a.max(b))
    });
    let steps = SPACED_TOTALS - 1;
    let mut totals: Vec<i64> = (0..=steps)
        .map(|k| lo + ((hi - lo) as f64 * k as f64 / steps as f64).round() as i64)
        .collect();
    totals.dedup();
    totals
}

impl ScoringTable {
    /// Total points and risk for a selection of item values. Items not in
    /// `selection` count as 0.
    pub fn evaluate(&self, selection: &BTreeMap<String, i64>) -> Result<(i64, f64)> {
        for column in selection.keys() {
            if !self.items.iter().any(|it| &it.column == column) {
                return Err(Error::validation(format!("`{column}` is not an item of this table")));
            }
        }
        let mut total = 0i64;
        for it in &self.items {
            let value = selection.get(&it.column).copied().unwrap_or(0);
            let admissible = match it.kind {
                ItemKind::Binary => value == 0 || value == 1,
                ItemKind::Integer => value.abs() <= MAX_ABS_VALUE,
            };
            if !admissible {
                return Err(Error::validation(format!(
                    "value {value} is not admissible for item `{}`",
                    it.column
                )));
            }
            total += it.points * value;
        }
        Ok((total, predict_risk_from_score(self.bias, total)))
    }

    /// Coefficient vector over `columns` implied by the items.
    pub fn coefficients(&self, columns: &[String]) -> Result<Vec<i64>> {
        let mut coefs = vec![0; columns.len()];
        for it in &self.items {
            let j = columns
                .iter()
                .position(|c| c == &it.column)
                .ok_or_else(|| Error::validation(format!("item `{}` is not a column", it.column)))?;
            coefs[j] = it.points;
        }
        Ok(coefs)
    }
}

/// Free-function form of [`ScoringTable::evaluate`].
pub fn evaluate_selection(table: &ScoringTable, selection: &BTreeMap<String, i64>) -> Result<(i64, f64)> {
    table.evaluate(selection)
}

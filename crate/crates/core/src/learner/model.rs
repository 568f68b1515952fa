use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FitConfig, SolverKind, SolverStatus};
use crate::dataset::HasHeader;
use crate::error::{Error, Result};

/// Record of the fit that produced a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub fit_config: FitConfig,
    pub objective: f64,
    pub solver: SolverKind,
    pub solver_status: SolverStatus,
    pub candidates_evaluated: u64,
    pub wall_time_seconds: f64,
    pub created_at: String,
}

/// Integer bias and one integer coefficient per input column.
///
/// Serialized as a flat JSON document; fit metadata keys are omitted for
/// hand-written models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct RiskModel {
    header: Vec<String>,
    bias: i64,
    coefficients: Vec<i64>,
    column_ranges: Option<Vec<[i64; 2]>>,
    meta: Option<FitMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    header: Vec<String>,
    bias: i64,
    coefficients: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    column_ranges: Option<Vec<[i64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit_config: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    solver: Option<SolverKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    solver_status: Option<SolverStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates_evaluated: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wall_time_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_at: Option<String>,
}

impl From<RiskModel> for ModelDocument {
    fn from(m: RiskModel) -> Self {
        let meta = m.meta;
        ModelDocument {
            header: m.header,
            bias: m.bias,
            coefficients: m.coefficients,
            column_ranges: m.column_ranges,
            fit_config: meta.as_ref().map(|x| x.fit_config.clone()),
            objective: meta.as_ref().map(|x| x.objective),
            solver: meta.as_ref().map(|x| x.solver),
            solver_status: meta.as_ref().map(|x| x.solver_status),
            candidates_evaluated: meta.as_ref().map(|x| x.candidates_evaluated),
            wall_time_seconds: meta.as_ref().map(|x| x.wall_time_seconds),
            created_at: meta.map(|x| x.created_at),
        }
    }
}

impl TryFrom<ModelDocument> for RiskModel {
    type Error = Error;

    fn try_from(d: ModelDocument) -> Result<Self> {
        let meta = match (d.fit_config, d.objective, d.solver, d.solver_status) {
            (Some(fit_config), Some(objective), Some(solver), Some(solver_status)) => Some(FitMeta {
                fit_config,
                objective,
                solver,
                solver_status,
                candidates_evaluated: d.candidates_evaluated.unwrap_or(0),
                wall_time_seconds: d.wall_time_seconds.unwrap_or(0.0),
                created_at: d.created_at.unwrap_or_default(),
            }),
            (None, None, None, None) => None,
            _ => {
                return Err(Error::validation(
                    "model document has partial fit metadata (need fit_config, objective, solver and solver_status together)",
                ))
            }
        };
        let mut model = RiskModel::new(d.header, d.bias, d.coefficients)?;
        if let Some(ranges) = d.column_ranges {
            model = model.with_column_ranges(ranges)?;
        }
        if let Some(meta) = meta {
            model.check_config(&meta.fit_config)?;
            model.meta = Some(meta);
        }
        Ok(model)
    }
}

impl HasHeader for RiskModel {
    fn header(&self) -> &[String] {
        &self.header
    }
}

impl RiskModel {
    pub fn new(header: Vec<String>, bias: i64, coefficients: Vec<i64>) -> Result<Self> {
        if header.len() < 2 {
            return Err(Error::validation("model header needs a target and at least one column"));
        }
        if coefficients.len() != header.len() - 1 {
            return Err(Error::Dimension {
                expected: header.len() - 1,
                found: coefficients.len(),
            });
        }
        Ok(Self {
            header,
            bias,
            coefficients,
            column_ranges: None,
            meta: None,
        })
    }

    /// Attaches the observed `[min, max]` of each input column.
    pub fn with_column_ranges(mut self, ranges: Vec<[i64; 2]>) -> Result<Self> {
        if ranges.len() != self.coefficients.len() {
            return Err(Error::Dimension {
                expected: self.coefficients.len(),
                found: ranges.len(),
            });
        }
        if ranges.iter().any(|[lo, hi]| lo > hi) {
            return Err(Error::validation("column range has min above max"));
        }
        self.column_ranges = Some(ranges);
        Ok(self)
    }

    pub(crate) fn with_meta(mut self, meta: FitMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn bias(&self) -> i64 {
        self.bias
    }

    pub fn coefficients(&self) -> &[i64] {
        &self.coefficients
    }

    pub fn target(&self) -> &str {
        &self.header[0]
    }

    pub fn columns(&self) -> &[String] {
        &self.header[1..]
    }

    pub fn column_ranges(&self) -> Option<&[[i64; 2]]> {
        self.column_ranges.as_deref()
    }

    pub fn meta(&self) -> Option<&FitMeta> {
        self.meta.as_ref()
    }

    /// Number of nonzero coefficients. The bias is not counted.
    pub fn model_size(&self) -> usize {
        self.coefficients.iter().filter(|&&c| c != 0).count()
    }

    pub fn l1_norm(&self) -> i64 {
        self.coefficients.iter().map(|c| c.abs()).sum()
    }

    /// Checks the size and box constraints of `cfg`.
    pub fn check_config(&self, cfg: &FitConfig) -> Result<()> {
        if self.model_size() > cfg.max_model_size {
            return Err(Error::validation(format!(
                "model has {} nonzero coefficients, limit is {}",
                self.model_size(),
                cfg.max_model_size
            )));
        }
        if let Some(c) = self
            .coefficients
            .iter()
            .find(|&&c| c < cfg.coef_min || c > cfg.coef_max)
        {
            return Err(Error::validation(format!(
                "coefficient {c} outside [{}, {}]",
                cfg.coef_min, cfg.coef_max
            )));
        }
        if self.bias < cfg.bias_min || self.bias > cfg.bias_max {
            return Err(Error::validation(format!(
                "bias {} outside [{}, {}]",
                self.bias, cfg.bias_min, cfg.bias_max
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("models always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

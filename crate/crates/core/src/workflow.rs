//! Store-level operations shared by the command line and the HTTP service.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::learner::{fit_with, FitConfig, FitControl, RiskModel};
use crate::dataset::build_dataset;
use crate::source::DataSource;
use crate::store::{DatasetSummary, ModelSummary, ProjectId, ProjectStore};
use crate::table::{to_scoring_table, LabelWarning, ScoringTable};
use crate::validation::{validate, ValidationReport};

/// Fetches the project's features for `entities` (all when `None`), encodes
/// them and stores the result as dataset `name`.
pub fn create_dataset(
    store: &ProjectStore,
    source: &dyn DataSource,
    id: &ProjectId,
    name: &str,
    entities: Option<&[String]>,
) -> Result<DatasetSummary> {
    let config = store.project(id)?;
    if store.list_datasets(id)?.iter().any(|d| d.name == name) {
        return Err(Error::conflict("dataset", name));
    }
    let specs = config.specs(store.registry())?;
    let records = source.fetch(entities, &specs)?;
    let ds = build_dataset(&config, &records, store.registry())?;
    store.save_dataset(id, name, &ds, entities.map(<[String]>::to_vec))
}

/// Fits a model on a stored dataset and stores it as `model_name`. The name
/// is checked before fitting so a clash fails fast.
pub fn fit_and_save(
    store: &ProjectStore,
    id: &ProjectId,
    dataset: &str,
    model_name: &str,
    cfg: &FitConfig,
    control: &FitControl,
) -> Result<(RiskModel, ModelSummary)> {
    cfg.validate()?;
    if store.model_exists(id, model_name)? {
        return Err(Error::conflict("model", model_name));
    }
    let ds = store.load_dataset(id, dataset)?;
    let model = fit_with(&ds, cfg, control)?;
    let summary = store.save_model(id, model_name, &model)?;
    Ok((model, summary))
}

/// A stored model together with its scoring table.
#[derive(Debug, Clone, Serialize)]
pub struct ModelView {
    pub name: String,
    pub model: RiskModel,
    pub scoring_table: ScoringTable,
    pub warnings: Vec<LabelWarning>,
}

pub fn model_view(store: &ProjectStore, id: &ProjectId, name: &str) -> Result<ModelView> {
    let model = store.load_model(id, name)?;
    let (scoring_table, warnings) = to_scoring_table(&model, store.registry());
    Ok(ModelView {
        name: name.to_owned(),
        model,
        scoring_table,
        warnings,
    })
}

/// Validates a stored model on a stored dataset. The dataset may belong to
/// another project (`dataset_project`); its layout must still match.
pub fn validate_stored(
    store: &ProjectStore,
    id: &ProjectId,
    model_name: &str,
    dataset_project: Option<&ProjectId>,
    dataset: &str,
    thresholds: Option<&[f64]>,
) -> Result<ValidationReport> {
    let model = store.load_model(id, model_name)?;
    let ds_project = dataset_project.unwrap_or(id);
    let ds = store.load_dataset(ds_project, dataset)?;
    let mut report = validate(&model, &ds, thresholds)?;
    report.model_ref = format!("{id}/{model_name}");
    report.dataset_ref = format!("{ds_project}/{dataset}");
    Ok(report)
}

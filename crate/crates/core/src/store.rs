//! Directory-backed store for projects, datasets and models.
//!
//! ```text
//! <root>/<goal>/<project>/project.json
//!                        /datasets/<name>.csv
//!                        /datasets/<name>.meta.json
//!                        /models/<name>.json
//! ```
//!
//! Every file is written to a hidden temporary sibling and renamed into
//! place, so readers only ever see complete files. Writes to one project are
//! serialized by an advisory lock on `<project>/.lock`; a second writer gets
//! [`Error::Busy`] instead of waiting.

use std::fmt;
use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::dataset::{first_mismatch, is_name, DataSet, HasHeader, ProjectConfig};
use crate::error::{Error, Result};
use crate::learner::{RiskModel, SolverKind, SolverStatus};
use crate::registry::FeatureRegistry;

const PROJECT_FILE: &str = "project.json";
const LOCK_FILE: &str = ".lock";
const DATASETS: &str = "datasets";
const MODELS: &str = "models";

/// `<goal>/<name>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProjectId {
    pub goal: String,
    pub name: String,
}

impl ProjectId {
    pub fn new(goal: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            goal: goal.into(),
            name: name.into(),
        }
    }
}

impl fmt::Display for ProjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.goal, self.name)
    }
}

impl FromStr for ProjectId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('/') {
            Some((goal, name)) if is_name(goal) && is_name(name) => Ok(Self::new(goal, name)),
            _ => Err(Error::validation(format!("`{s}` is not a project id of the form goal/name"))),
        }
    }
}

impl Serialize for ProjectId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProjectSummary {
    pub id: ProjectId,
    pub name: String,
    pub goal: String,
    pub inputs: Vec<String>,
}

impl From<ProjectConfig> for ProjectSummary {
    fn from(c: ProjectConfig) -> Self {
        Self {
            id: ProjectId::new(&c.goal, &c.name),
            name: c.name,
            goal: c.goal,
            inputs: c.inputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub rows: usize,
    pub columns: Vec<String>,
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub name: String,
    pub bias: i64,
    pub model_size: usize,
    pub objective: Option<f64>,
    pub solver: Option<SolverKind>,
    pub solver_status: Option<SolverStatus>,
    pub created_at: Option<String>,
}

impl ModelSummary {
    pub fn of(name: &str, model: &RiskModel) -> Self {
        let meta = model.meta();
        Self {
            name: name.to_owned(),
            bias: model.bias(),
            model_size: model.model_size(),
            objective: meta.map(|m| m.objective),
            solver: meta.map(|m| m.solver),
            solver_status: meta.map(|m| m.solver_status),
            created_at: meta.map(|m| m.created_at.clone()),
        }
    }
}

/// Held while writing to a project. Dropping it releases the lock.
#[derive(Debug)]
pub struct ProjectLock {
    _file: File,
}

#[derive(Debug, Clone)]
pub struct ProjectStore {
    root: PathBuf,
    registry: Arc<FeatureRegistry>,
}

fn check_name(what: &str, name: &str) -> Result<()> {
    if is_name(name) {
        Ok(())
    } else {
        Err(Error::validation(format!("{what} name `{name}` must match [a-z0-9_-]{{1,64}}")))
    }
}

/// Sorted names of visible entries in `dir` ending in `suffix`, with the
/// suffix removed.
fn list_names(dir: &Path, suffix: &str, want_dirs: bool) -> Result<Vec<String>> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry?;
        if entry.file_type()?.is_dir() != want_dirs {
            continue;
        }
        let file_name = entry.file_name();
        let Some(file_name) = file_name.to_str() else { continue };
        if file_name.starts_with('.') {
            continue;
        }
        if let Some(stem) = file_name.strip_suffix(suffix) {
            if is_name(stem) {
                names.push(stem.to_owned());
            }
        }
    }
    names.sort();
    Ok(names)
}

fn write_new(dir: &Path, file_name: &str, bytes: &[u8], what: &'static str, name: &str) -> Result<()> {
    let mut tmp = tempfile::Builder::new().prefix(".tmp-").tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    persist(tmp, &dir.join(file_name), false, what, name)
}

fn persist(tmp: NamedTempFile, dest: &Path, overwrite: bool, what: &'static str, name: &str) -> Result<()> {
    let result = if overwrite {
        tmp.persist(dest).map(drop)
    } else {
        tmp.persist_noclobber(dest).map(drop)
    };
    result.map_err(|e| {
        if e.error.kind() == std::io::ErrorKind::AlreadyExists {
            Error::conflict(what, name)
        } else {
            e.error.into()
        }
    })
}

impl ProjectStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>, registry: Arc<FeatureRegistry>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root, registry })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn registry(&self) -> &FeatureRegistry {
        &self.registry
    }

    fn project_dir(&self, id: &ProjectId) -> Result<PathBuf> {
        check_name("goal", &id.goal)?;
        check_name("project", &id.name)?;
        Ok(self.root.join(&id.goal).join(&id.name))
    }

    fn existing_project_dir(&self, id: &ProjectId) -> Result<PathBuf> {
        let dir = self.project_dir(id)?;
        if dir.join(PROJECT_FILE).is_file() {
            Ok(dir)
        } else {
            Err(Error::not_found("project", id.to_string()))
        }
    }

    /// Takes the project's write lock without waiting.
    pub fn lock(&self, id: &ProjectId) -> Result<ProjectLock> {
        let dir = self.existing_project_dir(id)?;
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join(LOCK_FILE))?;
        match file.try_lock() {
            Ok(()) => Ok(ProjectLock { _file: file }),
            Err(TryLockError::WouldBlock) => Err(Error::Busy(id.to_string())),
            Err(TryLockError::Error(e)) => Err(e.into()),
        }
    }

    pub fn create_project(&self, config: &ProjectConfig) -> Result<ProjectSummary> {
        config.validate(&self.registry)?;
        let id = ProjectId::new(&config.goal, &config.name);
        let dest = self.project_dir(&id)?;
        let goal_dir = self.root.join(&config.goal);
        fs::create_dir_all(&goal_dir)?;
        if dest.exists() {
            return Err(Error::conflict("project", id.to_string()));
        }
        let staging = tempfile::Builder::new().prefix(".tmp-").tempdir_in(&goal_dir)?;
        fs::create_dir(staging.path().join(DATASETS))?;
        fs::create_dir(staging.path().join(MODELS))?;
        let doc = serde_json::to_string_pretty(config)? + "\n";
        fs::write(staging.path().join(PROJECT_FILE), doc)?;
        // Renaming onto a non-empty directory fails, so a racing creator
        // loses here rather than overwriting.
        if let Err(e) = fs::rename(staging.path(), &dest) {
            return Err(if dest.exists() {
                Error::conflict("project", id.to_string())
            } else {
                e.into()
            });
        }
        // The staging path is gone; dropping only tries to remove it.
        drop(staging);
        Ok(config.clone().into())
    }

    pub fn project(&self, id: &ProjectId) -> Result<ProjectConfig> {
        let dir = self.existing_project_dir(id)?;
        let text = fs::read_to_string(dir.join(PROJECT_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn layout(&self, id: &ProjectId) -> Result<Vec<String>> {
        self.project(id)?.layout(&self.registry)
    }

    /// Projects predicting `goal`, or all projects when `goal` is `None`,
    /// sorted by goal then name.
    pub fn list_projects(&self, goal: Option<&str>) -> Result<Vec<ProjectSummary>> {
        let goals = match goal {
            Some(g) => {
                self.registry.require(g)?;
                vec![g.to_owned()]
            }
            None => list_names(&self.root, "", true)?,
        };
        let mut out = Vec::new();
        for g in goals {
            for name in list_names(&self.root.join(&g), "", true)? {
                match self.project(&ProjectId::new(&g, &name)) {
                    Ok(config) => out.push(config.into()),
                    Err(Error::NotFound { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(out)
    }

    pub fn save_dataset(
        &self,
        id: &ProjectId,
        name: &str,
        ds: &DataSet,
        entity_ids: Option<Vec<String>>,
    ) -> Result<DatasetSummary> {
        check_name("dataset", name)?;
        let layout = self.layout(id)?;
        if let Some(m) = first_mismatch(&layout, ds.header()) {
            return Err(Error::Compatibility(m));
        }
        if let Some(ids) = &entity_ids {
            if ids.len() != ds.n_rows() {
                return Err(Error::Dimension {
                    expected: ds.n_rows(),
                    found: ids.len(),
                });
            }
        }
        let _lock = self.lock(id)?;
        let dir = self.existing_project_dir(id)?.join(DATASETS);
        if dir.join(format!("{name}.csv")).exists() {
            return Err(Error::conflict("dataset", name));
        }
        let summary = DatasetSummary {
            name: name.to_owned(),
            rows: ds.n_rows(),
            columns: ds.header().to_vec(),
            fingerprint: ds.fingerprint().to_owned(),
            entity_ids,
        };
        // The sidecar goes first: a visible .csv always has its metadata.
        let meta = serde_json::to_string_pretty(&summary)? + "\n";
        let mut tmp = tempfile::Builder::new().prefix(".tmp-").tempfile_in(&dir)?;
        tmp.write_all(meta.as_bytes())?;
        persist(tmp, &dir.join(format!("{name}.meta.json")), true, "dataset", name)?;
        write_new(&dir, &format!("{name}.csv"), ds.to_csv_string().as_bytes(), "dataset", name)?;
        Ok(summary)
    }

    pub fn load_dataset(&self, id: &ProjectId, name: &str) -> Result<DataSet> {
        check_name("dataset", name)?;
        let path = self.existing_project_dir(id)?.join(DATASETS).join(format!("{name}.csv"));
        if !path.is_file() {
            return Err(Error::not_found("dataset", name));
        }
        DataSet::read_csv(path)
    }

    pub fn dataset_summary(&self, id: &ProjectId, name: &str) -> Result<DatasetSummary> {
        check_name("dataset", name)?;
        let dir = self.existing_project_dir(id)?.join(DATASETS);
        if !dir.join(format!("{name}.csv")).is_file() {
            return Err(Error::not_found("dataset", name));
        }
        match fs::read_to_string(dir.join(format!("{name}.meta.json"))) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let ds = self.load_dataset(id, name)?;
                Ok(DatasetSummary {
                    name: name.to_owned(),
                    rows: ds.n_rows(),
                    columns: ds.header().to_vec(),
                    fingerprint: ds.fingerprint().to_owned(),
                    entity_ids: None,
                })
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn list_datasets(&self, id: &ProjectId) -> Result<Vec<DatasetSummary>> {
        let dir = self.existing_project_dir(id)?.join(DATASETS);
        list_names(&dir, ".csv", false)?
            .iter()
            .map(|name| self.dataset_summary(id, name))
            .collect()
    }

    pub fn save_model(&self, id: &ProjectId, name: &str, model: &RiskModel) -> Result<ModelSummary> {
        check_name("model", name)?;
        let layout = self.layout(id)?;
        if let Some(m) = first_mismatch(&layout, model.header()) {
            return Err(Error::Compatibility(m));
        }
        let _lock = self.lock(id)?;
        let dir = self.existing_project_dir(id)?.join(MODELS);
        write_new(&dir, &format!("{name}.json"), model.to_json().as_bytes(), "model", name)?;
        Ok(ModelSummary::of(name, model))
    }

    pub fn model_exists(&self, id: &ProjectId, name: &str) -> Result<bool> {
        check_name("model", name)?;
        Ok(self.existing_project_dir(id)?.join(MODELS).join(format!("{name}.json")).is_file())
    }

    pub fn load_model(&self, id: &ProjectId, name: &str) -> Result<RiskModel> {
        check_name("model", name)?;
        let path = self.existing_project_dir(id)?.join(MODELS).join(format!("{name}.json"));
        if !path.is_file() {
            return Err(Error::not_found("model", name));
        }
        RiskModel::read(path)
    }

    pub fn list_models(&self, id: &ProjectId) -> Result<Vec<ModelSummary>> {
        let dir = self.existing_project_dir(id)?.join(MODELS);
        list_names(&dir, ".json", false)?
            .iter()
            .map(|name| Ok(ModelSummary::of(name, &self.load_model(id, name)?)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn store() -> (tempfile::TempDir, ProjectStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = ProjectStore::open(dir.path(), Arc::new(fixtures::registry())).unwrap();
        (dir, store)
    }

    fn config() -> ProjectConfig {
        ProjectConfig::new("p1", "rejection_1y", &["age", "blood_group"])
    }

    fn dataset(store: &ProjectStore, id: &ProjectId) -> DataSet {
        let header = store.layout(id).unwrap();
        DataSet::new(header, vec![vec![1, 54, 0, 1, 0, 0], vec![0, 31, 0, 0, 0, 1]]).unwrap()
    }

    #[test]
    fn project_round_trip() {
        let (_dir, store) = store();
        let summary = store.create_project(&config()).unwrap();
        assert_eq!(summary.id.to_string(), "rejection_1y/p1");
        assert_eq!(store.project(&summary.id).unwrap(), config());
        assert!(matches!(store.create_project(&config()), Err(Error::Conflict { .. })));
        let listed = store.list_projects(Some("rejection_1y")).unwrap();
        assert_eq!(listed, std::slice::from_ref(&summary));
        assert_eq!(store.list_projects(None).unwrap(), [summary]);
        assert!(matches!(store.list_projects(Some("nope")), Err(Error::NotFound { .. })));
    }

    #[test]
    fn invalid_projects_are_rejected() {
        let (_dir, store) = store();
        let bad = ProjectConfig::new("Bad Name", "rejection_1y", &["age"]);
        assert!(matches!(store.create_project(&bad), Err(Error::Validation(_))));
        let missing = ProjectId::new("rejection_1y", "ghost");
        assert!(matches!(store.project(&missing), Err(Error::NotFound { .. })));
        assert!("no-slash".parse::<ProjectId>().is_err());
        assert_eq!("a/b".parse::<ProjectId>().unwrap(), ProjectId::new("a", "b"));
    }

    #[test]
    fn dataset_round_trip_and_listing() {
        let (dir, store) = store();
        let id = store.create_project(&config()).unwrap().id;
        let ds = dataset(&store, &id);
        let ids = Some(vec!["p1".to_owned(), "p2".to_owned()]);
        store.save_dataset(&id, "train", &ds, ids.clone()).unwrap();
        assert_eq!(store.load_dataset(&id, "train").unwrap(), ds);
        assert!(matches!(store.save_dataset(&id, "train", &ds, None), Err(Error::Conflict { .. })));
        store.save_dataset(&id, "alpha", &ds, None).unwrap();
        // stray temporaries are not listed
        fs::write(dir.path().join("rejection_1y/p1/datasets/.tmp-xyz"), "junk").unwrap();
        let listed = store.list_datasets(&id).unwrap();
        let names: Vec<_> = listed.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["alpha", "train"]);
        assert_eq!(listed[1].entity_ids, ids);
        assert_eq!(listed[1].fingerprint, ds.fingerprint());
        assert!(matches!(store.load_dataset(&id, "missing"), Err(Error::NotFound { .. })));
    }

    #[test]
    fn foreign_layouts_are_rejected() {
        let (_dir, store) = store();
        let id = store.create_project(&config()).unwrap().id;
        let ds = DataSet::new(vec!["rejection_1y".into(), "age".into()], vec![vec![1, 3]]).unwrap();
        assert!(matches!(
            store.save_dataset(&id, "d", &ds, None),
            Err(Error::Compatibility(m)) if m.index == 2
        ));
        let model = RiskModel::new(vec!["rejection_1y".into(), "age".into()], 0, vec![1]).unwrap();
        assert!(matches!(store.save_model(&id, "m", &model), Err(Error::Compatibility(_))));
    }

    #[test]
    fn model_round_trip_survives_reopen() {
        let (dir, store) = store();
        let id = store.create_project(&config()).unwrap().id;
        let header = store.layout(&id).unwrap();
        let model = RiskModel::new(header, -1, vec![0, 2, 0, 0, -1]).unwrap();
        store.save_model(&id, "m1", &model).unwrap();
        assert!(matches!(store.save_model(&id, "m1", &model), Err(Error::Conflict { .. })));
        let reopened = ProjectStore::open(dir.path(), Arc::new(fixtures::registry())).unwrap();
        assert_eq!(reopened.load_model(&id, "m1").unwrap(), model);
        let listed = reopened.list_models(&id).unwrap();
        assert_eq!(listed.len(), 1);
        assert_eq!(listed[0].model_size, 2);
        assert_eq!(reopened.load_model(&id, "m1").unwrap().header(), model.header());
    }

    #[test]
    fn second_writer_is_refused() {
        let (_dir, store) = store();
        let id = store.create_project(&config()).unwrap().id;
        let held = store.lock(&id).unwrap();
        let ds = dataset(&store, &id);
        assert!(matches!(store.save_dataset(&id, "d", &ds, None), Err(Error::Busy(_))));
        drop(held);
        store.save_dataset(&id, "d", &ds, None).unwrap();
    }
}

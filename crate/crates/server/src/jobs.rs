//! In-memory table of fit jobs.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use riskbench_core::learner::FitProgress;
use riskbench_core::{ErrorDocument, FitConfig, FitControl, ProjectId};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl JobState {
    fn can_become(self, next: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, next),
            (Queued, Running) | (Queued, Cancelled) | (Running, Done) | (Running, Failed) | (Running, Cancelled)
        )
    }

    pub fn is_final(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed | JobState::Cancelled)
    }
}

/// Job status as returned by the service.
#[derive(Debug, Clone, Serialize)]
pub struct JobDocument {
    pub id: String,
    pub project: ProjectId,
    pub dataset: String,
    pub model_name: String,
    pub fit_config: FitConfig,
    pub state: JobState,
    pub progress: FitProgress,
    /// Name of the stored model once the job is done.
    pub model: Option<String>,
    pub error: Option<ErrorDocument>,
}

struct Job {
    doc: JobDocument,
    control: FitControl,
}

#[derive(Default)]
pub struct JobTable {
    next: AtomicU64,
    jobs: Mutex<HashMap<String, Job>>,
}

impl JobTable {
    pub fn insert(&self, project: ProjectId, dataset: String, model_name: String, fit_config: FitConfig) -> (String, FitControl) {
        let id = format!("job-{}", self.next.fetch_add(1, Ordering::Relaxed) + 1);
        let control = FitControl::new();
        let doc = JobDocument {
            id: id.clone(),
            project,
            dataset,
            model_name,
            fit_config,
            state: JobState::Queued,
            progress: control.progress(),
            model: None,
            error: None,
        };
        self.jobs.lock().unwrap().insert(
            id.clone(),
            Job {
                doc,
                control: control.clone(),
            },
        );
        (id, control)
    }

    pub fn get(&self, id: &str) -> Option<JobDocument> {
        let jobs = self.jobs.lock().unwrap();
        let job = jobs.get(id)?;
        let mut doc = job.doc.clone();
        doc.progress = job.control.progress();
        Some(doc)
    }

    /// Moves a job to `next` if the transition is legal. Returns whether it
    /// happened.
    pub fn transition(&self, id: &str, next: JobState, error: Option<ErrorDocument>) -> bool {
        let mut jobs = self.jobs.lock().unwrap();
        let Some(job) = jobs.get_mut(id) else { return false };
        if !job.doc.state.can_become(next) {
            return false;
        }
        job.doc.state = next;
        if next == JobState::Done {
            job.doc.model = Some(job.doc.model_name.clone());
        }
        job.doc.error = error;
        true
    }

    /// Requests cancellation. Queued jobs are cancelled at once; running
    /// jobs stop at their next check.
    pub fn cancel(&self, id: &str) -> Option<JobDocument> {
        {
            let mut jobs = self.jobs.lock().unwrap();
            let job = jobs.get_mut(id)?;
            job.control.cancel();
            if job.doc.state == JobState::Queued {
                job.doc.state = JobState::Cancelled;
            }
        }
        self.get(id)
    }
}

//! Job records and their stores.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use comixify_core::pipeline::{PipelineOptions, Stage, StageTiming};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    /// Staying put is allowed; otherwise only queued→running→(done|failed),
    /// plus queued→failed for jobs rejected before they start.
    pub fn can_become(self, next: JobState) -> bool {
        self == next
            || matches!(
                (self, next),
                (JobState::Queued, JobState::Running)
                    | (JobState::Queued, JobState::Failed)
                    | (JobState::Running, JobState::Done)
                    | (JobState::Running, JobState::Failed)
            )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobError {
    pub stage: Option<Stage>,
    pub message: String,
    /// HTTP status the failure maps to.
    pub status: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub state: JobState,
    /// Stage currently running, or the last one reached.
    pub stage: Option<Stage>,
    pub input: String,
    pub options: PipelineOptions,
    pub n: Option<usize>,
    pub timings: Vec<StageTiming>,
    /// Seconds from `running` to a terminal state.
    pub duration_s: Option<f64>,
    pub pages: Vec<String>,
    pub keyframe_times_s: Vec<f64>,
    pub error: Option<JobError>,
}

impl JobRecord {
    pub fn queued(job_id: String, input: String, options: PipelineOptions) -> Self {
        JobRecord {
            job_id,
            state: JobState::Queued,
            stage: None,
            input,
            options,
            n: None,
            timings: Vec::new(),
            duration_s: None,
            pages: Vec::new(),
            keyframe_times_s: Vec::new(),
            error: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("job `{0}` not found")]
    NotFound(String),
    #[error("job `{0}` already exists")]
    Duplicate(String),
    #[error("job `{id}` cannot move from {from:?} to {to:?}")]
    Transition { id: String, from: JobState, to: JobState },
    #[error("job store I/O on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("corrupt job record {path}: {source}")]
    Corrupt { path: PathBuf, source: serde_json::Error },
}

/// Ids are generated server side; anything else is rejected before touching
/// storage.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
}

pub trait JobStore: Send + Sync {
    fn insert(&self, rec: JobRecord) -> Result<(), StoreError>;

    fn get(&self, id: &str) -> Result<Option<JobRecord>, StoreError>;

    /// Applies `f` atomically. Fails without writing if the state change is
    /// not allowed.
    fn update(&self, id: &str, f: &mut dyn FnMut(&mut JobRecord)) -> Result<JobRecord, StoreError>;
}

fn apply(id: &str, rec: &JobRecord, f: &mut dyn FnMut(&mut JobRecord)) -> Result<JobRecord, StoreError> {
    let mut next = rec.clone();
    f(&mut next);
    next.job_id = rec.job_id.clone();
    if !rec.state.can_become(next.state) {
        return Err(StoreError::Transition { id: id.into(), from: rec.state, to: next.state });
    }
    Ok(next)
}

#[derive(Default)]
pub struct MemoryStore {
    jobs: Mutex<HashMap<String, JobRecord>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl JobStore for MemoryStore {
    fn insert(&self, rec: JobRecord) -> Result<(), StoreError> {
        let mut jobs = self.jobs.lock().expect("job store lock");
        if jobs.contains_key(&rec.job_id) {
            return Err(StoreError::Duplicate(rec.job_id));
        }
        jobs.insert(rec.job_id.clone(), rec);
        Ok(())
    }

    fn get(&self, id: &str) -> Result<Option<JobRecord>, StoreError> {
        Ok(self.jobs.lock().expect("job store lock").get(id).cloned())
    }

    fn update(&self, id: &str, f: &mut dyn FnMut(&mut JobRecord)) -> Result<JobRecord, StoreError> {
        let mut jobs = self.jobs.lock().expect("job store lock");
        let rec = jobs.get_mut(id).ok_or_else(|| StoreError::NotFound(id.into()))?;
        let next = apply(id, rec, f)?;
        *rec = next.clone();
        Ok(next)
    }
}

/// One JSON file per job, replaced atomically on every write.
pub struct FileStore {
    dir: PathBuf,
    lock: Mutex<()>,
}

impl FileStore {
    /// Opens `dir`, creating it if needed. Jobs a previous process left
    /// unfinished are marked failed.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(|source| StoreError::Io { path: dir.into(), source })?;
        let store = FileStore { dir: dir.into(), lock: Mutex::new(()) };
        let entries = fs::read_dir(dir).map_err(|source| StoreError::Io { path: dir.into(), source })?;
        for entry in entries {
            let path = entry.map_err(|source| StoreError::Io { path: dir.into(), source })?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let rec = store.read(&path)?;
            if !rec.state.is_terminal() {
                store.update(&rec.job_id, &mut |r| {
                    r.state = JobState::Failed;
                    r.error = Some(JobError {
                        stage: r.stage,
                        message: "interrupted by a service restart".into(),
                        status: 500,
                    });
                })?;
            }
        }
        Ok(store)
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn read(&self, path: &Path) -> Result<JobRecord, StoreError> {
        let bytes = fs::read(path).map_err(|source| StoreError::Io { path: path.into(), source })?;
        serde_json::from_slice(&bytes).map_err(|source| StoreError::Corrupt { path: path.into(), source })
    }

    fn write(&self, rec: &JobRecord) -> Result<(), StoreError> {
        let path = self.path(&rec.job_id);
        let io = |source| StoreError::Io { path: path.clone(), source };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        let json = serde_json::to_vec_pretty(rec).expect("job record serialises");
        tmp.write_all(&json).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(())
    }
}

impl JobStore for FileStore {
    fn insert(&self, rec: JobRecord) -> Result<(), StoreError> {
        if !valid_id(&rec.job_id) {
            return Err(StoreError::NotFound(rec.job_id));
        }
        let _g = self.lock.lock().expect("job store lock");
        if self.path(&rec.job_id).exists() {
            return Err(StoreError::Duplicate(rec.job_id));
        }
        self.write(&rec)
    }

    fn get(&self, id: &str) -> Result<Option<JobRecord>, StoreError> {
        if !valid_id(id) {
            return Ok(None);
        }
        let _g = self.lock.lock().expect("job store lock");
        let path = self.path(id);
        if !path.exists() {
            return Ok(None);
        }
        self.read(&path).map(Some)
    }

    fn update(&self, id: &str, f: &mut dyn FnMut(&mut JobRecord)) -> Result<JobRecord, StoreError> {
        if !valid_id(id) {
            return Err(StoreError::NotFound(id.into()));
        }
        let _g = self.lock.lock().expect("job store lock");
        let path = self.path(id);
        if !path.exists() {
            return Err(StoreError::NotFound(id.into()));
        }
        let rec = self.read(&path)?;
        let next = apply(id, &rec, f)?;
        self.write(&next)?;
        Ok(next)
    }
}

//! Interactive labeling sessions over HTTP.
//!
//! Sessions live in memory. Mutations to one session are serialized by its
//! own lock, so requests to different sessions proceed in parallel. An
//! optional journal records one JSON line per mutation and is replayed on
//! start-up.

mod http;
mod session;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::io::{Artifact, PriorBody, PrunedPrior};

pub use http::{router, serve};
pub use session::{Curve, PosteriorSummary, Session, SessionState, Suggestion, SuggestionSource};

/// Error returned by the API, serialized as `{code, message, detail}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub detail: serde_json::Value,
}

impl ServiceError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_string(),
            message: message.into(),
            detail: serde_json::Value::Null,
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(400, "validation", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(409, "conflict", message)
    }

    pub fn not_found(id: &str) -> Self {
        let mut e = Self::new(404, "not-found", format!("no session {id:?}"));
        e.detail = serde_json::json!({ "id": id });
        e
    }

    /// Client-side problem with the request payload.
    pub fn bad_request(e: &Error) -> Self {
        let mut out = Self::new(400, e.code(), e.to_string());
        if let Error::Parse { line, .. } = e {
            out.detail = serde_json::json!({ "line": line });
        }
        out
    }

    pub fn from_error(e: &Error) -> Self {
        match e {
            Error::Validation(_) | Error::Parse { .. } | Error::Json(_) => Self::bad_request(e),
            Error::Refused(_) => Self::new(422, e.code(), e.to_string()),
            _ => Self::new(500, e.code(), e.to_string()),
        }
    }
}

impl std::fmt::Display for ServiceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({}): {}", self.status, self.code, self.message)
    }
}

impl std::error::Error for ServiceError {}

/// Prior accepted by session creation: a full prior artifact or just its
/// pruned part.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum PriorUpload {
    Artifact(Box<Artifact<PriorBody>>),
    Pruned(PrunedPrior),
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateRequest {
    pub prior: serde_json::Value,
    /// Defaults to the series length the prior was fitted on.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub frame_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRequest {
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
enum JournalEntry {
    Create {
        id: String,
        prior: PrunedPrior,
        n: usize,
        frame_rate: f64,
    },
    Label {
        id: String,
        index: usize,
        value: f64,
    },
    Undo {
        id: String,
    },
}

/// Resolves an uploaded prior into its pruned part and default grid.
pub fn parse_prior(req: &CreateRequest) -> Result<(PrunedPrior, usize, f64), ServiceError> {
    let upload: PriorUpload = serde_json::from_value(req.prior.clone()).map_err(|e| {
        let mut err = ServiceError::new(400, "schema", "prior is neither a prior artifact nor a pruned prior");
        err.detail = serde_json::json!({ "error": e.to_string() });
        err
    })?;
    let (pruned, n0, fps0) = match upload {
        PriorUpload::Artifact(a) => {
            if a.envelope.kind != crate::io::kind::PRIOR || a.envelope.schema_version != crate::io::SCHEMA_VERSION {
                let mut err = ServiceError::new(400, "schema", "unsupported prior artifact");
                err.detail = serde_json::json!({
                    "kind": a.envelope.kind,
                    "schema_version": a.envelope.schema_version,
                });
                return Err(err);
            }
            (a.body.pruned, Some(a.body.n), Some(a.body.frame_rate))
        }
        PriorUpload::Pruned(p) => (p, None, None),
    };
    let n = req
        .n
        .or(n0)
        .ok_or_else(|| ServiceError::validation("series length `n` is required"))?;
    let fps = req
        .frame_rate
        .or(fps0)
        .ok_or_else(|| ServiceError::validation("`frame_rate` is required"))?;
    Ok((pruned, n, fps))
}

/// All sessions plus the optional journal.
#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    journal: Option<Mutex<File>>,
    counter: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl SessionStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store backed by an append-only journal; existing entries are replayed.
    pub fn with_journal(path: &Path) -> Result<Self, Error> {
        let mut store = Self::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: JournalEntry = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(Some(i + 1), format!("journal entry: {e}")))?;
                store
                    .apply(entry)
                    .map_err(|e| Error::parse(Some(i + 1), format!("journal replay: {e}")))?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        store.journal = Some(Mutex::new(file));
        Ok(store)
    }

    fn apply(&self, entry: JournalEntry) -> Result<(), ServiceError> {
        match entry {
            JournalEntry::Create {
                id,
                prior,
                n,
                frame_rate,
            } => {
                if let Some(num) = id.strip_prefix("s").and_then(|s| s.parse::<u64>().ok()) {
                    self.counter.fetch_max(num, Ordering::SeqCst);
                }
                let session = Session::new(id.clone(), prior, n, frame_rate)?;
                self.write_sessions().insert(id, Arc::new(Mutex::new(session)));
            }
            JournalEntry::Label { id, index, value } => {
                self.with_session(&id, |s| s.submit(index, value))?;
            }
            JournalEntry::Undo { id } => {
                self.with_session(&id, |s| s.undo())?;
            }
        }
        Ok(())
    }

    fn write_sessions(&self) -> std::sync::RwLockWriteGuard<'_, HashMap<String, Arc<Mutex<Session>>>> {
        self.sessions.write().unwrap_or_else(|p| p.into_inner())
    }

    fn record(&self, entry: &JournalEntry) -> Result<(), ServiceError> {
        if let Some(j) = &self.journal {
            let mut line = serde_json::to_string(entry).map_err(|e| ServiceError::new(500, "json", e.to_string()))?;
            line.push('\n');
            let mut f = lock(j);
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| ServiceError::new(500, "io", format!("journal write failed: {e}")))?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::not_found(id))
    }

    fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let session = self.get(id)?;
        let mut guard = lock(&session);
        f(&mut guard)
    }

    pub fn create(&self, req: &CreateRequest) -> Result<SessionState, ServiceError> {
        let (prior, n, frame_rate) = parse_prior(req)?;
        let id = format!("s{}", self.counter.fetch_add(1, Ordering::SeqCst) + 1);
        let session = Session::new(id.clone(), prior.clone(), n, frame_rate)?;
        let state = session.state()?;
        self.record(&JournalEntry::Create {
            id: id.clone(),
            prior,
            n,
            frame_rate,
        })?;
        self.write_sessions().insert(id, Arc::new(Mutex::new(session)));
        Ok(state)
    }

    pub fn state(&self, id: &str) -> Result<SessionState, ServiceError> {
        self.with_session(id, |s| s.state())
    }

    pub fn suggestion(&self, id: &str) -> Result<Suggestion, ServiceError> {
        self.with_session(id, |s| s.suggestion())
    }

    pub fn submit(&self, id: &str, index: usize, value: f64) -> Result<PosteriorSummary, ServiceError> {
        let session = self.get(id)?;
        let mut s = lock(&session);
        let summary = s.submit(index, value)?;
        if let Err(e) = self.record(&JournalEntry::Label {
            id: id.to_string(),
            index,
            value,
        }) {
            s.undo().ok();
            return Err(e);
        }
        Ok(summary)
    }

    pub fn undo(&self, id: &str) -> Result<PosteriorSummary, ServiceError> {
        let session = self.get(id)?;
        let mut s = lock(&session);
        let last = s.labels().last().cloned();
        let summary = s.undo()?;
        if let Err(e) = self.record(&JournalEntry::Undo { id: id.to_string() }) {
            if let Some(p) = last {
                s.submit(p.index, p.value).ok();
            }
            return Err(e);
        }
        Ok(summary)
    }

    pub fn curve(&self, id: &str) -> Result<Curve, ServiceError> {
        self.with_session(id, |s| s.curve())
    }
}

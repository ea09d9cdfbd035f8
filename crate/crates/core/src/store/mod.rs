//! Append-only session storage.
//!
//! ```text
//! <root>/store.json              schema version, layout hash, normalization
//! <root>/layout.toml             board layout the samples refer to
//! <root>/participants.jsonl      participant registry (last line per id wins)
//! <root>/index.jsonl             session index (last line per id wins)
//! <root>/sessions/<id>/events.jsonl
//! <root>/sessions/<id>/samples.jsonl
//! <root>/sessions/<id>/eyetracker.jsonl
//! <root>/sessions/<id>/journal.jsonl
//! <root>/sessions/<id>/images/<sample>.png, <sample>_norm.png
//! ```
//!
//! Every file is written by appending whole lines, so a crash can at worst
//! leave one torn trailing line, which readers skip and writers cut off.

mod export;
mod folds;

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::board_geometry::BoardLayout;
use crate::capture::GazeSample;
use crate::engine::SessionEvent;
use crate::eval::EvalRecord;
use crate::ids::{Mode, ParticipantId, SessionId};
use crate::jsonl::{self, Appender, JsonlError};
use crate::normalization::NormalizationParams;
use crate::seed;

pub use export::{
    export_dataset, import_dataset, read_manifest, DatasetManifest, ExportFilter, EyetrackerFilter, ParticipantEntry,
    MANIFEST_SCHEMA_VERSION,
};
pub use folds::{fine_tune_draws, make_fold_split, FoldSplit, DEFAULT_FINE_TUNE_DRAW};

pub const STORE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Records(#[from] JsonlError),
    #[error("invalid sample: {0}")]
    Validation(String),
    #[error("session `{0}` already exists")]
    SessionExists(SessionId),
    #[error("unknown session `{0}`")]
    UnknownSession(SessionId),
    #[error("unknown participant `{0}`")]
    UnknownParticipant(ParticipantId),
    #[error("no samples match the export filter")]
    EmptyExport,
    #[error("cannot split {n} participants into {k} folds")]
    InsufficientParticipants { k: usize, n: usize },
    #[error("{0}")]
    Format(String),
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_owned(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub participant_id: ParticipantId,
    pub wearing_eyetracker: bool,
    /// Staff stand-ins; never exported.
    #[serde(default)]
    pub exclude_from_dataset: bool,
    pub registered_at_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Completed,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionIndexEntry {
    pub session_id: SessionId,
    pub mode: Mode,
    pub participants: Vec<ParticipantId>,
    pub status: SessionStatus,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoreMeta {
    schema_version: u32,
    layout_hash: String,
    normalization: NormalizationParams,
    id_salt: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreOptions {
    /// fsync after every append.
    pub sync: bool,
    /// Salt for participant tokens; random when absent.
    pub id_salt: Option<u64>,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self { sync: true, id_salt: None }
    }
}

/// Whether an append wrote a new record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppendOutcome {
    Appended,
    Duplicate,
}

struct Registry {
    participants: BTreeMap<ParticipantId, Participant>,
    participants_file: Appender,
    index: BTreeMap<SessionId, SessionIndexEntry>,
    index_file: Appender,
    open_writers: BTreeSet<SessionId>,
}

struct Inner {
    root: PathBuf,
    meta: StoreMeta,
    layout: BoardLayout,
    options: StoreOptions,
    registry: Mutex<Registry>,
}

/// Handle to a store directory. Cheap to clone and shareable between
/// session executors; each session has a single [`SessionWriter`].
#[derive(Clone)]
pub struct Store {
    inner: Arc<Inner>,
}

impl Store {
    /// Creates a store, or opens an existing one if its layout and
    /// normalization match.
    pub fn create(
        root: &Path,
        layout: &BoardLayout,
        normalization: &NormalizationParams,
        options: StoreOptions,
    ) -> Result<Self, StoreError> {
        let meta_path = root.join("store.json");
        if meta_path.exists() {
            let store = Self::open(root, options)?;
            if store.inner.meta.layout_hash != layout.content_hash() || store.inner.meta.normalization != *normalization {
                return Err(StoreError::Format(format!(
                    "{}: existing store has a different layout or normalization",
                    root.display()
                )));
            }
            return Ok(store);
        }
        std::fs::create_dir_all(root.join("sessions")).map_err(|e| StoreError::io(root, e))?;
        let meta = StoreMeta {
            schema_version: STORE_SCHEMA_VERSION,
            layout_hash: layout.content_hash(),
            normalization: *normalization,
            id_salt: options.id_salt.unwrap_or_else(fresh_salt),
        };
        write_atomic(&root.join("layout.toml"), layout.to_toml_string().as_bytes())?;
        let text = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
        write_atomic(&meta_path, text.as_bytes())?;
        Self::open(root, options)
    }

    pub fn open(root: &Path, options: StoreOptions) -> Result<Self, StoreError> {
        let meta_path = root.join("store.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| StoreError::io(&meta_path, e))?;
        let meta: StoreMeta =
            serde_json::from_str(&text).map_err(|e| StoreError::Format(format!("{}: {e}", meta_path.display())))?;
        if meta.schema_version != STORE_SCHEMA_VERSION {
            return Err(StoreError::Format(format!("unsupported store schema {}", meta.schema_version)));
        }
        let layout_path = root.join("layout.toml");
        let layout_text = std::fs::read_to_string(&layout_path).map_err(|e| StoreError::io(&layout_path, e))?;
        let layout = BoardLayout::from_toml_str(&layout_text)
            .map_err(|e| StoreError::Format(format!("{}: {e}", layout_path.display())))?;
        if layout.content_hash() != meta.layout_hash {
            return Err(StoreError::Format("layout.toml does not match the recorded layout hash".into()));
        }
        let participants_path = root.join("participants.jsonl");
        let index_path = root.join("index.jsonl");
        let participants = jsonl::read::<Participant>(&participants_path)?
            .into_iter()
            .map(|p| (p.participant_id.clone(), p))
            .collect();
        let index = jsonl::read::<SessionIndexEntry>(&index_path)?
            .into_iter()
            .map(|s| (s.session_id.clone(), s))
            .collect();
        let registry = Registry {
            participants,
            participants_file: Appender::open(&participants_path, options.sync)?,
            index,
            index_file: Appender::open(&index_path, options.sync)?,
            open_writers: BTreeSet::new(),
        };
        Ok(Self { inner: Arc::new(Inner { root: root.to_owned(), meta, layout, options, registry: Mutex::new(registry) }) })
    }

    pub fn root(&self) -> &Path {
        &self.inner.root
    }

    pub fn layout(&self) -> &BoardLayout {
        &self.inner.layout
    }

    pub fn layout_hash(&self) -> &str {
        &self.inner.meta.layout_hash
    }

    pub fn normalization(&self) -> &NormalizationParams {
        &self.inner.meta.normalization
    }

    fn registry(&self) -> std::sync::MutexGuard<'_, Registry> {
        self.inner.registry.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Issues an opaque participant token and records the participant.
    pub fn register_participant(
        &self,
        wearing_eyetracker: bool,
        exclude_from_dataset: bool,
        now_ms: u64,
    ) -> Result<ParticipantId, StoreError> {
        let mut reg = self.registry();
        let mut n = reg.participants.len() as u64;
        let id = loop {
            let token = seed::derive(self.inner.meta.id_salt, "participant", n);
            let id = ParticipantId::new(format!("p{:012x}", token >> 16));
            if !reg.participants.contains_key(&id) {
                break id;
            }
            n += 1;
        };
        let p = Participant { participant_id: id.clone(), wearing_eyetracker, exclude_from_dataset, registered_at_ms: now_ms };
        reg.participants_file.append(&p)?;
        reg.participants.insert(id.clone(), p);
        Ok(id)
    }

    /// Inserts or replaces a participant record with a known id.
    pub fn upsert_participant(&self, participant: Participant) -> Result<(), StoreError> {
        let mut reg = self.registry();
        if reg.participants.get(&participant.participant_id) == Some(&participant) {
            return Ok(());
        }
        reg.participants_file.append(&participant)?;
        reg.participants.insert(participant.participant_id.clone(), participant);
        Ok(())
    }

    pub fn participant(&self, id: &ParticipantId) -> Option<Participant> {
        self.registry().participants.get(id).cloned()
    }

    pub fn participants(&self) -> Vec<Participant> {
        self.registry().participants.values().cloned().collect()
    }

    pub fn sessions(&self) -> Vec<SessionIndexEntry> {
        self.registry().index.values().cloned().collect()
    }

    pub fn session(&self, id: &SessionId) -> Option<SessionIndexEntry> {
        self.registry().index.get(id).cloned()
    }

    pub fn session_dir(&self, id: &SessionId) -> PathBuf {
        self.inner.root.join("sessions").join(id.as_str())
    }

    fn write_index(&self, reg: &mut Registry, entry: SessionIndexEntry) -> Result<(), StoreError> {
        reg.index_file.append(&entry)?;
        reg.index.insert(entry.session_id.clone(), entry);
        Ok(())
    }

    /// Starts a new session. Every participant must be registered.
    pub fn open_session(
        &self,
        session_id: &SessionId,
        mode: Mode,
        participants: &[ParticipantId],
        now_ms: u64,
    ) -> Result<SessionWriter, StoreError> {
        if session_id.as_str().is_empty() || session_id.as_str().contains(['/', '\\', '.']) {
            return Err(StoreError::Format(format!("invalid session id `{session_id}`")));
        }
        let mut reg = self.registry();
        if reg.index.contains_key(session_id) || reg.open_writers.contains(session_id) {
            return Err(StoreError::SessionExists(session_id.clone()));
        }
        if let Some(p) = participants.iter().find(|p| !reg.participants.contains_key(*p)) {
            return Err(StoreError::UnknownParticipant(p.clone()));
        }
        let dir = self.session_dir(session_id);
        std::fs::create_dir_all(dir.join("images")).map_err(|e| StoreError::io(&dir, e))?;
        let entry = SessionIndexEntry {
            session_id: session_id.clone(),
            mode,
            participants: participants.to_vec(),
            status: SessionStatus::Open,
            created_at_ms: now_ms,
            updated_at_ms: now_ms,
        };
        self.write_index(&mut reg, entry)?;
        reg.open_writers.insert(session_id.clone());
        drop(reg);
        SessionWriter::new(self.clone(), session_id.clone())
    }

    /// Reopens the writer of an existing session, e.g. after a restart.
    pub fn resume_session(&self, session_id: &SessionId) -> Result<SessionWriter, StoreError> {
        let mut reg = self.registry();
        if !reg.index.contains_key(session_id) {
            return Err(StoreError::UnknownSession(session_id.clone()));
        }
        if !reg.open_writers.insert(session_id.clone()) {
            return Err(StoreError::SessionExists(session_id.clone()));
        }
        drop(reg);
        SessionWriter::new(self.clone(), session_id.clone())
    }

    fn known(&self, id: &SessionId) -> Result<PathBuf, StoreError> {
        if self.registry().index.contains_key(id) {
            Ok(self.session_dir(id))
        } else {
            Err(StoreError::UnknownSession(id.clone()))
        }
    }

    pub fn read_events(&self, id: &SessionId) -> Result<Vec<SessionEvent>, StoreError> {
        Ok(jsonl::read(&self.known(id)?.join("events.jsonl"))?)
    }

    pub fn read_samples(&self, id: &SessionId) -> Result<Vec<GazeSample>, StoreError> {
        Ok(jsonl::read(&self.known(id)?.join("samples.jsonl"))?)
    }

    pub fn read_eval_records(&self, id: &SessionId) -> Result<Vec<EvalRecord>, StoreError> {
        Ok(jsonl::read(&self.known(id)?.join("eyetracker.jsonl"))?)
    }

    pub fn read_journal<T: serde::de::DeserializeOwned>(&self, id: &SessionId) -> Result<Vec<T>, StoreError> {
        Ok(jsonl::read(&self.known(id)?.join("journal.jsonl"))?)
    }

    /// Raw bytes of the event log.
    pub fn event_log_bytes(&self, id: &SessionId) -> Result<Vec<u8>, StoreError> {
        let p = self.known(id)?.join("events.jsonl");
        match std::fs::read(&p) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(StoreError::io(&p, e)),
        }
    }

    /// Every stored sample, sorted by sample id.
    pub fn all_samples(&self) -> Result<Vec<GazeSample>, StoreError> {
        let mut out = Vec::new();
        for s in self.sessions() {
            out.extend(self.read_samples(&s.session_id)?);
        }
        out.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        Ok(out)
    }

    pub fn all_eval_records(&self) -> Result<Vec<EvalRecord>, StoreError> {
        let mut out = Vec::new();
        for s in self.sessions() {
            out.extend(self.read_eval_records(&s.session_id)?);
        }
        out.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        Ok(out)
    }

    /// Absolute path of a path stored in a sample record.
    pub fn resolve(&self, session: &SessionId, relative: &str) -> PathBuf {
        self.session_dir(session).join(relative)
    }
}

fn fresh_salt() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos() as u64);
    seed::mix64(nanos ^ (u64::from(std::process::id()) << 32))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| StoreError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))
}

pub(crate) fn write_png(path: &Path, image: &GrayImage) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
    }
    let tmp = path.with_extension("png.tmp");
    image
        .save_with_format(&tmp, image::ImageFormat::Png)
        .map_err(|e| StoreError::Format(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))
}

/// Where a running session's output goes. Implemented by [`SessionWriter`]
/// and [`MemorySink`]; tests use it to inject storage failures.
pub trait SessionSink: Send {
    fn append_event(&mut self, event: &SessionEvent) -> Result<(), StoreError>;
    fn persist_capture(
        &mut self,
        sample: &GazeSample,
        image: &GrayImage,
        normalized: &GrayImage,
    ) -> Result<AppendOutcome, StoreError>;
    fn append_eval_record(&mut self, record: &EvalRecord) -> Result<(), StoreError>;
    fn finish(&mut self, status: SessionStatus, now_ms: u64) -> Result<(), StoreError>;
    /// One serialized journal line (with trailing newline). Dropped by
    /// sinks that keep no journal.
    fn append_journal_line(&mut self, line: &str) -> Result<(), StoreError> {
        let _ = line;
        Ok(())
    }
}

/// The single writer of one session directory.
pub struct SessionWriter {
    store: Store,
    session_id: SessionId,
    dir: PathBuf,
    events: Appender,
    samples: Appender,
    eyetracker: Appender,
    journal: Appender,
    sample_ids: BTreeSet<crate::ids::SampleId>,
}

impl SessionWriter {
    fn new(store: Store, session_id: SessionId) -> Result<Self, StoreError> {
        let dir = store.session_dir(&session_id);
        let sync = store.inner.options.sync;
        let samples_path = dir.join("samples.jsonl");
        let sample_ids = jsonl::read::<GazeSample>(&samples_path)?.into_iter().map(|s| s.sample_id).collect();
        Ok(Self {
            events: Appender::open(&dir.join("events.jsonl"), sync)?,
            samples: Appender::open(&samples_path, sync)?,
            eyetracker: Appender::open(&dir.join("eyetracker.jsonl"), sync)?,
            journal: Appender::open(&dir.join("journal.jsonl"), sync)?,
            store,
            session_id,
            dir,
            sample_ids,
        })
    }

    pub fn session_id(&self) -> &SessionId {
        &self.session_id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Writes an image at a path relative to the session directory.
    pub fn write_image(&mut self, relative: &str, image: &GrayImage) -> Result<(), StoreError> {
        write_png(&self.dir.join(relative), image)
    }

    /// Appends a validated sample whose images already exist. A sample id
    /// that is already stored is a no-op.
    pub fn append_sample(&mut self, sample: &GazeSample) -> Result<AppendOutcome, StoreError> {
        if sample.session_id != self.session_id {
            return Err(StoreError::Validation(format!(
                "{}: belongs to session {}, not {}",
                sample.sample_id, sample.session_id, self.session_id
            )));
        }
        sample.validate().map_err(|e| StoreError::Validation(e.to_string()))?;
        if self.sample_ids.contains(&sample.sample_id) {
            tracing::warn!(sample = %sample.sample_id, "duplicate sample ignored");
            return Ok(AppendOutcome::Duplicate);
        }
        for rel in [&sample.image_path, &sample.normalized_image_path] {
            if !self.dir.join(rel).is_file() {
                return Err(StoreError::Validation(format!("{}: image `{rel}` does not exist", sample.sample_id)));
            }
        }
        self.samples.append(sample)?;
        self.sample_ids.insert(sample.sample_id.clone());
        Ok(AppendOutcome::Appended)
    }

    pub fn append_journal<T: Serialize>(&mut self, entry: &T) -> Result<(), StoreError> {
        Ok(self.journal.append(entry)?)
    }

    pub fn sample_count(&self) -> usize {
        self.sample_ids.len()
    }
}

impl SessionSink for SessionWriter {
    fn append_event(&mut self, event: &SessionEvent) -> Result<(), StoreError> {
        Ok(self.events.append(event)?)
    }

    fn persist_capture(
        &mut self,
        sample: &GazeSample,
        image: &GrayImage,
        normalized: &GrayImage,
    ) -> Result<AppendOutcome, StoreError> {
        if self.sample_ids.contains(&sample.sample_id) {
            tracing::warn!(sample = %sample.sample_id, "duplicate sample ignored");
            return Ok(AppendOutcome::Duplicate);
        }
        self.write_image(&sample.image_path, image)?;
        self.write_image(&sample.normalized_image_path, normalized)?;
        self.append_sample(sample)
    }

    fn append_eval_record(&mut self, record: &EvalRecord) -> Result<(), StoreError> {
        Ok(self.eyetracker.append(record)?)
    }

    fn append_journal_line(&mut self, line: &str) -> Result<(), StoreError> {
        Ok(self.journal.append_raw(line)?)
    }

    fn finish(&mut self, status: SessionStatus, now_ms: u64) -> Result<(), StoreError> {
        let mut reg = self.store.registry();
        let mut entry = reg
            .index
            .get(&self.session_id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSession(self.session_id.clone()))?;
        entry.status = status;
        entry.updated_at_ms = now_ms;
        self.store.write_index(&mut reg, entry)
    }
}

impl Drop for SessionWriter {
    fn drop(&mut self) {
        self.store.registry().open_writers.remove(&self.session_id);
    }
}

/// In-memory sink for simulations and tests.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub events: Vec<SessionEvent>,
    pub samples: Vec<GazeSample>,
    pub eval_records: Vec<EvalRecord>,
    pub status: Option<SessionStatus>,
    /// Keep the images of persisted samples.
    pub keep_images: bool,
    pub images: BTreeMap<String, GrayImage>,
}

impl SessionSink for MemorySink {
    fn append_event(&mut self, event: &SessionEvent) -> Result<(), StoreError> {
        self.events.push(event.clone());
        Ok(())
    }

    fn persist_capture(
        &mut self,
        sample: &GazeSample,
        image: &GrayImage,
        normalized: &GrayImage,
    ) -> Result<AppendOutcome, StoreError> {
        sample.validate().map_err(|e| StoreError::Validation(e.to_string()))?;
        if self.samples.iter().any(|s| s.sample_id == sample.sample_id) {
            return Ok(AppendOutcome::Duplicate);
        }
        if self.keep_images {
            self.images.insert(sample.image_path.clone(), image.clone());
            self.images.insert(sample.normalized_image_path.clone(), normalized.clone());
        }
        self.samples.push(sample.clone());
        Ok(AppendOutcome::Appended)
    }

    fn append_eval_record(&mut self, record: &EvalRecord) -> Result<(), StoreError> {
        self.eval_records.push(record.clone());
        Ok(())
    }

    fn finish(&mut self, status: SessionStatus, _now_ms: u64) -> Result<(), StoreError> {
        self.status = Some(status);
        Ok(())
    }
}

impl<T: SessionSink + ?Sized> SessionSink for Box<T> {
    fn append_event(&mut self, event: &SessionEvent) -> Result<(), StoreError> {
        (**self).append_event(event)
    }

    fn persist_capture(
        &mut self,
        sample: &GazeSample,
        image: &GrayImage,
        normalized: &GrayImage,
    ) -> Result<AppendOutcome, StoreError> {
        (**self).persist_capture(sample, image, normalized)
    }

    fn append_eval_record(&mut self, record: &EvalRecord) -> Result<(), StoreError> {
        (**self).append_eval_record(record)
    }

    fn finish(&mut self, status: SessionStatus, now_ms: u64) -> Result<(), StoreError> {
        (**self).finish(status, now_ms)
    }

    fn append_journal_line(&mut self, line: &str) -> Result<(), StoreError> {
        (**self).append_journal_line(line)
    }
}

//! File-system persistence: one directory per study holding an append-only event log,
//! state snapshots and the study's blobs.
//!
//! ```text
//! <root>/blobs/                   shared uploads, readable by every study
//! <root>/studies/<id>/study.json  definition name and version
//! <root>/studies/<id>/events.jsonl
//! <root>/studies/<id>/snapshots/<events>.json
//! <root>/studies/<id>/blobs/
//! ```
//!
//! The log is the only authority. Each commit is written with one `write` call; lines of a
//! multi-event commit carry `more`, the number of lines still to come, so a commit torn by a
//! crash is recognised and dropped on reopen. Snapshots are caches checked against the log.

mod blobs;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blobs::FsBlobs;

use crate::gsm::{Engine, EngineError, EventKind, StudyEvent, StudyState, WorkflowDefinition};
use crate::parallel::Exec;
use crate::study::{
    build_fea_workflow, ReplayReport, ReplayScript, ScriptError, Session, SessionError, CONCEPTUAL_MODEL,
};
use crate::toolbox::{BlobError, Toolbox};

/// Events between automatic snapshots.
pub const SNAPSHOT_EVERY: usize = 64;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("unknown study {0}")]
    UnknownStudy(String),
    #[error("unknown workflow definition version {0}")]
    UnknownDefinition(String),
    #[error("no state at sequence {seq}; the log ends at {}", last.map_or("nothing".to_string(), |l| l.to_string()))]
    UnknownSequence { seq: u64, last: Option<u64> },
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Script(#[from] ScriptError),
}

impl StoreError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Io { .. } => "io",
            StoreError::Corrupt { .. } => "corrupt_store",
            StoreError::UnknownStudy(_) => "unknown_study",
            StoreError::UnknownDefinition(_) => "unknown_definition",
            StoreError::UnknownSequence { .. } => "unknown_sequence",
            StoreError::Blob(BlobError::NotFound(_)) => "blob_not_found",
            StoreError::Blob(BlobError::Corrupt { .. }) => "blob_corrupt",
            StoreError::Blob(BlobError::Io(_)) => "io",
            StoreError::Session(_) => "session",
            StoreError::Script(_) => "script",
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension(format!("{}.tmp", uuid::Uuid::new_v4().simple()));
    fs::write(&tmp, bytes).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyMeta {
    pub id: String,
    pub definition: String,
    pub version: String,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    #[serde(flatten)]
    event: StudyEvent,
    #[serde(default, skip_serializing_if = "is_zero")]
    more: u32,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

/// Complete commits of a log, and the byte length they occupy.
fn read_log(path: &Path) -> Result<(Vec<StudyEvent>, usize), StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io(path)(e)),
    };
    let corrupt = |reason: String| StoreError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut events = Vec::new();
    let mut pending: Vec<StudyEvent> = Vec::new();
    let mut expect_more: Option<u32> = None;
    let mut committed = 0;
    let mut pos = 0;
    while let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') {
        let end = pos + nl + 1;
        let line: LogLine = match serde_json::from_slice(&bytes[pos..end - 1]) {
            Ok(l) => l,
            // Only the final write can be torn.
            Err(_) if end == bytes.len() => break,
            Err(e) => return Err(corrupt(format!("byte {pos}: {e}"))),
        };
        if let Some(m) = expect_more {
            if line.more + 1 != m {
                return Err(corrupt(format!(
                    "byte {pos}: commit continues with more={}, expected {}",
                    line.more,
                    m - 1
                )));
            }
        }
        let seq = (events.len() + pending.len()) as u64;
        if line.event.seq != seq {
            return Err(corrupt(format!(
                "byte {pos}: sequence {} where {seq} was due",
                line.event.seq
            )));
        }
        pending.push(line.event);
        pos = end;
        if line.more == 0 {
            events.append(&mut pending);
            committed = end;
            expect_more = None;
        } else {
            expect_more = Some(line.more);
        }
    }
    Ok((events, committed))
}

/// Append side of a study log.
struct LogWriter {
    path: PathBuf,
    file: File,
    written: usize,
}

impl LogWriter {
    /// Append `events[written..]` as one commit.
    fn sync(&mut self, events: &[StudyEvent]) -> Result<(), StoreError> {
        let new = &events[self.written..];
        if new.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for (i, event) in new.iter().enumerate() {
            let line = LogLine {
                event: event.clone(),
                more: (new.len() - 1 - i) as u32,
            };
            serde_json::to_writer(&mut buf, &line).expect("events serialize");
            buf.push(b'\n');
        }
        self.file.write_all(&buf).map_err(io(&self.path))?;
        self.file.sync_data().map_err(io(&self.path))?;
        self.written = events.len();
        Ok(())
    }
}

/// Root of a file-system store.
#[derive(Debug, Clone)]
pub struct StudyStore {
    root: PathBuf,
    definitions: BTreeMap<String, Arc<WorkflowDefinition>>,
    exec: Exec,
}

impl StudyStore {
    /// Open or initialise a store with the built-in FEA workflow registered.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let studies = root.join("studies");
        fs::create_dir_all(&studies).map_err(io(&studies))?;
        FsBlobs::open(root.join("blobs"))?;
        let fea = Arc::new(build_fea_workflow());
        Ok(StudyStore {
            root,
            definitions: BTreeMap::from([(fea.version.clone(), fea)]),
            exec: Exec::default(),
        })
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn definition(&self, version: &str) -> Result<&Arc<WorkflowDefinition>, StoreError> {
        self.definitions
            .get(version)
            .ok_or_else(|| StoreError::UnknownDefinition(version.to_string()))
    }

    /// Definition new studies get when no version is asked for.
    pub fn default_version(&self) -> &str {
        self.definitions
            .keys()
            .next_back()
            .expect("one definition is registered")
    }

    /// Uploads shared by all studies.
    pub fn shared_blobs(&self) -> Result<FsBlobs, StoreError> {
        Ok(FsBlobs::open(self.root.join("blobs"))?)
    }

    /// Every blob of the store: shared uploads, then each study's own.
    pub fn any_blobs(&self) -> Result<FsBlobs, StoreError> {
        let mut b = self.shared_blobs()?;
        for id in self.list()? {
            b = b.with_fallback(self.study_dir(&id).join("blobs"));
        }
        Ok(b)
    }

    fn study_dir(&self, id: &str) -> PathBuf {
        self.root.join("studies").join(id)
    }

    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("studies");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io(&dir))? {
            let entry = entry.map_err(io(&dir))?;
            if entry.path().join("study.json").is_file() {
                ids.extend(entry.file_name().to_str().map(str::to_string));
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// A new study whose conceptual model already exists.
    pub fn create(&self, version: Option<&str>) -> Result<PersistentStudy, StoreError> {
        let mut study = self.create_empty(version)?;
        study.apply(|s| s.submit(EventKind::create(CONCEPTUAL_MODEL, "cmo-1", None)))?;
        Ok(study)
    }

    /// A new study with no events, for replaying a complete log.
    pub fn create_empty(&self, version: Option<&str>) -> Result<PersistentStudy, StoreError> {
        let version = version.unwrap_or(self.default_version()).to_string();
        let def = self.definition(&version)?.clone();
        let id = loop {
            let id = format!("s-{}", &uuid::Uuid::new_v4().simple().to_string()[..12]);
            if !self.study_dir(&id).exists() {
                break id;
            }
        };
        self.init(&id, &def)?;
        self.load(&id)
    }

    fn init(&self, id: &str, def: &WorkflowDefinition) -> Result<(), StoreError> {
        let dir = self.study_dir(id);
        for sub in ["snapshots", "blobs"] {
            fs::create_dir_all(dir.join(sub)).map_err(io(&dir))?;
        }
        let meta = StudyMeta {
            id: id.to_string(),
            definition: def.name.clone(),
            version: def.version.clone(),
        };
        write_atomic(
            &dir.join("study.json"),
            &serde_json::to_vec_pretty(&meta).expect("meta serializes"),
        )
    }

    /// Reopen a study, rebuilding its state from the log. A torn trailing commit is cut off
    /// and snapshots that disagree with the log are discarded.
    pub fn load(&self, id: &str) -> Result<PersistentStudy, StoreError> {
        let dir = self.study_dir(id);
        let meta_path = dir.join("study.json");
        let meta: StudyMeta = match fs::read(&meta_path) {
            Ok(b) => serde_json::from_slice(&b).map_err(|e| StoreError::Corrupt {
                path: meta_path.clone(),
                reason: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StoreError::UnknownStudy(id.to_string())),
            Err(e) => return Err(io(&meta_path)(e)),
        };
        let def = self.definition(&meta.version)?.clone();
        let blobs = FsBlobs::open(dir.join("blobs"))?.with_fallback(self.root.join("blobs"));
        let toolbox = Toolbox::new(Arc::new(blobs)).with_exec(self.exec);

        let log_path = dir.join("events.jsonl");
        let (events, committed) = read_log(&log_path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io(&log_path))?;
        if file.metadata().map_err(io(&log_path))?.len() > committed as u64 {
            tracing::warn!(
                study = id,
                kept = committed,
                "dropping torn commit at the end of the log"
            );
            file.set_len(committed as u64).map_err(io(&log_path))?;
        }

        let snap_dir = dir.join("snapshots");
        let mut snapshots = list_snapshots(&snap_dir)?;
        let mut session = Session::new(def, toolbox);
        let check = |session: &Session, snapshots: &BTreeSet<usize>| -> Result<(), StoreError> {
            let n = session.events().len();
            if snapshots.contains(&n) {
                let path = snapshot_path(&snap_dir, n);
                let ok = fs::read(&path)
                    .ok()
                    .and_then(|b| serde_json::from_slice::<StudyState>(&b).ok())
                    .is_some_and(|s| s == *session.state());
                if !ok {
                    tracing::warn!(study = id, events = n, "snapshot disagrees with the log; rewriting it");
                    write_snapshot(&snap_dir, n, session.state())?;
                }
            }
            Ok(())
        };
        check(&session, &snapshots)?;
        for ev in &events {
            session.submit_event(ev.clone()).map_err(|e| StoreError::Corrupt {
                path: log_path.clone(),
                reason: format!("event {} no longer applies: {e}", ev.seq),
            })?;
            check(&session, &snapshots)?;
        }
        for stale in snapshots.split_off(&(events.len() + 1)) {
            let path = snapshot_path(&snap_dir, stale);
            fs::remove_file(&path).map_err(io(&path))?;
        }
        Ok(PersistentStudy {
            meta,
            dir: dir.clone(),
            session,
            log: LogWriter {
                path: log_path,
                file,
                written: events.len(),
            },
            snapshots,
        })
    }
}

fn snapshot_path(dir: &Path, events: usize) -> PathBuf {
    dir.join(format!("{events:08}.json"))
}

fn list_snapshots(dir: &Path) -> Result<BTreeSet<usize>, StoreError> {
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let name = entry.map_err(io(dir))?.file_name();
        if let Some(n) = name
            .to_str()
            .and_then(|n| n.strip_suffix(".json"))
            .and_then(|n| n.parse().ok())
        {
            out.insert(n);
        }
    }
    Ok(out)
}

fn write_snapshot(dir: &Path, events: usize, state: &StudyState) -> Result<(), StoreError> {
    write_atomic(&snapshot_path(dir, events), state.to_canonical_json().as_bytes())
}

/// A study backed by its directory; every committed change is on disk before it returns.
pub struct PersistentStudy {
    meta: StudyMeta,
    dir: PathBuf,
    session: Session,
    log: LogWriter,
    /// Event counts with a snapshot on disk.
    snapshots: BTreeSet<usize>,
}

impl PersistentStudy {
    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn meta(&self) -> &StudyMeta {
        &self.meta
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn state(&self) -> &StudyState {
        self.session.state()
    }

    /// Run `f` on the session and persist whatever it committed. If persisting fails the
    /// in-memory session is rebuilt from disk so it never runs ahead of the log.
    pub fn apply<T>(&mut self, f: impl FnOnce(&mut Session) -> Result<T, SessionError>) -> Result<T, StoreError> {
        let out = f(&mut self.session);
        self.persist()?;
        Ok(out?)
    }

    fn persist(&mut self) -> Result<(), StoreError> {
        if let Err(e) = self.log.sync(self.session.events()) {
            let (events, _) = read_log(&self.log.path)?;
            let mut session = Session::new(self.session.definition().clone(), self.session.toolbox().clone());
            for ev in &events {
                session.submit_event(ev.clone())?;
            }
            self.log.written = events.len();
            self.session = session;
            return Err(e);
        }
        let n = self.session.events().len();
        if n >= self.snapshots.last().copied().unwrap_or(0) + SNAPSHOT_EVERY {
            write_snapshot(&self.dir.join("snapshots"), n, self.session.state())?;
            self.snapshots.insert(n);
        }
        Ok(())
    }

    /// Replay a script, persisting each accepted event before the next is tried.
    /// `accepted` sees the session after every persisted event.
    pub fn replay(
        &mut self,
        script: &ReplayScript,
        mut accepted: impl FnMut(&Session),
    ) -> Result<ReplayReport, StoreError> {
        let snap_dir = self.dir.join("snapshots");
        let PersistentStudy {
            session,
            log,
            snapshots,
            ..
        } = self;
        let report = script.replay_with(session, |s| {
            log.sync(s.events()).map_err(|e| ScriptError::Persist(e.to_string()))?;
            let n = s.events().len();
            if n % SNAPSHOT_EVERY == 0 {
                write_snapshot(&snap_dir, n, s.state()).map_err(|e| ScriptError::Persist(e.to_string()))?;
                snapshots.insert(n);
            }
            accepted(s);
            Ok(())
        });
        match report {
            Ok(r) => Ok(r),
            Err(e) => {
                // Anything the session holds beyond the log is discarded by a reload.
                self.persist()?;
                Err(e.into())
            }
        }
    }

    /// State after the event with sequence number `seq`, folded from the nearest snapshot.
    pub fn state_at(&self, seq: u64) -> Result<StudyState, StoreError> {
        let events = self.session.events();
        let upto = seq as usize + 1;
        if upto > events.len() {
            return Err(StoreError::UnknownSequence {
                seq,
                last: self.session.state().position_seq(),
            });
        }
        if upto == events.len() {
            return Ok(self.session.state().clone());
        }
        let engine = Engine::new(self.session.definition(), self.session.toolbox());
        let mut from = 0;
        let mut state = engine.empty_state();
        if let Some(&n) = self.snapshots.range(..=upto).next_back() {
            let path = snapshot_path(&self.dir.join("snapshots"), n);
            if let Some(s) = fs::read(&path)
                .ok()
                .and_then(|b| serde_json::from_slice::<StudyState>(&b).ok())
            {
                state = s;
                from = n;
            }
        }
        for ev in &events[from..upto] {
            state = engine
                .apply(&state, ev)
                .map_err(|e: EngineError| StoreError::Corrupt {
                    path: self.log.path.clone(),
                    reason: format!("event {} no longer applies: {e}", ev.seq),
                })?
                .0;
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::study::CASE_STUDY_JSONL;

    fn script() -> ReplayScript {
        ReplayScript::parse(CASE_STUDY_JSONL).unwrap()
    }

    #[test]
    fn create_writes_the_layout() {
        let dir = tempfile::tempdir().unwrap();
        let store = StudyStore::open(dir.path()).unwrap();
        let a = store.create(None).unwrap();
        let b = store.create(None).unwrap();
        assert_ne!(a.id(), b.id());
        assert!(a.dir().join("events.jsonl").is_file());
        assert!(a.dir().join("snapshots").is_dir());
        assert!(a.dir().join("blobs").is_dir());
        assert_eq!(a.state().of_type(CONCEPTUAL_MODEL).count(), 1);
        assert_eq!(store.list().unwrap().len(), 2);
        assert!(matches!(store.create(Some("0")), Err(StoreError::UnknownDefinition(_))));
    }

    #[test]
    fn reopen_rebuilds_the_same_state() {
        let dir = tempfile::tempdir().unwrap();
        let store = StudyStore::open(dir.path()).unwrap();
        let mut s = store.create_empty(None).unwrap();
        let report = s.replay(&script(), |_| {}).unwrap();
        assert!(report.passed(), "{:?}", report.failures);
        let before = s.state().to_canonical_json();
        let id = s.id().to_string();
        drop(s);
        let again = store.load(&id).unwrap();
        assert_eq!(again.state().to_canonical_json(), before);
        assert!(!again.snapshots.is_empty());
    }

    #[test]
    fn torn_commit_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let store = StudyStore::open(dir.path()).unwrap();
        let mut s = store.create(None).unwrap();
        s.apply(|x| x.submit(EventKind::enter("cmo-1", "Specifying objective")))
            .unwrap();
        let good = s.state().clone();
        let path = s.dir().join("events.jsonl");
        let id = s.id().to_string();
        drop(s);
        // First line of a two-line commit, then half a line.
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        writeln!(f, r#"{{"seq":2,"event":"set_attribute","artifact":"cmo-1","name":"objective","value":{{"text":"x"}},"more":1}}"#).unwrap();
        write!(f, r#"{{"seq":3,"event":"leave_st"#).unwrap();
        drop(f);
        let mut s = store.load(&id).unwrap();
        assert_eq!(*s.state(), good);
        s.apply(|x| x.submit(EventKind::set("cmo-1", "objective", crate::gsm::AttrValue::text("y"))))
            .unwrap();
        drop(s);
        assert_eq!(store.load(&id).unwrap().state().next_seq, 3);
    }

    #[test]
    fn corruption_before_the_end_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let store = StudyStore::open(dir.path()).unwrap();
        let mut s = store.create(None).unwrap();
        s.apply(|x| x.submit(EventKind::enter("cmo-1", "Specifying objective")))
            .unwrap();
        let path = s.dir().join("events.jsonl");
        let id = s.id().to_string();
        drop(s);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("create_artifact", "create_artefact", 1)).unwrap();
        assert!(matches!(store.load(&id), Err(StoreError::Corrupt { .. })));
    }

    #[test]
    fn bad_snapshot_is_rewritten() {
        let dir = tempfile::tempdir().unwrap();
        let store = StudyStore::open(dir.path()).unwrap();
        let mut s = store.create_empty(None).unwrap();
        s.replay(&script(), |_| {}).unwrap();
        let id = s.id().to_string();
        let snap = snapshot_path(&s.dir().join("snapshots"), SNAPSHOT_EVERY);
        let expected = s.state_at(SNAPSHOT_EVERY as u64 - 1).unwrap();
        drop(s);
        fs::write(&snap, b"{}").unwrap();
        let s = store.load(&id).unwrap();
        let fixed: StudyState = serde_json::from_slice(&fs::read(&snap).unwrap()).unwrap();
        assert_eq!(fixed, expected);
        assert_eq!(s.state_at(SNAPSHOT_EVERY as u64 - 1).unwrap(), expected);
    }

    #[test]
    fn state_at_matches_prefix_folds() {
        let dir = tempfile::tempdir().unwrap();
        let store = StudyStore::open(dir.path()).unwrap();
        let mut s = store.create_empty(None).unwrap();
        s.replay(&script(), |_| {}).unwrap();
        let events = s.session().events().to_vec();
        let engine = Engine::new(s.session().definition(), s.session().toolbox());
        for seq in [0u64, 5, 63, 64, 65, 130, events.len() as u64 - 1] {
            let folded = engine.replay(&events[..=seq as usize]).unwrap();
            assert_eq!(s.state_at(seq).unwrap(), folded, "at {seq}");
        }
        assert!(matches!(
            s.state_at(events.len() as u64),
            Err(StoreError::UnknownSequence { .. })
        ));
        assert_eq!(s.state_at(0).unwrap().artifacts.len(), 1);
    }
}

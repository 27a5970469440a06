//! Durable record store: the `logs` and `loops` tables, the content-addressed
//! object store, and the per-run record files they are rebuilt from.
//!
//! Source of truth is `.flor/records/*.json`, one file per commit; these are
//! what gets committed to version control. `index.db` is a disposable cache
//! of the parsed tables, rebuilt whenever the record file listing changes.
//! Blobs live outside version control under `.flor/objects/<hh>/<hash>`.
//!
//! Writes are buffered in a pending run and become visible to readers only
//! after the run file is flushed at commit (snapshot-at-commit isolation).

pub mod value;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::Timestamp;
use crate::config::FLOR_DIR;
use crate::error::{FlorError, Result};
use value::{Encoded, RawValue, TYPE_BLOB};

pub const RECORDS_DIR: &str = "records";
pub const OBJECTS_DIR: &str = "objects";
pub const INDEX_FILE: &str = "index.db";

/// Reserved `value_name` prefix for resolved pipeline arguments.
pub const ARG_PREFIX: &str = "arg::";
/// Companion record carrying the was-default flag of an `arg::` record.
pub const ARG_DEFAULT_PREFIX: &str = "arg_default::";
/// Run status marker written once per pipeline run.
pub const RUN_STATUS_NAME: &str = "run::status";
/// Provenance marker on backfilled replay records.
pub const REPLAY_OF_NAME: &str = "replay::of";

/// One logged (name, value) with its full context key. `seq` is the
/// store-assigned emission ordinal, strictly increasing per
/// (projid, tstamp, filename); callers leave it 0 on insert.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub projid: String,
    pub tstamp: Timestamp,
    pub filename: String,
    pub ctx_id: u64,
    pub value_name: String,
    pub value: String,
    pub value_type: i64,
    #[serde(default)]
    pub seq: u64,
}

/// One iteration instance of a named loop. `ctx_id` is unique per
/// (projid, tstamp, filename); `parent_ctx_id` 0 means file scope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopIteration {
    pub projid: String,
    pub tstamp: Timestamp,
    pub filename: String,
    pub ctx_id: u64,
    pub parent_ctx_id: u64,
    pub loop_name: String,
    pub loop_iteration: u64,
    pub iteration_value: String,
}

/// A stored blob joined with the record that references it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobEntry {
    pub projid: String,
    pub tstamp: Timestamp,
    pub filename: String,
    pub ctx_id: u64,
    pub value_name: String,
    pub hash: String,
    pub contents: Vec<u8>,
}

/// View over `arg::` log records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgRecord {
    pub projid: String,
    pub tstamp: Timestamp,
    pub filename: String,
    pub name: String,
    pub value: String,
    pub was_default: bool,
}

/// Exact-match filter over the record key columns; `None` matches anything.
#[derive(Debug, Clone, Default)]
pub struct ScanFilter {
    pub projid: Option<String>,
    pub tstamp: Option<Timestamp>,
    pub filename: Option<String>,
    pub ctx_id: Option<u64>,
    pub value_name: Option<String>,
}

impl ScanFilter {
    pub fn by_name(name: impl Into<String>) -> Self {
        ScanFilter {
            value_name: Some(name.into()),
            ..Default::default()
        }
    }

    fn matches(&self, r: &LogRecord) -> bool {
        self.projid.as_deref().is_none_or(|v| v == r.projid)
            && self.tstamp.is_none_or(|v| v == r.tstamp)
            && self.filename.as_deref().is_none_or(|v| v == r.filename)
            && self.ctx_id.is_none_or(|v| v == r.ctx_id)
            && self.value_name.as_deref().is_none_or(|v| v == r.value_name)
    }
}

// --- run file schema -------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RunFile {
    projid: String,
    tstamp: Timestamp,
    root_target: String,
    loops: Vec<LoopRow>,
    records: Vec<RecordRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LoopRow {
    filename: String,
    ctx_id: u64,
    parent_ctx_id: u64,
    loop_name: String,
    loop_iteration: u64,
    iteration_value: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    filename: String,
    ctx_id: u64,
    value_name: String,
    value: String,
    value_type: i64,
    seq: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IndexFile {
    stamp: Vec<(String, u64)>,
    logs: Vec<LogRecord>,
    loops: Vec<LoopIteration>,
}

// --- store -----------------------------------------------------------------

#[derive(Debug, Default)]
struct Tables {
    logs: Vec<LogRecord>,
    loops: Vec<LoopIteration>,
    /// (tstamp, filename, ctx_id) -> index into `loops`
    loop_by_key: HashMap<(Timestamp, String, u64), usize>,
    /// (tstamp, filename) -> max emission seq seen
    max_seq: HashMap<(Timestamp, String), u64>,
}

impl Tables {
    fn insert_loop(&mut self, it: LoopIteration) {
        let key = (it.tstamp, it.filename.clone(), it.ctx_id);
        self.loops.push(it);
        self.loop_by_key.insert(key, self.loops.len() - 1);
    }

    fn insert_log(&mut self, rec: LogRecord) {
        let key = (rec.tstamp, rec.filename.clone());
        let e = self.max_seq.entry(key).or_insert(0);
        *e = (*e).max(rec.seq);
        self.logs.push(rec);
    }

    fn lookup_loop(&self, tstamp: Timestamp, filename: &str, ctx_id: u64) -> Option<&LoopIteration> {
        self.loop_by_key
            .get(&(tstamp, filename.to_string(), ctx_id))
            .map(|&i| &self.loops[i])
    }
}

#[derive(Debug)]
struct PendingRun {
    tstamp: Timestamp,
    replay: bool,
    loops: Vec<LoopIteration>,
    records: Vec<LogRecord>,
    seq: HashMap<String, u64>,
    loop_keys: HashMap<(String, u64), usize>,
}

/// Single-project record store rooted at `<root>/.flor/`.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    projid: String,
    committed: Tables,
    pending: Option<PendingRun>,
}

impl Store {
    /// Open the store, rebuilding the index from run files when stale.
    pub fn open(root: &Path, projid: &str) -> Result<Self> {
        let mut store = Store {
            root: root.to_path_buf(),
            projid: projid.to_string(),
            committed: Tables::default(),
            pending: None,
        };
        store.load_index()?;
        Ok(store)
    }

    pub fn projid(&self) -> &str {
        &self.projid
    }

    fn flor_dir(&self) -> PathBuf {
        self.root.join(FLOR_DIR)
    }

    pub fn records_dir(&self) -> PathBuf {
        self.flor_dir().join(RECORDS_DIR)
    }

    fn objects_dir(&self) -> PathBuf {
        self.flor_dir().join(OBJECTS_DIR)
    }

    fn index_path(&self) -> PathBuf {
        self.flor_dir().join(INDEX_FILE)
    }

    // --- index ---------------------------------------------------------

    fn run_file_listing(&self) -> Result<Vec<(String, u64)>> {
        let dir = self.records_dir();
        let mut out = Vec::new();
        if !dir.exists() {
            return Ok(out);
        }
        for entry in std::fs::read_dir(&dir).map_err(|e| FlorError::io(&dir, e))? {
            let entry = entry.map_err(|e| FlorError::io(&dir, e))?;
            let name = entry.file_name().to_string_lossy().to_string();
            if !name.ends_with(".json") {
                continue;
            }
            let len = entry.metadata().map_err(|e| FlorError::io(&dir, e))?.len();
            out.push((name, len));
        }
        // tstamp-major order, base file before its replay files
        out.sort_by(|a, b| {
            let ka = run_file_sort_key(&a.0);
            let kb = run_file_sort_key(&b.0);
            ka.cmp(&kb)
        });
        Ok(out)
    }

    fn load_index(&mut self) -> Result<()> {
        let stamp = self.run_file_listing()?;
        if let Ok(text) = std::fs::read_to_string(self.index_path()) {
            if let Ok(idx) = serde_json::from_str::<IndexFile>(&text) {
                if idx.stamp == stamp {
                    for it in idx.loops {
                        self.committed.insert_loop(it);
                    }
                    for rec in idx.logs {
                        self.committed.insert_log(rec);
                    }
                    return Ok(());
                }
            }
        }
        self.rebuild_from_run_files(&stamp)?;
        self.write_index(&stamp)
    }

    fn rebuild_from_run_files(&mut self, stamp: &[(String, u64)]) -> Result<()> {
        self.committed = Tables::default();
        for (name, _) in stamp {
            let path = self.records_dir().join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| FlorError::io(&path, e))?;
            let rf: RunFile = serde_json::from_str(&text)?;
            for row in rf.loops {
                self.committed.insert_loop(LoopIteration {
                    projid: rf.projid.clone(),
                    tstamp: rf.tstamp,
                    filename: row.filename,
                    ctx_id: row.ctx_id,
                    parent_ctx_id: row.parent_ctx_id,
                    loop_name: row.loop_name,
                    loop_iteration: row.loop_iteration,
                    iteration_value: row.iteration_value,
                });
            }
            for row in rf.records {
                self.committed.insert_log(LogRecord {
                    projid: rf.projid.clone(),
                    tstamp: rf.tstamp,
                    filename: row.filename,
                    ctx_id: row.ctx_id,
                    value_name: row.value_name,
                    value: row.value,
                    value_type: row.value_type,
                    seq: row.seq,
                });
            }
        }
        Ok(())
    }

    fn write_index(&self, stamp: &[(String, u64)]) -> Result<()> {
        let idx = IndexFile {
            stamp: stamp.to_vec(),
            logs: self.committed.logs.clone(),
            loops: self.committed.loops.clone(),
        };
        let dir = self.flor_dir();
        std::fs::create_dir_all(&dir).map_err(|e| FlorError::io(&dir, e))?;
        let path = self.index_path();
        let text = serde_json::to_string(&idx)?;
        std::fs::write(&path, text).map_err(|e| FlorError::io(&path, e))
    }

    // --- pending run ---------------------------------------------------

    /// Start buffering records for a new run at `tstamp`.
    pub fn begin_run(&mut self, tstamp: Timestamp) -> Result<()> {
        self.begin(tstamp, false)
    }

    /// Start buffering backfill records addressed to a historical `tstamp`.
    pub fn begin_backfill(&mut self, tstamp: Timestamp) -> Result<()> {
        self.begin(tstamp, true)
    }

    fn begin(&mut self, tstamp: Timestamp, replay: bool) -> Result<()> {
        if self.pending.is_some() {
            return Err(FlorError::Invalid("a run is already open".into()));
        }
        self.pending = Some(PendingRun {
            tstamp,
            replay,
            loops: Vec::new(),
            records: Vec::new(),
            seq: HashMap::new(),
            loop_keys: HashMap::new(),
        });
        Ok(())
    }

    pub fn run_open(&self) -> bool {
        self.pending.is_some()
    }

    pub fn pending_tstamp(&self) -> Option<Timestamp> {
        self.pending.as_ref().map(|p| p.tstamp)
    }

    pub fn pending_record_count(&self) -> usize {
        self.pending.as_ref().map_or(0, |p| p.records.len())
    }

    /// Discard the open run without writing anything.
    pub fn abort_run(&mut self) {
        self.pending = None;
    }

    fn pending_mut(&mut self) -> Result<&mut PendingRun> {
        self.pending
            .as_mut()
            .ok_or_else(|| FlorError::Invalid("no open run".into()))
    }

    /// Append a log record to the open run; returns its emission seq.
    pub fn put_record(&mut self, mut rec: LogRecord) -> Result<u64> {
        if !(1..=4).contains(&rec.value_type) {
            return Err(FlorError::Type {
                name: rec.value_name.clone(),
                detail: format!("value_type {} out of range", rec.value_type),
            });
        }
        if rec.value_type == TYPE_BLOB && !self.blob_path(&rec.value).exists() {
            return Err(FlorError::Integrity(format!(
                "record '{}' references missing blob {}",
                rec.value_name, rec.value
            )));
        }
        let has_ctx = rec.ctx_id == 0
            || self
                .committed
                .lookup_loop(rec.tstamp, &rec.filename, rec.ctx_id)
                .is_some()
            || self
                .pending
                .as_ref()
                .is_some_and(|p| p.loop_keys.contains_key(&(rec.filename.clone(), rec.ctx_id)));
        if !has_ctx {
            return Err(FlorError::Integrity(format!(
                "record '{}' has dangling ctx_id {} in {}",
                rec.value_name, rec.ctx_id, rec.filename
            )));
        }
        let committed_max = self
            .committed
            .max_seq
            .get(&(rec.tstamp, rec.filename.clone()))
            .copied()
            .unwrap_or(0);
        let p = self.pending_mut()?;
        if rec.tstamp != p.tstamp {
            return Err(FlorError::Invalid(format!(
                "record tstamp {} does not match open run {}",
                rec.tstamp, p.tstamp
            )));
        }
        let counter = p.seq.entry(rec.filename.clone()).or_insert(committed_max);
        *counter += 1;
        rec.seq = *counter;
        let seq = rec.seq;
        p.records.push(rec);
        Ok(seq)
    }

    /// Register a loop iteration in the open run.
    ///
    /// Re-inserting a row identical to an already committed one is a no-op:
    /// replay regenerates the historical iterations and must align with them.
    pub fn put_loop(&mut self, it: LoopIteration) -> Result<()> {
        if it.ctx_id == 0 {
            return Err(FlorError::Integrity("ctx_id 0 is reserved".into()));
        }
        if it.parent_ctx_id >= it.ctx_id {
            return Err(FlorError::Integrity(format!(
                "parent_ctx_id {} must be smaller than ctx_id {}",
                it.parent_ctx_id, it.ctx_id
            )));
        }
        if let Some(existing) = self.committed.lookup_loop(it.tstamp, &it.filename, it.ctx_id) {
            if *existing == it {
                return Ok(());
            }
            return Err(FlorError::Integrity(format!(
                "ctx_id {} already used in {} with different content",
                it.ctx_id, it.filename
            )));
        }
        let parent_ok = it.parent_ctx_id == 0
            || self
                .committed
                .lookup_loop(it.tstamp, &it.filename, it.parent_ctx_id)
                .is_some()
            || self.pending.as_ref().is_some_and(|p| {
                p.loop_keys
                    .contains_key(&(it.filename.clone(), it.parent_ctx_id))
            });
        if !parent_ok {
            return Err(FlorError::Integrity(format!(
                "dangling parent_ctx_id {} for ctx {} in {}",
                it.parent_ctx_id, it.ctx_id, it.filename
            )));
        }
        let p = self.pending_mut()?;
        if it.tstamp != p.tstamp {
            return Err(FlorError::Invalid(format!(
                "loop tstamp {} does not match open run {}",
                it.tstamp, p.tstamp
            )));
        }
        let key = (it.filename.clone(), it.ctx_id);
        if p.loop_keys.contains_key(&key) {
            return Err(FlorError::Integrity(format!(
                "duplicate ctx_id {} in {}",
                it.ctx_id, it.filename
            )));
        }
        p.loops.push(it);
        p.loop_keys.insert(key, p.loops.len() - 1);
        Ok(())
    }

    /// Finish the open run: write its run file and make it visible.
    /// Returns the run file path relative to the project root.
    pub fn flush_run(&mut self, root_target: &str) -> Result<String> {
        let p = self
            .pending
            .take()
            .ok_or_else(|| FlorError::Invalid("no open run".into()))?;
        let file = RunFile {
            projid: self.projid.clone(),
            tstamp: p.tstamp,
            root_target: root_target.to_string(),
            loops: p
                .loops
                .iter()
                .map(|it| LoopRow {
                    filename: it.filename.clone(),
                    ctx_id: it.ctx_id,
                    parent_ctx_id: it.parent_ctx_id,
                    loop_name: it.loop_name.clone(),
                    loop_iteration: it.loop_iteration,
                    iteration_value: it.iteration_value.clone(),
                })
                .collect(),
            records: p
                .records
                .iter()
                .map(|r| RecordRow {
                    filename: r.filename.clone(),
                    ctx_id: r.ctx_id,
                    value_name: r.value_name.clone(),
                    value: r.value.clone(),
                    value_type: r.value_type,
                    seq: r.seq,
                })
                .collect(),
        };
        let dir = self.records_dir();
        std::fs::create_dir_all(&dir).map_err(|e| FlorError::io(&dir, e))?;
        let name = if p.replay {
            let mut k = 1;
            loop {
                let candidate = format!("{}.replay.{}.json", p.tstamp, k);
                if !dir.join(&candidate).exists() {
                    break candidate;
                }
                k += 1;
            }
        } else {
            format!("{}.json", p.tstamp)
        };
        let path = dir.join(&name);
        if !p.replay && path.exists() {
            return Err(FlorError::Invalid(format!(
                "run file for tstamp {} already exists",
                p.tstamp
            )));
        }
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| FlorError::io(&path, e))?;

        for it in p.loops {
            self.committed.insert_loop(it);
        }
        for rec in p.records {
            self.committed.insert_log(rec);
        }
        let stamp = self.run_file_listing()?;
        self.write_index(&stamp)?;
        Ok(format!("{}/{}/{}", FLOR_DIR, RECORDS_DIR, name))
    }

    // --- blobs -----------------------------------------------------------

    fn blob_path(&self, hash: &str) -> PathBuf {
        let shard = if hash.len() >= 2 { &hash[..2] } else { "xx" };
        self.objects_dir().join(shard).join(hash)
    }

    /// Content-addressed, idempotent blob write; returns the hex digest.
    pub fn put_blob(&self, contents: &[u8]) -> Result<String> {
        let hash = blob_hash(contents);
        let path = self.blob_path(&hash);
        if path.exists() {
            return Ok(hash);
        }
        let dir = path.parent().expect("blob path has parent");
        std::fs::create_dir_all(dir).map_err(|e| FlorError::io(dir, e))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, contents).map_err(|e| FlorError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| FlorError::io(&path, e))?;
        Ok(hash)
    }

    pub fn get_blob(&self, hash: &str) -> Result<Vec<u8>> {
        let path = self.blob_path(hash);
        std::fs::read(&path).map_err(|_| FlorError::NotFound(format!("blob {hash}")))
    }

    pub fn blob_count(&self) -> usize {
        let mut n = 0;
        let dir = self.objects_dir();
        if let Ok(shards) = std::fs::read_dir(dir) {
            for shard in shards.flatten() {
                if let Ok(files) = std::fs::read_dir(shard.path()) {
                    n += files
                        .flatten()
                        .filter(|f| f.path().extension().is_none())
                        .count();
                }
            }
        }
        n
    }

    // --- value encoding --------------------------------------------------

    /// Encode a typed value to (value_type, payload), spilling to the blob
    /// store when needed.
    pub fn encode_value(&self, name: &str, raw: RawValue) -> Result<(i64, String)> {
        match value::encode(raw) {
            Encoded::Inline(t, p) => Ok((t, p)),
            Encoded::Blob(bytes) => {
                let hash = self
                    .put_blob(&bytes)
                    .map_err(|e| FlorError::Type {
                        name: name.to_string(),
                        detail: format!("blob spill failed: {e}"),
                    })?;
                Ok((TYPE_BLOB, hash))
            }
        }
    }

    /// Decode a stored (value_type, payload) back to a typed value. Blob
    /// references come back as bytes.
    pub fn decode_value(&self, name: &str, value_type: i64, payload: &str) -> Result<RawValue> {
        if value_type == TYPE_BLOB {
            return Ok(RawValue::Bytes(self.get_blob(payload)?));
        }
        value::decode_inline(name, value_type, payload)
    }

    // --- reads -----------------------------------------------------------

    /// Committed records matching `filter`, ordered by (tstamp, filename, seq).
    pub fn scan(&self, filter: &ScanFilter) -> Vec<LogRecord> {
        let mut out: Vec<LogRecord> = self
            .committed
            .logs
            .iter()
            .filter(|r| filter.matches(r))
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            (a.tstamp, &a.filename, a.seq).cmp(&(b.tstamp, &b.filename, b.seq))
        });
        out
    }

    pub fn loops(&self) -> &[LoopIteration] {
        &self.committed.loops
    }

    pub fn logs(&self) -> &[LogRecord] {
        &self.committed.logs
    }

    pub fn lookup_loop(
        &self,
        tstamp: Timestamp,
        filename: &str,
        ctx_id: u64,
    ) -> Option<&LoopIteration> {
        self.committed.lookup_loop(tstamp, filename, ctx_id)
    }

    /// Last-wins readback of one key.
    pub fn latest_value(
        &self,
        tstamp: Timestamp,
        filename: &str,
        ctx_id: u64,
        value_name: &str,
    ) -> Option<&LogRecord> {
        self.committed
            .logs
            .iter()
            .filter(|r| {
                r.tstamp == tstamp
                    && r.filename == filename
                    && r.ctx_id == ctx_id
                    && r.value_name == value_name
            })
            .max_by_key(|r| r.seq)
    }

    /// Resolved arguments of one (tstamp, filename), last-wins per name.
    pub fn args_for(&self, tstamp: Timestamp, filename: &str) -> Vec<ArgRecord> {
        let mut values: HashMap<String, &LogRecord> = HashMap::new();
        let mut defaults: HashMap<String, &LogRecord> = HashMap::new();
        for r in &self.committed.logs {
            if r.tstamp != tstamp || r.filename != filename {
                continue;
            }
            if let Some(name) = r.value_name.strip_prefix(ARG_PREFIX) {
                let e = values.entry(name.to_string()).or_insert(r);
                if r.seq >= e.seq {
                    *e = r;
                }
            } else if let Some(name) = r.value_name.strip_prefix(ARG_DEFAULT_PREFIX) {
                let e = defaults.entry(name.to_string()).or_insert(r);
                if r.seq >= e.seq {
                    *e = r;
                }
            }
        }
        let mut out: Vec<ArgRecord> = values
            .into_iter()
            .map(|(name, r)| ArgRecord {
                projid: r.projid.clone(),
                tstamp,
                filename: filename.to_string(),
                was_default: defaults
                    .get(&name)
                    .map(|d| d.value == "true")
                    .unwrap_or(true),
                name,
                value: r.value.clone(),
            })
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }

    /// Blob entries joined from type-4 records and the object store.
    pub fn blob_entry(&self, rec: &LogRecord) -> Result<BlobEntry> {
        if rec.value_type != TYPE_BLOB {
            return Err(FlorError::Invalid(format!(
                "record '{}' is not a blob reference",
                rec.value_name
            )));
        }
        Ok(BlobEntry {
            projid: rec.projid.clone(),
            tstamp: rec.tstamp,
            filename: rec.filename.clone(),
            ctx_id: rec.ctx_id,
            value_name: rec.value_name.clone(),
            hash: rec.value.clone(),
            contents: self.get_blob(&rec.value)?,
        })
    }

    /// Full-store referential integrity audit.
    pub fn audit(&self) -> Result<()> {
        for r in &self.committed.logs {
            if r.ctx_id != 0 && self.committed.lookup_loop(r.tstamp, &r.filename, r.ctx_id).is_none()
            {
                return Err(FlorError::Integrity(format!(
                    "log '{}' references missing ctx {} in {}@{}",
                    r.value_name, r.ctx_id, r.filename, r.tstamp
                )));
            }
            if r.value_type == TYPE_BLOB && !self.blob_path(&r.value).exists() {
                return Err(FlorError::Integrity(format!(
                    "log '{}' references missing blob {}",
                    r.value_name, r.value
                )));
            }
        }
        let mut ordinals: HashMap<(Timestamp, &str, u64, &str), Vec<u64>> = HashMap::new();
        for it in &self.committed.loops {
            if it.parent_ctx_id != 0 {
                match self
                    .committed
                    .lookup_loop(it.tstamp, &it.filename, it.parent_ctx_id)
                {
                    Some(parent) if parent.ctx_id < it.ctx_id => {}
                    Some(_) => {
                        return Err(FlorError::Integrity(format!(
                            "loop ctx {} has parent with larger ctx_id",
                            it.ctx_id
                        )))
                    }
                    None => {
                        return Err(FlorError::Integrity(format!(
                            "loop ctx {} has dangling parent {}",
                            it.ctx_id, it.parent_ctx_id
                        )))
                    }
                }
            }
            ordinals
                .entry((it.tstamp, &it.filename, it.parent_ctx_id, &it.loop_name))
                .or_default()
                .push(it.loop_iteration);
        }
        for ((tstamp, filename, parent, name), mut its) in ordinals {
            its.sort_unstable();
            if its.iter().enumerate().any(|(i, &v)| v != i as u64) {
                return Err(FlorError::Integrity(format!(
                    "loop '{name}' under ctx {parent} in {filename}@{tstamp} has non-consecutive iterations"
                )));
            }
        }
        Ok(())
    }
}

pub fn blob_hash(contents: &[u8]) -> String {
    hex::encode(Sha256::digest(contents))
}

/// Sort key giving tstamp-major order, base run file before replay files.
fn run_file_sort_key(name: &str) -> (Timestamp, u64, String) {
    let stem = name.strip_suffix(".json").unwrap_or(name);
    let mut parts = stem.splitn(3, '.');
    let tstamp = parts.next().and_then(|p| p.parse().ok()).unwrap_or(i64::MAX);
    let replay_ord = match (parts.next(), parts.next()) {
        (Some("replay"), Some(k)) => k.parse().unwrap_or(u64::MAX),
        _ => 0,
    };
    (tstamp, replay_ord, name.to_string())
}

//! Pipeline execution: runs stale targets in topological order, launches
//! recipe commands, ingests their event streams, assigns loop contexts, and
//! commits the run.
//!
//! Every recipe subprocess gets a fresh event file (`FLOR_EVENTS`); events
//! are ingested after the process exits, which makes ingestion equal to
//! post-hoc replay of the stream by construction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use crate::buildspec::{stale_targets, topo_order, FsMtimes};
use crate::clock::Timestamp;
use crate::error::{FlorError, Result};
use crate::events::{Event, EventKind, ENV_ARGS, ENV_CKPT_DIR, ENV_EVENTS, ENV_REPLAY};
use crate::project::Project;
use crate::store::value::{RawValue, TYPE_BLOB, TYPE_TEXT};
use crate::store::{
    LogRecord, LoopIteration, Store, ARG_DEFAULT_PREFIX, ARG_PREFIX, RUN_STATUS_NAME,
};

// --- argument resolution -------------------------------------------------------

/// Precedence: replay-historical > CLI override > step default.
pub fn arg_resolve(
    name: &str,
    default_value: &str,
    overrides: &BTreeMap<String, String>,
    historical: Option<&str>,
) -> String {
    if let Some(h) = historical {
        return h.to_string();
    }
    if let Some(o) = overrides.get(name) {
        return o.clone();
    }
    default_value.to_string()
}

/// Argument sources for one step: CLI overrides and, during replay, the
/// historical records.
#[derive(Debug, Clone, Default)]
pub struct ArgContext {
    pub overrides: BTreeMap<String, String>,
    pub historical: HashMap<String, String>,
}

impl ArgContext {
    pub fn from_overrides(overrides: &BTreeMap<String, String>) -> Self {
        ArgContext {
            overrides: overrides.clone(),
            historical: HashMap::new(),
        }
    }

    pub fn from_historical(historical: &HashMap<String, String>) -> Self {
        ArgContext {
            overrides: BTreeMap::new(),
            historical: historical.clone(),
        }
    }

    fn resolve(&self, name: &str, step_value: &str) -> (String, bool) {
        let historical = self.historical.get(name).map(|s| s.as_str());
        let value = arg_resolve(name, step_value, &self.overrides, historical);
        let was_default = historical.is_none() && !self.overrides.contains_key(name);
        (value, was_default)
    }

    /// The winning values a step receives in `FLOR_ARGS`.
    pub fn merged_json(&self) -> Result<String> {
        let mut merged: BTreeMap<&str, &str> = self
            .overrides
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        for (k, v) in &self.historical {
            merged.insert(k, v);
        }
        Ok(serde_json::to_string(&merged)?)
    }
}

// --- checkpoint policy -----------------------------------------------------------

/// Decides whether a checkpoint offered at an iteration boundary is stored.
/// The paper's adaptive policy is future work; the interface stays pluggable.
pub trait CheckpointPolicy {
    fn should_checkpoint(&self, loop_depth: usize, iteration: u64) -> bool;
}

/// Fixed policy: checkpoint at every outermost-loop iteration boundary.
#[derive(Debug, Default, Clone, Copy)]
pub struct OutermostEveryIteration;

impl CheckpointPolicy for OutermostEveryIteration {
    fn should_checkpoint(&self, loop_depth: usize, _iteration: u64) -> bool {
        loop_depth == 1
    }
}

// --- event ingestion --------------------------------------------------------------

#[derive(Debug)]
enum Frame {
    Loop { name: String },
    Iter { ctx: u64, loop_name: String },
}

#[derive(Debug, Default)]
struct FileState {
    next_ctx: u64,
    frames: Vec<Frame>,
    iter_ordinals: HashMap<(u64, String), u64>,
    ordinal: usize,
    /// outermost iterations that did real (inner-loop or checkpoint) work
    deep_iters: HashSet<u64>,
    /// outermost iterations that stored any record at all
    touched_iters: HashSet<u64>,
}

impl FileState {
    fn current_ctx(&self) -> u64 {
        self.frames
            .iter()
            .rev()
            .find_map(|f| match f {
                Frame::Iter { ctx, .. } => Some(*ctx),
                _ => None,
            })
            .unwrap_or(0)
    }

    fn iter_depth(&self) -> usize {
        self.frames
            .iter()
            .filter(|f| matches!(f, Frame::Iter { .. }))
            .count()
    }

    fn outermost_iter(&self) -> Option<u64> {
        self.frames.iter().find_map(|f| match f {
            Frame::Iter { ctx, .. } => Some(*ctx),
            _ => None,
        })
    }
}

/// Ingests event streams for one run (or one replay work item), tracking
/// per-file context counters so ctx assignment is deterministic.
pub struct IngestSession<'a> {
    store: &'a mut Store,
    projid: String,
    tstamp: Timestamp,
    workdir: PathBuf,
    policy: Box<dyn CheckpointPolicy>,
    files: HashMap<String, FileState>,
    pub records_stored: usize,
    pub events_seen: usize,
}

impl<'a> IngestSession<'a> {
    pub fn new(store: &'a mut Store, tstamp: Timestamp, workdir: &Path) -> Self {
        let projid = store.projid().to_string();
        IngestSession {
            store,
            projid,
            tstamp,
            workdir: workdir.to_path_buf(),
            policy: Box::new(OutermostEveryIteration),
            files: HashMap::new(),
            records_stored: 0,
            events_seen: 0,
        }
    }

    fn state(&mut self, filename: &str) -> &mut FileState {
        self.files.entry(filename.to_string()).or_default()
    }

    fn put_record(&mut self, filename: &str, ctx: u64, name: &str, vt: i64, value: String) -> Result<u64> {
        let seq = self.store.put_record(LogRecord {
            projid: self.projid.clone(),
            tstamp: self.tstamp,
            filename: filename.to_string(),
            ctx_id: ctx,
            value_name: name.to_string(),
            value,
            value_type: vt,
            seq: 0,
        })?;
        self.records_stored += 1;
        let st = self.state(filename);
        if let Some(outer) = st.outermost_iter() {
            st.touched_iters.insert(outer);
            if st.iter_depth() >= 2 || vt == TYPE_BLOB {
                st.deep_iters.insert(outer);
            }
        }
        Ok(seq)
    }

    /// Ingest one event for the step running `filename`. `args` carries the
    /// same sources the step saw through `FLOR_ARGS`.
    pub fn ingest_event(
        &mut self,
        filename: &str,
        args: &ArgContext,
        ev: &Event,
    ) -> Result<usize> {
        self.events_seen += 1;
        let ordinal = {
            let st = self.state(filename);
            st.ordinal += 1;
            st.ordinal
        };
        let proto = |msg: String| FlorError::Protocol { ordinal, msg };

        match ev.kind {
            EventKind::LoopBegin => {
                self.state(filename).frames.push(Frame::Loop {
                    name: ev.name.clone(),
                });
                Ok(0)
            }
            EventKind::IterBegin => {
                let st = self.state(filename);
                let loop_name = match st.frames.last() {
                    Some(Frame::Loop { name }) => {
                        if !ev.name.is_empty() && *name != ev.name {
                            return Err(proto(format!(
                                "iter_begin '{}' inside loop '{}'",
                                ev.name, name
                            )));
                        }
                        name.clone()
                    }
                    _ => return Err(proto(format!("iter_begin '{}' outside a loop", ev.name))),
                };
                let parent_ctx = st.current_ctx();
                let ordinal_key = (parent_ctx, loop_name.clone());
                let iter_ord = *st.iter_ordinals.get(&ordinal_key).unwrap_or(&0);
                st.next_ctx += 1;
                let ctx = st.next_ctx;
                self.store.put_loop(LoopIteration {
                    projid: self.projid.clone(),
                    tstamp: self.tstamp,
                    filename: filename.to_string(),
                    ctx_id: ctx,
                    parent_ctx_id: parent_ctx,
                    loop_name: loop_name.clone(),
                    loop_iteration: iter_ord,
                    iteration_value: ev.value.clone(),
                })?;
                let st = self.state(filename);
                st.iter_ordinals.insert(ordinal_key, iter_ord + 1);
                st.frames.push(Frame::Iter { ctx, loop_name });
                Ok(1)
            }
            EventKind::IterEnd => {
                let st = self.state(filename);
                match st.frames.last() {
                    Some(Frame::Iter { loop_name, .. }) => {
                        if !ev.name.is_empty() && *loop_name != ev.name {
                            return Err(proto(format!(
                                "iter_end '{}' closes iteration of loop '{}'",
                                ev.name, loop_name
                            )));
                        }
                        st.frames.pop();
                        Ok(0)
                    }
                    _ => Err(proto("iter_end without open iteration".into())),
                }
            }
            EventKind::LoopEnd => {
                let st = self.state(filename);
                match st.frames.last() {
                    Some(Frame::Loop { name }) => {
                        if !ev.name.is_empty() && *name != ev.name {
                            return Err(proto(format!(
                                "loop_end '{}' closes loop '{}'",
                                ev.name, name
                            )));
                        }
                        st.frames.pop();
                        Ok(0)
                    }
                    Some(Frame::Iter { .. }) => {
                        Err(proto("loop_end with an iteration still open".into()))
                    }
                    None => Err(proto("loop_end without open loop".into())),
                }
            }
            EventKind::Log => {
                let raw = typed_value(&ev.name, &ev.value, ev.type_hint)?;
                let (vt, payload) = self.store.encode_value(&ev.name, raw)?;
                let ctx = self.state(filename).current_ctx();
                self.put_record(filename, ctx, &ev.name, vt, payload)?;
                Ok(1)
            }
            EventKind::Arg => {
                let (value, was_default) = args.resolve(&ev.name, &ev.value);
                let arg_name = format!("{ARG_PREFIX}{}", ev.name);
                let flag_name = format!("{ARG_DEFAULT_PREFIX}{}", ev.name);
                self.put_record(filename, 0, &arg_name, TYPE_TEXT, value)?;
                self.put_record(
                    filename,
                    0,
                    &flag_name,
                    TYPE_TEXT,
                    was_default.to_string(),
                )?;
                Ok(2)
            }
            EventKind::Ckpt => {
                let (depth, innermost_ctx) = {
                    let st = self.state(filename);
                    (st.iter_depth(), st.current_ctx())
                };
                let iteration = self
                    .store
                    .lookup_loop(self.tstamp, filename, innermost_ctx)
                    .map(|it| it.loop_iteration)
                    .unwrap_or(0);
                if depth > 0 && !self.policy.should_checkpoint(depth, iteration) {
                    return Ok(0);
                }
                let path = {
                    let p = Path::new(&ev.value);
                    if p.is_absolute() {
                        p.to_path_buf()
                    } else {
                        self.workdir.join(p)
                    }
                };
                let bytes = std::fs::read(&path).map_err(|e| FlorError::io(&path, e))?;
                let hash = self.store.put_blob(&bytes)?;
                let ctx = self.state(filename).current_ctx();
                self.put_record(filename, ctx, &ev.name, TYPE_BLOB, hash)?;
                Ok(1)
            }
            EventKind::Flush => Ok(0),
        }
    }

    /// Verify the stream for `filename` is balanced at stream end.
    pub fn finish_stream(&mut self, filename: &str) -> Result<()> {
        let st = self.state(filename);
        if let Some(frame) = st.frames.last() {
            let what = match frame {
                Frame::Loop { name } => format!("loop '{name}'"),
                Frame::Iter { loop_name, .. } => format!("iteration of '{loop_name}'"),
            };
            return Err(FlorError::Protocol {
                ordinal: st.ordinal,
                msg: format!("stream ended with open {what}"),
            });
        }
        Ok(())
    }

    /// Outermost iterations that did real work for `filename` (inner-loop or
    /// checkpoint records; falls back to any-record iterations for flat loops).
    pub fn iterations_executed(&self, filename: &str) -> usize {
        match self.files.get(filename) {
            Some(st) if !st.deep_iters.is_empty() => st.deep_iters.len(),
            Some(st) => st.touched_iters.len(),
            None => 0,
        }
    }
}

fn typed_value(name: &str, value: &str, type_hint: Option<i64>) -> Result<RawValue> {
    match type_hint {
        None | Some(3) => Ok(RawValue::Text(value.to_string())),
        Some(1) => value
            .parse::<i64>()
            .map(RawValue::Int)
            .map_err(|e| FlorError::Type {
                name: name.to_string(),
                detail: format!("int hint but value {value:?}: {e}"),
            }),
        Some(2) => value
            .parse::<f64>()
            .map(RawValue::Float)
            .map_err(|e| FlorError::Type {
                name: name.to_string(),
                detail: format!("float hint but value {value:?}: {e}"),
            }),
        Some(other) => Err(FlorError::Type {
            name: name.to_string(),
            detail: format!("unsupported type hint {other}"),
        }),
    }
}

// --- running pipelines ------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub goal: String,
    pub overrides: BTreeMap<String, String>,
    /// Extra environment for step subprocesses (e.g. the CLI's own path).
    pub extra_env: Vec<(String, String)>,
    /// Suppress recipe echo.
    pub quiet: bool,
}

#[derive(Debug, Clone)]
pub struct ExecutedStep {
    pub target: String,
    pub filename: String,
    pub exit_code: i32,
    pub duration_secs: f64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub projid: String,
    pub tstamp: Timestamp,
    pub executed: Vec<ExecutedStep>,
    pub records_ingested: usize,
    pub vid: String,
}

/// The step file a recipe line runs: the first token that names an existing
/// regular file in `root` other than the target's own marker.
pub fn detect_step_file(root: &Path, cmd: &str, target: &str) -> Option<String> {
    cmd.split_whitespace()
        .find(|tok| *tok != target && root.join(tok).is_file())
        .map(|s| s.to_string())
}

pub struct StepCommand<'a> {
    pub cmd: &'a str,
    pub quiet: bool,
    pub workdir: &'a Path,
    pub events_path: &'a Path,
    pub ckpt_dir: &'a Path,
    pub args_json: &'a str,
    pub replay: bool,
    pub extra_env: &'a [(String, String)],
}

/// Launch one recipe line through the shell and wait for it.
pub fn run_step(spec: &StepCommand) -> Result<i32> {
    if !spec.quiet {
        println!("{}", spec.cmd);
    }
    let mut command = Command::new("sh");
    command
        .arg("-c")
        .arg(spec.cmd)
        .current_dir(spec.workdir)
        .env(ENV_EVENTS, spec.events_path)
        .env(ENV_CKPT_DIR, spec.ckpt_dir)
        .env(ENV_ARGS, spec.args_json);
    if spec.replay {
        command.env(ENV_REPLAY, "1");
    } else {
        command.env_remove(ENV_REPLAY);
    }
    for (k, v) in spec.extra_env {
        command.env(k, v);
    }
    let status = command
        .status()
        .map_err(|e| FlorError::io(spec.workdir, e))?;
    Ok(status.code().unwrap_or(-1))
}

/// Execute `goal`: run stale targets in topological order, ingest events,
/// and commit. A failing step aborts the rest but still commits partial
/// records with a `run::status = failed:<target>` marker.
pub fn run(project: &mut Project, opts: &RunOptions) -> Result<RunReport> {
    project.lock_write()?;
    let graph = project.graph()?;
    let fs = FsMtimes::new(project.root());
    let stale = stale_targets(&graph, &fs, &opts.goal)?;
    let order: Vec<String> = topo_order(&graph, &opts.goal)?
        .into_iter()
        .filter(|t| stale.contains(t))
        .collect();

    let tstamp = project.next_tstamp();
    project.store.begin_run(tstamp)?;

    let tmp = project.tmp_dir();
    std::fs::create_dir_all(&tmp).map_err(|e| FlorError::io(&tmp, e))?;
    let ckpt_dir = tmp.join(format!("ckpt-{tstamp}"));
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| FlorError::io(&ckpt_dir, e))?;
    let args = ArgContext::from_overrides(&opts.overrides);
    let args_json = args.merged_json()?;

    let root = project.root().to_path_buf();
    let makefile = project.config.makefile_path.clone();
    let mut executed = Vec::new();
    let mut failure: Option<(String, i32)> = None;
    let mut ingest_error: Option<FlorError> = None;
    let records_ingested;

    {
        let mut session = IngestSession::new(&mut project.store, tstamp, &root);
        'targets: for target in &order {
            let t = graph.target(target).expect("stale targets are known");
            let started = Instant::now();
            let mut target_file = String::new();
            let mut exit_code = 0;
            for (line_no, line) in t.cmds.iter().enumerate() {
                let step_file = detect_step_file(&root, &line.cmd, target);
                if target_file.is_empty() {
                    if let Some(f) = &step_file {
                        target_file = f.clone();
                    }
                }
                let events_path = tmp.join(format!("events-{tstamp}-{target}-{line_no}.jsonl"));
                let code = run_step(&StepCommand {
                    cmd: &line.cmd,
                    quiet: line.quiet || opts.quiet,
                    workdir: &root,
                    events_path: &events_path,
                    ckpt_dir: &ckpt_dir,
                    args_json: &args_json,
                    replay: false,
                    extra_env: &opts.extra_env,
                })?;
                let filename = step_file.unwrap_or_else(|| target.clone());
                let ingested =
                    ingest_events_file(&mut session, &events_path, &filename, &args);
                let _ = std::fs::remove_file(&events_path);
                if let Err(e) = ingested {
                    failure = Some((target.clone(), code));
                    ingest_error = Some(e);
                } else if code != 0 {
                    failure = Some((target.clone(), code));
                }
                if failure.is_some() {
                    exit_code = code;
                    executed.push(ExecutedStep {
                        target: target.clone(),
                        filename: target_file.clone(),
                        exit_code,
                        duration_secs: started.elapsed().as_secs_f64(),
                    });
                    break 'targets;
                }
            }
            executed.push(ExecutedStep {
                target: target.clone(),
                filename: target_file,
                exit_code,
                duration_secs: started.elapsed().as_secs_f64(),
            });
        }

        let status = match &failure {
            Some((target, _)) => format!("failed:{target}"),
            None => "ok".to_string(),
        };
        session.put_record(&makefile, 0, RUN_STATUS_NAME, TYPE_TEXT, status)?;
        records_ingested = session.records_stored;
    }

    let committed = project.commit(&opts.goal)?;
    let vid = committed.map(|(_, v)| v).unwrap_or_default();
    if let Some(e) = ingest_error {
        return Err(e);
    }
    if let Some((target, code)) = failure {
        return Err(FlorError::StepFailed { target, code });
    }
    Ok(RunReport {
        projid: project.projid().to_string(),
        tstamp,
        executed,
        records_ingested,
        vid,
    })
}

/// Ingest an entire events file (post-hoc) for one step.
pub fn ingest_events_file(
    session: &mut IngestSession,
    events_path: &Path,
    filename: &str,
    args: &ArgContext,
) -> Result<()> {
    let text = match std::fs::read_to_string(events_path) {
        Ok(t) => t,
        Err(_) => return Ok(()), // step emitted nothing
    };
    for ev in crate::events::parse_event_stream(&text)? {
        session.ingest_event(filename, args, &ev)?;
    }
    session.finish_stream(filename)
}

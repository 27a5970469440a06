//! Multiversion hindsight logging: propagate newly added logging statements
//! onto historical versions, plan minimal re-execution from build deps and
//! stored checkpoints, execute in isolated workspaces, and backfill records
//! under the historical timestamps.
//!
//! Propagation is a textual three-way merge. The merge base is the parent of
//! the first version that already logged the requested names (that is where
//! the statements were introduced); when no version has them yet, the base is
//! the head version and the statements live only in the working tree. Either
//! way the merged historical file is the historical code plus the new
//! statements, never the current code wholesale.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use crate::buildspec::{self, RecipeLine};
use crate::clock::Timestamp;
use crate::error::{FlorError, Result};
use crate::project::Project;
use crate::runner::{
    detect_step_file, ingest_events_file, run_step, ArgContext, IngestSession, StepCommand,
};
use crate::store::value::{TYPE_BLOB, TYPE_TEXT};
use crate::store::{LogRecord, ScanFilter, REPLAY_OF_NAME};
use crate::vcs::merge3::{matching_blocks, merge3, split_lines, ConflictHunk, Merge3Result};

// --- logging diff ------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffHunk {
    /// Line range in the head version (0-based, half-open).
    pub head: Range<usize>,
    /// Line range in the working tree.
    pub work: Range<usize>,
    pub removed: Vec<String>,
    pub added: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LoggingDiff {
    pub hunks: Vec<DiffHunk>,
    /// Added lines that do not look like logging statements.
    pub warnings: Vec<String>,
}

impl LoggingDiff {
    pub fn is_empty(&self) -> bool {
        self.hunks.is_empty()
    }
}

/// Whitespace-insensitive diff between the head version of `filename` and
/// the working tree, intended to contain only added logging statements.
pub fn logging_diff(project: &Project, filename: &str) -> Result<LoggingDiff> {
    if !project.repo.is_tracked(filename)? {
        return Err(FlorError::Invalid(format!("{filename} is untracked")));
    }
    let head = project
        .repo
        .head_vid()?
        .ok_or_else(|| FlorError::NotFound("no committed version yet".into()))?;
    let head_text = project.repo.file_at(&head, filename)?;
    let work_path = project.root().join(filename);
    let work_text =
        std::fs::read_to_string(&work_path).map_err(|e| FlorError::io(&work_path, e))?;
    Ok(diff_ws_insensitive(&head_text, &work_text))
}

fn ws_key(line: &str) -> String {
    line.chars().filter(|c| !c.is_whitespace()).collect()
}

fn diff_ws_insensitive(head_text: &str, work_text: &str) -> LoggingDiff {
    let head_lines = split_lines(head_text);
    let work_lines = split_lines(work_text);
    // blank lines are invisible to the comparison
    let a: Vec<(usize, String)> = head_lines
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let k = ws_key(l);
            (!k.is_empty()).then_some((i, k))
        })
        .collect();
    let b: Vec<(usize, String)> = work_lines
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let k = ws_key(l);
            (!k.is_empty()).then_some((i, k))
        })
        .collect();
    let akeys: Vec<&String> = a.iter().map(|(_, k)| k).collect();
    let bkeys: Vec<&String> = b.iter().map(|(_, k)| k).collect();

    let mut diff = LoggingDiff::default();
    let (mut i, mut j) = (0usize, 0usize);
    for (ai, bj, len) in matching_blocks(&akeys, &bkeys) {
        if i < ai || j < bj {
            let head_range = range_of(&a, i, ai, head_lines.len());
            let work_range = range_of(&b, j, bj, work_lines.len());
            let removed: Vec<String> =
                a[i..ai].iter().map(|(o, _)| head_lines[*o].to_string()).collect();
            let added: Vec<String> =
                b[j..bj].iter().map(|(o, _)| work_lines[*o].to_string()).collect();
            for line in &added {
                if !line.contains("flor.") {
                    diff.warnings.push(format!(
                        "non-logging addition at line {}: {}",
                        work_range.start + 1,
                        line.trim_end()
                    ));
                }
            }
            diff.hunks.push(DiffHunk {
                head: head_range,
                work: work_range,
                removed,
                added,
            });
        }
        i = ai + len;
        j = bj + len;
    }
    diff
}

fn range_of(kept: &[(usize, String)], from: usize, to: usize, total: usize) -> Range<usize> {
    let start = kept.get(from).map(|(o, _)| *o).unwrap_or(total);
    let end = if to > from {
        kept[to - 1].0 + 1
    } else {
        start
    };
    start..end
}

// --- plan ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplayMode {
    Full,
    /// Resume from the stored checkpoint at this ctx_id.
    ResumeFromCheckpoint(u64),
}

impl std::fmt::Display for ReplayMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReplayMode::Full => write!(f, "full"),
            ReplayMode::ResumeFromCheckpoint(ctx) => write!(f, "resume-from-checkpoint({ctx})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkItem {
    pub vid: String,
    pub tstamp: Timestamp,
    pub target: String,
    pub filename: String,
    pub mode: ReplayMode,
    /// Historical file with the logging statements merged in.
    pub merged: String,
    /// Historical resolved arguments, reused verbatim during replay.
    pub hist_args: HashMap<String, String>,
    /// (value_name, blob hash) of the checkpoint to materialize.
    pub checkpoint: Option<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    Cached,
    AlreadyPresent,
    NotApplicable,
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipReason::Cached => write!(f, "cached"),
            SkipReason::AlreadyPresent => write!(f, "already-present"),
            SkipReason::NotApplicable => write!(f, "not-applicable"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkipItem {
    pub vid: String,
    pub target: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone)]
pub struct ConflictItem {
    pub vid: String,
    pub filename: String,
    pub hunks: Vec<ConflictHunk>,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayPlan {
    pub requested: Vec<String>,
    pub work: Vec<WorkItem>,
    pub skipped: Vec<SkipItem>,
    pub conflicts: Vec<ConflictItem>,
    pub warnings: Vec<String>,
}

/// Locate the step file (and its build target) that produces `name` in the
/// current working tree: known records win, otherwise step files are scanned
/// for the logging statement.
fn producing_step(
    project: &Project,
    graph: &buildspec::BuildGraph,
    name: &str,
) -> Result<(String, String)> {
    let mut candidates: Vec<(String, String)> = Vec::new(); // (filename, target)
    for t in &graph.targets {
        for line in &t.cmds {
            if let Some(f) = detect_step_file(project.root(), &line.cmd, &t.target) {
                if !candidates.iter().any(|(cf, _)| *cf == f) {
                    candidates.push((f, t.target.clone()));
                }
            }
        }
    }

    let recs = project.store.scan(&ScanFilter::by_name(name));
    if let Some(last) = recs.last() {
        let filename = last.filename.clone();
        if let Some((_, target)) = candidates.iter().find(|(f, _)| *f == filename) {
            return Ok((filename, target.clone()));
        }
        if let Some(t) = graph.targets.iter().find(|t| {
            t.cmds
                .iter()
                .any(|l| l.cmd.split_whitespace().any(|tok| tok == filename))
        }) {
            return Ok((filename, t.target.clone()));
        }
        return Err(FlorError::Invalid(format!(
            "no build target runs {filename}, producer of '{name}'"
        )));
    }

    for (filename, target) in &candidates {
        let path = project.root().join(filename);
        let Ok(text) = std::fs::read_to_string(&path) else {
            continue;
        };
        // host-language logging call or a literal wire-format emission
        if text.contains(&format!("flor.log(\"{name}\""))
            || text.contains(&format!("flor.log('{name}'"))
            || text.contains(&format!("\"n\":\"{name}\""))
        {
            return Ok((filename.clone(), target.clone()));
        }
    }
    Err(FlorError::NotFound(format!(
        "requested name '{name}' is not produced by any current step file"
    )))
}

/// Merge base for propagating statements of `names` in `filename`: the
/// parent of the first version already logging all of them, else head.
fn merge_base_text(
    project: &Project,
    filename: &str,
    names: &[String],
    head: &str,
) -> Result<String> {
    for interval in project.intervals.all() {
        if interval.projid != project.projid() {
            continue;
        }
        let recs: Vec<&LogRecord> = project
            .store
            .logs()
            .iter()
            .filter(|r| r.filename == filename && interval.contains(r.tstamp))
            .collect();
        if recs.is_empty() {
            continue;
        }
        let all_present = names
            .iter()
            .all(|n| recs.iter().any(|r| r.value_name == *n));
        if all_present {
            let parent = project.repo.parent_of(&interval.vid)?;
            if !parent.is_empty() {
                if let Ok(text) = project.repo.file_at(&parent, filename) {
                    return Ok(text);
                }
            }
            break;
        }
    }
    Ok(project.repo.file_at(head, filename).unwrap_or_default())
}

fn cached_flag(project: &Project, vid: &str, target: &str) -> bool {
    if let Some(row) = project
        .build_deps
        .for_vid(vid)
        .into_iter()
        .find(|r| r.target == target)
    {
        return row.cached;
    }
    project
        .repo
        .file_at(vid, &project.config.makefile_path)
        .ok()
        .and_then(|text| buildspec::parse_makefile(&text).ok())
        .and_then(|g| g.target(target).map(|t| t.cached))
        .unwrap_or(false)
}

/// Plan hindsight backfill of `requested` names over intervals intersecting
/// [`since`, `until`]. Conflicted versions are reported, not aborted.
pub fn plan(
    project: &Project,
    requested: &[String],
    since: Option<Timestamp>,
    until: Option<Timestamp>,
) -> Result<ReplayPlan> {
    if requested.is_empty() {
        return Err(FlorError::Invalid("replay needs at least one name".into()));
    }
    let head = project
        .repo
        .head_vid()?
        .ok_or_else(|| FlorError::NotFound("no committed version yet".into()))?;
    let graph = project.graph()?;

    // group requested names by producing step file
    let mut producers: BTreeMap<String, (String, Vec<String>)> = BTreeMap::new();
    for name in requested {
        let (filename, target) = producing_step(project, &graph, name)?;
        producers
            .entry(filename)
            .or_insert_with(|| (target, Vec::new()))
            .1
            .push(name.clone());
    }

    let mut plan = ReplayPlan {
        requested: requested.to_vec(),
        ..Default::default()
    };
    for (filename, (_, names)) in &producers {
        if let Ok(diff) = logging_diff(project, filename) {
            plan.warnings.extend(diff.warnings);
        }
        let _ = names;
    }

    let intervals: Vec<_> = project
        .intervals
        .all()
        .iter()
        .filter(|i| i.projid == project.projid())
        .filter(|i| since.is_none_or(|s| i.ts_end >= s) && until.is_none_or(|u| i.ts_start <= u))
        .cloned()
        .collect();

    for interval in &intervals {
        for (filename, (target, names)) in &producers {
            if plan
                .work
                .iter()
                .any(|w| w.vid == interval.vid && w.target == *target)
                || plan
                    .skipped
                    .iter()
                    .any(|s| s.vid == interval.vid && s.target == *target)
            {
                continue;
            }
            let recs: Vec<&LogRecord> = project
                .store
                .logs()
                .iter()
                .filter(|r| r.filename == *filename && interval.contains(r.tstamp))
                .collect();
            if recs.is_empty() {
                plan.skipped.push(SkipItem {
                    vid: interval.vid.clone(),
                    target: target.clone(),
                    reason: SkipReason::NotApplicable,
                });
                continue;
            }
            let missing: Vec<&String> = names
                .iter()
                .filter(|n| !recs.iter().any(|r| r.value_name == **n))
                .collect();
            if missing.is_empty() {
                plan.skipped.push(SkipItem {
                    vid: interval.vid.clone(),
                    target: target.clone(),
                    reason: SkipReason::AlreadyPresent,
                });
                continue;
            }
            let file_tstamp = recs.iter().map(|r| r.tstamp).max().expect("non-empty");
            let theirs = match project.repo.file_at(&interval.vid, filename) {
                Ok(t) => t,
                Err(_) => {
                    plan.skipped.push(SkipItem {
                        vid: interval.vid.clone(),
                        target: target.clone(),
                        reason: SkipReason::NotApplicable,
                    });
                    continue;
                }
            };
            let work_path = project.root().join(filename);
            let ours = std::fs::read_to_string(&work_path)
                .map_err(|e| FlorError::io(&work_path, e))?;
            let base = merge_base_text(project, filename, names, &head)?;
            let merged = match merge3(&base, &ours, &theirs) {
                Merge3Result::Merged(text) => text,
                Merge3Result::Conflict(hunks) => {
                    plan.conflicts.push(ConflictItem {
                        vid: interval.vid.clone(),
                        filename: filename.clone(),
                        hunks,
                    });
                    continue;
                }
            };

            let checkpoint = project
                .store
                .logs()
                .iter()
                .filter(|r| {
                    r.tstamp == file_tstamp
                        && r.filename == *filename
                        && r.value_type == TYPE_BLOB
                        && r.ctx_id > 0
                })
                .max_by_key(|r| (r.ctx_id, r.seq))
                .map(|r| (r.ctx_id, r.value_name.clone(), r.value.clone()));
            let mode = match (&checkpoint, cached_flag(project, &interval.vid, target)) {
                (Some((ctx, _, _)), true) => ReplayMode::ResumeFromCheckpoint(*ctx),
                _ => ReplayMode::Full,
            };

            plan.work.push(WorkItem {
                vid: interval.vid.clone(),
                tstamp: file_tstamp,
                target: target.clone(),
                filename: filename.clone(),
                mode,
                merged,
                hist_args: project
                    .store
                    .args_for(file_tstamp, filename)
                    .into_iter()
                    .map(|a| (a.name, a.value))
                    .collect(),
                checkpoint: checkpoint.map(|(_, name, hash)| (name, hash)),
            });
        }

        // ancestor targets of this interval's work are not re-run: their
        // outputs are already in the version snapshot (memoized); recorded
        // after all producer groups so they never shadow real work items
        let work_targets: Vec<String> = plan
            .work
            .iter()
            .filter(|w| w.vid == interval.vid)
            .map(|w| w.target.clone())
            .collect();
        for target in &work_targets {
            let Ok(order) = recipe_order_at(project, &interval.vid, target) else {
                continue;
            };
            for anc in order.iter().filter(|t| *t != target) {
                let claimed = work_targets.contains(anc)
                    || plan
                        .skipped
                        .iter()
                        .any(|s| s.vid == interval.vid && s.target == *anc);
                if !claimed {
                    plan.skipped.push(SkipItem {
                        vid: interval.vid.clone(),
                        target: anc.clone(),
                        reason: SkipReason::Cached,
                    });
                }
            }
        }
    }
    Ok(plan)
}

fn graph_at(project: &Project, vid: &str) -> Result<buildspec::BuildGraph> {
    let text = project.repo.file_at(vid, &project.config.makefile_path)?;
    buildspec::parse_makefile(&text)
}

fn recipe_order_at(project: &Project, vid: &str, goal: &str) -> Result<Vec<String>> {
    let graph = graph_at(project, vid)?;
    buildspec::topo_order(&graph, goal)
}

fn recipe_at(project: &Project, vid: &str, target: &str) -> Result<Vec<RecipeLine>> {
    if let Some(row) = project
        .build_deps
        .for_vid(vid)
        .into_iter()
        .find(|r| r.target == target)
    {
        return Ok(row.cmds.clone());
    }
    graph_at(project, vid)?
        .target(target)
        .map(|t| t.cmds.clone())
        .ok_or_else(|| FlorError::UnknownTarget(target.to_string()))
}

// --- execute -------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ItemReport {
    pub vid: String,
    pub tstamp: Timestamp,
    pub target: String,
    pub mode: ReplayMode,
    pub exit_code: i32,
    pub records_added: usize,
    pub iterations_executed: usize,
    pub events_ingested: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayReport {
    pub items: Vec<ItemReport>,
    pub snapshot_vid: Option<String>,
}

/// Execute a plan: each work item runs in an isolated workspace materialized
/// at its historical version, with historical args and checkpoints, and its
/// records are backfilled under the historical timestamp. A failing item is
/// reported and the rest proceed.
pub fn execute(
    project: &mut Project,
    plan: &ReplayPlan,
    extra_env: &[(String, String)],
) -> Result<ReplayReport> {
    project.lock_write()?;
    for w in &plan.work {
        if plan
            .conflicts
            .iter()
            .any(|c| c.vid == w.vid && c.filename == w.filename)
        {
            return Err(FlorError::UnresolvedConflict {
                vid: w.vid.clone(),
                filename: w.filename.clone(),
            });
        }
    }
    let head = project
        .repo
        .head_vid()?
        .ok_or_else(|| FlorError::NotFound("no committed version yet".into()))?;

    let mut report = ReplayReport::default();
    for w in &plan.work {
        report.items.push(execute_item(project, w, &head, extra_env)?);
    }
    if !project.repo.is_clean()? {
        report.snapshot_vid = Some(project.repo.snapshot(&format!("flor replay head={head}"))?);
    }
    Ok(report)
}

fn execute_item(
    project: &mut Project,
    w: &WorkItem,
    head: &str,
    extra_env: &[(String, String)],
) -> Result<ItemReport> {
    let short_vid = &w.vid[..w.vid.len().min(12)];
    let ws = project.replay_dir().join(format!("{short_vid}-{}", w.target));
    if ws.exists() {
        std::fs::remove_dir_all(&ws).map_err(|e| FlorError::io(&ws, e))?;
    }
    std::fs::create_dir_all(&ws).map_err(|e| FlorError::io(&ws, e))?;
    project.repo.materialize(&w.vid, &ws)?;
    let merged_path = ws.join(&w.filename);
    std::fs::write(&merged_path, &w.merged).map_err(|e| FlorError::io(&merged_path, e))?;

    let tmp = project.tmp_dir();
    std::fs::create_dir_all(&tmp).map_err(|e| FlorError::io(&tmp, e))?;
    let ckpt_dir = tmp.join(format!("replay-ckpt-{}-{}", w.tstamp, w.target));
    if ckpt_dir.exists() {
        std::fs::remove_dir_all(&ckpt_dir).map_err(|e| FlorError::io(&ckpt_dir, e))?;
    }
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| FlorError::io(&ckpt_dir, e))?;
    if let ReplayMode::ResumeFromCheckpoint(_) = w.mode {
        if let Some((name, hash)) = &w.checkpoint {
            let bytes = project.store.get_blob(hash)?;
            let path = ckpt_dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| FlorError::io(&path, e))?;
        }
    }

    let cmds = recipe_at(project, &w.vid, &w.target)?;
    let args = ArgContext::from_historical(&w.hist_args);
    let args_json = args.merged_json()?;

    project.store.begin_backfill(w.tstamp)?;
    let mut exit_code = 0;
    let (events_ingested, records, iterations) = {
        let mut session = IngestSession::new(&mut project.store, w.tstamp, &ws);
        for (i, line) in cmds.iter().enumerate() {
            let events_path = tmp.join(format!(
                "events-replay-{}-{}-{}.jsonl",
                w.tstamp, w.target, i
            ));
            let code = run_step(&StepCommand {
                cmd: &line.cmd,
                quiet: line.quiet,
                workdir: &ws,
                events_path: &events_path,
                ckpt_dir: &ckpt_dir,
                args_json: &args_json,
                replay: true,
                extra_env,
            })?;
            let ingested = ingest_events_file(&mut session, &events_path, &w.filename, &args);
            let _ = std::fs::remove_file(&events_path);
            if code != 0 {
                exit_code = code;
                break;
            }
            ingested?;
        }
        (
            session.events_seen,
            session.records_stored,
            session.iterations_executed(&w.filename),
        )
    };

    if exit_code != 0 {
        project.store.abort_run();
        return Ok(ItemReport {
            vid: w.vid.clone(),
            tstamp: w.tstamp,
            target: w.target.clone(),
            mode: w.mode.clone(),
            exit_code,
            records_added: 0,
            iterations_executed: 0,
            events_ingested,
        });
    }

    project.store.put_record(LogRecord {
        projid: project.projid().to_string(),
        tstamp: w.tstamp,
        filename: w.filename.clone(),
        ctx_id: 0,
        value_name: REPLAY_OF_NAME.to_string(),
        value: head.to_string(),
        value_type: TYPE_TEXT,
        seq: 0,
    })?;
    project.store.flush_run(&format!("replay:{}", w.target))?;

    Ok(ItemReport {
        vid: w.vid.clone(),
        tstamp: w.tstamp,
        target: w.target.clone(),
        mode: w.mode.clone(),
        exit_code: 0,
        records_added: records + 1,
        iterations_executed: iterations,
        events_ingested,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ws_insensitive_diff_ignores_whitespace_churn() {
        let head = "a = 1\nb = 2\n";
        let work = "a  =  1\n\nb =  2\n";
        assert!(diff_ws_insensitive(head, work).is_empty());
    }

    #[test]
    fn added_log_line_is_one_hunk() {
        let head = "acc = eval()\nflor.log(\"acc\", acc)\n";
        let work = "acc = eval()\nflor.log(\"acc\", acc)\nflor.log(\"recall\", recall)\n";
        let d = diff_ws_insensitive(head, work);
        assert_eq!(d.hunks.len(), 1);
        assert_eq!(d.hunks[0].added.len(), 1);
        assert!(d.hunks[0].removed.is_empty());
        assert!(d.warnings.is_empty());
    }

    #[test]
    fn non_logging_addition_warns() {
        let head = "a = 1\n";
        let work = "a = 1\nb = compute()\n";
        let d = diff_ws_insensitive(head, work);
        assert_eq!(d.hunks.len(), 1);
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn no_change_is_empty() {
        assert!(diff_ws_insensitive("x\n", "x\n").is_empty());
    }
}

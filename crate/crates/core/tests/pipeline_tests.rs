//! End-to-end runner and replay flows over a tiny shell-only pipeline.

use std::collections::BTreeMap;
use std::path::Path;

use flor_core::clock::ClockMode;
use flor_core::error::FlorError;
use flor_core::query::dataframe;
use flor_core::replay::{self, ReplayMode, SkipReason};
use flor_core::runner::{run, RunOptions};
use flor_core::store::{LogRecord, ScanFilter, RUN_STATUS_NAME};
use flor_core::{Project, ProjectConfig};
use tempfile::TempDir;

const MAKEFILE: &str = "prep: prep.sh\n\t@sh prep.sh\n\t@touch prep\n\ntrain: prep train.sh # flor:cached\n\t@sh train.sh\n\t@touch train\n";

const PREP_SH: &str = r#"
printf '%s\n' '{"k":"log","n":"rows","v":"128","t":1}' >> "$FLOR_EVENTS"
"#;

// two epochs, loss per epoch, acc at the end of each epoch, checkpoint per epoch
const TRAIN_V1: &str = r#"
E="$FLOR_EVENTS"
printf '%s\n' '{"k":"arg","n":"epochs","v":"2"}' >> "$E"
printf '%s\n' '{"k":"loop_begin","n":"epoch"}' >> "$E"
for epoch in 0 1; do
  printf '{"k":"iter_begin","n":"epoch","v":"%s"}\n' "$epoch" >> "$E"
  printf '{"k":"log","n":"loss","v":"0.%s","t":2}\n' "$((9 - epoch))" >> "$E"
  printf '{"k":"log","n":"acc","v":"0.%s","t":2}\n' "$((5 + epoch))" >> "$E"
  printf 'state-%s' "$epoch" > "$FLOR_CKPT_DIR/model"
  printf '{"k":"ckpt","n":"model","v":"%s"}\n' "$FLOR_CKPT_DIR/model" >> "$E"
  printf '%s\n' '{"k":"iter_end","n":"epoch"}' >> "$E"
done
printf '%s\n' '{"k":"loop_end","n":"epoch"}' >> "$E"
"#;

// v2 adds the recall statement; emission marker: "n":"recall"
const TRAIN_V2: &str = r#"
E="$FLOR_EVENTS"
printf '%s\n' '{"k":"arg","n":"epochs","v":"2"}' >> "$E"
printf '%s\n' '{"k":"loop_begin","n":"epoch"}' >> "$E"
for epoch in 0 1; do
  printf '{"k":"iter_begin","n":"epoch","v":"%s"}\n' "$epoch" >> "$E"
  printf '{"k":"log","n":"loss","v":"0.%s","t":2}\n' "$((9 - epoch))" >> "$E"
  printf '{"k":"log","n":"acc","v":"0.%s","t":2}\n' "$((5 + epoch))" >> "$E"
  printf '{"k":"log","n":"recall","v":"0.%s","t":2}\n' "$((6 + epoch))" >> "$E"
  printf 'state-%s' "$epoch" > "$FLOR_CKPT_DIR/model"
  printf '{"k":"ckpt","n":"model","v":"%s"}\n' "$FLOR_CKPT_DIR/model" >> "$E"
  printf '%s\n' '{"k":"iter_end","n":"epoch"}' >> "$E"
done
printf '%s\n' '{"k":"loop_end","n":"epoch"}' >> "$E"
"#;

fn setup(dir: &TempDir) -> Project {
    let root = dir.path();
    std::fs::write(root.join("Makefile"), MAKEFILE).unwrap();
    std::fs::write(root.join("prep.sh"), PREP_SH).unwrap();
    std::fs::write(root.join("train.sh"), TRAIN_V1).unwrap();
    let mut cfg = ProjectConfig::new("demo");
    cfg.clock_mode = ClockMode::Logical;
    Project::init(root, cfg).unwrap()
}

fn run_goal(project: &mut Project, goal: &str) -> flor_core::runner::RunReport {
    run(
        project,
        &RunOptions {
            goal: goal.into(),
            quiet: true,
            ..Default::default()
        },
    )
    .unwrap()
}

fn touch_later(path: &Path) {
    // bump mtime past everything the run produced
    let later = std::time::SystemTime::now() + std::time::Duration::from_secs(5);
    let f = std::fs::OpenOptions::new().write(true).open(path).unwrap();
    f.set_modified(later).unwrap();
}

#[test]
fn cold_run_executes_prep_then_train_and_commits() {
    let dir = TempDir::new().unwrap();
    let mut project = setup(&dir);
    let report = run_goal(&mut project, "train");

    assert_eq!(
        report.executed.iter().map(|e| e.target.as_str()).collect::<Vec<_>>(),
        vec!["prep", "train"]
    );
    assert_eq!(report.executed[0].filename, "prep.sh");
    assert_eq!(report.executed[1].filename, "train.sh");
    assert!(report.executed.iter().all(|e| e.exit_code == 0));
    assert_eq!(report.tstamp, 1);
    assert!(!report.vid.is_empty());

    // records: rows, 2x(loss, acc, model), arg pair, run status
    assert_eq!(project.store.scan(&ScanFilter::by_name("loss")).len(), 2);
    assert_eq!(project.store.scan(&ScanFilter::by_name("model")).len(), 2);
    let status = project.store.scan(&ScanFilter::by_name(RUN_STATUS_NAME));
    assert_eq!(status.len(), 1);
    assert_eq!(status[0].value, "ok");

    // the interval resolves and the commit contains the run file
    let interval = project.intervals.resolve("demo", 1).unwrap();
    assert_eq!(interval.root_target, "train");
    assert!(project.repo.rev_exists(&interval.vid));
    assert!(project
        .repo
        .file_at(&interval.vid, ".flor/records/1.json")
        .is_ok());
    // build_deps persisted for this vid
    assert_eq!(project.build_deps.for_vid(&interval.vid).len(), 2);
    project.store.audit().unwrap();
}

#[test]
fn unchanged_rerun_executes_nothing_but_records_status() {
    let dir = TempDir::new().unwrap();
    let mut project = setup(&dir);
    run_goal(&mut project, "train");
    let before = project.store.logs().len();

    let report = run_goal(&mut project, "train");
    assert!(report.executed.is_empty());
    assert_eq!(report.tstamp, 2);
    let added: Vec<&LogRecord> = project
        .store
        .logs()
        .iter()
        .filter(|r| r.tstamp == 2)
        .collect();
    assert_eq!(added.len(), 1);
    assert_eq!(added[0].value_name, RUN_STATUS_NAME);
    assert_eq!(project.store.logs().len(), before + 1);
}

#[test]
fn overrides_are_recorded_as_non_default_args() {
    let dir = TempDir::new().unwrap();
    let mut project = setup(&dir);
    let mut overrides = BTreeMap::new();
    overrides.insert("epochs".to_string(), "7".to_string());
    run(
        &mut project,
        &RunOptions {
            goal: "train".into(),
            overrides,
            quiet: true,
            ..Default::default()
        },
    )
    .unwrap();
    let args = project.store.args_for(1, "train.sh");
    let epochs = args.iter().find(|a| a.name == "epochs").unwrap();
    assert_eq!(epochs.value, "7");
    assert!(!epochs.was_default);
}

#[test]
fn failing_step_aborts_but_commits_failure_marker() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("Makefile"),
        "bad: bad.sh\n\t@sh bad.sh\n\ngood: bad\n\t@echo never\n",
    )
    .unwrap();
    std::fs::write(root.join("bad.sh"), "exit 3\n").unwrap();
    let mut cfg = ProjectConfig::new("demo");
    cfg.clock_mode = ClockMode::Logical;
    let mut project = Project::init(root, cfg).unwrap();

    let err = run(
        &mut project,
        &RunOptions {
            goal: "good".into(),
            quiet: true,
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, FlorError::StepFailed { code: 3, .. }));

    let status = project.store.scan(&ScanFilter::by_name(RUN_STATUS_NAME));
    assert_eq!(status.len(), 1);
    assert_eq!(status[0].value, "failed:bad");
    // the partial run was still committed
    assert!(project.intervals.resolve("demo", 1).is_ok());
}

#[test]
fn commit_tstamps_strictly_increase_and_resolve() {
    let dir = TempDir::new().unwrap();
    let mut project = setup(&dir);
    for expect in 1..=5 {
        let report = run_goal(&mut project, "prep");
        assert_eq!(report.tstamp, expect);
        if expect == 1 {
            // later runs are staleness no-ops but still commit status records
            touch_later(&dir.path().join("prep.sh"));
        }
    }
    let all = project.intervals.all();
    assert_eq!(all.len(), 5);
    for w in all.windows(2) {
        assert!(w[0].ts_end < w[1].ts_start);
    }
    for t in 1..=5 {
        assert!(project.intervals.resolve("demo", t).is_ok());
    }
}

#[test]
fn hindsight_backfill_round_trip() {
    let dir = TempDir::new().unwrap();
    let mut project = setup(&dir);
    run_goal(&mut project, "train"); // t=1, no recall

    // add the recall statement and run once so the statement is committed
    std::fs::write(dir.path().join("train.sh"), TRAIN_V2).unwrap();
    touch_later(&dir.path().join("train.sh"));
    run_goal(&mut project, "train"); // t=2, logs recall

    // pre-replay: the t=1 rows have null recall
    let before = dataframe(&project.store, &["acc".into(), "recall".into()]).unwrap();
    let nulls: Vec<_> = before
        .rows
        .iter()
        .filter(|r| r.last().unwrap().is_none())
        .collect();
    assert_eq!(nulls.len(), 2);

    let plan = replay::plan(&project, &["recall".into()], None, None).unwrap();
    assert_eq!(plan.work.len(), 1);
    assert_eq!(plan.work[0].tstamp, 1);
    assert_eq!(plan.work[0].target, "train");
    // checkpoints exist and train is marked cached
    assert!(matches!(
        plan.work[0].mode,
        ReplayMode::ResumeFromCheckpoint(_)
    ));
    assert!(plan
        .skipped
        .iter()
        .any(|s| s.target == "train" && s.reason == SkipReason::AlreadyPresent));
    assert!(plan
        .skipped
        .iter()
        .any(|s| s.target == "prep" && s.reason == SkipReason::Cached));
    assert!(plan.conflicts.is_empty());

    let pre_records: Vec<LogRecord> = project.store.logs().to_vec();
    let report = replay::execute(&mut project, &plan, &[]).unwrap();
    assert_eq!(report.items.len(), 1);
    assert_eq!(report.items[0].exit_code, 0);
    assert!(report.items[0].records_added > 0);

    // non-destructive: pre-existing records unchanged, only additions
    for r in &pre_records {
        assert!(project.store.logs().contains(r));
    }
    assert!(project.store.logs().len() > pre_records.len());

    // historical addressing: every backfilled record sits in its interval
    let new_records: Vec<&LogRecord> = project
        .store
        .logs()
        .iter()
        .filter(|r| !pre_records.contains(r))
        .collect();
    for r in &new_records {
        let interval = project.intervals.resolve("demo", r.tstamp).unwrap();
        assert!(interval.contains(r.tstamp));
    }
    assert!(new_records
        .iter()
        .any(|r| r.value_name == "replay::of"));

    // post-replay: no nulls
    let after = dataframe(&project.store, &["acc".into(), "recall".into()]).unwrap();
    assert!(after.rows.iter().all(|r| r.last().unwrap().is_some()));

    // idempotence: a fresh plan has nothing to do
    let plan2 = replay::plan(&project, &["recall".into()], None, None).unwrap();
    assert!(plan2.work.is_empty());
    let count_before = project.store.logs().len();
    replay::execute(&mut project, &plan2, &[]).unwrap();
    assert_eq!(project.store.logs().len(), count_before);
    project.store.audit().unwrap();
}

#[test]
fn empty_scope_gives_empty_plan() {
    let dir = TempDir::new().unwrap();
    let mut project = setup(&dir);
    run_goal(&mut project, "train");
    std::fs::write(dir.path().join("train.sh"), TRAIN_V2).unwrap();
    touch_later(&dir.path().join("train.sh"));
    run_goal(&mut project, "train");

    let plan = replay::plan(&project, &["recall".into()], Some(100), Some(200)).unwrap();
    assert!(plan.work.is_empty());
    assert!(plan.skipped.is_empty());
}

fn train_sh(lr: &str, with_recall: bool) -> String {
    let recall_line = if with_recall {
        "  printf '{\"k\":\"log\",\"n\":\"recall\",\"v\":\"0.%s\",\"t\":2}\\n' \"$((6 + epoch))\" >> \"$E\"\n"
    } else {
        ""
    };
    format!(
        "E=\"$FLOR_EVENTS\"\n# LR={lr}\nprintf '%s\\n' '{{\"k\":\"loop_begin\",\"n\":\"epoch\"}}' >> \"$E\"\nfor epoch in 0 1; do\n  printf '{{\"k\":\"iter_begin\",\"n\":\"epoch\",\"v\":\"%s\"}}\\n' \"$epoch\" >> \"$E\"\n  printf '{{\"k\":\"log\",\"n\":\"acc\",\"v\":\"0.%s\",\"t\":2}}\\n' \"$((5 + epoch))\" >> \"$E\"\n{recall_line}  printf '%s\\n' '{{\"k\":\"iter_end\",\"n\":\"epoch\"}}' >> \"$E\"\ndone\nprintf '%s\\n' '{{\"k\":\"loop_end\",\"n\":\"epoch\"}}' >> \"$E\"\n"
    )
}

#[test]
fn conflicted_versions_are_collected_without_aborting_others() {
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    std::fs::write(root.join("Makefile"), MAKEFILE).unwrap();
    std::fs::write(root.join("prep.sh"), PREP_SH).unwrap();
    std::fs::write(root.join("train.sh"), train_sh("0.1", false)).unwrap();
    let mut cfg = ProjectConfig::new("demo");
    cfg.clock_mode = ClockMode::Logical;
    let mut project = Project::init(root, cfg).unwrap();

    run_goal(&mut project, "train"); // v1: LR=0.1, no recall
    std::fs::write(root.join("train.sh"), train_sh("0.3", false)).unwrap();
    touch_later(&root.join("train.sh"));
    run_goal(&mut project, "train"); // v2: LR=0.3, no recall
    std::fs::write(root.join("train.sh"), train_sh("0.2", true)).unwrap();
    touch_later(&root.join("train.sh"));
    run_goal(&mut project, "train"); // v3: LR=0.2, adds recall

    // v1 drifted on the same line both sides touched: conflict, collected;
    // v2 equals the merge base: clean work item
    let plan = replay::plan(&project, &["recall".into()], None, None).unwrap();
    assert_eq!(plan.conflicts.len(), 1);
    assert_eq!(plan.conflicts[0].filename, "train.sh");
    assert!(!plan.conflicts[0].hunks.is_empty());
    assert_eq!(plan.work.len(), 1);
    assert_eq!(plan.work[0].tstamp, 2);

    let report = replay::execute(&mut project, &plan, &[]).unwrap();
    assert_eq!(report.items.len(), 1);
    assert_eq!(report.items[0].exit_code, 0);

    let table = dataframe(&project.store, &["acc".into(), "recall".into()]).unwrap();
    for row in &table.rows {
        let tstamp = row[1].as_deref().unwrap();
        let recall = row.last().unwrap();
        match tstamp {
            "1" => assert!(recall.is_none(), "conflicted version must stay null"),
            _ => assert!(recall.is_some(), "backfill missing at tstamp {tstamp}"),
        }
    }
}

#[test]
fn execute_refuses_work_on_conflicted_versions() {
    let dir = TempDir::new().unwrap();
    let mut project = setup(&dir);
    run_goal(&mut project, "train");
    std::fs::write(dir.path().join("train.sh"), TRAIN_V2).unwrap();
    touch_later(&dir.path().join("train.sh"));
    run_goal(&mut project, "train");

    let mut plan = replay::plan(&project, &["recall".into()], None, None).unwrap();
    assert_eq!(plan.work.len(), 1);
    plan.conflicts.push(flor_core::replay::ConflictItem {
        vid: plan.work[0].vid.clone(),
        filename: plan.work[0].filename.clone(),
        hunks: Vec::new(),
    });
    assert!(matches!(
        replay::execute(&mut project, &plan, &[]).unwrap_err(),
        FlorError::UnresolvedConflict { .. }
    ));
}

#[test]
fn multi_file_replay_plans_every_producer() {
    // the infer step file sorts before the train step file, while the infer
    // target depends on the train target: both must still get work items
    const MF: &str = "train: z_train.sh\n\t@sh z_train.sh\n\t@touch train\n\ninfer: train a_infer.sh\n\t@sh a_infer.sh\n\t@touch infer\n";
    let step = |name: &str, extra: &str| {
        format!(
            "printf '%s\\n' '{{\"k\":\"log\",\"n\":\"{name}\",\"v\":\"1\"}}' >> \"$FLOR_EVENTS\"\n{extra}"
        )
    };
    let dir = TempDir::new().unwrap();
    let root = dir.path();
    std::fs::write(root.join("Makefile"), MF).unwrap();
    std::fs::write(root.join("z_train.sh"), step("acc", "")).unwrap();
    std::fs::write(root.join("a_infer.sh"), step("pred", "")).unwrap();
    let mut cfg = ProjectConfig::new("demo");
    cfg.clock_mode = ClockMode::Logical;
    let mut project = Project::init(root, cfg).unwrap();
    run_goal(&mut project, "infer");

    let recall = "printf '%s\\n' '{\"k\":\"log\",\"n\":\"recall\",\"v\":\"2\"}' >> \"$FLOR_EVENTS\"\n";
    let conf = "printf '%s\\n' '{\"k\":\"log\",\"n\":\"conf\",\"v\":\"3\"}' >> \"$FLOR_EVENTS\"\n";
    std::fs::write(root.join("z_train.sh"), step("acc", recall)).unwrap();
    std::fs::write(root.join("a_infer.sh"), step("pred", conf)).unwrap();
    touch_later(&root.join("z_train.sh"));
    touch_later(&root.join("a_infer.sh"));
    run_goal(&mut project, "infer");

    let plan = replay::plan(&project, &["recall".into(), "conf".into()], None, None).unwrap();
    let mut work: Vec<(&str, i64)> = plan
        .work
        .iter()
        .map(|w| (w.target.as_str(), w.tstamp))
        .collect();
    work.sort();
    assert_eq!(work, vec![("infer", 1), ("train", 1)]);
    assert!(
        !plan
            .skipped
            .iter()
            .any(|s| s.target == "train" && s.reason == SkipReason::Cached),
        "a cached-ancestor entry shadowed the train work item"
    );

    let report = replay::execute(&mut project, &plan, &[]).unwrap();
    assert!(report.items.iter().all(|i| i.exit_code == 0));
    assert!(project.store.latest_value(1, "z_train.sh", 0, "recall").is_some());
    assert!(project.store.latest_value(1, "a_infer.sh", 0, "conf").is_some());
}

#[test]
fn commit_with_zero_records_follows_tree_state() {
    let dir = TempDir::new().unwrap();
    let mut project = setup(&dir);
    project.lock_write().unwrap();

    // dirty tree: interval still created
    let t = project.next_tstamp();
    project.store.begin_run(t).unwrap();
    std::fs::write(dir.path().join("note.txt"), "observation").unwrap();
    let (tstamp, vid) = project.commit("manual").unwrap().expect("commit");
    assert_eq!(tstamp, 1);
    assert!(project.repo.rev_exists(&vid));
    assert_eq!(project.intervals.all().len(), 1);

    // clean tree and nothing pending: no-op, no new interval
    let t = project.next_tstamp();
    project.store.begin_run(t).unwrap();
    assert!(project.commit("manual").unwrap().is_none());
    assert_eq!(project.intervals.all().len(), 1);
}

#[test]
fn unknown_requested_name_is_an_error() {
    let dir = TempDir::new().unwrap();
    let mut project = setup(&dir);
    run_goal(&mut project, "train");
    assert!(matches!(
        replay::plan(&project, &["nonexistent".into()], None, None).unwrap_err(),
        FlorError::NotFound(_)
    ));
}

//! `flor` command line: init, run, query, replay, versions, feedback.
//!
//! Exit codes: 0 success, 1 domain errors, 2 usage errors. Domain errors go
//! to stderr with an `error:` prefix and never print a backtrace.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use flor_core::clock::ClockMode;
use flor_core::error::{FlorError, Result};
use flor_core::query::{best_checkpoint, dataframe, render_aligned, render_csv};
use flor_core::replay::{self, ReplayPlan};
use flor_core::runner::{run, RunOptions};
use flor_core::store::value::TYPE_TEXT;
use flor_core::store::{LogRecord, LoopIteration};
use flor_core::{Project, ProjectConfig};

#[derive(Parser)]
#[command(name = "flor", version, about = "Context management for iterative pipelines")]
struct Cli {
    /// Project directory (defaults to the current directory).
    #[arg(long, global = true, value_name = "DIR")]
    dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    Wall,
    Logical,
}

#[derive(Subcommand)]
enum Cmd {
    /// Initialize the project in the current directory.
    Init {
        /// Project identifier; defaults to the directory name.
        #[arg(long)]
        projid: Option<String>,
        /// Pipeline definition file.
        #[arg(long, default_value = "Makefile")]
        makefile: String,
        /// Timestamp source; logical gives deterministic 1, 2, 3, ...
        #[arg(long, value_enum, default_value = "wall")]
        clock: ClockArg,
    },
    /// Execute a pipeline target and commit the run.
    Run {
        goal: String,
        /// Argument overrides, `name=value`; repeatable.
        #[arg(long = "kwargs", value_name = "K=V")]
        kwargs: Vec<String>,
    },
    /// Pivot logged names into a table across all history.
    Query {
        #[arg(required = true)]
        names: Vec<String>,
        /// Emit RFC 4180 CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
    },
    /// Print the checkpoint hash with the best value of a metric.
    BestCheckpoint {
        metric: String,
        /// Pick the smallest metric value instead of the largest.
        #[arg(long)]
        minimize: bool,
    },
    /// Backfill newly added logging statements onto past versions.
    Replay {
        /// Comma-separated value names to backfill.
        #[arg(long, value_delimiter = ',', required = true)]
        names: Vec<String>,
        #[arg(long, value_name = "TS")]
        since: Option<i64>,
        #[arg(long, value_name = "TS")]
        until: Option<i64>,
        /// Print the plan without executing it.
        #[arg(long)]
        dry_run: bool,
    },
    /// List committed version intervals.
    Versions,
    /// Record one reviewed value under loop dimensions, as a fresh commit.
    /// Dimensions are flag pairs in nesting order, e.g.
    /// `flor feedback page_color --document a.pdf --page 1 green`.
    Feedback {
        name: String,
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "[--DIM VALUE]... VALUE"
        )]
        rest: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn project_root(cli_dir: &Option<PathBuf>) -> Result<PathBuf> {
    match cli_dir {
        Some(d) => Ok(d.clone()),
        None => std::env::current_dir().map_err(|e| FlorError::io(".", e)),
    }
}

fn open_project(cli_dir: &Option<PathBuf>) -> Result<Project> {
    let root = project_root(cli_dir)?;
    Project::open_as(&root, std::env::var("FLOR_PROJID").ok())
}

fn step_env() -> Vec<(String, String)> {
    // steps may call back into this binary for reads
    std::env::current_exe()
        .ok()
        .map(|exe| vec![("FLOR_BIN".to_string(), exe.display().to_string())])
        .unwrap_or_default()
}

fn print_plan(plan: &ReplayPlan) {
    println!("replay plan for [{}]", plan.requested.join(", "));
    println!("work:");
    for w in &plan.work {
        println!(
            "  {} tstamp={} target={} file={} mode={}",
            &w.vid[..12.min(w.vid.len())],
            w.tstamp,
            w.target,
            w.filename,
            w.mode
        );
    }
    println!("skipped:");
    for s in &plan.skipped {
        println!(
            "  {} target={} reason={}",
            &s.vid[..12.min(s.vid.len())],
            s.target,
            s.reason
        );
    }
    println!("conflicts:");
    for c in &plan.conflicts {
        println!(
            "  {} file={} hunks={}",
            &c.vid[..12.min(c.vid.len())],
            c.filename,
            c.hunks.len()
        );
    }
    for w in &plan.warnings {
        println!("warning: {w}");
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Init {
            projid,
            makefile,
            clock,
        } => {
            let root = project_root(&cli.dir)?;
            let mut cfg = ProjectConfig::new(
                projid
                    .or_else(|| std::env::var("FLOR_PROJID").ok())
                    .unwrap_or_default(),
            );
            cfg.makefile_path = makefile;
            cfg.clock_mode = match clock {
                ClockArg::Wall => ClockMode::Wall,
                ClockArg::Logical => ClockMode::Logical,
            };
            let project = Project::init(&root, cfg)?;
            println!("initialized project '{}'", project.projid());
            Ok(())
        }
        Cmd::Run { goal, kwargs } => {
            let mut overrides = BTreeMap::new();
            for kv in &kwargs {
                let (k, v) = kv.split_once('=').ok_or_else(|| {
                    FlorError::Invalid(format!("--kwargs expects name=value, got {kv:?}"))
                })?;
                overrides.insert(k.to_string(), v.to_string());
            }
            let mut project = open_project(&cli.dir)?;
            let report = run(
                &mut project,
                &RunOptions {
                    goal,
                    overrides,
                    extra_env: step_env(),
                    quiet: false,
                },
            )?;
            for step in &report.executed {
                println!(
                    "ran {} ({}) in {:.3}s",
                    step.target, step.filename, step.duration_secs
                );
            }
            println!(
                "committed tstamp={} vid={} records={}",
                report.tstamp, report.vid, report.records_ingested
            );
            Ok(())
        }
        Cmd::Query { names, csv } => {
            let project = open_project(&cli.dir)?;
            let table = dataframe(&project.store, &names)?;
            if csv {
                print!("{}", render_csv(&table));
            } else {
                print!("{}", render_aligned(&table));
            }
            Ok(())
        }
        Cmd::BestCheckpoint { metric, minimize } => {
            let project = open_project(&cli.dir)?;
            match best_checkpoint(&project.store, &metric, !minimize)? {
                Some(hash) => println!("{hash}"),
                None => println!("none"),
            }
            Ok(())
        }
        Cmd::Replay {
            names,
            since,
            until,
            dry_run,
        } => {
            let mut project = open_project(&cli.dir)?;
            let plan = replay::plan(&project, &names, since, until)?;
            print_plan(&plan);
            if dry_run {
                return Ok(());
            }
            let report = replay::execute(&mut project, &plan, &step_env())?;
            for item in &report.items {
                println!(
                    "replayed {} tstamp={} target={} mode={} exit={} records+={} iterations={}",
                    &item.vid[..12.min(item.vid.len())],
                    item.tstamp,
                    item.target,
                    item.mode,
                    item.exit_code,
                    item.records_added,
                    item.iterations_executed
                );
            }
            if let Some(vid) = &report.snapshot_vid {
                println!("snapshot {vid}");
            }
            Ok(())
        }
        Cmd::Versions => {
            let project = open_project(&cli.dir)?;
            for i in project.intervals.all() {
                println!(
                    "{}\t{}\t{}\t{}\t{}",
                    i.ts_start, i.ts_end, i.vid, i.root_target, i.projid
                );
            }
            Ok(())
        }
        Cmd::Feedback { name, rest } => {
            let (dims, value) = parse_dims(&rest)?;
            let mut project = open_project(&cli.dir)?;
            project.lock_write()?;
            let tstamp = project.next_tstamp();
            let projid = project.projid().to_string();
            project.store.begin_run(tstamp)?;
            let mut parent = 0;
            for (i, (dim, val)) in dims.iter().enumerate() {
                let ctx = i as u64 + 1;
                project.store.put_loop(LoopIteration {
                    projid: projid.clone(),
                    tstamp,
                    filename: "feedback".into(),
                    ctx_id: ctx,
                    parent_ctx_id: parent,
                    loop_name: dim.clone(),
                    loop_iteration: 0,
                    iteration_value: val.clone(),
                })?;
                parent = ctx;
            }
            project.store.put_record(LogRecord {
                projid,
                tstamp,
                filename: "feedback".into(),
                ctx_id: parent,
                value_name: name.clone(),
                value: value.clone(),
                value_type: TYPE_TEXT,
                seq: 0,
            })?;
            match project.commit("feedback")? {
                Some((t, vid)) => println!("recorded {name}={value} at tstamp={t} vid={vid}"),
                None => println!("nothing to record"),
            }
            Ok(())
        }
    }
}

/// `--document a.pdf --page 1 green` -> dims [(document, a.pdf), (page, 1)],
/// value "green". Dimension order is nesting order, outer first.
fn parse_dims(rest: &[String]) -> Result<(Vec<(String, String)>, String)> {
    let mut dims = Vec::new();
    let mut value = None;
    let mut it = rest.iter().peekable();
    while let Some(tok) = it.next() {
        if let Some(dim) = tok.strip_prefix("--") {
            let val = it.next().ok_or_else(|| {
                FlorError::Invalid(format!("dimension --{dim} is missing a value"))
            })?;
            dims.push((dim.to_string(), val.clone()));
        } else if value.is_none() {
            value = Some(tok.clone());
        } else {
            return Err(FlorError::Invalid(format!(
                "unexpected trailing argument {tok:?}"
            )));
        }
    }
    let value =
        value.ok_or_else(|| FlorError::Invalid("feedback needs a value to record".into()))?;
    Ok((dims, value))
}

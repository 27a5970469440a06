//! A project handle tying together the store, repository, interval map, and
//! build-deps log, plus the advisory single-writer lock.

use std::fs::File;
use std::path::{Path, PathBuf};

use crate::buildspec::{self, BuildDepsStore, BuildGraph};
use crate::clock::Timestamp;
use crate::config::{ProjectConfig, FLOR_DIR};
use crate::error::{FlorError, Result};
use crate::store::Store;
use crate::vcs::{GitRepo, IntervalStore, VersionInterval};

pub const LOCK_FILE: &str = "lock";
pub const TMP_DIR: &str = "tmp";
pub const REPLAY_DIR: &str = "replay";

const GITIGNORE: &str = "objects/\nindex.db\nts2vid.jsonl\nbuild_deps.jsonl\nlock\ntmp/\nreplay/\n";

pub struct Project {
    root: PathBuf,
    pub config: ProjectConfig,
    pub store: Store,
    pub repo: GitRepo,
    pub intervals: IntervalStore,
    pub build_deps: BuildDepsStore,
    lock: Option<File>,
}

impl Project {
    /// Initialize a project in `root`: config, ignore rules, git repository.
    /// The Makefile must parse (a broken pipeline definition fails early).
    pub fn init(root: &Path, mut config: ProjectConfig) -> Result<Project> {
        if config.projid.is_empty() {
            config.projid = root
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_default();
        }
        config.validate()?;
        let makefile = root.join(&config.makefile_path);
        let text = std::fs::read_to_string(&makefile)
            .map_err(|e| FlorError::io(&makefile, e))?;
        buildspec::parse_makefile(&text)?;

        config.save(root)?;
        let ignore = root.join(FLOR_DIR).join(".gitignore");
        std::fs::write(&ignore, GITIGNORE).map_err(|e| FlorError::io(&ignore, e))?;
        GitRepo::init(root)?;
        Project::open(root)
    }

    /// Open an initialized project for reading; call [`Project::lock_write`]
    /// before mutating.
    pub fn open(root: &Path) -> Result<Project> {
        Project::open_as(root, None)
    }

    /// Open with an explicit projid override (the `FLOR_PROJID` escape hatch).
    pub fn open_as(root: &Path, projid: Option<String>) -> Result<Project> {
        let mut config = ProjectConfig::load(root).map_err(|_| {
            FlorError::Invalid(format!(
                "{} is not an initialized project (run `flor init` first)",
                root.display()
            ))
        })?;
        if let Some(p) = projid {
            config.projid = p;
            config.validate()?;
        }
        let store = Store::open(root, &config.projid)?;
        let repo = GitRepo::at(root);
        let intervals = IntervalStore::load(root)?;
        let build_deps = BuildDepsStore::load(root)?;
        Ok(Project {
            root: root.to_path_buf(),
            config,
            store,
            repo,
            intervals,
            build_deps,
            lock: None,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn projid(&self) -> &str {
        &self.config.projid
    }

    pub fn tmp_dir(&self) -> PathBuf {
        self.root.join(FLOR_DIR).join(TMP_DIR)
    }

    pub fn replay_dir(&self) -> PathBuf {
        self.root.join(FLOR_DIR).join(REPLAY_DIR)
    }

    /// Acquire the advisory project write lock. Read-only invocations never
    /// take it, so queries stay concurrent with a running pipeline.
    pub fn lock_write(&mut self) -> Result<()> {
        if self.lock.is_some() {
            return Ok(());
        }
        let path = self.root.join(FLOR_DIR).join(LOCK_FILE);
        let file = File::create(&path).map_err(|e| FlorError::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => {
                self.lock = Some(file);
                Ok(())
            }
            Err(_) => Err(FlorError::Locked(self.config.projid.clone())),
        }
    }

    pub fn makefile_text(&self) -> Result<String> {
        let path = self.root.join(&self.config.makefile_path);
        std::fs::read_to_string(&path).map_err(|e| FlorError::io(&path, e))
    }

    pub fn graph(&self) -> Result<BuildGraph> {
        buildspec::parse_makefile(&self.makefile_text()?)
    }

    /// Next commit timestamp, strictly past every interval and run file.
    pub fn next_tstamp(&self) -> Timestamp {
        let last = self.intervals.max_ts().max(self.max_run_file_tstamp());
        self.config.clock_mode.next(last)
    }

    fn max_run_file_tstamp(&self) -> Timestamp {
        let dir = self.store.records_dir();
        let mut max = 0;
        if let Ok(entries) = std::fs::read_dir(dir) {
            for e in entries.flatten() {
                let name = e.file_name().to_string_lossy().to_string();
                if let Some(t) = name
                    .split('.')
                    .next()
                    .and_then(|p| p.parse::<Timestamp>().ok())
                {
                    // replay files address historical tstamps; only plain run
                    // files move the clock forward
                    if name == format!("{t}.json") {
                        max = max.max(t);
                    }
                }
            }
        }
        max
    }

    /// Application-level transaction commit: flush the open run to a record
    /// file, snapshot the tree, and append the version interval.
    ///
    /// Returns `None` (no-op) when there is nothing to record and the tree
    /// is clean.
    pub fn commit(&mut self, root_target: &str) -> Result<Option<(Timestamp, String)>> {
        let tstamp = self
            .store
            .pending_tstamp()
            .ok_or_else(|| FlorError::Invalid("no open run to commit".into()))?;
        let empty = self.store.pending_record_count() == 0;
        if empty && self.repo.is_clean()? {
            self.store.abort_run();
            return Ok(None);
        }
        self.store.flush_run(root_target)?;
        let message = format!(
            "flor commit projid={} tstamp={}",
            self.config.projid, tstamp
        );
        let vid = self.repo.snapshot(&message)?;
        self.intervals.append(VersionInterval {
            projid: self.config.projid.clone(),
            ts_start: tstamp,
            ts_end: tstamp,
            vid: vid.clone(),
            root_target: root_target.to_string(),
        })?;
        if let Ok(graph) = self.graph() {
            self.build_deps.append_graph(&vid, &graph)?;
        }
        Ok(Some((tstamp, vid)))
    }
}

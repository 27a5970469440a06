//! Code/version management: snapshots via the system `git`, the
//! timestamp-to-version interval map, historical file retrieval, and
//! three-way merging for logging-statement propagation.
//!
//! One flor commit is one git commit; the repository stays usable by
//! ordinary git tooling. Intervals live in `.flor/ts2vid.jsonl`, outside
//! version control, since they are written after the commit they describe.

pub mod merge3;

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::config::FLOR_DIR;
use crate::error::{FlorError, Result};

pub use merge3::{merge3, ConflictHunk, Merge3Result};

pub const TS2VID_FILE: &str = "ts2vid.jsonl";

/// Maps a timestamp range to the version (commit) that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionInterval {
    pub projid: String,
    pub ts_start: Timestamp,
    pub ts_end: Timestamp,
    pub vid: String,
    pub root_target: String,
}

impl VersionInterval {
    pub fn contains(&self, t: Timestamp) -> bool {
        self.ts_start <= t && t <= self.ts_end
    }
}

/// Historical contents of one file at one version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionedFile {
    pub vid: String,
    pub filename: String,
    pub parent_vid: String,
    pub contents: String,
}

// --- git --------------------------------------------------------------------

/// Thin wrapper over the system `git` executable for one working tree.
#[derive(Debug, Clone)]
pub struct GitRepo {
    root: PathBuf,
}

impl GitRepo {
    pub fn at(root: &Path) -> Self {
        GitRepo {
            root: root.to_path_buf(),
        }
    }

    /// Initialize the repository (idempotent) with a local committer identity.
    pub fn init(root: &Path) -> Result<Self> {
        let repo = GitRepo::at(root);
        repo.run(&["init", "-q"])?;
        repo.run(&["config", "user.email", "flor@localhost"])?;
        repo.run(&["config", "user.name", "flor"])?;
        Ok(repo)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn run(&self, args: &[&str]) -> Result<Vec<u8>> {
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.root)
            .args(args)
            .output()
            .map_err(|e| FlorError::Git(format!("failed to spawn git: {e}")))?;
        if !out.status.success() {
            return Err(FlorError::Git(format!(
                "git {} failed: {}",
                args.first().copied().unwrap_or(""),
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        Ok(out.stdout)
    }

    fn run_text(&self, args: &[&str]) -> Result<String> {
        let bytes = self.run(args)?;
        String::from_utf8(bytes)
            .map_err(|e| FlorError::Git(format!("non-utf8 git output: {e}")))
    }

    pub fn is_repo(&self) -> bool {
        self.root.join(".git").exists()
    }

    /// Current HEAD commit hash; `None` before the first commit.
    pub fn head_vid(&self) -> Result<Option<String>> {
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.root)
            .args(["rev-parse", "--verify", "-q", "HEAD"])
            .output()
            .map_err(|e| FlorError::Git(format!("failed to spawn git: {e}")))?;
        if !out.status.success() {
            return Ok(None);
        }
        Ok(Some(
            String::from_utf8_lossy(&out.stdout).trim().to_string(),
        ))
    }

    pub fn is_clean(&self) -> Result<bool> {
        Ok(self.run_text(&["status", "--porcelain"])?.trim().is_empty())
    }

    /// Stage everything and commit. No-op returning the current head when
    /// the tree is already clean.
    pub fn snapshot(&self, message: &str) -> Result<String> {
        if !self.is_repo() {
            return Err(FlorError::Git("repository unavailable".into()));
        }
        self.run(&["add", "-A"])?;
        if self.is_clean()? {
            return self
                .head_vid()?
                .ok_or_else(|| FlorError::Git("empty repository with clean tree".into()));
        }
        self.run(&["commit", "-q", "-m", message])?;
        self.head_vid()?
            .ok_or_else(|| FlorError::Git("commit produced no HEAD".into()))
    }

    pub fn rev_exists(&self, vid: &str) -> bool {
        Command::new("git")
            .arg("-C")
            .arg(&self.root)
            .args(["cat-file", "-e", &format!("{vid}^{{commit}}")])
            .output()
            .map(|o| o.status.success())
            .unwrap_or(false)
    }

    /// Bit-exact historical contents of `filename` at `vid`.
    pub fn file_at(&self, vid: &str, filename: &str) -> Result<String> {
        let spec = format!("{vid}:{filename}");
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.root)
            .args(["show", &spec])
            .output()
            .map_err(|e| FlorError::Git(format!("failed to spawn git: {e}")))?;
        if !out.status.success() {
            return Err(FlorError::NotFound(format!("{filename} at version {vid}")));
        }
        String::from_utf8(out.stdout)
            .map_err(|_| FlorError::Git(format!("{filename} at {vid} is not utf-8 text")))
    }

    pub fn parent_of(&self, vid: &str) -> Result<String> {
        let out = Command::new("git")
            .arg("-C")
            .arg(&self.root)
            .args(["rev-parse", "--verify", "-q", &format!("{vid}^")])
            .output()
            .map_err(|e| FlorError::Git(format!("failed to spawn git: {e}")))?;
        if !out.status.success() {
            return Ok(String::new());
        }
        Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
    }

    pub fn versioned_file(&self, vid: &str, filename: &str) -> Result<VersionedFile> {
        Ok(VersionedFile {
            vid: vid.to_string(),
            filename: filename.to_string(),
            parent_vid: self.parent_of(vid)?,
            contents: self.file_at(vid, filename)?,
        })
    }

    pub fn is_tracked(&self, filename: &str) -> Result<bool> {
        let out = self.run_text(&["ls-files", "--", filename])?;
        Ok(!out.trim().is_empty())
    }

    /// Files present in the tree at `vid`.
    pub fn ls_tree(&self, vid: &str) -> Result<Vec<String>> {
        Ok(self
            .run_text(&["ls-tree", "-r", "--name-only", vid])?
            .lines()
            .map(|l| l.to_string())
            .collect())
    }

    /// Materialize the full tree at `vid` into `dest` (which must exist).
    pub fn materialize(&self, vid: &str, dest: &Path) -> Result<()> {
        let mut archive = Command::new("git")
            .arg("-C")
            .arg(&self.root)
            .args(["archive", "--format=tar", vid])
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| FlorError::Git(format!("failed to spawn git archive: {e}")))?;
        let tar_in = archive.stdout.take().expect("piped stdout");
        let status = Command::new("tar")
            .arg("-x")
            .arg("-C")
            .arg(dest)
            .stdin(tar_in)
            .status()
            .map_err(|e| FlorError::Git(format!("failed to spawn tar: {e}")))?;
        let archive_status = archive
            .wait()
            .map_err(|e| FlorError::Git(format!("git archive: {e}")))?;
        if !archive_status.success() || !status.success() {
            return Err(FlorError::Git(format!(
                "materializing {vid} into {} failed",
                dest.display()
            )));
        }
        Ok(())
    }
}

// --- ts2vid ------------------------------------------------------------------

/// Append-only interval log backing `resolve`.
#[derive(Debug)]
pub struct IntervalStore {
    path: PathBuf,
    intervals: Vec<VersionInterval>,
}

impl IntervalStore {
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(FLOR_DIR).join(TS2VID_FILE);
        let mut intervals = Vec::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| FlorError::io(&path, e))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                intervals.push(serde_json::from_str(line)?);
            }
        }
        Ok(IntervalStore { path, intervals })
    }

    pub fn all(&self) -> &[VersionInterval] {
        &self.intervals
    }

    pub fn last(&self) -> Option<&VersionInterval> {
        self.intervals.last()
    }

    /// Greatest ts_end across all intervals, 0 when empty.
    pub fn max_ts(&self) -> Timestamp {
        self.intervals.iter().map(|i| i.ts_end).max().unwrap_or(0)
    }

    pub fn append(&mut self, interval: VersionInterval) -> Result<()> {
        if interval.ts_start > interval.ts_end {
            return Err(FlorError::Invalid(format!(
                "interval ts_start {} > ts_end {}",
                interval.ts_start, interval.ts_end
            )));
        }
        if let Some(last) = self
            .intervals
            .iter()
            .rev()
            .find(|i| i.projid == interval.projid)
        {
            if interval.ts_start <= last.ts_end {
                return Err(FlorError::Invalid(format!(
                    "interval starting at {} overlaps previous ending at {}",
                    interval.ts_start, last.ts_end
                )));
            }
        }
        let dir = self.path.parent().expect("ts2vid path has parent");
        std::fs::create_dir_all(dir).map_err(|e| FlorError::io(dir, e))?;
        let mut line = serde_json::to_string(&interval)?;
        line.push('\n');
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| FlorError::io(&self.path, e))?;
        f.write_all(line.as_bytes())
            .map_err(|e| FlorError::io(&self.path, e))?;
        self.intervals.push(interval);
        Ok(())
    }

    /// The unique interval containing `t` for `projid`.
    pub fn resolve(&self, projid: &str, t: Timestamp) -> Result<&VersionInterval> {
        self.intervals
            .iter()
            .find(|i| i.projid == projid && i.contains(t))
            .ok_or_else(|| FlorError::NotFound(format!("no version interval contains tstamp {t}")))
    }
}

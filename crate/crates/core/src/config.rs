//! Per-project configuration, written once by `flor init`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clock::ClockMode;
use crate::error::{FlorError, Result};

pub const FLOR_DIR: &str = ".flor";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectConfig {
    /// Project identifier; defaults to the directory name.
    pub projid: String,
    /// Makefile path relative to the project root.
    pub makefile_path: String,
    /// `logical` gives deterministic timestamps 1, 2, 3, ... for tests.
    #[serde(default)]
    pub clock_mode: ClockMode,
}

impl ProjectConfig {
    pub fn new(projid: impl Into<String>) -> Self {
        ProjectConfig {
            projid: projid.into(),
            makefile_path: "Makefile".to_string(),
            clock_mode: ClockMode::Wall,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.projid.is_empty() {
            return Err(FlorError::Invalid("projid must be non-empty".into()));
        }
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(FLOR_DIR).join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| FlorError::io(&path, e))?;
        let cfg: ProjectConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        self.validate()?;
        let dir = root.join(FLOR_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| FlorError::io(&dir, e))?;
        let path = dir.join(CONFIG_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| FlorError::io(&path, e))
    }
}

//! Ensemble manifest: runs, grid, regions and file formats in one TOML document.
//!
//! ```toml
//! [grid]
//! x_min = 0.005
//! # ...
//!
//! [[boxes]]
//! name = "B"
//! x_lo = 0.0
//! x_hi = 1.1
//! y_lo = 0.6
//! y_hi = 1.2
//!
//! [[runs]]
//! id = "sim1"
//! color = "#1f77b4"
//! kind = "simulation"
//! data = "sim1/frames"
//! timeseries = "sim1/timeseries.csv"
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FrameFormat, TimeSeriesFormat};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Region};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Simulation,
    Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub id: String,
    #[serde(default)]
    pub color: Option<String>,
    pub kind: RunKind,
    /// Directory of frame files (spatial maps, or segmentation maps for experiments).
    pub data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeseries: Option<PathBuf>,
    /// Whole-patch feature vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    /// Sub-patch feature vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings_subdivided: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub frames: FrameFormat,
    #[serde(default)]
    pub timeseries: TimeSeriesFormat,
    #[serde(default)]
    pub boxes: Vec<Region>,
    #[serde(default)]
    pub runs: Vec<RunEntry>,
    /// Directory that relative paths resolve against; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(grid: GridSpec) -> Self {
        Manifest {
            grid,
            frames: FrameFormat::default(),
            timeseries: TimeSeriesFormat::default(),
            boxes: Vec::new(),
            runs: Vec::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Manifest =
            toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.base_dir = base_dir.into();
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let mut ids = HashSet::new();
        for run in &self.runs {
            if run.id.is_empty() || run.id.contains(',') {
                return Err(Error::Config(format!("invalid run id {:?}", run.id)));
            }
            if !ids.insert(run.id.as_str()) {
                return Err(Error::Config(format!("duplicate run id {:?}", run.id)));
            }
            if run.kind == RunKind::Experiment && run.timeseries.is_some() {
                log::warn!("run {}: experiment time series are ignored", run.id);
            }
        }
        let mut names = HashSet::new();
        for b in &self.boxes {
            b.validate(&self.grid)?;
            if !names.insert(b.name.as_str()) {
                return Err(Error::Config(format!("duplicate box {:?}", b.name)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn region(&self, name: &str) -> Option<&Region> {
        self.boxes.iter().find(|b| b.name == name)
    }

    pub fn run(&self, id: &str) -> Option<&RunEntry> {
        self.runs.iter().find(|r| r.id == id)
    }
}

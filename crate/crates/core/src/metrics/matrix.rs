use std::fmt;
use std::io::Write as _;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::distance::{dist_embedding, dist_lp, histogram_cdf, w1_from_cdfs};
use super::segment::{segment, segmentation_channels};
use super::{HistogramRange, MetricConfig, MetricKind};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::patching::{extract_patches, extract_patches_from, EmbeddingMap, ExpectedPatches, Patch, PatchKey, PatchSpec};
use crate::volume::{SegmentationVolume, SpaceTimeVolume};

pub const PMDM_MAGIC: &[u8; 4] = b"PMDM";
pub const PMDM_VERSION: u8 = 1;

/// Borrowed per-run data entering a distance computation.
#[derive(Debug, Clone, Copy)]
pub enum RunFields<'a> {
    Simulation(&'a SpaceTimeVolume),
    Experiment(&'a SegmentationVolume),
}

impl RunFields<'_> {
    pub fn run_id(&self) -> &str {
        match self {
            RunFields::Simulation(v) => &v.run_id,
            RunFields::Experiment(s) => &s.run_id,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        match self {
            RunFields::Simulation(v) => &v.grid,
            RunFields::Experiment(s) => &s.grid,
        }
    }

    pub fn nt(&self) -> usize {
        match self {
            RunFields::Simulation(v) => v.nt(),
            RunFields::Experiment(s) => s.nt(),
        }
    }

    /// Largest concentration value; experiments have none.
    fn max_concentration(&self) -> f64 {
        match self {
            RunFields::Simulation(v) => v.concentration.iter().fold(0.0f64, |m, &c| m.max(c as f64)),
            RunFields::Experiment(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixMode {
    Group,
    Patch,
}

/// Row/column label: a run, or one patch of a run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemKey {
    pub run: String,
    pub patch: Option<usize>,
}

impl ItemKey {
    pub fn group(run: impl Into<String>) -> Self {
        ItemKey {
            run: run.into(),
            patch: None,
        }
    }

    pub fn patch(run: impl Into<String>, patch: usize) -> Self {
        ItemKey {
            run: run.into(),
            patch: Some(patch),
        }
    }
}

impl fmt::Display for ItemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.patch {
            Some(p) => write!(f, "{}:{}", self.run, p),
            None => f.write_str(&self.run),
        }
    }
}

/// Symmetric pairwise distances with a zero diagonal, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    pub labels: Vec<ItemKey>,
    pub values: Vec<f64>,
    /// Configuration with any ensemble-dependent histogram range resolved.
    pub metric: MetricConfig,
    pub mode: MatrixMode,
    /// Caveats about the comparison, e.g. embeddings applied to segmented data.
    #[serde(default)]
    pub notes: Vec<String>,
}

impl DistanceMatrix {
    /// Build from a pair function evaluated on the upper triangle.
    pub fn from_pairs<F>(
        labels: Vec<ItemKey>,
        metric: MetricConfig,
        mode: MatrixMode,
        pair: F,
    ) -> Result<Self>
    where
        F: Fn(usize, usize) -> Result<f64> + Sync,
    {
        let n = labels.len();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        let upper: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| pair(i, j))
            .collect::<Result<_>>()?;
        let mut values = vec![0.0; n * n];
        for (&(i, j), &d) in pairs.iter().zip(&upper) {
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
        let m = DistanceMatrix {
            labels,
            values,
            metric,
            mode,
            notes: Vec::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn index_of(&self, key: &ItemKey) -> Option<usize> {
        self.labels.iter().position(|k| k == key)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.values.len() != n * n {
            return Err(Error::Shape(format!("{} values for {n} labels", self.values.len())));
        }
        for i in 0..n {
            if self.get(i, i) != 0.0 {
                return Err(Error::Shape(format!("diagonal entry {i} is {}", self.get(i, i))));
            }
            for j in 0..n {
                let d = self.get(i, j);
                if !(d.is_finite() && d >= 0.0) {
                    return Err(Error::Shape(format!("entry ({i}, {j}) = {d} is not a finite distance")));
                }
                if d != self.get(j, i) {
                    return Err(Error::Shape(format!("entry ({i}, {j}) breaks symmetry")));
                }
            }
        }
        Ok(())
    }

    /// Delimited text with labels as header row and first column.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("label");
        for l in &self.labels {
            out.push(',');
            out.push_str(&l.to_string());
        }
        out.push('\n');
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(&l.to_string());
            for d in self.row(i) {
                out.push(',');
                out.push_str(&d.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// `PMDM`, version byte, `n` as u32 LE, then `n * n` f64 LE row-major.
    pub fn to_pmdm(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(9 + 8 * n * n);
        out.extend_from_slice(PMDM_MAGIC);
        out.push(PMDM_VERSION);
        out.extend_from_slice(&(n as u32).to_le_bytes());
        for v in &self.values {
            out.write_all(&v.to_le_bytes()).expect("vec write");
        }
        out
    }

    /// Decode a `PMDM` block into `(n, values)`.
    pub fn decode_pmdm(bytes: &[u8]) -> Result<(usize, Vec<f64>)> {
        if bytes.len() < 9 || &bytes[..4] != PMDM_MAGIC {
            return Err(Error::Shape("not a PMDM block".into()));
        }
        if bytes[4] != PMDM_VERSION {
            return Err(Error::Shape(format!("unsupported PMDM version {}", bytes[4])));
        }
        let n = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
        let body = &bytes[9..];
        if body.len() != 8 * n * n {
            return Err(Error::Shape(format!("PMDM body has {} bytes for n = {n}", body.len())));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((n, values))
    }
}

fn check_runs(runs: &[RunFields<'_>], cfg: &MetricConfig) -> Result<()> {
    cfg.validate()?;
    let Some(first) = runs.first() else {
        return Err(Error::Config("no runs selected".into()));
    };
    for r in runs {
        if r.grid() != first.grid() {
            return Err(Error::Incompatible(format!(
                "run {} is on a different grid than run {}",
                r.run_id(),
                first.run_id()
            )));
        }
        if matches!(r, RunFields::Experiment(_)) && !cfg.segmented {
            return Err(Error::Incompatible(format!(
                "experiment run {} only has segmentation maps; enable segmentation to compare it",
                r.run_id()
            )));
        }
    }
    let mut seen = std::collections::HashSet::new();
    for r in runs {
        if !seen.insert(r.run_id()) {
            return Err(Error::Config(format!("run {} selected twice", r.run_id())));
        }
    }
    Ok(())
}

/// Replace a global histogram range with concrete bounds for these runs.
fn resolve_range(runs: &[RunFields<'_>], cfg: &MetricConfig) -> MetricConfig {
    let mut cfg = *cfg;
    if cfg.kind == MetricKind::Wasserstein && cfg.histogram_range == HistogramRange::Global {
        let hi = if cfg.segmented {
            1.0
        } else {
            runs.iter().map(RunFields::max_concentration).fold(0.0, f64::max)
        };
        cfg.histogram_range = HistogramRange::Fixed {
            saturation: (0.0, 1.0),
            concentration: (0.0, if hi > 0.0 { hi } else { 1.0 }),
        };
    }
    cfg
}

fn run_patches(run: &RunFields<'_>, spec: &PatchSpec, cfg: &MetricConfig) -> Result<Vec<Patch>> {
    match run {
        RunFields::Simulation(v) if !cfg.segmented => extract_patches(v, spec),
        RunFields::Simulation(v) => {
            let ch = segmentation_channels(&segment(v, cfg.segmentation_threshold));
            extract_patches_from(&v.run_id, ch.gas_presence.view(), ch.co2_presence.view(), spec)
        }
        RunFields::Experiment(s) => {
            let ch = segmentation_channels(s);
            extract_patches_from(&s.run_id, ch.gas_presence.view(), ch.co2_presence.view(), spec)
        }
    }
}

/// Per-patch saturation and concentration CDFs, for the selected variables.
type CdfPair = (Option<Vec<f64>>, Option<Vec<f64>>);

/// Distances between all patches of all `runs` under `cfg`.
///
/// Simulation runs are segmented first when `cfg.segmented` is set; experiment
/// runs are admissible only then. Embedding metrics read `embeddings`.
pub fn patch_distance_matrix(
    runs: &[RunFields<'_>],
    spec: &PatchSpec,
    cfg: &MetricConfig,
    embeddings: Option<&EmbeddingMap>,
) -> Result<DistanceMatrix> {
    check_runs(runs, cfg)?;
    spec.validate()?;
    let cfg = resolve_range(runs, cfg);
    let mut notes = Vec::new();

    if cfg.kind.uses_embeddings() {
        let map = embeddings.ok_or_else(|| {
            Error::Embedding(format!("metric {} needs patch embeddings", cfg.kind.name()))
        })?;
        let grid = runs[0].grid();
        let (nt, ny, nx) = grid.dims()?;
        if spec.temporal_size > nt {
            return Err(Error::Config("temporal patch size exceeds the available steps".into()));
        }
        let subs = match cfg.kind {
            MetricKind::EmbeddingSubdivided => {
                let (dy, dx) = spec.downsampled_dims(ny, nx);
                let n = spec.sub_windows(dy, dx)?.len();
                if n == 0 {
                    return Err(Error::Config("subdivided metric needs a sub-patch size".into()));
                }
                Some(n)
            }
            _ => None,
        };
        let count = spec.num_patches(nt);
        map.check_complete(&ExpectedPatches {
            runs: runs.iter().map(|r| (r.run_id().to_string(), count)).collect(),
            subs,
        })?;
        if cfg.segmented {
            notes.push(
                "embedding features come from a model that was not trained on segmentation data"
                    .to_string(),
            );
        }
        let keys: Vec<PatchKey> = runs
            .iter()
            .flat_map(|r| (0..count).map(move |p| PatchKey::whole(r.run_id(), p)))
            .collect();
        let labels = keys.iter().map(|k| ItemKey::patch(k.run.clone(), k.patch)).collect();
        let mut m = DistanceMatrix::from_pairs(labels, cfg, MatrixMode::Patch, |i, j| {
            dist_embedding(&keys[i], &keys[j], map, subs)
        })?;
        m.notes = notes;
        return Ok(m);
    }

    let per_run: Vec<Vec<Patch>> = runs
        .par_iter()
        .map(|r| run_patches(r, spec, &cfg))
        .collect::<Result<_>>()?;
    let patches: Vec<Patch> = per_run.into_iter().flatten().collect();
    let labels = patches
        .iter()
        .map(|p| ItemKey::patch(p.run_id.clone(), p.patch_index))
        .collect();

    let mut m = match cfg.kind {
        MetricKind::Euclidean | MetricKind::Manhattan => {
            let p = if cfg.kind == MetricKind::Euclidean { 2 } else { 1 };
            DistanceMatrix::from_pairs(labels, cfg, MatrixMode::Patch, |i, j| {
                dist_lp(&patches[i], &patches[j], p, cfg.variable)
            })?
        }
        MetricKind::Wasserstein => {
            let HistogramRange::Fixed {
                saturation,
                concentration,
            } = cfg.histogram_range
            else {
                // per-pair ranges cannot be precomputed
                return DistanceMatrix::from_pairs(labels, cfg, MatrixMode::Patch, |i, j| {
                    super::dist_wasserstein(&patches[i], &patches[j], &cfg)
                });
            };
            let bins = cfg.histogram_bins;
            let cdfs: Vec<CdfPair> = patches
                .par_iter()
                .map(|p| -> Result<_> {
                    let s = cfg
                        .variable
                        .includes_saturation()
                        .then(|| histogram_cdf(p.saturation.iter().copied(), bins, saturation.0, saturation.1))
                        .transpose()?;
                    let c = cfg
                        .variable
                        .includes_concentration()
                        .then(|| {
                            histogram_cdf(p.concentration.iter().copied(), bins, concentration.0, concentration.1)
                        })
                        .transpose()?;
                    Ok((s, c))
                })
                .collect::<Result<_>>()?;
            DistanceMatrix::from_pairs(labels, cfg, MatrixMode::Patch, |i, j| {
                let mut parts = Vec::with_capacity(2);
                if let (Some(a), Some(b)) = (&cdfs[i].0, &cdfs[j].0) {
                    parts.push(w1_from_cdfs(a, b));
                }
                if let (Some(a), Some(b)) = (&cdfs[i].1, &cdfs[j].1) {
                    parts.push(w1_from_cdfs(a, b));
                }
                Ok(parts.iter().sum::<f64>() / parts.len() as f64)
            })?
        }
        MetricKind::Embedding | MetricKind::EmbeddingSubdivided => unreachable!("handled above"),
    };
    m.notes = notes;
    Ok(m)
}

/// Aggregate a patch matrix to one item per run: the mean distance over
/// time-aligned patch pairs.
pub fn group_distance_matrix(patch_matrix: &DistanceMatrix) -> Result<DistanceMatrix> {
    if patch_matrix.mode != MatrixMode::Patch {
        return Err(Error::Config("group aggregation needs a patch-mode matrix".into()));
    }
    let mut by_run: IndexMap<&str, Vec<(usize, usize)>> = IndexMap::new();
    for (idx, key) in patch_matrix.labels.iter().enumerate() {
        let patch = key
            .patch
            .ok_or_else(|| Error::Shape(format!("label {key} has no patch index")))?;
        by_run.entry(key.run.as_str()).or_default().push((patch, idx));
    }
    let mut counts = None;
    for (run, items) in by_run.iter_mut() {
        items.sort_unstable();
        let expected = counts.get_or_insert(items.len());
        if *expected != items.len() {
            return Err(Error::Incompatible(format!(
                "run {run} has {} patches, expected {expected}",
                items.len()
            )));
        }
        if items.iter().enumerate().any(|(k, &(p, _))| p != k) {
            return Err(Error::Incompatible(format!("run {run} has non-contiguous patch indices")));
        }
    }
    let groups: Vec<&Vec<(usize, usize)>> = by_run.values().collect();
    let labels = by_run.keys().map(|r| ItemKey::group(*r)).collect();
    let mut m = DistanceMatrix::from_pairs(labels, patch_matrix.metric, MatrixMode::Group, |g, h| {
        let (a, b) = (groups[g], groups[h]);
        let sum: f64 = a.iter().zip(b).map(|(x, y)| patch_matrix.get(x.1, y.1)).sum();
        Ok(sum / a.len() as f64)
    })?;
    m.notes = patch_matrix.notes.clone();
    Ok(m)
}

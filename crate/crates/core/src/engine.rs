//! Request layer shared by the command line and the HTTP server.
//!
//! Every artifact either front end produces comes out of a method here, so
//! the same parameters give the same bytes from both.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use ndarray::{s, Array3};
use parking_lot::RwLock;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Region};
use crate::ingest::{
    align_volume, parse_segmentation_maps, parse_spatial_maps, parse_time_series, Manifest, RunEntry, RunKind,
    TimeSeriesTable,
};
use crate::metrics::{
    first_presence_time, group_distance_matrix, patch_distance_matrix, segment, Channel, DistanceMatrix,
    HistogramRange, ItemKey, MatrixMode, MetricConfig, MetricKind, PresenceSource, RunFields, Variable,
    DEFAULT_SEGMENTATION_THRESHOLD,
};
use crate::patching::{downsample, load_embeddings, EmbeddingMap, ExpectedPatches, PatchSpec};
use crate::projection::{project, time_curves, Algorithm, ProjectedPoint, ProjectionConfig, TimeCurve};
use crate::volume::{FillFlag, SegmentationVolume, SpaceTimeVolume};

pub const PMVB_MAGIC: &[u8; 4] = b"PMVB";
pub const PMVB_VERSION: u8 = 1;
pub const DEFAULT_CACHE_SIZE: usize = 16;

/// An error with an HTTP status and a machine-readable body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub param: Option<String>,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>, param: Option<&str>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
            param: param.map(str::to_string),
        }
    }

    pub fn bad_param(param: &str, message: impl Into<String>) -> Self {
        Self::new(400, "invalid_parameter", message, Some(param))
    }

    pub fn not_found(code: &str, message: impl Into<String>, param: Option<&str>) -> Self {
        Self::new(404, code, message, param)
    }

    /// Input problems are the caller's fault; everything else is ours.
    pub fn is_input_error(&self) -> bool {
        (400..500).contains(&self.status)
    }

    pub fn body(&self) -> String {
        serde_json::to_string(self).expect("error body serializes")
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.param {
            Some(p) => write!(f, "{} ({}): {}", self.code, p, self.message),
            None => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

impl std::error::Error for ApiError {}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Config(_) | Error::OutOfRange(_) | Error::Shape(_) => {
                ApiError::new(400, "invalid_parameter", message, None)
            }
            Error::Box { .. } => ApiError::new(400, "invalid_box", message, Some("box")),
            Error::Projection(_) => ApiError::new(400, "projection_failed", message, Some("algo")),
            Error::Incompatible(_) => ApiError::new(409, "incompatible_runs", message, Some("runs")),
            Error::Embedding(_) => ApiError::new(409, "embeddings_unavailable", message, Some("metric")),
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::MissingColumn { .. }
            | Error::DuplicateFrameTime { .. }
            | Error::UnsortedFrames { .. }
            | Error::StepCollision { .. }
            | Error::Grid(_) => ApiError::new(500, "data_error", message, None),
        }
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;

/// Key/value request parameters, as they arrive in a query string.
pub type Params = [(String, String)];

fn check_keys(params: &Params, allowed: &[&str]) -> ApiResult<()> {
    for (k, _) in params {
        if !allowed.contains(&k.as_str()) {
            return Err(ApiError::bad_param(k, format!("unknown parameter {k:?}")));
        }
    }
    Ok(())
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> ApiResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| ApiError::bad_param(key, format!("cannot parse {key}={value:?}")))
}

fn parse_bool(key: &str, value: &str) -> ApiResult<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "" | "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ApiError::bad_param(key, format!("{key} must be true or false"))),
    }
}

/// Everything that selects a distance matrix and its projection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Query {
    pub metric: MetricConfig,
    pub mode: MatrixMode,
    /// Empty means every run in manifest order.
    pub runs: Vec<String>,
    /// Spatial downsampling for field metrics; embedding metrics fix their own.
    pub downsample: usize,
    pub projection: ProjectionConfig,
}

impl Default for Query {
    fn default() -> Self {
        Query {
            metric: MetricConfig::default(),
            mode: MatrixMode::Patch,
            runs: Vec::new(),
            downsample: 1,
            projection: ProjectionConfig::default(),
        }
    }
}

pub const QUERY_PARAMS: [&str; 15] = [
    "metric",
    "variable",
    "segmented",
    "threshold",
    "algo",
    "mode",
    "runs",
    "seed",
    "bins",
    "range",
    "downsample",
    "perplexity",
    "iterations",
    "restarts",
    "p",
];

impl Query {
    pub fn from_params(params: &Params) -> ApiResult<Self> {
        check_keys(params, &QUERY_PARAMS)?;
        let mut q = Query::default();
        for (k, v) in params {
            let v = v.as_str();
            match k.as_str() {
                "metric" => {
                    q.metric.kind = MetricKind::parse(v)
                        .ok_or_else(|| ApiError::bad_param(k, format!("unknown metric {v:?}")))?
                }
                "variable" => {
                    q.metric.variable = Variable::parse(v)
                        .ok_or_else(|| ApiError::bad_param(k, format!("unknown variable {v:?}")))?
                }
                "segmented" => q.metric.segmented = parse_bool(k, v)?,
                "threshold" => q.metric.segmentation_threshold = parse_num(k, v)?,
                "algo" => {
                    q.projection.algorithm = Algorithm::parse(v)
                        .ok_or_else(|| ApiError::bad_param(k, format!("unknown algorithm {v:?}")))?
                }
                "mode" => {
                    q.mode = match v {
                        "group" => MatrixMode::Group,
                        "patch" => MatrixMode::Patch,
                        _ => return Err(ApiError::bad_param(k, format!("mode must be group or patch, got {v:?}"))),
                    }
                }
                "runs" => {
                    q.runs = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
                }
                "seed" => q.projection.seed = parse_num(k, v)?,
                "bins" => q.metric.histogram_bins = parse_num(k, v)?,
                "range" => {
                    q.metric.histogram_range = match v {
                        "global" => HistogramRange::Global,
                        "per-pair" | "pair" => HistogramRange::PerPair,
                        _ => return Err(ApiError::bad_param(k, format!("range must be global or per-pair, got {v:?}"))),
                    }
                }
                "downsample" => q.downsample = parse_num(k, v)?,
                "perplexity" => q.projection.tsne.perplexity = parse_num(k, v)?,
                "iterations" => {
                    let n: usize = parse_num(k, v)?;
                    q.projection.tsne.iterations = n;
                    q.projection.mds.max_iterations = n;
                }
                "restarts" => q.projection.mds.restarts = parse_num(k, v)?,
                "p" => {
                    q.metric.kind = match v {
                        "1" => MetricKind::Manhattan,
                        "2" => MetricKind::Euclidean,
                        _ => return Err(ApiError::bad_param(k, "p must be 1 or 2")),
                    }
                }
                _ => unreachable!("keys checked above"),
            }
        }
        q.validate()?;
        Ok(q)
    }

    fn validate(&self) -> ApiResult<()> {
        if self.downsample == 0 {
            return Err(ApiError::bad_param("downsample", "downsample must be at least 1"));
        }
        if !(self.metric.segmentation_threshold >= 0.0) {
            return Err(ApiError::bad_param("threshold", "threshold must be a non-negative number"));
        }
        if self.metric.histogram_bins == 0 {
            return Err(ApiError::bad_param("bins", "bins must be at least 1"));
        }
        self.metric.validate().map_err(ApiError::from)
    }

    pub fn patch_spec(&self) -> PatchSpec {
        match self.metric.kind {
            MetricKind::Embedding => PatchSpec::embedding(),
            MetricKind::EmbeddingSubdivided => PatchSpec::embedding_subdivided(),
            _ => PatchSpec {
                spatial_downsample: self.downsample,
                ..PatchSpec::default()
            },
        }
    }
}

/// Volume brick selection: half-open index ranges on the canonical grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BrickVariable {
    Saturation,
    Concentration,
    Segmentation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeQuery {
    pub variable: BrickVariable,
    pub t: (Option<usize>, Option<usize>),
    pub x: (Option<usize>, Option<usize>),
    pub y: (Option<usize>, Option<usize>),
    pub downsample: usize,
    pub threshold: f64,
}

impl Default for VolumeQuery {
    fn default() -> Self {
        VolumeQuery {
            variable: BrickVariable::Saturation,
            t: (None, None),
            x: (None, None),
            y: (None, None),
            downsample: 1,
            threshold: DEFAULT_SEGMENTATION_THRESHOLD,
        }
    }
}

impl VolumeQuery {
    pub fn from_params(params: &Params) -> ApiResult<Self> {
        check_keys(params, &["variable", "t0", "t1", "x0", "x1", "y0", "y1", "downsample", "threshold"])?;
        let mut q = VolumeQuery::default();
        for (k, v) in params {
            let k = k.as_str();
            match k {
                "variable" => {
                    q.variable = match v.as_str() {
                        "saturation" => BrickVariable::Saturation,
                        "concentration" => BrickVariable::Concentration,
                        "segmentation" | "classes" => BrickVariable::Segmentation,
                        _ => return Err(ApiError::bad_param(k, format!("unknown variable {v:?}"))),
                    }
                }
                "t0" => q.t.0 = Some(parse_num(k, v)?),
                "t1" => q.t.1 = Some(parse_num(k, v)?),
                "x0" => q.x.0 = Some(parse_num(k, v)?),
                "x1" => q.x.1 = Some(parse_num(k, v)?),
                "y0" => q.y.0 = Some(parse_num(k, v)?),
                "y1" => q.y.1 = Some(parse_num(k, v)?),
                "downsample" => q.downsample = parse_num(k, v)?,
                "threshold" => q.threshold = parse_num(k, v)?,
                _ => unreachable!(),
            }
        }
        if q.downsample == 0 {
            return Err(ApiError::bad_param("downsample", "downsample must be at least 1"));
        }
        Ok(q)
    }
}

fn resolve_range(axis: &str, range: (Option<usize>, Option<usize>), len: usize) -> ApiResult<(usize, usize)> {
    let lo = range.0.unwrap_or(0);
    let hi = range.1.unwrap_or(len);
    if lo >= hi || hi > len {
        return Err(ApiError::bad_param(
            &format!("{axis}0"),
            format!("{axis} range [{lo}, {hi}) is empty or exceeds 0..{len}"),
        ));
    }
    Ok((lo, hi))
}

/// `PMVB` brick: magic, version, `nt, ny, nx` as u32 LE, then f32 LE values.
pub fn encode_pmvb(values: &Array3<f32>) -> Vec<u8> {
    let (nt, ny, nx) = values.dim();
    let mut out = Vec::with_capacity(17 + values.len() * 4);
    out.extend_from_slice(PMVB_MAGIC);
    out.push(PMVB_VERSION);
    for d in [nt, ny, nx] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_pmvb(bytes: &[u8]) -> Result<Array3<f32>> {
    if bytes.len() < 17 || &bytes[..4] != PMVB_MAGIC {
        return Err(Error::Shape("not a PMVB brick".into()));
    }
    if bytes[4] != PMVB_VERSION {
        return Err(Error::Shape(format!("unsupported PMVB version {}", bytes[4])));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (nt, ny, nx) = (dim(0), dim(1), dim(2));
    let body = &bytes[17..];
    if body.len() != nt * ny * nx * 4 {
        return Err(Error::Shape(format!(
            "PMVB body has {} bytes, header promises {}",
            body.len(),
            nt * ny * nx * 4
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Array3::from_shape_vec((nt, ny, nx), values).map_err(|e| Error::Shape(e.to_string()))
}

/// Fields of one ingested run.
#[derive(Debug, Clone)]
pub enum RunData {
    Simulation(SpaceTimeVolume),
    Experiment(SegmentationVolume),
}

#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub entry: RunEntry,
    pub data: RunData,
    pub series: Option<TimeSeriesTable>,
}

impl LoadedRun {
    pub fn fields(&self) -> RunFields<'_> {
        match &self.data {
            RunData::Simulation(v) => RunFields::Simulation(v),
            RunData::Experiment(s) => RunFields::Experiment(s),
        }
    }

    pub fn provenance(&self) -> &[FillFlag] {
        match &self.data {
            RunData::Simulation(v) => &v.provenance,
            RunData::Experiment(s) => &s.provenance,
        }
    }
}

/// Bounded insertion-ordered cache; the oldest entry goes first.
#[derive(Debug)]
struct MatrixCache {
    capacity: usize,
    entries: RwLock<IndexMap<String, Arc<DistanceMatrix>>>,
}

impl MatrixCache {
    fn get(&self, key: &str) -> Option<Arc<DistanceMatrix>> {
        self.entries.read().get(key).cloned()
    }

    fn insert(&self, key: String, value: Arc<DistanceMatrix>) {
        let mut map = self.entries.write();
        map.insert(key, value);
        while map.len() > self.capacity {
            map.shift_remove_index(0);
        }
    }
}

/// A loaded manifest: aligned fields, time series, embeddings and a matrix cache.
#[derive(Debug)]
pub struct Ensemble {
    pub manifest: Manifest,
    runs: IndexMap<String, LoadedRun>,
    embeddings: Option<EmbeddingMap>,
    embeddings_sub: Option<EmbeddingMap>,
    cache: MatrixCache,
}

/// Find a manifest given a file, a directory holding `manifest.toml`, or a
/// path missing its `.toml` extension.
pub fn locate_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        return path.join("manifest.toml");
    }
    if !path.exists() && path.extension().is_none() {
        let with = path.with_extension("toml");
        if with.exists() {
            return with;
        }
    }
    path.to_path_buf()
}

fn load_run(manifest: &Manifest, entry: &RunEntry) -> Result<LoadedRun> {
    let dir = manifest.resolve(&entry.data);
    let data = match entry.kind {
        RunKind::Simulation => {
            let frames = parse_spatial_maps(&dir, &manifest.frames)?;
            RunData::Simulation(align_volume(&entry.id, &frames, &manifest.grid)?)
        }
        RunKind::Experiment => {
            RunData::Experiment(parse_segmentation_maps(&entry.id, &dir, &manifest.frames, &manifest.grid)?)
        }
    };
    let series = match (&entry.timeseries, entry.kind) {
        (Some(p), RunKind::Simulation) => Some(parse_time_series(
            &entry.id,
            &manifest.resolve(p),
            &manifest.timeseries,
            &manifest.grid,
        )?),
        _ => None,
    };
    log::info!("loaded run {}", entry.id);
    Ok(LoadedRun {
        entry: entry.clone(),
        data,
        series,
    })
}

/// Merge per-run embedding files; `None` unless every run has one.
fn load_all_embeddings(
    manifest: &Manifest,
    pick: impl Fn(&RunEntry) -> Option<&PathBuf>,
    spec: &PatchSpec,
) -> Result<Option<EmbeddingMap>> {
    if manifest.runs.is_empty() || manifest.runs.iter().any(|r| pick(r).is_none()) {
        return Ok(None);
    }
    let (nt, ny, nx) = manifest.grid.dims()?;
    let subs = match spec.subdivide {
        Some(_) => {
            let (dy, dx) = spec.downsampled_dims(ny, nx);
            Some(spec.sub_windows(dy, dx)?.len())
        }
        None => None,
    };
    let mut merged = EmbeddingMap::default();
    for r in &manifest.runs {
        let expected = ExpectedPatches {
            runs: vec![(r.id.clone(), spec.num_patches(nt))],
            subs,
        };
        let path = manifest.resolve(pick(r).expect("checked above"));
        merged.extend(load_embeddings(&path, &expected)?)?;
    }
    Ok(Some(merged))
}

#[derive(Serialize)]
struct RunSummary<'a> {
    id: &'a str,
    kind: RunKind,
    color: Option<&'a str>,
    measured_steps: usize,
    has_timeseries: bool,
}

#[derive(Serialize)]
struct GridSummary {
    #[serde(flatten)]
    spec: GridSpec,
    nx: usize,
    ny: usize,
    nt: usize,
}

#[derive(Serialize)]
struct EnsembleSummary<'a> {
    runs: Vec<RunSummary<'a>>,
    grid: GridSummary,
    boxes: &'a [Region],
    measurables: Vec<&'a str>,
    patch_spec: PatchSpec,
    patches_per_run: usize,
    metrics: Vec<&'static str>,
    embeddings: EmbeddingSummary,
}

#[derive(Serialize)]
struct EmbeddingSummary {
    whole: bool,
    subdivided: bool,
}

#[derive(Serialize)]
struct ProjectionDocument<'a> {
    algorithm: Algorithm,
    mode: MatrixMode,
    metric: &'a MetricConfig,
    config: &'a ProjectionConfig,
    quality: f64,
    points: &'a [ProjectedPoint],
    #[serde(skip_serializing_if = "Option::is_none")]
    time_curves: Option<Vec<TimeCurve>>,
    notes: &'a [String],
}

#[derive(Serialize)]
struct DistanceDocument<'a> {
    mode: MatrixMode,
    metric: &'a MetricConfig,
    labels: &'a [ItemKey],
    values: Vec<&'a [f64]>,
    notes: &'a [String],
}

#[derive(Serialize)]
struct SeriesDocument<'a> {
    run: &'a str,
    measurable: &'a str,
    times: &'a [f64],
    values: &'a [f64],
    flags: &'a [FillFlag],
}

/// One row of a first-presence table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PresenceRow {
    pub run: String,
    pub minutes: Option<f64>,
}

impl Ensemble {
    /// Ingest every run of `manifest` in parallel.
    pub fn load(manifest: Manifest) -> Result<Self> {
        Self::load_with_cache(manifest, DEFAULT_CACHE_SIZE)
    }

    pub fn load_with_cache(manifest: Manifest, cache_size: usize) -> Result<Self> {
        manifest.validate()?;
        if cache_size == 0 {
            return Err(Error::Config("cache size must be at least 1".into()));
        }
        let loaded: Vec<LoadedRun> = manifest
            .runs
            .par_iter()
            .map(|entry| load_run(&manifest, entry))
            .collect::<Result<_>>()?;
        let embeddings = load_all_embeddings(&manifest, |r| r.embeddings.as_ref(), &PatchSpec::embedding())?;
        let embeddings_sub = load_all_embeddings(
            &manifest,
            |r| r.embeddings_subdivided.as_ref(),
            &PatchSpec::embedding_subdivided(),
        )?;
        Ok(Ensemble {
            runs: loaded.into_iter().map(|r| (r.entry.id.clone(), r)).collect(),
            manifest,
            embeddings,
            embeddings_sub,
            cache: MatrixCache {
                capacity: cache_size,
                entries: RwLock::new(IndexMap::new()),
            },
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        Self::load(Manifest::load(&locate_manifest(path))?)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.manifest.grid
    }

    pub fn runs(&self) -> impl Iterator<Item = &LoadedRun> {
        self.runs.values()
    }

    pub fn run(&self, id: &str) -> ApiResult<&LoadedRun> {
        self.runs
            .get(id)
            .ok_or_else(|| ApiError::not_found("unknown_run", format!("no run named {id:?}"), Some("run")))
    }

    fn region(&self, name: &str) -> ApiResult<&Region> {
        self.manifest
            .region(name)
            .ok_or_else(|| ApiError::bad_param("box", format!("no box named {name:?}")))
    }

    pub fn summary_json(&self) -> String {
        let mut measurables = BTreeSet::new();
        for r in self.runs.values() {
            if let Some(s) = &r.series {
                measurables.extend(s.names());
            }
        }
        let grid = self.manifest.grid;
        let (nt, ny, nx) = grid.dims().expect("validated at load");
        let spec = PatchSpec::default();
        let doc = EnsembleSummary {
            runs: self
                .runs
                .values()
                .map(|r| RunSummary {
                    id: &r.entry.id,
                    kind: r.entry.kind,
                    color: r.entry.color.as_deref(),
                    measured_steps: r.provenance().iter().filter(|f| **f == FillFlag::Measured).count(),
                    has_timeseries: r.series.is_some(),
                })
                .collect(),
            grid: GridSummary { spec: grid, nx, ny, nt },
            boxes: &self.manifest.boxes,
            measurables: measurables.into_iter().collect(),
            patch_spec: spec,
            patches_per_run: spec.num_patches(nt),
            metrics: MetricKind::ALL.iter().map(|k| k.name()).collect(),
            embeddings: EmbeddingSummary {
                whole: self.embeddings.is_some(),
                subdivided: self.embeddings_sub.is_some(),
            },
        };
        serde_json::to_string(&doc).expect("summary serializes")
    }

    fn selected_runs(&self, q: &Query) -> ApiResult<Vec<&LoadedRun>> {
        if q.runs.is_empty() {
            return Ok(self.runs.values().collect());
        }
        q.runs
            .iter()
            .map(|id| {
                self.runs
                    .get(id)
                    .ok_or_else(|| ApiError::not_found("unknown_run", format!("no run named {id:?}"), Some("runs")))
            })
            .collect()
    }

    fn cache_key(&self, q: &Query, runs: &[&LoadedRun], mode: MatrixMode) -> String {
        let ids: Vec<&str> = runs.iter().map(|r| r.entry.id.as_str()).collect();
        format!(
            "{}|{:?}|{}|{:?}",
            q.metric.key(),
            mode,
            ids.join(","),
            q.patch_spec()
        )
    }

    /// The matrix selected by `q`, from the cache when possible.
    pub fn distance_matrix(&self, q: &Query) -> ApiResult<Arc<DistanceMatrix>> {
        let runs = self.selected_runs(q)?;
        let key = self.cache_key(q, &runs, q.mode);
        if let Some(m) = self.cache.get(&key) {
            return Ok(m);
        }
        let patch_key = self.cache_key(q, &runs, MatrixMode::Patch);
        let patch = match self.cache.get(&patch_key) {
            Some(m) => m,
            None => {
                let fields: Vec<RunFields<'_>> = runs.iter().map(|r| r.fields()).collect();
                let embeddings = match q.metric.kind {
                    MetricKind::Embedding => self.embeddings.as_ref(),
                    MetricKind::EmbeddingSubdivided => self.embeddings_sub.as_ref(),
                    _ => None,
                };
                let m = Arc::new(patch_distance_matrix(&fields, &q.patch_spec(), &q.metric, embeddings)?);
                self.cache.insert(patch_key, m.clone());
                m
            }
        };
        match q.mode {
            MatrixMode::Patch => Ok(patch),
            MatrixMode::Group => {
                let g = Arc::new(group_distance_matrix(&patch)?);
                self.cache.insert(key, g.clone());
                Ok(g)
            }
        }
    }

    pub fn cached_matrices(&self) -> usize {
        self.cache.entries.read().len()
    }

    pub fn projection_json(&self, q: &Query) -> ApiResult<String> {
        let matrix = self.distance_matrix(q)?;
        let result = project(&matrix, &q.projection)?;
        let curves = match q.mode {
            MatrixMode::Patch => Some(time_curves(&result)?),
            MatrixMode::Group => None,
        };
        let doc = ProjectionDocument {
            algorithm: result.algorithm,
            mode: q.mode,
            metric: &matrix.metric,
            config: &result.config,
            quality: result.quality,
            points: &result.points,
            time_curves: curves,
            notes: &matrix.notes,
        };
        Ok(serde_json::to_string(&doc).expect("projection serializes"))
    }

    pub fn distances_json(&self, q: &Query) -> ApiResult<String> {
        let m = self.distance_matrix(q)?;
        let doc = DistanceDocument {
            mode: m.mode,
            metric: &m.metric,
            labels: &m.labels,
            values: (0..m.len()).map(|i| m.row(i)).collect(),
            notes: &m.notes,
        };
        Ok(serde_json::to_string(&doc).expect("distances serialize"))
    }

    pub fn distances_pmdm(&self, q: &Query) -> ApiResult<Vec<u8>> {
        Ok(self.distance_matrix(q)?.to_pmdm())
    }

    pub fn distances_csv(&self, q: &Query) -> ApiResult<String> {
        Ok(self.distance_matrix(q)?.to_csv())
    }

    /// The field selected by `q`, on the full grid.
    fn brick_source(&self, run: &LoadedRun, q: &VolumeQuery) -> Array3<f32> {
        match (&run.data, q.variable) {
            (RunData::Experiment(s), _) => s.classes.mapv(f32::from),
            (RunData::Simulation(v), BrickVariable::Saturation) => v.saturation.clone(),
            (RunData::Simulation(v), BrickVariable::Concentration) => v.concentration.clone(),
            (RunData::Simulation(v), BrickVariable::Segmentation) => segment(v, q.threshold).classes.mapv(f32::from),
        }
    }

    pub fn volume_brick(&self, run: &str, q: &VolumeQuery) -> ApiResult<Vec<u8>> {
        let run = self.run(run)?;
        let (nt, ny, nx) = self.grid().dims()?;
        let (t0, t1) = resolve_range("t", q.t, nt)?;
        let (y0, y1) = resolve_range("y", q.y, ny)?;
        let (x0, x1) = resolve_range("x", q.x, nx)?;
        let full = self.brick_source(run, q);
        let view = full.slice(s![t0..t1, y0..y1, x0..x1]);
        let brick = if q.downsample == 1 {
            view.to_owned()
        } else {
            downsample(view, q.downsample).mapv(|v| v as f32)
        };
        Ok(encode_pmvb(&brick))
    }

    pub fn timeseries_json(&self, run: &str, measurable: Option<&str>) -> ApiResult<String> {
        let r = self.run(run)?;
        let series = r.series.as_ref().ok_or_else(|| {
            let why = match r.entry.kind {
                RunKind::Experiment => "no time series: experiment runs carry segmentation maps only",
                RunKind::Simulation => "no time series for this run",
            };
            ApiError::not_found("no_timeseries", why, Some("run"))
        })?;
        match measurable {
            Some(name) => {
                let m = series.get(name).ok_or_else(|| {
                    ApiError::not_found("unknown_measurable", format!("no measurable {name:?}"), Some("measurable"))
                })?;
                let doc = SeriesDocument {
                    run: &series.run_id,
                    measurable: name,
                    times: &series.times,
                    values: &m.values,
                    flags: &m.flags,
                };
                Ok(serde_json::to_string(&doc).expect("series serializes"))
            }
            None => Ok(serde_json::to_string(series).expect("series serializes")),
        }
    }

    /// First time, in minutes, that `channel` appears in `box` for one run.
    pub fn first_presence(&self, run: &str, box_name: &str, channel: Channel, threshold: f64) -> ApiResult<Option<f64>> {
        let r = self.run(run)?;
        let region = self.region(box_name)?;
        if !(threshold >= 0.0) {
            return Err(ApiError::bad_param("threshold", "threshold must be a non-negative number"));
        }
        let source = match &r.data {
            RunData::Simulation(v) => PresenceSource::Volume(v),
            RunData::Experiment(s) => PresenceSource::Segmentation(s),
        };
        Ok(first_presence_time(source, region, channel, threshold)?)
    }

    pub fn first_presence_params(&self, params: &Params) -> ApiResult<String> {
        check_keys(params, &["run", "box", "channel", "threshold"])?;
        let get = |k: &str| params.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        let run = get("run").ok_or_else(|| ApiError::bad_param("run", "run is required"))?;
        let box_name = get("box").ok_or_else(|| ApiError::bad_param("box", "box is required"))?;
        let channel = match get("channel") {
            Some(c) => Channel::parse(c).ok_or_else(|| ApiError::bad_param("channel", format!("unknown channel {c:?}")))?,
            None => Channel::Co2Presence,
        };
        let threshold = match get("threshold") {
            Some(t) => parse_num("threshold", t)?,
            None => DEFAULT_SEGMENTATION_THRESHOLD,
        };
        let minutes = self.first_presence(run, box_name, channel, threshold)?;
        Ok(serde_json::to_string(&minutes).expect("number serializes"))
    }

    /// First presence for every run, in manifest order.
    pub fn first_presence_table(&self, box_name: &str, channel: Channel, threshold: f64) -> ApiResult<Vec<PresenceRow>> {
        self.runs
            .keys()
            .map(|id| {
                Ok(PresenceRow {
                    run: id.clone(),
                    minutes: self.first_presence(id, box_name, channel, threshold)?,
                })
            })
            .collect()
    }

    /// Write aligned fields of every run as `PMVB` bricks plus fill flags.
    pub fn write_aligned(&self, out: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for r in self.runs.values() {
            let dir = out.join(&r.entry.id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let bricks: Vec<(&str, Array3<f32>)> = match &r.data {
                RunData::Simulation(v) => vec![
                    ("saturation", v.saturation.clone()),
                    ("concentration", v.concentration.clone()),
                ],
                RunData::Experiment(s) => vec![("classes", s.classes.mapv(f32::from))],
            };
            for (name, values) in bricks {
                let path = dir.join(format!("{name}.pmvb"));
                fs::write(&path, encode_pmvb(&values)).map_err(|e| Error::io(&path, e))?;
                written.push(path);
            }
            let path = dir.join("provenance.json");
            let flags = serde_json::to_string(r.provenance()).expect("flags serialize");
            fs::write(&path, flags).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

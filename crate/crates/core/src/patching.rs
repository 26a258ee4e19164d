//! Non-overlapping spatiotemporal patches and externally computed patch embeddings.
//!
//! A patch spans `temporal_size` consecutive steps and the full (optionally
//! downsampled) spatial domain. Trailing steps that do not fill a whole patch
//! are dropped. Subdivision tiles the spatial window into fixed-size sub-windows,
//! dropping partial tiles at the right and top edges.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use ndarray::{s, Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::CellWindow;
use crate::ingest::{csv_error, locate_columns};
use crate::volume::SpaceTimeVolume;

/// Sub-patch size used for subdivided embeddings: `(width, height)` in cells
/// of the downsampled grid.
pub const DEFAULT_SUBDIVISION: (usize, usize) = (16, 32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchSpec {
    pub temporal_size: usize,
    pub spatial_downsample: usize,
    /// `(width, height)` of sub-windows, in downsampled cells.
    pub subdivide: Option<(usize, usize)>,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            temporal_size: 3,
            spatial_downsample: 1,
            subdivide: None,
        }
    }
}

impl PatchSpec {
    /// Whole-patch embeddings were computed on a 2x downsampled volume.
    pub fn embedding() -> Self {
        PatchSpec {
            spatial_downsample: 2,
            ..Self::default()
        }
    }

    pub fn embedding_subdivided() -> Self {
        PatchSpec {
            spatial_downsample: 2,
            subdivide: Some(DEFAULT_SUBDIVISION),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temporal_size == 0 {
            return Err(Error::Config("temporal patch size must be at least 1".into()));
        }
        if self.spatial_downsample == 0 {
            return Err(Error::Config("downsample factor must be at least 1".into()));
        }
        if let Some((w, h)) = self.subdivide {
            if w == 0 || h == 0 {
                return Err(Error::Config("sub-patch dimensions must be at least 1".into()));
            }
        }
        Ok(())
    }

    pub fn num_patches(&self, nt: usize) -> usize {
        nt / self.temporal_size
    }

    /// Spatial dimensions `(ny, nx)` after downsampling.
    pub fn downsampled_dims(&self, ny: usize, nx: usize) -> (usize, usize) {
        let f = self.spatial_downsample;
        (ny.div_ceil(f), nx.div_ceil(f))
    }

    /// Sub-windows tiling a `(ny, nx)` window, row-major over `(y, x)`.
    pub fn sub_windows(&self, ny: usize, nx: usize) -> Result<Vec<CellWindow>> {
        let Some((w, h)) = self.subdivide else {
            return Ok(Vec::new());
        };
        if w > nx || h > ny {
            return Err(Error::Config(format!(
                "sub-patch {w}x{h} exceeds the {nx}x{ny} patch window"
            )));
        }
        let mut out = Vec::with_capacity((nx / w) * (ny / h));
        for by in 0..ny / h {
            for bx in 0..nx / w {
                out.push(CellWindow {
                    x0: bx * w,
                    x1: (bx + 1) * w,
                    y0: by * h,
                    y1: (by + 1) * h,
                });
            }
        }
        Ok(out)
    }
}

/// One patch of a run: `[t_begin, t_end)` steps over the full spatial window.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub run_id: String,
    pub patch_index: usize,
    pub t_begin: usize,
    pub t_end: usize,
    /// Spatial window in (downsampled) cells.
    pub window: CellWindow,
    pub saturation: Array3<f64>,
    pub concentration: Array3<f64>,
    pub sub_windows: Vec<CellWindow>,
}

impl Patch {
    pub fn shape(&self) -> &[usize] {
        self.saturation.shape()
    }

    pub fn len(&self) -> usize {
        self.saturation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.saturation.is_empty()
    }
}

/// Average non-overlapping `factor x factor` blocks of every time slice. Blocks
/// at the edges average only the cells they contain.
pub fn downsample(field: ArrayView3<'_, f32>, factor: usize) -> Array3<f64> {
    let (nt, ny, nx) = field.dim();
    let (oy, ox) = (ny.div_ceil(factor), nx.div_ceil(factor));
    let mut out = Array3::<f64>::zeros((nt, oy, ox));
    if factor == 1 {
        out.zip_mut_with(&field, |o, &v| *o = v as f64);
        return out;
    }
    for t in 0..nt {
        for by in 0..oy {
            let ys = by * factor..((by + 1) * factor).min(ny);
            for bx in 0..ox {
                let xs = bx * factor..((bx + 1) * factor).min(nx);
                let block = field.slice(s![t, ys.clone(), xs]);
                let sum: f64 = block.iter().map(|&v| v as f64).sum();
                out[[t, by, bx]] = sum / block.len() as f64;
            }
        }
    }
    out
}

/// Cut a pair of aligned fields into patches.
pub fn extract_patches_from(
    run_id: &str,
    saturation: ArrayView3<'_, f32>,
    concentration: ArrayView3<'_, f32>,
    spec: &PatchSpec,
) -> Result<Vec<Patch>> {
    spec.validate()?;
    if saturation.dim() != concentration.dim() {
        return Err(Error::Shape(format!(
            "run {run_id}: saturation {:?} vs concentration {:?}",
            saturation.dim(),
            concentration.dim()
        )));
    }
    let (nt, ny, nx) = saturation.dim();
    if spec.temporal_size > nt {
        return Err(Error::Config(format!(
            "temporal patch size {} exceeds the {nt} available steps",
            spec.temporal_size
        )));
    }
    let n = spec.num_patches(nt);
    let used = n * spec.temporal_size;
    let sat = downsample(saturation.slice(s![..used, .., ..]), spec.spatial_downsample);
    let con = downsample(concentration.slice(s![..used, .., ..]), spec.spatial_downsample);
    let (dy, dx) = spec.downsampled_dims(ny, nx);
    let sub_windows = spec.sub_windows(dy, dx)?;
    let window = CellWindow {
        x0: 0,
        x1: dx,
        y0: 0,
        y1: dy,
    };
    Ok((0..n)
        .map(|k| {
            let t_begin = k * spec.temporal_size;
            let t_end = t_begin + spec.temporal_size;
            Patch {
                run_id: run_id.to_string(),
                patch_index: k,
                t_begin,
                t_end,
                window,
                saturation: sat.slice(s![t_begin..t_end, .., ..]).to_owned(),
                concentration: con.slice(s![t_begin..t_end, .., ..]).to_owned(),
                sub_windows: sub_windows.clone(),
            }
        })
        .collect())
}

pub fn extract_patches(volume: &SpaceTimeVolume, spec: &PatchSpec) -> Result<Vec<Patch>> {
    volume.validate()?;
    extract_patches_from(
        &volume.run_id,
        volume.saturation.view(),
        volume.concentration.view(),
        spec,
    )
}

/// Identifies one embedded (sub-)patch.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchKey {
    pub run: String,
    pub patch: usize,
    pub sub: Option<usize>,
}

impl PatchKey {
    pub fn whole(run: impl Into<String>, patch: usize) -> Self {
        PatchKey {
            run: run.into(),
            patch,
            sub: None,
        }
    }

    pub fn sub(run: impl Into<String>, patch: usize, sub: usize) -> Self {
        PatchKey {
            run: run.into(),
            patch,
            sub: Some(sub),
        }
    }
}

impl fmt::Display for PatchKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sub {
            Some(s) => write!(f, "{}:{}:{}", self.run, self.patch, s),
            None => write!(f, "{}:{}", self.run, self.patch),
        }
    }
}

/// Feature vectors keyed by (run, patch, sub-patch).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingMap {
    pub dim: usize,
    pub vectors: HashMap<PatchKey, Vec<f64>>,
}

/// Patches an embedding file must cover.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpectedPatches {
    /// `(run, patch count)`.
    pub runs: Vec<(String, usize)>,
    /// Sub-patches per patch, when the file holds subdivided embeddings.
    pub subs: Option<usize>,
}

impl EmbeddingMap {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, key: &PatchKey) -> Option<&[f64]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    /// Merge another map with the same dimension.
    pub fn extend(&mut self, other: EmbeddingMap) -> Result<()> {
        if !self.vectors.is_empty() && !other.vectors.is_empty() && self.dim != other.dim {
            return Err(Error::Embedding(format!(
                "dimension {} does not match {}",
                other.dim, self.dim
            )));
        }
        if self.vectors.is_empty() {
            self.dim = other.dim;
        }
        self.vectors.extend(other.vectors);
        Ok(())
    }

    /// Error listing every expected key that has no vector.
    pub fn check_complete(&self, expected: &ExpectedPatches) -> Result<()> {
        let mut missing = BTreeSet::new();
        for (run, count) in &expected.runs {
            for p in 0..*count {
                match expected.subs {
                    None => {
                        let key = PatchKey::whole(run.clone(), p);
                        if !self.vectors.contains_key(&key) {
                            missing.insert(key);
                        }
                    }
                    Some(n) => {
                        for s in 0..n {
                            let key = PatchKey::sub(run.clone(), p, s);
                            if !self.vectors.contains_key(&key) {
                                missing.insert(key);
                            }
                        }
                    }
                }
            }
        }
        if missing.is_empty() {
            return Ok(());
        }
        let listed: Vec<String> = missing.iter().take(32).map(|k| format!("patch {k}")).collect();
        let more = missing.len().saturating_sub(listed.len());
        Err(Error::Embedding(format!(
            "{} missing: {}{}",
            missing.len(),
            listed.join(", "),
            if more > 0 { format!(" and {more} more") } else { String::new() }
        )))
    }
}

/// Read `run,patch,sub,f0..f{D-1}` rows. Rows of runs not listed in `expected`
/// are ignored; an empty `expected` keeps everything and skips the gap check.
pub fn load_embeddings(path: &Path, expected: &ExpectedPatches) -> Result<EmbeddingMap> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = locate_columns(path, &headers, &["run", "patch", "sub"])?;
    if cols != [0, 1, 2] {
        return Err(Error::Embedding(format!(
            "{}: header must start with run,patch,sub",
            path.display()
        )));
    }
    let dim = headers.len() - 3;
    if dim == 0 {
        return Err(Error::Embedding(format!("{}: no feature columns", path.display())));
    }
    let keep: Option<BTreeSet<&str>> = (!expected.runs.is_empty())
        .then(|| expected.runs.iter().map(|(r, _)| r.as_str()).collect());

    let mut vectors = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let fail = |message: String| Error::Parse {
            file: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != headers.len() {
            return Err(Error::Embedding(format!(
                "{}:{line}: {} feature values, expected dimension {dim}",
                path.display(),
                record.len().saturating_sub(3)
            )));
        }
        let run = record.get(0).unwrap_or("").to_string();
        if keep.as_ref().is_some_and(|k| !k.contains(run.as_str())) {
            continue;
        }
        let patch: usize = record[1]
            .parse()
            .map_err(|_| fail(format!("bad patch index {:?}", &record[1])))?;
        let sub = match &record[2] {
            "" => None,
            s => Some(s.parse::<usize>().map_err(|_| fail(format!("bad sub index {s:?}")))?),
        };
        let values = record
            .iter()
            .skip(3)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| fail(format!("non-finite or non-numeric feature {v:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let key = PatchKey { run, patch, sub };
        if vectors.insert(key.clone(), values).is_some() {
            return Err(fail(format!("duplicate embedding for patch {key}")));
        }
    }
    let map = EmbeddingMap { dim, vectors };
    map.check_complete(expected)?;
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use std::io::Write;

    fn ramp_volume(nt: usize, ny: usize, nx: usize) -> SpaceTimeVolume {
        let grid = GridSpec {
            x_min: 0.0,
            x_max: (nx - 1) as f64,
            y_min: 0.0,
            y_max: (ny - 1) as f64,
            dx: 1.0,
            dy: 1.0,
            t_min: 0.0,
            t_max: 600.0 * (nt - 1) as f64,
            dt: 600.0,
        };
        let mut v = SpaceTimeVolume::zeros("r", grid).unwrap();
        for ((t, y, x), s) in v.saturation.indexed_iter_mut() {
            *s = (t * 100 + y * 10 + x) as f32 / 1000.0;
        }
        v
    }

    #[test]
    fn canonical_step_count_yields_48_patches() {
        let v = ramp_volume(145, 2, 2);
        let p = extract_patches(&v, &PatchSpec::default()).unwrap();
        assert_eq!(p.len(), 48);
        assert_eq!((p[47].t_begin, p[47].t_end), (141, 144));
        for (k, patch) in p.iter().enumerate() {
            assert_eq!(patch.patch_index, k);
            assert_eq!(patch.t_end - patch.t_begin, 3);
            assert_eq!(
                patch.saturation[[0, 1, 1]],
                v.saturation[[patch.t_begin, 1, 1]] as f64
            );
        }
    }

    #[test]
    fn single_patch_spans_all_steps() {
        let p = extract_patches(&ramp_volume(3, 2, 2), &PatchSpec::default()).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].t_begin, p[0].t_end), (0, 3));
    }

    #[test]
    fn temporal_size_beyond_steps_errors() {
        let spec = PatchSpec {
            temporal_size: 4,
            ..PatchSpec::default()
        };
        assert!(extract_patches(&ramp_volume(3, 2, 2), &spec).is_err());
    }

    #[test]
    fn downsampling_constant_field() {
        let field = Array3::<f32>::from_elem((1, 4, 4), 0.375);
        let d = downsample(field.view(), 2);
        assert_eq!(d.dim(), (1, 2, 2));
        assert!(d.iter().all(|&v| v == 0.375));
    }

    #[test]
    fn downsampling_partial_edge_blocks() {
        let mut field = Array3::<f32>::zeros((1, 3, 3));
        field[[0, 2, 2]] = 4.0;
        field[[0, 0, 2]] = 1.0;
        field[[0, 1, 2]] = 3.0;
        let d = downsample(field.view(), 2);
        assert_eq!(d.dim(), (1, 2, 2));
        assert_eq!(d[[0, 1, 1]], 4.0);
        assert_eq!(d[[0, 0, 1]], 2.0);
    }

    #[test]
    fn sub_windows_drop_partial_tiles() {
        let spec = PatchSpec {
            subdivide: Some((16, 32)),
            ..PatchSpec::embedding()
        };
        // canonical grid downsampled by two: 143 x 62
        let (ny, nx) = spec.downsampled_dims(123, 286);
        assert_eq!((ny, nx), (62, 143));
        let w = spec.sub_windows(ny, nx).unwrap();
        assert_eq!(w.len(), 8); // 143/16 = 8 columns, 62/32 = 1 row
        assert!(w.iter().all(|c| c.x1 <= nx && c.y1 <= ny));
    }

    #[test]
    fn oversized_sub_window_errors() {
        let spec = PatchSpec {
            subdivide: Some((5, 1)),
            ..PatchSpec::default()
        };
        assert!(spec.sub_windows(4, 4).is_err());
    }

    fn write_embeddings(rows: &[String], dim: usize) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let header: Vec<String> = (0..dim).map(|i| format!("f{i}")).collect();
        writeln!(f, "run,patch,sub,{}", header.join(",")).unwrap();
        for r in rows {
            writeln!(f, "{r}").unwrap();
        }
        f
    }

    fn row(run: &str, patch: usize, dim: usize) -> String {
        let v: Vec<String> = (0..dim).map(|i| format!("{}", (patch * dim + i) as f64 * 0.5)).collect();
        format!("{run},{patch},,{}", v.join(","))
    }

    fn one_run(n: usize) -> ExpectedPatches {
        ExpectedPatches {
            runs: vec![("sim".into(), n)],
            subs: None,
        }
    }

    #[test]
    fn loads_complete_embedding_file() {
        let rows: Vec<String> = (0..48).map(|p| row("sim", p, 64)).collect();
        let f = write_embeddings(&rows, 64);
        let map = load_embeddings(f.path(), &one_run(48)).unwrap();
        assert_eq!(map.len(), 48);
        assert_eq!(map.dim, 64);
        assert_eq!(map.get(&PatchKey::whole("sim", 1)).unwrap()[0], 32.0);
    }

    #[test]
    fn short_row_is_a_dimension_error() {
        let mut rows: Vec<String> = (0..4).map(|p| row("sim", p, 64)).collect();
        rows[2] = row("sim", 2, 63);
        let f = write_embeddings(&rows, 64);
        let err = load_embeddings(f.path(), &one_run(4)).unwrap_err();
        assert!(matches!(err, Error::Embedding(ref m) if m.contains("dimension 64")), "{err}");
    }

    #[test]
    fn gap_error_names_missing_patch() {
        let rows: Vec<String> = (0..48).filter(|&p| p != 7).map(|p| row("sim", p, 8)).collect();
        let f = write_embeddings(&rows, 8);
        let err = load_embeddings(f.path(), &one_run(48)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("patch sim:7"), "{msg}");
        assert!(msg.starts_with("embedding error: 1 missing"), "{msg}");
    }

    #[test]
    fn subdivided_rows_are_keyed_by_sub_index() {
        let rows = vec![
            "sim,0,0,1,0".to_string(),
            "sim,0,1,0,1".to_string(),
        ];
        let f = write_embeddings(&rows, 2);
        let expected = ExpectedPatches {
            runs: vec![("sim".into(), 1)],
            subs: Some(2),
        };
        let map = load_embeddings(f.path(), &expected).unwrap();
        assert_eq!(map.get(&PatchKey::sub("sim", 0, 1)).unwrap(), &[0.0, 1.0]);
    }
}

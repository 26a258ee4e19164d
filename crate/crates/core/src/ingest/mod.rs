//! Reading per-run spatial maps and time series and aligning them onto the
//! canonical space-time grid.
//!
//! Missing canonical steps repeat the preceding step once a measurement has
//! been seen and are zero before that. Spatial resampling is nearest-sample.

mod align;
pub mod manifest;
pub mod timeseries;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Axis};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::volume::{FillFlag, SegmentationVolume, SpaceTimeVolume};

pub use manifest::{Manifest, RunEntry, RunKind};
pub use timeseries::{parse_time_series, TimeSeriesFormat, TimeSeriesTable};

use align::{assign_steps, NearestCache, StepSource};

/// Default filename pattern: the integer right before the extension.
pub const DEFAULT_TIME_PATTERN: &str = r"(\d+)\.[A-Za-z0-9]+$";

/// How frame files are laid out on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameFormat {
    /// Field delimiter, one ASCII character.
    pub delimiter: char,
    /// Regex with one capture group yielding the frame time in seconds.
    pub time_pattern: String,
}

impl Default for FrameFormat {
    fn default() -> Self {
        FrameFormat {
            delimiter: ',',
            time_pattern: DEFAULT_TIME_PATTERN.to_string(),
        }
    }
}

impl FrameFormat {
    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(u8::is_ascii)
            .ok_or_else(|| Error::Config(format!("delimiter {:?} is not ASCII", self.delimiter)))
    }

    fn time_regex(&self) -> Result<Regex> {
        let re = Regex::new(&self.time_pattern)
            .map_err(|e| Error::Config(format!("bad time pattern: {e}")))?;
        if re.captures_len() < 2 {
            return Err(Error::Config(
                "time pattern needs one capture group".to_string(),
            ));
        }
        Ok(re)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub x: f64,
    pub y: f64,
    pub saturation: f32,
    pub concentration: f32,
}

/// One reported time step of a simulation's spatial maps.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub time: f64,
    pub samples: Vec<Sample>,
}

/// One reported time step of an experiment's segmentation map.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFrame {
    pub time: f64,
    pub cells: Vec<(f64, f64, u8)>,
}

pub(crate) fn csv_reader(path: &Path, delimiter: u8) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            file: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Column indices for `names`, matched case-insensitively against the header.
pub(crate) fn locate_columns(
    path: &Path,
    headers: &csv::StringRecord,
    names: &[&str],
) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::MissingColumn {
                    file: path.to_path_buf(),
                    column: name.to_string(),
                })
        })
        .collect()
}

/// Frame files in `dir` with their times, sorted ascending. Files whose name
/// does not match the pattern are skipped.
fn frame_files(dir: &Path, format: &FrameFormat) -> Result<Vec<(f64, PathBuf)>> {
    let re = format.time_regex()?;
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(caps) = re.captures(&name) else {
            log::debug!("skipping {}: name does not match time pattern", path.display());
            continue;
        };
        let time: f64 = caps[1].parse().map_err(|_| Error::Parse {
            file: path.clone(),
            line: 0,
            message: format!("time {:?} captured from file name is not numeric", &caps[1]),
        })?;
        files.push((time, path));
    }
    files.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    for pair in files.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(Error::DuplicateFrameTime {
                time: pair[0].0,
                first: pair[0].1.clone(),
                second: pair[1].1.clone(),
            });
        }
    }
    Ok(files)
}

fn check_unique_position(
    seen: &mut HashSet<(u64, u64)>,
    path: &Path,
    record: &csv::ByteRecord,
    x: f64,
    y: f64,
) -> Result<()> {
    if !seen.insert((x.to_bits(), y.to_bits())) {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            line: record.position().map(|p| p.line()).unwrap_or(0),
            message: format!("duplicate sample position ({x}, {y})"),
        });
    }
    Ok(())
}

fn parse_bytes<T: std::str::FromStr>(path: &Path, record: &csv::ByteRecord, idx: usize, column: &str) -> Result<T> {
    let line = record.position().map(|p| p.line()).unwrap_or(0);
    let raw = record.get(idx).ok_or_else(|| Error::Parse {
        file: path.to_path_buf(),
        line,
        message: format!("row too short for column `{column}`"),
    })?;
    std::str::from_utf8(raw)
        .ok()
        .and_then(|s| s.trim().parse::<T>().ok())
        .ok_or_else(|| Error::Parse {
            file: path.to_path_buf(),
            line,
            message: format!("`{}` in column `{column}` is not a number", String::from_utf8_lossy(raw)),
        })
}

/// Read one frame file with columns `x, y, saturation, concentration`.
pub fn read_frame(path: &Path, time: f64, format: &FrameFormat) -> Result<RawFrame> {
    let mut reader = csv_reader(path, format.delimiter_byte()?)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = locate_columns(path, &headers, &["x", "y", "saturation", "concentration"])?;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    let mut clamped = 0usize;
    let mut record = csv::ByteRecord::new();
    while reader.read_byte_record(&mut record).map_err(|e| csv_error(path, e))? {
        let x: f64 = parse_bytes(path, &record, cols[0], "x")?;
        let y: f64 = parse_bytes(path, &record, cols[1], "y")?;
        let mut saturation: f32 = parse_bytes(path, &record, cols[2], "saturation")?;
        let mut concentration: f32 = parse_bytes(path, &record, cols[3], "concentration")?;
        check_unique_position(&mut seen, path, &record, x, y)?;
        if !(0.0..=1.0).contains(&saturation) {
            saturation = if saturation.is_nan() { 0.0 } else { saturation.clamp(0.0, 1.0) };
            clamped += 1;
        }
        if !(concentration >= 0.0) {
            concentration = 0.0;
            clamped += 1;
        }
        samples.push(Sample {
            x,
            y,
            saturation,
            concentration,
        });
    }
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} out-of-range values", path.display());
    }
    Ok(RawFrame { time, samples })
}

/// Read every frame file in `dir`, sorted by time.
pub fn parse_spatial_maps(dir: &Path, format: &FrameFormat) -> Result<Vec<RawFrame>> {
    frame_files(dir, format)?
        .into_iter()
        .map(|(time, path)| read_frame(&path, time, format))
        .collect()
}

fn repeat_previous<T: Clone>(array: &mut Array3<T>, k: usize) {
    let (head, mut tail) = array.view_mut().split_at(Axis(0), k);
    tail.index_axis_mut(Axis(0), 0).assign(&head.index_axis(Axis(0), k - 1));
}

/// Resample sorted frames onto `grid`, filling missing steps.
pub fn align_volume(
    run_id: impl Into<String>,
    frames: &[RawFrame],
    grid: &GridSpec,
) -> Result<SpaceTimeVolume> {
    let mut volume = SpaceTimeVolume::zeros(run_id, *grid)?;
    let times: Vec<f64> = frames.iter().map(|f| f.time).collect();
    let sources = assign_steps(&times, grid)?;
    let (_, ny, nx) = grid.dims()?;
    let mut cache = NearestCache::default();
    for (k, source) in sources.iter().enumerate() {
        volume.provenance[k] = source.flag();
        match *source {
            StepSource::Zero => {}
            StepSource::Repeat => {
                repeat_previous(&mut volume.saturation, k);
                repeat_previous(&mut volume.concentration, k);
            }
            StepSource::Frame(f) => {
                let frame = &frames[f];
                let points: Vec<(f64, f64)> = frame.samples.iter().map(|s| (s.x, s.y)).collect();
                let map = cache.get(&points, grid);
                let mut sat = volume.saturation.slice_mut(s![k, .., ..]);
                let mut con = volume.concentration.slice_mut(s![k, .., ..]);
                for j in 0..ny {
                    for i in 0..nx {
                        if let Some(m) = map[j * nx + i] {
                            let sample = &frame.samples[m as usize];
                            sat[[j, i]] = sample.saturation;
                            con[[j, i]] = sample.concentration;
                        }
                    }
                }
            }
        }
    }
    Ok(volume)
}

/// Read an experiment's per-frame class tables (columns `x, y, class`).
pub fn read_class_frame(path: &Path, time: f64, format: &FrameFormat) -> Result<ClassFrame> {
    let mut reader = csv_reader(path, format.delimiter_byte()?)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = locate_columns(path, &headers, &["x", "y", "class"])?;
    let mut cells = Vec::new();
    let mut seen = HashSet::new();
    let mut record = csv::ByteRecord::new();
    while reader.read_byte_record(&mut record).map_err(|e| csv_error(path, e))? {
        let x: f64 = parse_bytes(path, &record, cols[0], "x")?;
        let y: f64 = parse_bytes(path, &record, cols[1], "y")?;
        let class: i64 = parse_bytes(path, &record, cols[2], "class")?;
        if !(0..=2).contains(&class) {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: record.position().map(|p| p.line()).unwrap_or(0),
                message: format!("class {class} outside {{0, 1, 2}}"),
            });
        }
        check_unique_position(&mut seen, path, &record, x, y)?;
        cells.push((x, y, class as u8));
    }
    Ok(ClassFrame { time, cells })
}

/// Resample sorted class frames onto `grid` with the same gap rules as
/// [`align_volume`]; leading gaps become class 0.
pub fn align_segmentation(
    run_id: impl Into<String>,
    frames: &[ClassFrame],
    grid: &GridSpec,
) -> Result<SegmentationVolume> {
    let shape = grid.dims()?;
    let mut classes = Array3::<u8>::zeros(shape);
    let times: Vec<f64> = frames.iter().map(|f| f.time).collect();
    let sources = assign_steps(&times, grid)?;
    let (_, ny, nx) = shape;
    let mut cache = NearestCache::default();
    for (k, source) in sources.iter().enumerate() {
        match *source {
            StepSource::Zero => {}
            StepSource::Repeat => {
                repeat_previous(&mut classes, k);
            }
            StepSource::Frame(f) => {
                let frame = &frames[f];
                let points: Vec<(f64, f64)> = frame.cells.iter().map(|c| (c.0, c.1)).collect();
                let map = cache.get(&points, grid);
                let mut slab = classes.slice_mut(s![k, .., ..]);
                for j in 0..ny {
                    for i in 0..nx {
                        if let Some(m) = map[j * nx + i] {
                            slab[[j, i]] = frame.cells[m as usize].2;
                        }
                    }
                }
            }
        }
    }
    Ok(SegmentationVolume {
        run_id: run_id.into(),
        grid: *grid,
        classes,
        provenance: sources.iter().map(|s| s.flag()).collect(),
    })
}

/// Read and align an experiment's segmentation maps from `dir`.
pub fn parse_segmentation_maps(
    run_id: impl Into<String>,
    dir: &Path,
    format: &FrameFormat,
    grid: &GridSpec,
) -> Result<SegmentationVolume> {
    let frames = frame_files(dir, format)?
        .into_iter()
        .map(|(time, path)| read_class_frame(&path, time, format))
        .collect::<Result<Vec<_>>>()?;
    align_segmentation(run_id, &frames, grid)
}

/// Re-serialize the measured steps of a volume as frames on the grid's cell centers.
pub fn volume_to_frames(volume: &SpaceTimeVolume) -> Vec<RawFrame> {
    let grid = &volume.grid;
    let (_, ny, nx) = grid.dims().expect("validated grid");
    volume
        .provenance
        .iter()
        .enumerate()
        .filter(|(_, f)| **f == FillFlag::Measured)
        .map(|(k, _)| {
            let mut samples = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    samples.push(Sample {
                        x: grid.x_at(i),
                        y: grid.y_at(j),
                        saturation: volume.saturation[[k, j, i]],
                        concentration: volume.concentration[[k, j, i]],
                    });
                }
            }
            RawFrame {
                time: grid.t_at(k),
                samples,
            }
        })
        .collect()
}

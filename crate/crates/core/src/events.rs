//! Mapping between patch indices and time ranges for linked views.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::patching::PatchSpec;

/// Half-open time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeRange {
    pub t_begin: f64,
    pub t_end: f64,
}

impl TimeRange {
    pub fn new(t_begin: f64, t_end: f64, grid: &GridSpec) -> Result<Self> {
        if !(t_begin < t_end) {
            return Err(Error::OutOfRange(format!("empty time range [{t_begin}, {t_end})")));
        }
        if t_begin < grid.t_min || t_end > grid.t_max {
            return Err(Error::OutOfRange(format!(
                "time range [{t_begin}, {t_end}) outside [{}, {}]",
                grid.t_min, grid.t_max
            )));
        }
        Ok(TimeRange { t_begin, t_end })
    }
}

pub fn patch_to_range(index: usize, spec: &PatchSpec, grid: &GridSpec) -> Result<TimeRange> {
    spec.validate()?;
    let count = spec.num_patches(grid.nt());
    if index >= count {
        return Err(Error::OutOfRange(format!("patch {index} of {count}")));
    }
    let span = spec.temporal_size as f64 * grid.dt;
    Ok(TimeRange {
        t_begin: grid.t_min + index as f64 * span,
        t_end: grid.t_min + (index + 1) as f64 * span,
    })
}

/// Every patch whose time range intersects `range`.
pub fn range_to_patches(range: &TimeRange, spec: &PatchSpec, grid: &GridSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let count = spec.num_patches(grid.nt());
    let span = spec.temporal_size as f64 * grid.dt;
    let rel_begin = (range.t_begin - grid.t_min) / span;
    let rel_end = (range.t_end - grid.t_min) / span;
    if rel_end <= 0.0 {
        return Ok(Vec::new());
    }
    let first = rel_begin.floor().max(0.0) as usize;
    let last = (rel_end.ceil() as usize).min(count);
    Ok((first..last).collect())
}

//! Canonical space-time grid and named evaluation regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid over `x`, `y` (meters) and `t` (seconds).
///
/// All extents are inclusive; cell centers sit at `x_min + i * dx` and so on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub dx: f64,
    pub dy: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub dt: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::canonical()
    }
}

fn axis_count(name: &str, lo: f64, hi: f64, step: f64) -> Result<usize> {
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) {
        return Err(Error::Grid(format!("{name} axis has non-finite bounds")));
    }
    if lo >= hi {
        return Err(Error::Grid(format!("{name} axis requires min < max, got [{lo}, {hi}]")));
    }
    if step <= 0.0 {
        return Err(Error::Grid(format!("{name} step must be positive, got {step}")));
    }
    let q = (hi - lo) / step;
    let r = q.round();
    if (q - r).abs() > 1e-9 * q.abs().max(1.0) {
        return Err(Error::Grid(format!(
            "{name} extent {} is not a whole multiple of step {step}",
            hi - lo
        )));
    }
    Ok(r as usize + 1)
}

impl GridSpec {
    /// Benchmark geometry: 2.86 m x 1.23 m at 1 cm, 24 h at 10 min.
    pub fn canonical() -> Self {
        GridSpec {
            x_min: 0.005,
            x_max: 2.855,
            y_min: 0.005,
            y_max: 1.225,
            dx: 0.01,
            dy: 0.01,
            t_min: 0.0,
            t_max: 86_400.0,
            dt: 600.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().map(|_| ())
    }

    /// `(nt, ny, nx)`.
    pub fn dims(&self) -> Result<(usize, usize, usize)> {
        let nx = axis_count("x", self.x_min, self.x_max, self.dx)?;
        let ny = axis_count("y", self.y_min, self.y_max, self.dy)?;
        let nt = axis_count("t", self.t_min, self.t_max, self.dt)?;
        Ok((nt, ny, nx))
    }

    /// Cell count along x. Panics on an invalid grid; call [`GridSpec::validate`] first.
    pub fn nx(&self) -> usize {
        self.dims().expect("validated grid").2
    }

    pub fn ny(&self) -> usize {
        self.dims().expect("validated grid").1
    }

    pub fn nt(&self) -> usize {
        self.dims().expect("validated grid").0
    }

    pub fn x_at(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn y_at(&self, j: usize) -> f64 {
        self.y_min + j as f64 * self.dy
    }

    pub fn t_at(&self, k: usize) -> f64 {
        self.t_min + k as f64 * self.dt
    }

    /// Canonical step whose time lies strictly within `dt/2` of `time`.
    pub fn step_of(&self, time: f64) -> Option<usize> {
        let k = ((time - self.t_min) / self.dt).round();
        if k < 0.0 || k >= self.nt() as f64 {
            return None;
        }
        let k = k as usize;
        ((time - self.t_at(k)).abs() < self.dt / 2.0).then_some(k)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nt()).map(|k| self.t_at(k)).collect()
    }
}

/// Rectangular evaluation region (the benchmark's boxes A, B and C, or any other label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

/// Half-open cell index ranges `[x0, x1) x [y0, y1)` covered by a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellWindow {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
}

impl CellWindow {
    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn cell_count(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) * (self.y1 - self.y0)
        }
    }
}

impl Region {
    pub fn new(name: impl Into<String>, x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Self {
        Region {
            name: name.into(),
            x_lo,
            x_hi,
            y_lo,
            y_hi,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let fail = |reason: String| Error::Box {
            name: self.name.clone(),
            reason,
        };
        if !(self.x_lo < self.x_hi && self.y_lo < self.y_hi) {
            return Err(fail("requires x_lo < x_hi and y_lo < y_hi".into()));
        }
        let tol_x = grid.dx / 2.0;
        let tol_y = grid.dy / 2.0;
        if self.x_lo < grid.x_min - tol_x
            || self.x_hi > grid.x_max + tol_x
            || self.y_lo < grid.y_min - tol_y
            || self.y_hi > grid.y_max + tol_y
        {
            return Err(fail(format!(
                "[{}, {}] x [{}, {}] lies outside the grid extents",
                self.x_lo, self.x_hi, self.y_lo, self.y_hi
            )));
        }
        Ok(())
    }

    /// Cells whose centers fall inside the closed region.
    pub fn cells(&self, grid: &GridSpec) -> Result<CellWindow> {
        self.validate(grid)?;
        let (_, ny, nx) = grid.dims()?;
        let eps = 1e-9;
        let range = |lo: f64, hi: f64, min: f64, step: f64, n: usize| {
            let first = ((lo - min) / step - eps).ceil().max(0.0) as usize;
            let last = ((hi - min) / step + eps).floor();
            let end = if last < 0.0 { 0 } else { (last as usize + 1).min(n) };
            (first.min(end), end)
        };
        let (x0, x1) = range(self.x_lo, self.x_hi, grid.x_min, grid.dx, nx);
        let (y0, y1) = range(self.y_lo, self.y_hi, grid.y_min, grid.dy, ny);
        let window = CellWindow { x0, x1, y0, y1 };
        if window.is_empty() {
            return Err(Error::Box {
                name: self.name.clone(),
                reason: "region contains no cell centers".into(),
            });
        }
        Ok(window)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_dims() {
        assert_eq!(GridSpec::canonical().dims().unwrap(), (145, 123, 286));
    }

    #[test]
    fn rejects_non_integral_extent() {
        let g = GridSpec {
            dx: 0.013,
            ..GridSpec::canonical()
        };
        assert!(matches!(g.validate(), Err(Error::Grid(_))));
    }

    #[test]
    fn rejects_inverted_axis() {
        let g = GridSpec {
            t_min: 10.0,
            t_max: 0.0,
            ..GridSpec::canonical()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn step_binning_uses_half_dt() {
        let g = GridSpec::canonical();
        assert_eq!(g.step_of(0.0), Some(0));
        assert_eq!(g.step_of(899.0), Some(1));
        assert_eq!(g.step_of(86_400.0), Some(144));
        assert_eq!(g.step_of(-400.0), None);
        assert_eq!(g.step_of(90_000.0), None);
    }

    #[test]
    fn region_cells() {
        let g = GridSpec::canonical();
        let r = Region::new("B", 0.0, 0.1, 0.005, 0.025);
        let w = r.cells(&g).unwrap();
        assert_eq!((w.x0, w.x1), (0, 10));
        assert_eq!((w.y0, w.y1), (0, 3));
    }

    #[test]
    fn degenerate_region() {
        let g = GridSpec::canonical();
        let r = Region::new("thin", 0.011, 0.012, 0.1, 0.2);
        assert!(matches!(r.cells(&g), Err(Error::Box { .. })));
        let outside = Region::new("far", 5.0, 6.0, 0.1, 0.2);
        assert!(outside.cells(&g).is_err());
    }
}

//! Shared alignment machinery: frame-to-step binning and nearest-sample lookup.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::volume::FillFlag;

/// What each canonical step should hold after gap filling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StepSource {
    Frame(usize),
    Repeat,
    Zero,
}

impl StepSource {
    pub(crate) fn flag(self) -> FillFlag {
        match self {
            StepSource::Frame(_) => FillFlag::Measured,
            StepSource::Repeat => FillFlag::Repeated,
            StepSource::Zero => FillFlag::ZeroFilled,
        }
    }
}

/// Bin sorted frame times onto canonical steps. Frames outside the grid's time
/// range are ignored.
pub(crate) fn assign_steps(times: &[f64], grid: &GridSpec) -> Result<Vec<StepSource>> {
    for pair in times.windows(2) {
        if pair[1] < pair[0] {
            return Err(Error::UnsortedFrames {
                previous: pair[0],
                next: pair[1],
            });
        }
    }
    let nt = grid.nt();
    let mut owner: Vec<Option<usize>> = vec![None; nt];
    for (i, &t) in times.iter().enumerate() {
        match grid.step_of(t) {
            Some(k) => {
                if let Some(prev) = owner[k] {
                    return Err(Error::StepCollision {
                        step: k,
                        first: times[prev],
                        second: t,
                    });
                }
                owner[k] = Some(i);
            }
            None => log::debug!("frame at t={t} s falls outside the canonical time range"),
        }
    }
    let mut seen_measurement = false;
    Ok(owner
        .into_iter()
        .map(|o| match o {
            Some(i) => {
                seen_measurement = true;
                StepSource::Frame(i)
            }
            None if seen_measurement => StepSource::Repeat,
            None => StepSource::Zero,
        })
        .collect())
}

/// For every grid cell (row-major `[y][x]`), the index of the nearest sample, or
/// `None` when no sample lies within `max(dx, dy)` of the cell center.
/// Ties go to the earlier sample.
pub(crate) fn nearest_map(points: &[(f64, f64)], grid: &GridSpec) -> Vec<Option<u32>> {
    let (_, ny, nx) = grid.dims().expect("validated grid");
    let reach = grid.dx.max(grid.dy);
    let reach2 = reach * reach;
    let bucket_of = |x: f64, y: f64| {
        (
            ((x - grid.x_min) / reach).floor() as i64,
            ((y - grid.y_min) / reach).floor() as i64,
        )
    };
    let mut buckets: HashMap<(i64, i64), Vec<u32>> = HashMap::with_capacity(points.len());
    for (i, &(x, y)) in points.iter().enumerate() {
        buckets.entry(bucket_of(x, y)).or_default().push(i as u32);
    }

    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let cy = grid.y_at(j);
        for i in 0..nx {
            let cx = grid.x_at(i);
            let (bx, by) = bucket_of(cx, cy);
            let mut best: Option<(f64, u32)> = None;
            for oy in -1..=1 {
                for ox in -1..=1 {
                    let Some(members) = buckets.get(&(bx + ox, by + oy)) else {
                        continue;
                    };
                    for &m in members {
                        let (px, py) = points[m as usize];
                        let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                        let better = match best {
                            None => true,
                            Some((bd, bm)) => d2 < bd || (d2 == bd && m < bm),
                        };
                        if better {
                            best = Some((d2, m));
                        }
                    }
                }
            }
            out.push(best.filter(|&(d2, _)| d2 <= reach2).map(|(_, m)| m));
        }
    }
    out
}

/// Caches the nearest map across frames that share identical sample positions.
#[derive(Default)]
pub(crate) struct NearestCache {
    points: Vec<(f64, f64)>,
    map: Vec<Option<u32>>,
}

impl NearestCache {
    pub(crate) fn get(&mut self, points: &[(f64, f64)], grid: &GridSpec) -> &[Option<u32>] {
        if self.map.is_empty() || self.points != points {
            self.points = points.to_vec();
            self.map = nearest_map(points, grid);
        }
        &self.map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_grid() -> GridSpec {
        GridSpec {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
            dx: 1.0,
            dy: 1.0,
            t_min: 0.0,
            t_max: 1800.0,
            dt: 600.0,
        }
    }

    #[test]
    fn steps_repeat_after_first_measurement() {
        let s = assign_steps(&[600.0, 1800.0], &toy_grid()).unwrap();
        assert_eq!(
            s,
            vec![
                StepSource::Zero,
                StepSource::Frame(0),
                StepSource::Repeat,
                StepSource::Frame(1)
            ]
        );
    }

    #[test]
    fn collision_is_an_error() {
        let err = assign_steps(&[590.0, 610.0], &toy_grid()).unwrap_err();
        assert!(matches!(err, Error::StepCollision { step: 1, .. }));
    }

    #[test]
    fn unsorted_is_an_error() {
        assert!(matches!(
            assign_steps(&[600.0, 0.0], &toy_grid()),
            Err(Error::UnsortedFrames { .. })
        ));
    }

    #[test]
    fn nearest_respects_reach() {
        let g = toy_grid();
        // one sample right on cell (0,0), one far away
        let m = nearest_map(&[(0.0, 0.0), (5.0, 5.0)], &g);
        assert_eq!(m, vec![Some(0), Some(0), Some(0), None]);
    }

    #[test]
    fn nearest_tie_prefers_first() {
        let g = toy_grid();
        let m = nearest_map(&[(0.5, 0.0), (0.5, 0.0)], &g);
        assert_eq!(m[0], Some(0));
    }
}

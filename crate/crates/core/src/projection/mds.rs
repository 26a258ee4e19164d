//! Metric MDS by stress majorization (SMACOF) with unit weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{rng, ProjectionConfig, ProjectionResult};
use crate::error::{Error, Result};
use crate::metrics::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdsConfig {
    pub max_iterations: usize,
    /// Stop once the relative stress decrease of one iteration falls below this.
    pub stress_tolerance: f64,
    pub restarts: usize,
}

impl Default for MdsConfig {
    fn default() -> Self {
        MdsConfig {
            max_iterations: 300,
            stress_tolerance: 1e-6,
            restarts: 4,
        }
    }
}

/// Outcome of one SMACOF descent.
#[derive(Debug, Clone)]
pub struct SmacofRun {
    pub points: Vec<[f64; 2]>,
    /// Raw stress `sum_{i<j} (d_ij - |x_i - x_j|)^2`.
    pub stress: f64,
    /// Stress of the initial configuration followed by one entry per accepted iteration.
    pub history: Vec<f64>,
}

fn stress(d: &[f64], n: usize, x: &[[f64; 2]]) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let e = d[i * n + j] - dist(x[i], x[j]);
            s += e * e;
        }
    }
    s
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Guttman transform `X <- B(X) X / n`.
fn guttman(d: &[f64], n: usize, x: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = vec![[0.0; 2]; n];
    for i in 0..n {
        let mut acc = [0.0; 2];
        for j in 0..n {
            if i == j {
                continue;
            }
            let e = dist(x[i], x[j]);
            if e > 0.0 {
                let b = d[i * n + j] / e;
                acc[0] += b * (x[i][0] - x[j][0]);
                acc[1] += b * (x[i][1] - x[j][1]);
            }
        }
        out[i] = [acc[0] / n as f64, acc[1] / n as f64];
    }
    out
}

/// Run SMACOF from `init` on the row-major `n x n` dissimilarities `d`.
pub fn smacof(d: &[f64], n: usize, init: Vec<[f64; 2]>, max_iterations: usize, tolerance: f64) -> SmacofRun {
    let mut x = init;
    let mut current = stress(d, n, &x);
    let mut history = vec![current];
    for _ in 0..max_iterations {
        if current == 0.0 {
            break;
        }
        let next_x = guttman(d, n, &x);
        let next = stress(d, n, &next_x);
        if next > current {
            // rounding at a fixed point; keep the better configuration
            break;
        }
        history.push(next);
        let decrease = (current - next) / current;
        x = next_x;
        current = next;
        if decrease < tolerance {
            break;
        }
    }
    SmacofRun {
        points: x,
        stress: current,
        history,
    }
}

fn random_init(n: usize, scale: f64, seed: u64) -> Vec<[f64; 2]> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| [r.random_range(-scale..scale), r.random_range(-scale..scale)])
        .collect()
}

pub fn project_mds(matrix: &DistanceMatrix, config: &ProjectionConfig) -> Result<ProjectionResult> {
    let n = matrix.len();
    if n < 2 {
        return Err(Error::Projection(format!("MDS needs at least 2 items, got {n}")));
    }
    let cfg = &config.mds;
    if cfg.max_iterations == 0 || cfg.restarts == 0 {
        return Err(Error::Projection("MDS needs at least one iteration and one restart".into()));
    }
    let d = &matrix.values;
    let total: f64 = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d[i * n + j].powi(2)).sum();
    if total == 0.0 {
        return Ok(ProjectionResult::from_coords(matrix, config, &vec![[0.0; 2]; n], 0.0));
    }
    let mean = (total / (n * (n - 1) / 2) as f64).sqrt();

    let mut best: Option<SmacofRun> = None;
    for restart in 0..cfg.restarts {
        let seed = config.seed.wrapping_add(restart as u64);
        let run = smacof(d, n, random_init(n, mean, seed), cfg.max_iterations, cfg.stress_tolerance);
        if best.as_ref().is_none_or(|b| run.stress < b.stress) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let mut coords = best.points;
    center(&mut coords);
    Ok(ProjectionResult::from_coords(matrix, config, &coords, best.stress / total))
}

pub(crate) fn center(points: &mut [[f64; 2]]) {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    for p in points.iter_mut() {
        p[0] -= mx / n;
        p[1] -= my / n;
    }
}

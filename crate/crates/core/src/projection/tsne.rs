//! Exact t-SNE on a precomputed distance matrix.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mds::center;
use super::{rng, ProjectionConfig, ProjectionResult};
use crate::error::{Error, Result};
use crate::metrics::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    /// Iteration at which momentum rises from 0.5 to 0.8.
    pub momentum_switch: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 10.0,
            iterations: 1000,
            learning_rate: 100.0,
            early_exaggeration: 4.0,
            exaggeration_iterations: 100,
            momentum_switch: 250,
        }
    }
}

const ENTROPY_TOLERANCE: f64 = 1e-5;
const MAX_BISECTIONS: usize = 64;
const KL_CHECKPOINT: usize = 50;

/// Conditional row for point `i`: Gaussian on squared distances with the
/// precision chosen so the row entropy matches `ln(perplexity)`.
fn conditional_row(sq: &[f64], i: usize, target_entropy: f64, out: &mut [f64]) {
    let n = sq.len();
    let min = (0..n).filter(|&j| j != i).map(|j| sq[j]).fold(f64::INFINITY, f64::min);
    let mut beta = 1.0;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for _ in 0..MAX_BISECTIONS {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for j in 0..n {
            if j == i {
                out[j] = 0.0;
                continue;
            }
            let shifted = sq[j] - min;
            let p = (-shifted * beta).exp();
            out[j] = p;
            sum += p;
            weighted += shifted * p;
        }
        let entropy = sum.ln() + beta * weighted / sum;
        let diff = entropy - target_entropy;
        if diff.abs() < ENTROPY_TOLERANCE {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { (beta + hi) / 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
}

/// Symmetrized joint probabilities `(P_cond + P_cond^T) / 2n`, row-major.
pub fn joint_probabilities(matrix: &DistanceMatrix, perplexity: f64) -> Result<Vec<f64>> {
    let n = matrix.len();
    if n < 4 {
        return Err(Error::Projection(format!("t-SNE needs at least 4 items, got {n}")));
    }
    if !(perplexity > 0.0 && perplexity < (n - 1) as f64 / 3.0) {
        return Err(Error::Projection(format!(
            "perplexity {perplexity} must be below (n - 1) / 3 = {:.3} for {n} items",
            (n - 1) as f64 / 3.0
        )));
    }
    let target = perplexity.ln();
    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        let sq: Vec<f64> = matrix.row(i).iter().map(|d| d * d).collect();
        conditional_row(&sq, i, target, &mut cond[i * n..(i + 1) * n]);
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok(p)
}

/// Student-t affinities `(1 + |y_i - y_j|^2)^-1` and their off-diagonal sum.
fn affinities(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d2 = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
            let q = 1.0 / (1.0 + d2);
            num[i * n + j] = q;
            num[j * n + i] = q;
            total += 2.0 * q;
        }
    }
    (num, total)
}

/// `KL(P || Q)` for the embedding `y`.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (num, total) = affinities(y);
    p.iter()
        .zip(&num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &q)| pij * (pij / (q / total).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// A finished t-SNE descent.
#[derive(Debug, Clone)]
pub struct TsneRun {
    pub points: Vec<[f64; 2]>,
    /// `(iteration, KL divergence)` every 50 iterations and at the end.
    pub kl_history: Vec<(usize, f64)>,
}

pub fn run_tsne(p: &[f64], n: usize, cfg: &TsneConfig, seed: u64) -> TsneRun {
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut r = rng(seed);
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut r), normal.sample(&mut r)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_history = Vec::new();
    let mut grad = vec![[0.0; 2]; n];

    for it in 0..cfg.iterations {
        let exaggeration = if it < cfg.exaggeration_iterations {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < cfg.momentum_switch { 0.5 } else { 0.8 };
        let (num, total) = affinities(&y);
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let w = (exaggeration * p[i * n + j] - q / total) * q;
                g[0] += w * (y[i][0] - y[j][0]);
                g[1] += w * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (update[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(0.01);
                update[i][d] = momentum * update[i][d] - cfg.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += update[i][d];
            }
        }
        center(&mut y);
        if (it + 1) % KL_CHECKPOINT == 0 || it + 1 == cfg.iterations {
            kl_history.push((it + 1, kl_divergence(p, &y)));
        }
    }
    TsneRun { points: y, kl_history }
}

pub fn project_tsne(matrix: &DistanceMatrix, config: &ProjectionConfig) -> Result<ProjectionResult> {
    let cfg = &config.tsne;
    if cfg.iterations == 0 {
        return Err(Error::Projection("t-SNE needs at least one iteration".into()));
    }
    let p = joint_probabilities(matrix, cfg.perplexity)?;
    let run = run_tsne(&p, matrix.len(), cfg, config.seed);
    let quality = run.kl_history.last().map(|&(_, kl)| kl).unwrap_or(f64::NAN);
    if run.points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Projection("t-SNE diverged to non-finite coordinates".into()));
    }
    Ok(ProjectionResult::from_coords(matrix, config, &run.points, quality))
}

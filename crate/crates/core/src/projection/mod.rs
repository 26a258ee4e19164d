//! 2-D embeddings of distance matrices.

mod mds;
mod tsne;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{DistanceMatrix, ItemKey};

pub use mds::{project_mds, smacof, MdsConfig, SmacofRun};
pub use tsne::{joint_probabilities, kl_divergence, project_tsne, run_tsne, TsneConfig, TsneRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mds,
    Tsne,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Mds => "mds",
            Algorithm::Tsne => "tsne",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mds" => Some(Algorithm::Mds),
            "tsne" | "t-sne" => Some(Algorithm::Tsne),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub algorithm: Algorithm,
    pub mds: MdsConfig,
    pub tsne: TsneConfig,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            algorithm: Algorithm::Mds,
            mds: MdsConfig::default(),
            tsne: TsneConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    #[serde(flatten)]
    pub key: ItemKey,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub algorithm: Algorithm,
    pub config: ProjectionConfig,
    /// Normalized stress for MDS, KL divergence for t-SNE.
    pub quality: f64,
    pub points: Vec<ProjectedPoint>,
}

impl ProjectionResult {
    pub(crate) fn from_coords(
        matrix: &DistanceMatrix,
        config: &ProjectionConfig,
        coords: &[[f64; 2]],
        quality: f64,
    ) -> Self {
        ProjectionResult {
            algorithm: config.algorithm,
            config: *config,
            quality,
            points: matrix
                .labels
                .iter()
                .zip(coords)
                .map(|(key, c)| ProjectedPoint {
                    key: key.clone(),
                    x: c[0],
                    y: c[1],
                })
                .collect(),
        }
    }
}

/// Project with the configured algorithm.
pub fn project(matrix: &DistanceMatrix, config: &ProjectionConfig) -> Result<ProjectionResult> {
    match config.algorithm {
        Algorithm::Mds => project_mds(matrix, config),
        Algorithm::Tsne => project_tsne(matrix, config),
    }
}

/// A run's patch points in patch order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeCurve {
    pub run: String,
    pub vertices: Vec<ProjectedPoint>,
}

/// Group patch-mode points into one polyline per run, ordered by patch index.
pub fn time_curves(result: &ProjectionResult) -> Result<Vec<TimeCurve>> {
    let mut curves: IndexMap<&str, Vec<ProjectedPoint>> = IndexMap::new();
    for p in &result.points {
        if p.key.patch.is_none() {
            return Err(Error::Projection(
                "time curves need a patch-mode projection".into(),
            ));
        }
        curves.entry(p.key.run.as_str()).or_default().push(p.clone());
    }
    Ok(curves
        .into_iter()
        .map(|(run, mut vertices)| {
            vertices.sort_by_key(|v| v.key.patch);
            TimeCurve {
                run: run.to_string(),
                vertices,
            }
        })
        .collect())
}

pub(crate) fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(run: &str, patch: Option<usize>) -> ProjectedPoint {
        ProjectedPoint {
            key: ItemKey {
                run: run.into(),
                patch,
            },
            x: patch.unwrap_or(0) as f64,
            y: 0.0,
        }
    }

    fn result(points: Vec<ProjectedPoint>) -> ProjectionResult {
        ProjectionResult {
            algorithm: Algorithm::Mds,
            config: ProjectionConfig::default(),
            quality: 0.0,
            points,
        }
    }

    #[test]
    fn two_runs_three_patches() {
        let pts = vec![
            point("a", Some(2)),
            point("b", Some(0)),
            point("a", Some(0)),
            point("b", Some(1)),
            point("a", Some(1)),
            point("b", Some(2)),
        ];
        let curves = time_curves(&result(pts)).unwrap();
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].run, "a");
        let order: Vec<_> = curves[0].vertices.iter().map(|v| v.key.patch.unwrap()).collect();
        assert_eq!(order, vec![0, 1, 2]);
        assert!(curves.iter().all(|c| c.vertices.len() == 3));
    }

    #[test]
    fn single_run_single_curve() {
        let curves = time_curves(&result(vec![point("a", Some(0)), point("a", Some(1))])).unwrap();
        assert_eq!(curves.len(), 1);
    }

    #[test]
    fn group_mode_is_rejected() {
        assert!(time_curves(&result(vec![point("a", None)])).is_err());
    }

    #[test]
    fn point_json_shape() {
        let json = serde_json::to_string(&point("a", None)).unwrap();
        assert_eq!(json, r#"{"run":"a","patch":null,"x":0.0,"y":0.0}"#);
    }
}

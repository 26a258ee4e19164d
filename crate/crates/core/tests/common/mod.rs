#![allow(dead_code)]

use std::path::Path;

use poroviz::engine::Ensemble;
use poroviz::synth::{generate_ensemble, GeneratedRun, PhantomLayout, RunVariant};
use poroviz::GridSpec;

/// Benchmark extents at 5 cm, full 24 h at 10 min.
pub fn coarse_grid() -> GridSpec {
    GridSpec {
        x_min: 0.025,
        x_max: 2.825,
        y_min: 0.025,
        y_max: 1.225,
        dx: 0.05,
        dy: 0.05,
        t_min: 0.0,
        t_max: 86_400.0,
        dt: 600.0,
    }
}

pub fn params(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

pub fn build(dir: &Path, variants: &[RunVariant]) -> (Ensemble, Vec<GeneratedRun>) {
    let (manifest, runs) = generate_ensemble(variants, &PhantomLayout::default(), &coarse_grid(), dir).unwrap();
    (Ensemble::load(manifest).unwrap(), runs)
}

pub mod oracles;

//! Metric MDS of a run-level distance matrix, printed as the JSON document the
//! HTTP API serves.

use poroviz::metrics::MatrixMode;
use poroviz::prelude::*;
use poroviz::synth::{generate_ensemble, standard_variants, PhantomLayout};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let grid = GridSpec { dx: 0.05, dy: 0.05, x_min: 0.025, x_max: 2.825, y_min: 0.025, y_max: 1.225, ..GridSpec::canonical() };
    let (manifest, _) = generate_ensemble(&standard_variants(6, 0, 5), &PhantomLayout::default(), &grid, dir.path())?;
    let ensemble = Ensemble::load(manifest)?;

    let mut q = Query { metric: MetricConfig::new(MetricKind::Wasserstein), mode: MatrixMode::Group, ..Query::default() };
    q.projection.algorithm = Algorithm::Mds;
    q.projection.seed = 42;
    let m = ensemble.distance_matrix(&q)?;
    let res = project(&m, &q.projection)?;
    println!("normalized stress {:.3e}", res.quality);
    for p in &res.points {
        println!("  {:<6} ({:>8.4}, {:>8.4})", p.key.run, p.x, p.y);
    }
    println!("{}", ensemble.projection_json(&q)?);
    Ok(())
}

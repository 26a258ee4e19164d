//! The same pair of runs under every metric, patch by patch and as groups.

use poroviz::prelude::*;
use poroviz::synth::{generate_ensemble, standard_variants, PhantomLayout};
use poroviz::metrics::MatrixMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let grid = GridSpec { dx: 0.05, dy: 0.05, x_min: 0.025, x_max: 2.825, y_min: 0.025, y_max: 1.225, ..GridSpec::canonical() };
    let (manifest, _) = generate_ensemble(&standard_variants(3, 0, 3), &PhantomLayout::default(), &grid, dir.path())?;
    let ensemble = Ensemble::load(manifest)?;

    println!("{:<22} {:>10} {:>10} {:>10}", "metric", "d(1,2)", "d(1,3)", "d(2,3)");
    for kind in MetricKind::ALL {
        let q = Query { metric: MetricConfig::new(kind), mode: MatrixMode::Group, ..Query::default() };
        match ensemble.distance_matrix(&q) {
            Ok(m) => println!("{:<22} {:>10.4} {:>10.4} {:>10.4}", kind.name(), m.get(0, 1), m.get(0, 2), m.get(1, 2)),
            // subdivided tiles do not fit the 5 cm grid
            Err(e) => println!("{:<22} unavailable: {}", kind.name(), e.message),
        }
    }
    Ok(())
}

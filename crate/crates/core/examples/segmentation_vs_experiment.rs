//! Compare simulations with an experiment that only exists as class maps.
//! Raw fields cannot be compared to classes, so the query must be segmented.

use poroviz::metrics::MatrixMode;
use poroviz::prelude::*;
use poroviz::synth::{generate_ensemble, standard_variants, PhantomLayout, EXPERIMENT_THRESHOLD};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let grid = GridSpec { dx: 0.05, dy: 0.05, x_min: 0.025, x_max: 2.825, y_min: 0.025, y_max: 1.225, ..GridSpec::canonical() };
    let (manifest, _) = generate_ensemble(&standard_variants(3, 2, 11), &PhantomLayout::default(), &grid, dir.path())?;
    let ensemble = Ensemble::load(manifest)?;

    let raw = Query { mode: MatrixMode::Group, ..Query::default() };
    if let Err(e) = ensemble.distance_matrix(&raw) {
        println!("unsegmented: {} {} ({})", e.status, e.code, e.message);
    }

    for kind in [MetricKind::Euclidean, MetricKind::Wasserstein] {
        let q = Query { metric: MetricConfig::new(kind).segmented(EXPERIMENT_THRESHOLD), ..raw.clone() };
        let m = ensemble.distance_matrix(&q)?;
        println!("\nsegmented {}", kind.name());
        print!("{:>6}", "");
        for l in &m.labels {
            print!("{:>9}", l.run);
        }
        println!();
        for i in 0..m.len() {
            print!("{:>6}", m.labels[i].run);
            for j in 0..m.len() {
                print!("{:>9.3}", m.get(i, j));
            }
            println!();
        }
    }
    Ok(())
}

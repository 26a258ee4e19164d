//! t-SNE over every patch of every run, then one polyline per run through its
//! patches in time order.

use poroviz::prelude::*;
use poroviz::projection::time_curves;
use poroviz::synth::{generate_ensemble, standard_variants, PhantomLayout};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let grid = GridSpec { dx: 0.05, dy: 0.05, x_min: 0.025, x_max: 2.825, y_min: 0.025, y_max: 1.225, ..GridSpec::canonical() };
    let (manifest, _) = generate_ensemble(&standard_variants(3, 0, 9), &PhantomLayout::default(), &grid, dir.path())?;
    let ensemble = Ensemble::load(manifest)?;

    let mut q = Query::default();
    q.projection.algorithm = Algorithm::Tsne;
    q.projection.tsne.perplexity = 20.0;
    q.projection.seed = 3;
    let m = ensemble.distance_matrix(&q)?;
    let res = project(&m, &q.projection)?;
    println!("{} patch points, KL {:.4}", res.points.len(), res.quality);
    for curve in time_curves(&res)? {
        let length: f64 = curve
            .vertices
            .windows(2)
            .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt())
            .sum();
        let (first, last) = (&curve.vertices[0], curve.vertices.last().unwrap());
        println!(
            "  {:<6} {} vertices, path length {:>7.2}, ({:.1}, {:.1}) -> ({:.1}, {:.1})",
            curve.run, curve.vertices.len(), length, first.x, first.y, last.x, last.y
        );
    }
    Ok(())
}

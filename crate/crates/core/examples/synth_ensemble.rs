//! Write a phantom ensemble (frames, time series, embeddings, manifest) to disk.
//!
//!     cargo run --example synth_ensemble -- /tmp/phantoms [--canonical]

use poroviz::synth::{generate_ensemble, standard_variants, PhantomLayout};
use poroviz::GridSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "phantoms".into());
    let canonical = args.any(|a| a == "--canonical");
    let grid = if canonical {
        GridSpec::canonical()
    } else {
        // 5 cm cells: same extents, a fraction of the disk footprint
        GridSpec { x_min: 0.025, x_max: 2.825, y_min: 0.025, y_max: 1.225, dx: 0.05, dy: 0.05, ..GridSpec::canonical() }
    };
    let variants = standard_variants(3, 1, 7);
    let (manifest, runs) = generate_ensemble(&variants, &PhantomLayout::default(), &grid, out.as_ref())?;
    println!("{} runs on a {}x{}x{} grid -> {out}/manifest.toml", manifest.runs.len(), grid.nx(), grid.ny(), grid.nt());
    for r in &runs {
        println!("  {:<6} {:?}  subdivided embeddings: {}", r.entry.id, r.entry.kind, r.entry.embeddings_subdivided.is_some());
    }
    Ok(())
}

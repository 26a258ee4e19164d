//! Link an event time window to projected patch points and back: pick the
//! patches that overlap the spill, then report where they sit in the plot.


use poroviz::metrics::Channel;
use poroviz::prelude::*;
use poroviz::synth::{generate_ensemble, standard_variants, PhantomLayout};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let grid = GridSpec { dx: 0.05, dy: 0.05, x_min: 0.025, x_max: 2.825, y_min: 0.025, y_max: 1.225, ..GridSpec::canonical() };
    let (manifest, _) = generate_ensemble(&standard_variants(2, 0, 1), &PhantomLayout::default(), &grid, dir.path())?;
    let ensemble = Ensemble::load(manifest)?;
    let q = Query::default();
    let res = project(&*ensemble.distance_matrix(&q)?, &q.projection)?;
    let spec = q.patch_spec();

    for run in ["sim1", "sim2"] {
        let Some(t) = ensemble.first_presence(run, "B", Channel::Co2Presence, 0.001)? else {
            println!("{run}: never reaches Box B");
            continue;
        };
        let window = TimeRange::new(t * 60.0, t * 60.0 + 1.0, &grid)?;
        for k in range_to_patches(&window, &spec, &grid)? {
            let p = res.points.iter().find(|p| p.key.run == run && p.key.patch == Some(k)).expect("patch point");
            let r = patch_to_range(k, &spec, &grid)?;
            println!(
                "{run}: spill at {t} min -> patch {k} ({:.0}..{:.0} min) at ({:.3}, {:.3})",
                r.t_begin / 60.0, r.t_end / 60.0, p.x, p.y
            );
        }
    }
    Ok(())
}

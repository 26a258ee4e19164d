//! Cut a run into space-time patches and map patch indices to time ranges.

use poroviz::events::{patch_to_range, range_to_patches, TimeRange};
use poroviz::patching::{extract_patches, PatchSpec};
use poroviz::synth::{generate_run, PhantomLayout, PhantomParams};
use poroviz::GridSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = GridSpec { dx: 0.05, dy: 0.05, x_min: 0.025, x_max: 2.825, y_min: 0.025, y_max: 1.225, ..GridSpec::canonical() };
    let (volume, _) = generate_run("sim1", &PhantomParams::default(), &PhantomLayout::default(), &grid)?;

    for spec in [PatchSpec::default(), PatchSpec::embedding()] {
        let patches = extract_patches(&volume, &spec)?;
        println!("{spec:?}: {} patches of shape {:?}", patches.len(), patches[0].shape());
    }

    let spec = PatchSpec::default();
    for k in [0, 1, 47] {
        let r = patch_to_range(k, &spec, &grid)?;
        println!("patch {k:>2} covers {:.0}..{:.0} min", r.t_begin / 60.0, r.t_end / 60.0);
    }
    let window = TimeRange::new(240.0 * 60.0, 300.0 * 60.0, &grid)?;
    println!("240..300 min touches patches {:?}", range_to_patches(&window, &spec, &grid)?);
    Ok(())
}

//! When does CO2 first reach Box B? Phantoms with known spill times, detected
//! from fields, from segmentation and through the ensemble API.

use poroviz::metrics::{first_presence_time, segment, Channel, PresenceSource};
use poroviz::synth::{generate_run, PhantomLayout, PhantomParams, EXPERIMENT_THRESHOLD};
use poroviz::GridSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = GridSpec::canonical();
    let layout = PhantomLayout::default();
    let box_b = layout.boxes.iter().find(|b| b.name == "B").expect("layout has Box B");
    for minutes in [250.0, 260.0, 270.0] {
        let params = PhantomParams { spill_time: Some(minutes / 60.0), ..PhantomParams::default() };
        let (v, _) = generate_run("spill", &params, &layout, &grid)?;
        let from_field = first_presence_time(PresenceSource::Volume(&v), box_b, Channel::Co2Presence, EXPERIMENT_THRESHOLD)?;
        let seg = segment(&v, EXPERIMENT_THRESHOLD);
        let from_classes = first_presence_time(PresenceSource::Segmentation(&seg), box_b, Channel::Co2Presence, 0.0)?;
        println!("configured {minutes:>5} min: field {from_field:?}, segmentation {from_classes:?}");
    }
    let quiet = PhantomParams { spill_time: None, ..PhantomParams::default() };
    let (v, _) = generate_run("quiet", &quiet, &layout, &grid)?;
    println!(
        "no spill: {:?}",
        first_presence_time(PresenceSource::Volume(&v), box_b, Channel::Co2Presence, EXPERIMENT_THRESHOLD)?
    );
    Ok(())
}

//! Align irregular frame sets onto the canonical time axis and show how gaps
//! are filled.

use poroviz::ingest::{align_volume, RawFrame, Sample};
use poroviz::GridSpec;

fn frame(grid: &GridSpec, minutes: f64, level: f32) -> RawFrame {
    let samples = (0..grid.ny())
        .flat_map(|j| (0..grid.nx()).map(move |i| (i, j)))
        .map(|(i, j)| Sample { x: grid.x_at(i), y: grid.y_at(j), saturation: level, concentration: level / 2.0 })
        .collect();
    RawFrame { time: minutes * 60.0, samples }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = GridSpec { x_max: 0.195, y_max: 0.095, t_max: 6_000.0, ..GridSpec::canonical() };
    // nothing before 30 min, a dropped frame at 50 min, one off-axis timestamp
    let frames = vec![
        frame(&grid, 30.0, 0.3),
        frame(&grid, 40.0, 0.4),
        frame(&grid, 60.0, 0.6),
        frame(&grid, 73.0, 0.7),
        frame(&grid, 80.0, 0.8),
        frame(&grid, 90.0, 0.9),
        frame(&grid, 100.0, 1.0),
    ];
    let v = align_volume("demo", &frames, &grid)?;
    println!("{} steps of {}x{} cells", grid.nt(), grid.nx(), grid.ny());
    for (k, flag) in v.provenance.iter().enumerate() {
        println!("  t={:>5} min  s={:.2}  {:?}", grid.t_at(k) / 60.0, v.saturation[[k, 0, 0]], flag);
    }
    Ok(())
}

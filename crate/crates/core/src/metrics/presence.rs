use ndarray::s;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::Region;
use crate::volume::{class, SegmentationVolume, SpaceTimeVolume};

/// Quantity tested for presence inside a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Saturation,
    Concentration,
    /// Gaseous CO2 (saturation above threshold, or segmentation class 2).
    GasPresence,
    /// Any CO2 (gas or dissolved above threshold, or segmentation class >= 1).
    Co2Presence,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Saturation => "saturation",
            Channel::Concentration => "concentration",
            Channel::GasPresence => "gas_presence",
            Channel::Co2Presence => "co2_presence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Channel::Saturation,
            Channel::Concentration,
            Channel::GasPresence,
            Channel::Co2Presence,
        ]
        .into_iter()
        .find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PresenceSource<'a> {
    Volume(&'a SpaceTimeVolume),
    Segmentation(&'a SegmentationVolume),
}

/// Earliest canonical time, in minutes, at which any cell of `region` shows
/// `channel`. Scalar channels compare against `threshold`; segmentation maps
/// are tested by class and ignore it. `None` if it never happens.
pub fn first_presence_time(
    source: PresenceSource<'_>,
    region: &Region,
    channel: Channel,
    threshold: f64,
) -> Result<Option<f64>> {
    let (grid, nt) = match source {
        PresenceSource::Volume(v) => (v.grid, v.nt()),
        PresenceSource::Segmentation(s) => (s.grid, s.nt()),
    };
    let w = region.cells(&grid)?;
    let hit = |k: usize| -> bool {
        match source {
            PresenceSource::Volume(v) => {
                let sat = v.saturation.slice(s![k, w.y0..w.y1, w.x0..w.x1]);
                let con = v.concentration.slice(s![k, w.y0..w.y1, w.x0..w.x1]);
                let above = |x: &f32| *x as f64 > threshold;
                match channel {
                    Channel::Saturation | Channel::GasPresence => sat.iter().any(above),
                    Channel::Concentration => con.iter().any(above),
                    Channel::Co2Presence => sat.iter().any(above) || con.iter().any(above),
                }
            }
            PresenceSource::Segmentation(seg) => {
                let cls = seg.classes.slice(s![k, w.y0..w.y1, w.x0..w.x1]);
                match channel {
                    Channel::Saturation | Channel::GasPresence => cls.iter().any(|&c| c == class::GAS),
                    Channel::Concentration | Channel::Co2Presence => {
                        cls.iter().any(|&c| c >= class::DISSOLVED)
                    }
                }
            }
        }
    };
    Ok((0..nt).find(|&k| hit(k)).map(|k| grid.t_at(k) / 60.0))
}

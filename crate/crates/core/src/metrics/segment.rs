use ndarray::{Array3, Zip};

use crate::volume::{class, SegmentationVolume, SpaceTimeVolume};

/// Classify every cell: gas if saturation exceeds `threshold`, else dissolved
/// if concentration does, else water.
pub fn segment(volume: &SpaceTimeVolume, threshold: f64) -> SegmentationVolume {
    let mut classes = Array3::<u8>::zeros(volume.saturation.dim());
    Zip::from(&mut classes)
        .and(&volume.saturation)
        .and(&volume.concentration)
        .for_each(|c, &s, &k| {
            *c = if s as f64 > threshold {
                class::GAS
            } else if k as f64 > threshold {
                class::DISSOLVED
            } else {
                class::WATER
            };
        });
    SegmentationVolume {
        run_id: volume.run_id.clone(),
        grid: volume.grid,
        classes,
        provenance: volume.provenance.clone(),
    }
}

/// Binary indicator fields derived from a segmentation. They take the places of
/// saturation and concentration in every metric.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationChannels {
    /// 1 where class is gas.
    pub gas_presence: Array3<f32>,
    /// 1 where class is dissolved or gas.
    pub co2_presence: Array3<f32>,
}

pub fn segmentation_channels(seg: &SegmentationVolume) -> SegmentationChannels {
    let gas_presence = seg.classes.mapv(|c| if c == class::GAS { 1.0 } else { 0.0 });
    let co2_presence = seg.classes.mapv(|c| if c >= class::DISSOLVED { 1.0 } else { 0.0 });
    SegmentationChannels {
        gas_presence,
        co2_presence,
    }
}

impl SegmentationChannels {
    /// Invert the indicator encoding.
    pub fn classes(&self) -> Array3<u8> {
        let mut out = Array3::<u8>::zeros(self.gas_presence.dim());
        Zip::from(&mut out)
            .and(&self.gas_presence)
            .and(&self.co2_presence)
            .for_each(|c, &g, &p| {
                *c = if g > 0.5 {
                    class::GAS
                } else if p > 0.5 {
                    class::DISSOLVED
                } else {
                    class::WATER
                }
            });
        out
    }
}

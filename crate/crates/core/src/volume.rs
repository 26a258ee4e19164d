//! Dense aligned volumes, indexed `[t][y][x]`.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// How a canonical time step was populated during alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillFlag {
    Measured,
    Repeated,
    ZeroFilled,
}

/// Saturation and concentration of one run on the canonical grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeVolume {
    pub run_id: String,
    pub grid: GridSpec,
    /// Gas-phase volume fraction, dimensionless in [0, 1].
    pub saturation: Array3<f32>,
    /// Dissolved CO2 per liquid volume, kg/m^3.
    pub concentration: Array3<f32>,
    pub provenance: Vec<FillFlag>,
}

impl SpaceTimeVolume {
    pub fn zeros(run_id: impl Into<String>, grid: GridSpec) -> Result<Self> {
        let shape = grid.dims()?;
        Ok(SpaceTimeVolume {
            run_id: run_id.into(),
            grid,
            saturation: Array3::zeros(shape),
            concentration: Array3::zeros(shape),
            provenance: vec![FillFlag::ZeroFilled; shape.0],
        })
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.grid.dims()?;
        let want = [shape.0, shape.1, shape.2];
        if self.saturation.shape() != want || self.concentration.shape() != want {
            return Err(Error::Shape(format!(
                "run {}: arrays {:?}/{:?} do not match grid {:?}",
                self.run_id,
                self.saturation.shape(),
                self.concentration.shape(),
                want
            )));
        }
        if self.provenance.len() != shape.0 {
            return Err(Error::Shape(format!(
                "run {}: {} provenance flags for {} steps",
                self.run_id,
                self.provenance.len(),
                shape.0
            )));
        }
        Ok(())
    }

    pub fn nt(&self) -> usize {
        self.saturation.shape()[0]
    }
}

/// Ternary classes of a segmentation map.
pub mod class {
    pub const WATER: u8 = 0;
    pub const DISSOLVED: u8 = 1;
    pub const GAS: u8 = 2;
}

/// Per-cell classes {0: water, 1: dissolved CO2, 2: gaseous CO2}.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationVolume {
    pub run_id: String,
    pub grid: GridSpec,
    pub classes: Array3<u8>,
    pub provenance: Vec<FillFlag>,
}

impl SegmentationVolume {
    pub fn nt(&self) -> usize {
        self.classes.shape()[0]
    }
}

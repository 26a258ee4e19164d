//! Ensemble analysis for 2-D plus time porous-media CO2 simulations and
//! experiments: ingest onto a common space-time grid, cut runs into patches,
//! compare patches and runs under several metrics, project distance matrices
//! to 2-D and map between patches and time ranges for linked views.
//!
//! ```no_run
//! use poroviz::prelude::*;
//!
//! let manifest = Manifest::load("data/manifest.toml".as_ref())?;
//! let ensemble = Ensemble::load(manifest)?;
//! let query = Query::default();
//! let doc = ensemble.projection_json(&query)?;
//! println!("{doc}");
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod events;
pub mod grid;
pub mod ingest;
pub mod metrics;
pub mod patching;
pub mod projection;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use grid::{CellWindow, GridSpec, Region};
pub use volume::{FillFlag, SegmentationVolume, SpaceTimeVolume};

pub mod prelude {
    pub use crate::engine::{Ensemble, Query};
    pub use crate::error::{Error, Result};
    pub use crate::events::{patch_to_range, range_to_patches, TimeRange};
    pub use crate::grid::{GridSpec, Region};
    pub use crate::ingest::{Manifest, RunEntry, RunKind};
    pub use crate::metrics::{
        group_distance_matrix, patch_distance_matrix, DistanceMatrix, MetricConfig, MetricKind, RunFields, Variable,
    };
    pub use crate::patching::{extract_patches, PatchSpec};
    pub use crate::projection::{project, Algorithm, ProjectionConfig, ProjectionResult};
    pub use crate::volume::{SegmentationVolume, SpaceTimeVolume};
}

//! Patch distances, segmentation of simulation fields, and distance matrices.

mod distance;
mod matrix;
mod presence;
mod segment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use distance::{dist_embedding, dist_lp, dist_wasserstein, histogram_cdf, w1_from_cdfs};
pub use matrix::{
    group_distance_matrix, patch_distance_matrix, DistanceMatrix, ItemKey, MatrixMode, RunFields,
    PMDM_MAGIC, PMDM_VERSION,
};
pub use presence::{first_presence_time, Channel, PresenceSource};
pub use segment::{segment, segmentation_channels, SegmentationChannels};

pub use crate::volume::SegmentationVolume;

/// Threshold above which a cell counts as containing CO2.
pub const DEFAULT_SEGMENTATION_THRESHOLD: f64 = 0.001;
pub const DEFAULT_HISTOGRAM_BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Euclidean,
    Manhattan,
    Wasserstein,
    Embedding,
    EmbeddingSubdivided,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Euclidean,
        MetricKind::Manhattan,
        MetricKind::Wasserstein,
        MetricKind::Embedding,
        MetricKind::EmbeddingSubdivided,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Euclidean => "euclidean",
            MetricKind::Manhattan => "manhattan",
            MetricKind::Wasserstein => "wasserstein",
            MetricKind::Embedding => "embedding",
            MetricKind::EmbeddingSubdivided => "embedding_subdivided",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn uses_embeddings(self) -> bool {
        matches!(self, MetricKind::Embedding | MetricKind::EmbeddingSubdivided)
    }
}

/// Which field(s) a metric compares. For segmented data the two binary
/// channels stand in for saturation and concentration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Saturation,
    Concentration,
    Both,
}

impl Variable {
    pub fn name(self) -> &'static str {
        match self {
            Variable::Saturation => "saturation",
            Variable::Concentration => "concentration",
            Variable::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Variable::Saturation, Variable::Concentration, Variable::Both]
            .into_iter()
            .find(|v| v.name() == s)
    }

    pub(crate) fn includes_saturation(self) -> bool {
        matches!(self, Variable::Saturation | Variable::Both)
    }

    pub(crate) fn includes_concentration(self) -> bool {
        matches!(self, Variable::Concentration | Variable::Both)
    }
}

/// Histogram binning range for the Wasserstein metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum HistogramRange {
    /// Saturation over [0, 1], concentration over [0, max of the compared runs].
    Global,
    Fixed {
        saturation: (f64, f64),
        concentration: (f64, f64),
    },
    /// Min to max over the two patches being compared.
    PerPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub kind: MetricKind,
    pub variable: Variable,
    pub segmented: bool,
    pub segmentation_threshold: f64,
    pub histogram_bins: usize,
    pub histogram_range: HistogramRange,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            kind: MetricKind::Euclidean,
            variable: Variable::Both,
            segmented: false,
            segmentation_threshold: DEFAULT_SEGMENTATION_THRESHOLD,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            histogram_range: HistogramRange::Global,
        }
    }
}

impl MetricConfig {
    pub fn new(kind: MetricKind) -> Self {
        MetricConfig {
            kind,
            ..Self::default()
        }
    }

    pub fn segmented(mut self, threshold: f64) -> Self {
        self.segmented = true;
        self.segmentation_threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.segmentation_threshold >= 0.0 && self.segmentation_threshold.is_finite()) {
            return Err(Error::Config(format!(
                "segmentation threshold must be >= 0, got {}",
                self.segmentation_threshold
            )));
        }
        if self.histogram_bins < 2 {
            return Err(Error::Config(format!(
                "histogram needs at least 2 bins, got {}",
                self.histogram_bins
            )));
        }
        if let HistogramRange::Fixed {
            saturation,
            concentration,
        } = self.histogram_range
        {
            for (name, (lo, hi)) in [("saturation", saturation), ("concentration", concentration)] {
                if !(lo < hi) {
                    return Err(Error::Config(format!(
                        "{name} histogram range requires lo < hi, got ({lo}, {hi})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stable identity string, used as a cache key.
    pub fn key(&self) -> String {
        serde_json::to_string(self).expect("metric config serializes")
    }
}

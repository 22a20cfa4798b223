//! Dataset augmentation that spreads object positions, contexts, brightness
//! and object counts: spatial coverage crops, mosaics, brightness jitter and
//! multi-object composites, with a provenance manifest.

mod corpus;
mod coverage;
mod image;
mod mosaic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::corpus::{
    augment_corpus, read_backgrounds, read_corpus, write_corpus, AugmentOutput, Manifest, ManifestEntry, Skipped,
    VariantKind,
};
pub use self::coverage::{
    spatial_coverage, spatial_coverage_at, window_labels, Collage, CollationMode, CoverageOutcome, STRICT_HEIGHT,
    STRICT_WIDTH,
};
pub use self::image::{format_labels, parse_labels, LabeledBox, LabeledImage, Rgb8Image};
pub use self::mosaic::{brightness_jitter, mosaic, mosaic_with, random_cell_params, CellParams, CellTransform};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("{id}: box {label:?} is not inside the {width}x{height} raster")]
    BoxOutside { id: String, label: LabeledBox, width: usize, height: usize },
    #[error("object {width}x{height} does not fit a {target}x{target} window")]
    ObjectTooLarge { width: u32, height: u32, target: usize },
    #[error("collation needs a background image but the pool is empty")]
    EmptyBackgroundPool,
    #[error("source {width}x{height} too small: 3 x min side must be >= target {target}")]
    SourceTooSmall { width: usize, height: usize, target: usize },
    #[error("source is {width}x{height}; strict mode needs 1920x1080 (enable relaxed mode for other sizes)")]
    StrictSize { width: usize, height: usize },
    #[error("mosaic needs {needed} samples, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },
    #[error("{id}: {width}x{height} cannot provide a {cell}x{cell} cell")]
    CellTooSmall { id: String, width: usize, height: usize, cell: usize },
    #[error("labels: {0}")]
    Labels(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(String),
}

/// Which variants `augment_corpus` emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Coverage,
    Mosaic,
    Brightness,
    MultiObject,
    #[default]
    All,
}

impl std::str::FromStr for AugmentMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "coverage" => Ok(Self::Coverage),
            "mosaic" => Ok(Self::Mosaic),
            "brightness" => Ok(Self::Brightness),
            "multi_object" | "multi" => Ok(Self::MultiObject),
            "all" => Ok(Self::All),
            _ => Err(format!("unknown mode `{s}` (expected coverage, mosaic, brightness, multi-object or all)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Side of the square outputs.
    pub target_size: usize,
    pub seed: u64,
    /// Inclusive range of value-channel shifts.
    pub brightness_range: (i32, i32),
    /// Side of a mosaic cell; mosaics are `2 × cell_size` square.
    pub cell_size: usize,
    /// Outputs per source image.
    pub multiplier: usize,
    pub mode: AugmentMode,
    pub collation: CollationMode,
    /// Accept any source with `3 × min side >= target_size` instead of only 1920×1080.
    pub relaxed: bool,
    /// Partially cropped labels are kept when at least this fraction stays visible.
    pub min_visible: f64,
    /// Multi-object composites cycle through `0..=max_objects` objects.
    pub max_objects: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            target_size: 640,
            seed: 0,
            brightness_range: (-40, 40),
            cell_size: 320,
            multiplier: 3,
            mode: AugmentMode::All,
            collation: CollationMode::Background,
            relaxed: true,
            min_visible: 0.5,
            max_objects: 4,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::InvalidConfig(m));
        if self.target_size == 0 || self.cell_size == 0 {
            return bad("target and cell sizes must be >= 1".into());
        }
        if self.brightness_range.0 > self.brightness_range.1 {
            return bad(format!("empty brightness range {:?}", self.brightness_range));
        }
        if !(0.0..=1.0).contains(&self.min_visible) || self.min_visible == 0.0 {
            return bad(format!("min_visible {} must be in (0, 1]", self.min_visible));
        }
        Ok(())
    }
}

//! Training data: a synthetic coil generator labelled by a closed-form
//! physics oracle, and ingestion of user images through PGM files and a
//! JSON-lines manifest.

mod generate;
mod manifest;
mod oracle;
mod pgm;
mod raster;

pub use generate::{
    coil_id, coil_seed, generate_coil, generate_dataset, GeneratedCoil, CORE_MU_RANGE, DEFAULT_FREQUENCIES,
    DEFAULT_NUM_COILS, INDUCTANCE_BAND, MIN_INK_FRACTION, MIN_INNER_FRACTION, OUTER_DIAMETER_RANGE, QUALITY_BAND,
    TURNS_RANGE, WIRE_RADIUS_RANGE,
};
pub use manifest::{load_dataset, write_dataset, DatasetManifest, ManifestRecord, Provenance, MANIFEST_FILE};
pub use oracle::{
    ac_resistance, oracle_inductance, oracle_quality, skin_depth, CoilGeometry, CoilShape, CORE_LOSS_FACTOR,
    COPPER_RESISTIVITY, MU0,
};
pub use pgm::{decode_pgm, encode_pgm, load_image, resize_to_64, save_image};
pub use raster::{ink_fraction, rasterize, CANVAS_SIDE, FIELD_OF_VIEW};

use crate::error::{Error, Result};
use crate::model::IMAGE_SIDE;
use crate::tensor::Tensor;

/// One `(image, frequency)` pair with its measured or simulated labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `[1, 64, 64]`, pixels in `[0, 1]`.
    pub image: Tensor,
    pub freq_hz: f64,
    pub inductance_h: f64,
    pub quality: f64,
    pub coil_id: String,
}

impl Sample {
    pub fn new(image: Tensor, freq_hz: f64, inductance_h: f64, quality: f64, coil_id: impl Into<String>) -> Result<Self> {
        let s = Self {
            image,
            freq_hz,
            inductance_h,
            quality,
            coil_id: coil_id.into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.image.expect_shape("Sample", &[1, IMAGE_SIDE, IMAGE_SIDE])?;
        if !self.image.data().iter().all(|p| (0.0..=1.0).contains(p)) {
            return Err(Error::invalid("Sample", "pixel values must lie in [0, 1]"));
        }
        for (name, v) in [
            ("frequency", self.freq_hz),
            ("inductance label", self.inductance_h),
            ("quality label", self.quality),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid("Sample", format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

//! Seeded synthetic coil datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, ManifestRecord, Provenance};
use super::oracle::{oracle_inductance, oracle_quality, CoilGeometry, CoilShape, COPPER_RESISTIVITY};
use super::raster::{ink_fraction, rasterize};
use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_NUM_COILS: usize = 20;
pub const DEFAULT_FREQUENCIES: [f64; 5] = [85e3, 200e3, 1e6, 6.78e6, 13.56e6];

pub const TURNS_RANGE: (u32, u32) = (1, 12);
pub const OUTER_DIAMETER_RANGE: (f64, f64) = (10e-3, 60e-3);
pub const WIRE_RADIUS_RANGE: (f64, f64) = (0.1e-3, 1.5e-3);
/// Smallest inner diameter, as a fraction of the outer one.
pub const MIN_INNER_FRACTION: f64 = 0.2;
pub const CORE_MU_RANGE: (f64, f64) = (2.0, 6.0);
/// Accepted labels, checked at every frequency of the grid.
pub const INDUCTANCE_BAND: (f64, f64) = (10e-9, 100e-6);
pub const QUALITY_BAND: (f64, f64) = (1.0, 2000.0);
/// Smallest accepted share of non-background pixels.
pub const MIN_INK_FRACTION: f64 = 0.01;

/// One synthetic coil.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCoil {
    pub index: usize,
    pub coil_id: String,
    pub render_seed: u64,
    pub geometry: CoilGeometry,
    pub image: Tensor,
}

pub fn coil_id(index: usize) -> String {
    format!("coil_{index:03}")
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of coil `index`, independent of how many coils are generated or in
/// which order.
pub fn coil_seed(seed: u64, index: usize) -> u64 {
    splitmix64(splitmix64(seed) ^ index as u64)
}

/// Draws geometries from the documented ranges until one fits physically,
/// has labels inside the accepted bands at every frequency, and renders to
/// a visible image.
pub fn generate_coil(seed: u64, index: usize, freqs: &[f64]) -> Result<GeneratedCoil> {
    check_frequencies(freqs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(coil_seed(seed, index));
    loop {
        let Some(geometry) = draw_geometry(&mut rng) else {
            continue;
        };
        if !labels_in_band(&geometry, freqs)? {
            continue;
        }
        let render_seed: u64 = rng.gen();
        let image = rasterize(&geometry, render_seed)?;
        if ink_fraction(&image) < MIN_INK_FRACTION {
            continue;
        }
        return Ok(GeneratedCoil {
            index,
            coil_id: coil_id(index),
            render_seed,
            geometry,
            image,
        });
    }
}

fn draw_geometry(rng: &mut ChaCha8Rng) -> Option<CoilGeometry> {
    let shape = if rng.gen_bool(0.5) { CoilShape::Circular } else { CoilShape::Square };
    let turns = rng.gen_range(TURNS_RANGE.0..=TURNS_RANGE.1);
    let outer_diameter = rng.gen_range(OUTER_DIAMETER_RANGE.0..=OUTER_DIAMETER_RANGE.1);
    let wire_radius = rng.gen_range(WIRE_RADIUS_RANGE.0..=WIRE_RADIUS_RANGE.1);
    let has_core = rng.gen_bool(0.5);
    let core_mu_eff = if has_core {
        rng.gen_range(CORE_MU_RANGE.0..=CORE_MU_RANGE.1)
    } else {
        1.0
    };
    let lo = MIN_INNER_FRACTION * outer_diameter;
    let hi = outer_diameter - 4.0 * wire_radius * turns as f64;
    if hi <= lo {
        return None;
    }
    let inner_diameter = rng.gen_range(lo..=hi);
    let g = CoilGeometry {
        shape,
        turns,
        outer_diameter,
        inner_diameter,
        wire_radius,
        has_core,
        core_mu_eff,
        resistivity: COPPER_RESISTIVITY,
    };
    g.validate().is_ok().then_some(g)
}

fn labels_in_band(g: &CoilGeometry, freqs: &[f64]) -> Result<bool> {
    let l = oracle_inductance(g)?;
    if !(INDUCTANCE_BAND.0..=INDUCTANCE_BAND.1).contains(&l) {
        return Ok(false);
    }
    for &f in freqs {
        let q = oracle_quality(g, f)?;
        if !(QUALITY_BAND.0..=QUALITY_BAND.1).contains(&q) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn check_frequencies(freqs: &[f64]) -> Result<()> {
    if freqs.is_empty() {
        return Err(Error::invalid("generate_dataset", "no frequencies given"));
    }
    if let Some(f) = freqs.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
        return Err(Error::invalid("generate_dataset", format!("frequency must be positive, got {f}")));
    }
    Ok(())
}

/// `num_coils × freqs.len()` samples, coil-major, with one image per coil
/// stored as `images/<coil_id>.pgm` in the manifest.
pub fn generate_dataset(num_coils: usize, freqs: &[f64], seed: u64) -> Result<(Vec<Sample>, DatasetManifest)> {
    if num_coils == 0 {
        return Err(Error::invalid("generate_dataset", "need at least one coil"));
    }
    check_frequencies(freqs)?;
    let mut samples = Vec::with_capacity(num_coils * freqs.len());
    let mut records = Vec::with_capacity(num_coils * freqs.len());
    for index in 0..num_coils {
        let coil = generate_coil(seed, index, freqs)?;
        let inductance = oracle_inductance(&coil.geometry)?;
        for &f in freqs {
            let quality = oracle_quality(&coil.geometry, f)?;
            samples.push(Sample::new(coil.image.clone(), f, inductance, quality, coil.coil_id.clone())?);
            records.push(ManifestRecord {
                image: format!("images/{}.pgm", coil.coil_id),
                coil_id: coil.coil_id.clone(),
                freq_hz: f,
                inductance_h: inductance,
                quality,
                provenance: Some(Provenance {
                    generator_seed: seed,
                    coil_index: index,
                    render_seed: coil.render_seed,
                    geometry: coil.geometry,
                }),
            });
        }
    }
    Ok((samples, DatasetManifest { records }))
}

//! JSON-lines dataset manifest: one `(image, coil, frequency, labels)` row
//! per line, image paths relative to the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::oracle::CoilGeometry;
use super::pgm::{load_image, resize_to_64, save_image};
use super::Sample;
use crate::error::{Error, Result};
use crate::model::IMAGE_SIDE;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image: String,
    pub coil_id: String,
    pub freq_hz: f64,
    #[serde(rename = "L_h")]
    pub inductance_h: f64,
    #[serde(rename = "Q")]
    pub quality: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// How a synthetic row was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub generator_seed: u64,
    pub coil_index: usize,
    pub render_seed: u64,
    pub geometry: CoilGeometry,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("manifest rows always serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses JSON lines; blank lines are skipped. `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Manifest {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let r: ManifestRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            for (name, v) in [("freq_hz", r.freq_hz), ("L_h", r.inductance_h), ("Q", r.quality)] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(err(format!("{name} must be positive and finite, got {v}")));
                }
            }
            if r.image.is_empty() {
                return Err(err("empty image path".into()));
            }
            records.push(r);
        }
        if records.is_empty() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: 0,
                msg: "manifest has no records".into(),
            });
        }
        Ok(Self { records })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Loads every row as a [`Sample`], resizing larger images to 64×64.
    /// Each distinct image file is decoded once.
    pub fn load_samples(&self, manifest_path: &Path) -> Result<Vec<Sample>> {
        let base = manifest_path.parent().unwrap_or(Path::new(""));
        let mut images: BTreeMap<&str, Tensor> = BTreeMap::new();
        let mut samples = Vec::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            let err = |msg: String| Error::Manifest {
                path: manifest_path.to_path_buf(),
                line: i + 1,
                msg,
            };
            if !images.contains_key(r.image.as_str()) {
                let file = base.join(&r.image);
                let img = load_image(&file).and_then(|img| fit_to_input(&img));
                images.insert(&r.image, img.map_err(|e| err(format!("image {}: {e}", file.display())))?);
            }
            let sample = Sample::new(
                images[r.image.as_str()].clone(),
                r.freq_hz,
                r.inductance_h,
                r.quality,
                r.coil_id.clone(),
            )
            .map_err(|e| err(e.to_string()))?;
            samples.push(sample);
        }
        Ok(samples)
    }
}

fn fit_to_input(img: &Tensor) -> Result<Tensor> {
    if img.shape() == [1, IMAGE_SIDE, IMAGE_SIDE] {
        Ok(img.clone())
    } else {
        resize_to_64(img)
    }
}

/// Reads a manifest and all the images it references.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = manifest_path.as_ref();
    DatasetManifest::read(path)?.load_samples(path)
}

/// Writes the images of `samples` to the paths named by the matching
/// manifest rows, then the manifest itself as `out_dir/manifest.jsonl`.
/// Returns the manifest path.
pub fn write_dataset(out_dir: impl AsRef<Path>, samples: &[Sample], manifest: &DatasetManifest) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    if samples.len() != manifest.records.len() {
        return Err(Error::invalid(
            "write_dataset",
            format!("{} samples but {} manifest rows", samples.len(), manifest.records.len()),
        ));
    }
    let mut written = BTreeSet::new();
    for (s, r) in samples.iter().zip(&manifest.records) {
        if written.insert(r.image.as_str()) {
            let file = out_dir.join(&r.image);
            if let Some(dir) = file.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
            }
            save_image(&s.image, &file)?;
        }
    }
    let path = out_dir.join(MANIFEST_FILE);
    manifest.write(&path)?;
    Ok(path)
}

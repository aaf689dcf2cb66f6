//! Checkpoints: a JSON manifest next to a little-endian fp32 blob.

use std::path::Path;

use radloc::{Detector32, Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::formats::{read_json, write_file, write_json};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const BLOB: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: RunConfig,
    pub seed: u64,
    pub samples_per_ray: usize,
    pub parameters: Vec<ParamEntry>,
    /// Mean training loss recorded in the last epoch.
    pub final_epoch_loss: Option<f64>,
    /// Mean loss of the final parameters over the training views.
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub detector: Detector32,
}

impl Checkpoint {
    pub fn new(
        config: RunConfig,
        detector: Detector32,
        final_epoch_loss: Option<f64>,
        final_loss: Option<f64>,
    ) -> Self {
        let parameters = detector
            .params
            .iter()
            .map(|p| ParamEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), dtype: "f32".into() })
            .collect();
        Self {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                seed: config.seed(),
                samples_per_ray: detector.samples_per_ray,
                config,
                parameters,
                final_epoch_loss,
                final_loss,
            },
            detector,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut blob = Vec::with_capacity(self.detector.params.num_scalars() * 4);
        for p in self.detector.params.iter() {
            for v in p.value.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_file(&dir.join(BLOB), &blob)?;
        write_json(&dir.join(MANIFEST), &self.manifest)
    }

    /// Rebuilds the detector from the manifest's config and overwrites every
    /// parameter with the stored values.
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let raw: serde_json::Value = read_json(&mpath)?;
        let version = raw.get("format_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(FORMAT_VERSION)) {
            return Err(Error::Format {
                path: mpath,
                detail: format!("checkpoint format version {version:?}, expected {FORMAT_VERSION}"),
            });
        }
        let manifest: Manifest =
            serde_json::from_value(raw).map_err(|e| Error::Format { path: mpath.clone(), detail: e.to_string() })?;
        let bpath = dir.join(BLOB);
        let blob = std::fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
        let bad = |detail: String| Error::Format { path: bpath.clone(), detail };

        let mut detector = Detector32::new(manifest.config.model.clone(), manifest.samples_per_ray, manifest.seed)?;
        if detector.params.len() != manifest.parameters.len() {
            return Err(bad(format!(
                "manifest lists {} parameters, model has {}",
                manifest.parameters.len(),
                detector.params.len()
            )));
        }
        let expected: usize = manifest.parameters.iter().map(|p| p.shape.iter().product::<usize>()).sum();
        if blob.len() != expected * 4 {
            return Err(bad(format!("blob has {} bytes, expected {}", blob.len(), expected * 4)));
        }
        let mut offset = 0;
        for (p, entry) in detector.params.iter_mut().zip(&manifest.parameters) {
            if p.name != entry.name || p.value.shape() != entry.shape.as_slice() || entry.dtype != "f32" {
                return Err(bad(format!("parameter {} does not match the model layout", entry.name)));
            }
            for v in p.value.data_mut() {
                *v = f32::from_le_bytes(blob[offset..offset + 4].try_into().expect("4 bytes"));
                offset += 4;
            }
        }
        Ok(Self { manifest, detector })
    }
}

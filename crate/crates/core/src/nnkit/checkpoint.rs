//! Parameter checkpoints: a JSON manifest plus a little-endian `f32` blob.
//!
//! The manifest lists every layer with its [`LayerSpec`] and, for each
//! parameter tensor, its shape and the byte range it occupies in the blob.
//! Values are stored as `f32`, so a restored model matches the saved one to
//! single precision.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Parameterized, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "neurotok-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Length in bytes.
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub spec: LayerSpec,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub blob: String,
    pub hyperparameters: serde_json::Value,
    pub layers: Vec<LayerEntry>,
}

/// Collects layers before writing them out with [`CheckpointWriter::save`].
#[derive(Debug, Default)]
pub struct CheckpointWriter {
    layers: Vec<LayerEntry>,
    blob: Vec<u8>,
}

impl CheckpointWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, layer: &dyn Parameterized) -> &mut Self {
        let tensors = layer
            .params()
            .into_iter()
            .zip(layer.param_names())
            .map(|(t, pname)| {
                let offset = self.blob.len() as u64;
                for &v in t.data() {
                    self.blob.extend_from_slice(&(v as f32).to_le_bytes());
                }
                TensorEntry {
                    name: pname.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                    length: self.blob.len() as u64 - offset,
                }
            })
            .collect();
        self.layers.push(LayerEntry {
            name: name.to_string(),
            spec: layer.spec(),
            tensors,
        });
        self
    }

    /// Writes `path` (manifest) and a sibling `.bin` blob.
    pub fn save(&self, path: &Path, hyperparameters: serde_json::Value) -> Result<()> {
        let blob_path = path.with_extension("bin");
        let blob = blob_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Format(format!("cannot derive blob name from {}", path.display())))?
            .to_string();
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.to_string(),
            blob,
            hyperparameters,
            layers: self.layers.clone(),
        };
        fs::write(&blob_path, &self.blob)?;
        fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    manifest: Manifest,
    blob: Vec<u8>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format {:?}", manifest.format)));
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(PathBuf::new);
        let blob = fs::read(dir.join(&manifest.blob))?;
        for layer in &manifest.layers {
            for t in &layer.tensors {
                let want = t.shape.iter().product::<usize>() as u64 * 4;
                if t.length != want || t.offset.checked_add(t.length).is_none_or(|end| end > blob.len() as u64) {
                    return Err(Error::Format(format!("tensor {}/{} has a bad byte range", layer.name, t.name)));
                }
            }
        }
        Ok(Self { manifest, blob })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn hyperparameters(&self) -> &serde_json::Value {
        &self.manifest.hyperparameters
    }

    pub fn layer(&self, name: &str) -> Result<&LayerEntry> {
        self.manifest
            .layers
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no layer {name:?}")))
    }

    pub fn tensor(&self, entry: &TensorEntry) -> Tensor {
        let bytes = &self.blob[entry.offset as usize..(entry.offset + entry.length) as usize];
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Tensor::new(entry.shape.clone(), data).expect("validated on load")
    }

    /// Copies the stored parameters of layer `name` into `layer`.
    pub fn restore(&self, name: &str, layer: &mut dyn Parameterized) -> Result<()> {
        let entry = self.layer(name)?;
        if entry.spec != layer.spec() {
            return Err(Error::Format(format!(
                "layer {name:?} is {:?} in the checkpoint but {:?} in the model",
                entry.spec,
                layer.spec()
            )));
        }
        let mut params = layer.params_mut();
        if params.len() != entry.tensors.len() {
            return Err(Error::Format(format!("layer {name:?} parameter count differs")));
        }
        for (p, t) in params.iter_mut().zip(&entry.tensors) {
            if p.shape() != t.shape.as_slice() {
                return Err(Error::Format(format!("tensor {name}/{} shape differs", t.name)));
            }
            **p = self.tensor(t);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::{Dense, Gru, LayerNorm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_to_single_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gru = Gru::new(1, 4, &mut rng);
        let dense = Dense::new(4, 3, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        CheckpointWriter::new()
            .add("gru", &gru)
            .add("head", &dense)
            .save(&path, serde_json::json!({"hidden": 4}))
            .unwrap();
        assert!(dir.path().join("model.bin").exists());

        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.hyperparameters()["hidden"], 4);
        let mut gru2 = Gru::zeros(1, 4);
        let mut dense2 = Dense::zeros(4, 3);
        ck.restore("gru", &mut gru2).unwrap();
        ck.restore("head", &mut dense2).unwrap();
        for (a, b) in gru.params().iter().chain(dense.params().iter()).zip(gru2.params().iter().chain(dense2.params().iter())) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
    }

    #[test]
    fn mismatched_layers_rejected() {
        let ln = LayerNorm::new(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        CheckpointWriter::new().add("ln", &ln).save(&path, serde_json::Value::Null).unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert!(ck.restore("ln", &mut LayerNorm::new(4)).is_err());
        assert!(ck.restore("missing", &mut LayerNorm::new(3)).is_err());
    }

    #[test]
    fn truncated_blob_rejected() {
        let ln = LayerNorm::new(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        CheckpointWriter::new().add("ln", &ln).save(&path, serde_json::Value::Null).unwrap();
        fs::write(dir.path().join("ck.bin"), [0u8; 5]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Format(_))));
    }
}

//! Checkpoint file: `REFRECK1`, a little-endian `u64` manifest length, the
//! JSON manifest, then every tensor as contiguous little-endian `f64`s in
//! manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lang::PcaModel;
use crate::nn::Parameterized;
use crate::tensor::Tensor;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 8] = b"REFRECK1";

const PCA_MEAN: &str = "lang.pca.mean";
const PCA_COMPONENTS: &str = "lang.pca.components";
const PCA_VARIANCE: &str = "lang.pca.explained_variance";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

impl TensorEntry {
    fn byte_len(&self) -> usize {
        self.shape.iter().product::<usize>() * 8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub step: usize,
    pub t_max: usize,
    pub config: TrainConfig,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub blob: Vec<u8>,
}

impl Checkpoint {
    pub fn capture(
        config: &TrainConfig,
        step: usize,
        t_max: usize,
        model: &impl Parameterized,
        pca: Option<&PcaModel>,
    ) -> Self {
        let mut tensors = Vec::new();
        let mut blob = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, data: &[f64]| {
            tensors.push(TensorEntry {
                name,
                shape,
                offset: blob.len(),
            });
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        };
        model.visit_params("", &mut |name, t| push(name, t.shape().to_vec(), t.data()));
        if let Some(pca) = pca {
            let (k, d) = (pca.output_dim(), pca.input_dim());
            push(PCA_MEAN.into(), vec![d], &pca.mean);
            push(PCA_COMPONENTS.into(), vec![k, d], &pca.components);
            push(PCA_VARIANCE.into(), vec![k], &pca.explained_variance);
        }
        Self {
            manifest: Manifest {
                step,
                t_max,
                config: config.clone(),
                tensors,
            },
            blob,
        }
    }

    fn validate_layout(&self) -> Result<()> {
        let mut expected = 0;
        for e in &self.manifest.tensors {
            if e.offset != expected || e.shape.contains(&0) {
                return Err(Error::Checkpoint(format!(
                    "tensor {} at offset {} breaks the blob tiling (expected {expected})",
                    e.name, e.offset
                )));
            }
            expected += e.byte_len();
        }
        if expected != self.blob.len() {
            return Err(Error::Checkpoint(format!(
                "manifest covers {expected} bytes but the blob has {}",
                self.blob.len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate_layout()?;
        let manifest = serde_json::to_vec(&self.manifest)
            .map_err(|e| Error::Checkpoint(format!("manifest encoding: {e}")))?;
        let mut out = Vec::with_capacity(16 + manifest.len() + self.blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&self.blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("missing REFRECK1 header".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if len > body.len() {
            return Err(Error::Checkpoint("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..len])
            .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        let ckpt = Self {
            manifest,
            blob: body[len..].to_vec(),
        };
        ckpt.validate_layout()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::format(path, msg),
            other => other,
        })
    }

    pub fn tensor(&self, name: &str) -> Option<(Vec<usize>, Vec<f64>)> {
        let e = self.manifest.tensors.iter().find(|e| e.name == name)?;
        let data = self.blob[e.offset..e.offset + e.byte_len()]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Some((e.shape.clone(), data))
    }

    /// Overwrites every parameter of `model` from the checkpoint. Names and
    /// shapes must match exactly, in both directions.
    pub fn restore(&self, model: &mut impl Parameterized) -> Result<()> {
        let mut missing = Vec::new();
        let mut restored = 0;
        let mut failure = None;
        model.visit_params_mut("", &mut |name, t| {
            if failure.is_some() {
                return;
            }
            match self.tensor(&name) {
                None => missing.push(name),
                Some((shape, data)) if shape == t.shape() => match Tensor::param(shape, data) {
                    Ok(fresh) => {
                        *t = fresh;
                        restored += 1;
                    }
                    Err(e) => failure = Some(e),
                },
                Some((shape, _)) => {
                    failure = Some(Error::Checkpoint(format!(
                        "{name}: checkpoint shape {shape:?}, model shape {:?}",
                        t.shape()
                    )))
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if !missing.is_empty() {
            return Err(Error::Checkpoint(format!(
                "missing tensors: {}",
                missing.join(", ")
            )));
        }
        let extra = self
            .manifest
            .tensors
            .iter()
            .filter(|e| !e.name.starts_with("lang."))
            .count()
            - restored;
        if extra != 0 {
            return Err(Error::Checkpoint(format!(
                "{extra} checkpoint tensors have no counterpart in the model"
            )));
        }
        Ok(())
    }

    pub fn pca(&self) -> Result<Option<PcaModel>> {
        let parts = (
            self.tensor(PCA_MEAN),
            self.tensor(PCA_COMPONENTS),
            self.tensor(PCA_VARIANCE),
        );
        match parts {
            (None, None, None) => Ok(None),
            (Some((_, mean)), Some((cshape, components)), Some((_, explained_variance))) => {
                if cshape != [explained_variance.len(), mean.len()] {
                    return Err(Error::Checkpoint("inconsistent PCA tensors".into()));
                }
                Ok(Some(PcaModel {
                    mean,
                    components,
                    explained_variance,
                }))
            }
            _ => Err(Error::Checkpoint("incomplete PCA tensors".into())),
        }
    }
}

//! JSON checkpoints: kernel identifier → level, role, shapes and parameters.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dense, KUNet, KUNetConfig, Kernel, KernelId, KernelKind, KernelSpec, Role};
use crate::error::{Error, Result};
use crate::math::Matrix;

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    config: KUNetConfig,
    kind: KernelKind,
    kernels: BTreeMap<String, KernelRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct KernelRecord {
    level: usize,
    role: Role,
    spec: KernelSpec,
    layers: Vec<LayerRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerRecord {
    weight_shape: (usize, usize),
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl KUNet {
    pub fn to_json(&self) -> Result<String> {
        let kernels = self
            .kernels()
            .map(|k| {
                let layers = k
                    .layers
                    .iter()
                    .map(|d| LayerRecord {
                        weight_shape: d.weight.shape(),
                        weight: d.weight.data().to_vec(),
                        bias: d.bias.data().to_vec(),
                    })
                    .collect();
                let rec = KernelRecord {
                    level: k.level(),
                    role: k.id.role,
                    spec: k.spec,
                    layers,
                };
                (k.id.to_string(), rec)
            })
            .collect();
        let ckpt = Checkpoint {
            config: self.config.clone(),
            kind: self.kind,
            kernels,
        };
        Ok(serde_json::to_string_pretty(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ckpt: Checkpoint = serde_json::from_str(text)?;
        ckpt.config.validate()?;
        let depth = ckpt.config.depth();
        let mut take = |role: Role, level: usize| -> Result<Kernel> {
            let id = KernelId { role, level };
            let rec = ckpt
                .kernels
                .remove(&id.to_string())
                .ok_or_else(|| Error::Checkpoint(format!("missing kernel {id}")))?;
            if rec.level != level || rec.role != role {
                return Err(Error::Checkpoint(format!(
                    "kernel {id} has mismatched tags"
                )));
            }
            let layers = rec
                .layers
                .into_iter()
                .map(|l| {
                    let (r, c) = l.weight_shape;
                    let bias_len = l.bias.len();
                    Ok(Dense::from_params(
                        Matrix::from_vec(r, c, l.weight)?,
                        Matrix::from_vec(1, bias_len, l.bias)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Kernel::from_layers(id, rec.spec, layers))
        };
        let encoder = (1..=depth)
            .map(|l| take(Role::Encoder, l))
            .collect::<Result<Vec<_>>>()?;
        let decoder = (1..=depth)
            .rev()
            .map(|l| take(Role::Decoder, l))
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = ckpt.kernels.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected kernel {extra}")));
        }
        Ok(KUNet::from_parts(ckpt.config, ckpt.kind, encoder, decoder))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

//! Checkpoints: parameters as named `f64` arrays in a safetensors file plus a
//! JSON sidecar with the model shape, training config and metric history.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CadVae, ModelConfig};
use crate::trainer::{EpochRecord, TrainConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub config_hash: String,
    pub seed: u64,
    /// Epoch the parameters were taken from (0-based).
    pub epoch: usize,
    pub step: u64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CadVae,
    pub meta: CheckpointMeta,
}

/// The JSON sidecar that goes with a parameter file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

impl Checkpoint {
    /// Writes `path` (parameters) and its `.json` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let layout = self.model.layout();
        let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = layout
            .groups()
            .iter()
            .map(|g| {
                let data = self.model.parameters()[g.range()]
                    .iter()
                    .flat_map(|v| v.to_le_bytes())
                    .collect();
                (g.name.clone(), data, vec![g.rows, g.cols])
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(name, data, shape)| {
                TensorView::new(Dtype::F64, shape.clone(), data)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let info = HashMap::from([("format".to_string(), "cadvae".to_string())]);
        let buf = safetensors::serialize(views, Some(info)).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        std::fs::write(&side, serde_json::to_string_pretty(&self.meta)?).map_err(|e| Error::io(side, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let meta: CheckpointMeta =
            serde_json::from_str(&std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?)?;
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let tensors = SafeTensors::deserialize(&buf).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;

        let probe = CadVae::from_parameters(meta.model.clone(), vec![0.0; meta.model.parameter_count()])?;
        let mut theta = vec![0.0; probe.num_parameters()];
        for g in probe.layout().groups() {
            let t = tensors
                .tensor(&g.name)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", g.name)))?;
            if t.dtype() != Dtype::F64 || t.shape() != [g.rows, g.cols] {
                return Err(Error::Shape(format!(
                    "{}: stored {:?} {:?}, model expects F64 [{}, {}]",
                    g.name,
                    t.dtype(),
                    t.shape(),
                    g.rows,
                    g.cols
                )));
            }
            for (dst, chunk) in theta[g.range()].iter_mut().zip(t.data().chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
        }
        if tensors.len() != probe.layout().groups().len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} arrays, model has {}",
                tensors.len(),
                probe.layout().groups().len()
            )));
        }
        let model = CadVae::from_parameters(meta.model.clone(), theta)?;
        Ok(Self { model, meta })
    }
}

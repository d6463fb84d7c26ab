//! Versioned JSON checkpoints: named tensors with shape headers plus the
//! scenario tag and volume divisor the policy was trained with.

use std::path::Path;

use hftrl_core::env::Scenario;
use hftrl_core::policy::{Activation, NetShape, PolicyParams, TENSOR_NAMES};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};
use crate::io;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub scenario: Scenario,
    pub volume_norm: f64,
    /// Book levels per side seen by the policy.
    pub depth: usize,
    pub member_id: usize,
    pub seed: u64,
    pub input: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_params(
        params: &PolicyParams,
        scenario: Scenario,
        volume_norm: f64,
        depth: usize,
        member_id: usize,
        seed: u64,
    ) -> Self {
        let tensors = params
            .tensors()
            .iter()
            .map(|&(name, rows, cols, data)| Tensor {
                name: name.into(),
                rows,
                cols,
                data: data.to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            scenario,
            volume_norm,
            depth,
            member_id,
            seed,
            input: params.shape.input,
            hidden: params.shape.hidden,
            activation: params.activation,
            tensors,
        }
    }

    pub fn to_params(&self) -> hftrl_core::Result<PolicyParams> {
        use hftrl_core::Error;
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidConfig(format!("unsupported checkpoint format {}", self.format)));
        }
        let shape = NetShape {
            input: self.input,
            hidden: self.hidden,
        };
        if self.input != self.scenario.observation_dim(self.depth) {
            return Err(Error::DimensionMismatch {
                expected: self.scenario.observation_dim(self.depth),
                got: self.input,
            });
        }
        let mut params = PolicyParams::zeros(shape, self.activation);
        let expected = params.tensors().map(|(name, rows, cols, _)| (name, rows, cols));
        if self.tensors.len() != TENSOR_NAMES.len() {
            return Err(Error::DimensionMismatch {
                expected: TENSOR_NAMES.len(),
                got: self.tensors.len(),
            });
        }
        let mut data = Vec::with_capacity(params.len());
        for (t, (name, rows, cols)) in self.tensors.iter().zip(expected) {
            if t.name != name || t.rows != rows || t.cols != cols || t.data.len() != rows * cols {
                return Err(Error::InvalidConfig(format!(
                    "tensor {} has shape {}x{} ({} values), expected {name} {rows}x{cols}",
                    t.name,
                    t.rows,
                    t.cols,
                    t.data.len()
                )));
            }
            data.extend_from_slice(&t.data);
        }
        params.data = data;
        Ok(params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = serde_json::to_string(self).expect("checkpoint serializes");
        s.push('\n');
        s.into_bytes()
    }

    pub fn save(&self, path: &Path) -> AppResult<()> {
        io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> AppResult<Self> {
        let ck: Checkpoint = io::read_json(path)?;
        ck.to_params().map_err(|e| AppError::format(path, e))?;
        Ok(ck)
    }
}

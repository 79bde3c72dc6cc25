use super::{ConditionalDensity, DensityConfig, DensityError, Standardizer};
use crate::diffcore::Matrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Serialisable snapshot of a [`ConditionalDensity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: DensityConfig,
    pub event_dim: usize,
    pub condition_dim: usize,
    pub event_standardizer: Standardizer,
    pub condition_standardizer: Standardizer,
    pub params: Vec<NamedParam>,
}

impl Checkpoint {
    pub(super) fn capture(model: &ConditionalDensity) -> Self {
        let params = model
            .param_names()
            .into_iter()
            .zip(model.params())
            .map(|(name, m)| NamedParam {
                name,
                rows: m.rows(),
                cols: m.cols(),
                data: m.as_slice().to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: model.config.clone(),
            event_dim: model.event_dim,
            condition_dim: model.condition_dim,
            event_standardizer: model.event_norm.clone(),
            condition_standardizer: model.condition_norm.clone(),
            params,
        }
    }

    pub(super) fn restore(&self) -> Result<ConditionalDensity, DensityError> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(DensityError::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        let mut model = ConditionalDensity::identity(self.config.clone(), self.event_dim, self.condition_dim)?;
        model.set_standardization(self.event_standardizer.clone(), self.condition_standardizer.clone())?;
        let names = model.param_names();
        if names.len() != self.params.len() {
            return Err(DensityError::Checkpoint(format!(
                "expected {} parameter blocks, found {}",
                names.len(),
                self.params.len()
            )));
        }
        for ((slot, name), stored) in model.params_mut().into_iter().zip(&names).zip(&self.params) {
            if &stored.name != name {
                return Err(DensityError::Checkpoint(format!(
                    "expected parameter {name}, found {}",
                    stored.name
                )));
            }
            if slot.shape() != (stored.rows, stored.cols) || stored.data.len() != stored.rows * stored.cols {
                return Err(DensityError::Checkpoint(format!(
                    "parameter {name} has shape {}x{}, expected {}x{}",
                    stored.rows,
                    stored.cols,
                    slot.rows(),
                    slot.cols()
                )));
            }
            *slot = Matrix::from_vec(stored.rows, stored.cols, stored.data.clone());
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String, DensityError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, DensityError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DensityError> {
        std::fs::write(path, self.to_json()?).map_err(|e| DensityError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, DensityError> {
        let s = std::fs::read_to_string(path).map_err(|e| DensityError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

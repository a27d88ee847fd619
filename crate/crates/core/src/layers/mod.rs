//! Stacked GRU view-encoders, the dense prediction head, dropout, batch
//! normalisation and seeded parameter initialisation.

mod dense;
mod gru;
mod norm;
mod params;
mod session;

use serde::{Deserialize, Serialize};

pub use dense::DenseHead;
pub use gru::{sequence_steps, tile_static, GruEncoder, GruLayer};
pub use norm::{dropout, dropout_node, BatchNorm};
pub use params::{
    init_parameters, Initializer, ParamBuilder, ParamEntry, ParamId, ParamInit, ParamKind,
    ParamSpec, ParamStore, CHECKPOINT_MANIFEST,
};
pub use session::Session;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationConfig {
    pub dropout_rate: f64,
    pub batchnorm: bool,
    pub batchnorm_eps: f64,
    pub batchnorm_momentum: f64,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self {
            dropout_rate: 0.2,
            batchnorm: true,
            batchnorm_eps: 1e-5,
            batchnorm_momentum: 0.1,
        }
    }
}

impl RegularizationConfig {
    /// No dropout and no batch norm.
    pub fn none() -> Self {
        Self {
            dropout_rate: 0.0,
            batchnorm: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !(self.batchnorm_eps > 0.0) {
            return Err(Error::Config("batch norm epsilon must be positive".into()));
        }
        if !(self.batchnorm_momentum > 0.0 && self.batchnorm_momentum < 1.0) {
            return Err(Error::Config(format!(
                "batch norm momentum {} outside (0, 1)",
                self.batchnorm_momentum
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_units: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 2,
            hidden_units: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden_units: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self { hidden_units: 64 }
    }
}

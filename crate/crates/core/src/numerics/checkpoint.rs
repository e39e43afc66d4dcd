use serde::{Deserialize, Serialize};

use super::{Activation, AdamState, Mlp, OutputHead};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mplab-ckpt-v1";

/// Textual parameter container: architecture, row-major parameters and
/// optional optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetCheckpoint {
    pub format: String,
    pub layer_dims: Vec<usize>,
    pub hidden: Activation,
    pub head: OutputHead,
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
}

impl NetCheckpoint {
    pub fn capture(net: &Mlp, optimizer: Option<&AdamState>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            layer_dims: net.layer_dims().to_vec(),
            hidden: net.hidden(),
            head: net.head().clone(),
            params: net.params().to_vec(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn restore(&self) -> Result<(Mlp, Option<AdamState>)> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format `{}` (expected `{CHECKPOINT_FORMAT}`)",
                self.format
            )));
        }
        let net = Mlp::from_parts(
            self.layer_dims.clone(),
            self.hidden,
            self.head.clone(),
            self.params.clone(),
        )?;
        if let Some(opt) = &self.optimizer {
            if opt.first_moment.len() != net.num_params() || opt.second_moment.len() != net.num_params() {
                return Err(Error::shape("optimizer moments", net.num_params(), opt.first_moment.len()));
            }
        }
        Ok((net, self.optimizer.clone()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

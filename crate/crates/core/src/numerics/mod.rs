//! Dense numeric core: MLPs with exact gradients, Adam, sampling heads and
//! soft parameter updates.

mod adam;
mod checkpoint;
mod mlp;
mod sampling;

pub use adam::{clip_global_norm, soft_update, AdamReject, AdamState};
pub use checkpoint::{NetCheckpoint, CHECKPOINT_FORMAT};
pub use mlp::{Activation, HeadKind, HeadSlice, Mlp, OutputHead, Tape};
pub use sampling::{
    argmax, gaussian_noise, gumbel_noise, gumbel_softmax, log_softmax, softmax, softmax_backward,
    SimplexSample,
};

use crate::error::Result;

impl Mlp {
    /// One Adam step on this network's parameters. Rejections name the layer.
    pub fn adam_step(&mut self, opt: &mut AdamState, grads: &[f64]) -> Result<()> {
        let layers = self.layer_dims().to_vec();
        let layer_of = |idx: usize| {
            let mut off = 0;
            for (l, w) in layers.windows(2).enumerate() {
                off += w[0] * w[1] + w[1];
                if idx < off {
                    return l;
                }
            }
            layers.len() - 2
        };
        opt.step(self.params_mut(), grads)
            .map_err(|r| r.into_error(layer_of))
    }

    /// Soft update of this network towards `online`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        soft_update(self.params_mut(), online.params(), tau)
    }
}

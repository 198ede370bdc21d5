//! The two learned models: a framewise forward model f (articulation to
//! acoustics) and a recurrent inverse model g (acoustics to articulation),
//! assembled by hand from `numerics` layers.
//!
//! The composite update path ŝ = f(g(s)) backpropagates through f's layers
//! without ever touching f's parameter gradients; `frozen_chain_backward`
//! takes f by shared reference so the freeze is enforced by the type system,
//! not by discipline.

mod checkpoint;
mod forward;
mod inverse;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{ForwardCaches, ForwardModel};
pub use inverse::{InverseCaches, InverseModel, SeqBatch};

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::plant::{ACOUSTIC_DIM, ARTIC_DIM};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Architecture constants for one (f, g) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of f's hidden blocks: 256 in the full profile, 64 at desk scale.
    pub hidden_width: usize,
    /// Number of f's hidden blocks (dense, batch-norm, tanh, dropout).
    pub n_blocks: usize,
    /// Cells per LSTM layer in g.
    pub lstm_cells: usize,
    pub dropout_p: f64,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            hidden_width: 256,
            n_blocks: 4,
            lstm_cells: 32,
            dropout_p: 0.25,
            in_dim: ARTIC_DIM,
            out_dim: ACOUSTIC_DIM,
        }
    }

    pub fn desk() -> Self {
        ModelConfig {
            hidden_width: 64,
            ..ModelConfig::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 && self.n_blocks > 0 {
            return Err(Error::Config("hidden_width must be positive".into()));
        }
        if self.lstm_cells == 0 || self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p {} outside [0,1)",
                self.dropout_p
            )));
        }
        Ok(())
    }
}

/// Glorot-uniform matrix: entries uniform in +-sqrt(6/(fan_in+fan_out)),
/// filled row-major from the stream.
pub(crate) fn glorot(rows: usize, cols: usize, stream: &mut RngStream) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| stream.next_range(-bound, bound))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("glorot shape")
}

/// Packs the valid frames of a padded step sequence into one [N_valid x dim]
/// tensor, returning the (t, k) origin of each packed row in order.
pub fn flatten_valid(
    steps: &[Tensor],
    mask: &[Vec<bool>],
    dim: usize,
) -> (Tensor, Vec<(usize, usize)>) {
    let mut rows = Vec::new();
    let mut map = Vec::new();
    for (t, step) in steps.iter().enumerate() {
        for k in 0..step.rows() {
            if mask[t][k] {
                rows.extend_from_slice(step.row(k));
                map.push((t, k));
            }
        }
    }
    let n = map.len();
    (Tensor::new(vec![n, dim], rows).expect("flatten shape"), map)
}

/// Inverse of `flatten_valid` for gradients: writes each packed row back to
/// its (t, k) slot, leaving padded slots zero.
pub fn scatter_valid(
    flat: &Tensor,
    map: &[(usize, usize)],
    t_len: usize,
    batch: usize,
    dim: usize,
) -> Vec<Tensor> {
    let mut steps = vec![Tensor::zeros(vec![batch, dim]); t_len];
    for (row, &(t, k)) in map.iter().enumerate() {
        let src = flat.row(row).to_vec();
        steps[t].row_mut(k).copy_from_slice(&src);
    }
    steps
}

/// Backpropagates d_shat (gradient of a loss on ŝ = f(g(s)), packed to valid
/// frames) into g's parameter gradients through a frozen f. The forward
/// caches must come from f applied in infer mode to the packed articulation;
/// f is read-only here, so its gradients cannot move.
pub fn frozen_chain_backward(
    f: &ForwardModel,
    g: &mut InverseModel,
    g_caches: &InverseCaches,
    f_caches: &ForwardCaches,
    d_shat: &Tensor,
    map: &[(usize, usize)],
    t_len: usize,
    batch: usize,
) -> Result<()> {
    let da_flat = f.input_gradient(f_caches, d_shat)?;
    let da_steps = scatter_valid(&da_flat, map, t_len, batch, f.config.in_dim);
    g.backward_batch(g_caches, &da_steps)
}

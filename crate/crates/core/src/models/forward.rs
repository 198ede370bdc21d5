//! Framewise forward model f: dense blocks with batch-norm, tanh, and
//! dropout, then a linear head.

use super::{glorot, ModelConfig};
use crate::numerics::{
    batchnorm_backward, batchnorm_forward, batchnorm_infer, dense_backward, dense_forward,
    dropout_backward, dropout_forward, matmul_a_bt, tanh_backward, tanh_forward, BatchNormCache,
    BatchNormState, Mode, ParamStore, Tensor,
};
use crate::rng::RngStream;
use crate::{Error, Result};

const BN_MOMENTUM: f64 = 0.9;
const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ForwardModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Running statistics, one per hidden block (gamma/beta live in params).
    pub bn: Vec<BatchNormState>,
}

/// What backward needs from one hidden block's forward pass.
#[derive(Debug, Clone)]
enum BnPath {
    Train(BatchNormCache),
    /// 1/sqrt(running_var + eps) captured at apply time.
    Infer { inv_std: Tensor },
}

#[derive(Debug, Clone)]
struct BlockCache {
    dense_in: Tensor,
    bn: BnPath,
    tanh_y: Tensor,
    dropout_mask: Tensor,
}

#[derive(Debug, Clone)]
pub struct ForwardCaches {
    mode: Mode,
    blocks: Vec<BlockCache>,
    head_in: Tensor,
}

impl ForwardCaches {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

impl ForwardModel {
    /// Dimension of the head's input: the last hidden width, or the model
    /// input when there are no hidden blocks.
    fn head_in_dim(config: &ModelConfig) -> usize {
        if config.n_blocks > 0 {
            config.hidden_width
        } else {
            config.in_dim
        }
    }

    pub fn init(config: &ModelConfig, stream: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let h = config.hidden_width;
        let mut prev = config.in_dim;
        let mut bn = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            params.insert(&format!("f.block{i}.w"), glorot(prev, h, stream))?;
            params.insert(&format!("f.block{i}.b"), Tensor::zeros(vec![h]))?;
            params.insert(&format!("f.block{i}.gamma"), Tensor::filled(vec![h], 1.0))?;
            params.insert(&format!("f.block{i}.beta"), Tensor::zeros(vec![h]))?;
            bn.push(BatchNormState::new(h, BN_MOMENTUM, BN_EPSILON));
            prev = h;
        }
        params.insert(
            "f.head.w",
            glorot(Self::head_in_dim(config), config.out_dim, stream),
        )?;
        params.insert("f.head.b", Tensor::zeros(vec![config.out_dim]))?;
        Ok(ForwardModel {
            config: config.clone(),
            params,
            bn,
        })
    }

    /// Rebuilds a model around an existing parameter store (fresh running
    /// stats). Used by gradient-check closures and checkpoint loading.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Self {
        let bn = (0..config.n_blocks)
            .map(|_| BatchNormState::new(config.hidden_width, BN_MOMENTUM, BN_EPSILON))
            .collect();
        ForwardModel { config, params, bn }
    }

    fn check_width(&self, x: &Tensor) -> Result<()> {
        if x.cols() != self.config.in_dim {
            return Err(Error::Contract(format!(
                "forward model input width {} != {}",
                x.cols(),
                self.config.in_dim
            )));
        }
        Ok(())
    }

    /// ŝ = f(a) with caches for backward. Train mode normalizes by batch
    /// statistics (updating the running ones) and samples dropout from the
    /// stream; infer mode delegates to `infer_caches` and consumes no
    /// randomness.
    pub fn forward(
        &mut self,
        x: &Tensor,
        mode: Mode,
        dropout: &mut RngStream,
    ) -> Result<(Tensor, ForwardCaches)> {
        if mode == Mode::Infer {
            return self.infer_caches(x);
        }
        self.check_width(x)?;
        let p = self.config.dropout_p;
        let mut cur = x.clone();
        let mut blocks = Vec::with_capacity(self.config.n_blocks);
        for i in 0..self.config.n_blocks {
            let dense_in = cur;
            let z = dense_forward(
                &dense_in,
                self.params.value(&format!("f.block{i}.w")),
                self.params.value(&format!("f.block{i}.b")),
            )?;
            let gamma = self.params.value(&format!("f.block{i}.gamma"));
            let beta = self.params.value(&format!("f.block{i}.beta"));
            let (bn_y, cache) = batchnorm_forward(&z, gamma, beta, &mut self.bn[i], mode)?;
            let tanh_y = tanh_forward(&bn_y);
            let (dropped, mask) = dropout_forward(&tanh_y, p, dropout, mode)?;
            blocks.push(BlockCache {
                dense_in,
                bn: BnPath::Train(cache.expect("train cache")),
                tanh_y,
                dropout_mask: mask,
            });
            cur = dropped;
        }
        let head_in = cur;
        let out = dense_forward(&head_in, self.params.value("f.head.w"), self.params.value("f.head.b"))?;
        Ok((
            out,
            ForwardCaches {
                mode,
                blocks,
                head_in,
            },
        ))
    }

    /// Infer-mode application with caches for `input_gradient`. Takes a
    /// shared borrow, so it works on a frozen model: nothing here can move
    /// parameters, gradients, or running statistics.
    pub fn infer_caches(&self, x: &Tensor) -> Result<(Tensor, ForwardCaches)> {
        self.check_width(x)?;
        let mut cur = x.clone();
        let mut blocks = Vec::with_capacity(self.config.n_blocks);
        for i in 0..self.config.n_blocks {
            let dense_in = cur;
            let z = dense_forward(
                &dense_in,
                self.params.value(&format!("f.block{i}.w")),
                self.params.value(&format!("f.block{i}.b")),
            )?;
            let gamma = self.params.value(&format!("f.block{i}.gamma"));
            let beta = self.params.value(&format!("f.block{i}.beta"));
            let y = batchnorm_infer(&z, gamma, beta, &self.bn[i])?;
            let inv_std: Vec<f64> = self.bn[i]
                .running_var
                .data()
                .iter()
                .map(|v| 1.0 / (v + self.bn[i].epsilon).sqrt())
                .collect();
            let tanh_y = tanh_forward(&y);
            // dropout is a no-op here; a unit mask keeps backward uniform
            let mask = Tensor::filled(tanh_y.shape().to_vec(), 1.0);
            blocks.push(BlockCache {
                dense_in,
                bn: BnPath::Infer {
                    inv_std: Tensor::new(vec![self.config.hidden_width], inv_std)?,
                },
                tanh_y: tanh_y.clone(),
                dropout_mask: mask,
            });
            cur = tanh_y;
        }
        let head_in = cur;
        let out = dense_forward(&head_in, self.params.value("f.head.w"), self.params.value("f.head.b"))?;
        Ok((
            out,
            ForwardCaches {
                mode: Mode::Infer,
                blocks,
                head_in,
            },
        ))
    }

    /// Pure infer-mode application; no mutation, no randomness.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.infer_caches(x).map(|(y, _)| y)
    }

    /// Accumulates parameter gradients from train-mode caches; returns the
    /// input gradient.
    pub fn backward(&mut self, caches: &ForwardCaches, dy: &Tensor) -> Result<Tensor> {
        if caches.mode != Mode::Train {
            return Err(Error::Contract(
                "forward-model backward requires train-mode caches".into(),
            ));
        }
        let (mut d_cur, d_head_w, d_head_b) =
            dense_backward(&caches.head_in, self.params.value("f.head.w"), dy)?;
        self.params.add_grad("f.head.w", &d_head_w);
        self.params.add_grad("f.head.b", &d_head_b);
        for (i, block) in caches.blocks.iter().enumerate().rev() {
            let d_drop = dropout_backward(&block.dropout_mask, &d_cur);
            let d_tanh = tanh_backward(&block.tanh_y, &d_drop);
            let cache = match &block.bn {
                BnPath::Train(c) => c,
                BnPath::Infer { .. } => {
                    return Err(Error::Contract("train caches expected".into()))
                }
            };
            let (d_z, d_gamma, d_beta) = batchnorm_backward(cache, &d_tanh)?;
            self.params.add_grad(&format!("f.block{i}.gamma"), &d_gamma);
            self.params.add_grad(&format!("f.block{i}.beta"), &d_beta);
            let (d_in, d_w, d_b) = dense_backward(
                &block.dense_in,
                self.params.value(&format!("f.block{i}.w")),
                &d_z,
            )?;
            self.params.add_grad(&format!("f.block{i}.w"), &d_w);
            self.params.add_grad(&format!("f.block{i}.b"), &d_b);
            d_cur = d_in;
        }
        Ok(d_cur)
    }

    /// Input gradient through infer-mode caches without accumulating any
    /// parameter gradient; this is the frozen path of the composite update.
    pub fn input_gradient(&self, caches: &ForwardCaches, dy: &Tensor) -> Result<Tensor> {
        if caches.mode != Mode::Infer {
            return Err(Error::Contract(
                "frozen input gradient requires infer-mode caches".into(),
            ));
        }
        let mut d_cur = matmul_a_bt(dy, self.params.value("f.head.w"));
        for (i, block) in caches.blocks.iter().enumerate().rev() {
            let d_drop = dropout_backward(&block.dropout_mask, &d_cur);
            let d_tanh = tanh_backward(&block.tanh_y, &d_drop);
            let inv_std = match &block.bn {
                BnPath::Infer { inv_std } => inv_std,
                BnPath::Train(_) => {
                    return Err(Error::Contract("infer caches expected".into()))
                }
            };
            // y = gamma (x - rm) inv_std + beta: dx = dy gamma inv_std
            let gamma = self.params.value(&format!("f.block{i}.gamma"));
            let mut d_z = d_tanh;
            for r in 0..d_z.rows() {
                for (v, (g, s)) in d_z
                    .row_mut(r)
                    .iter_mut()
                    .zip(gamma.data().iter().zip(inv_std.data()))
                {
                    *v *= g * s;
                }
            }
            d_cur = matmul_a_bt(&d_z, self.params.value(&format!("f.block{i}.w")));
        }
        Ok(d_cur)
    }
}

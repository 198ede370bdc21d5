//! Recurrent inverse model g: two stacked LSTM layers with inter-layer
//! dropout, a time-distributed linear head, and a tanh output squash.
//!
//! Sequences are processed causally left to right from zero initial state.
//! Batches are padded to the longest member; padded steps carry zero frames
//! and a false mask bit, and the loss side guarantees their output gradients
//! are exactly zero, which makes their backward contributions exact zeros as
//! well (no masking is needed inside the recurrence itself).

use super::{glorot, ModelConfig};
use crate::numerics::{
    dense_backward, dense_forward, dropout_backward, dropout_forward, lstm_cell_backward,
    lstm_cell_forward, tanh_backward, tanh_forward, LstmCache, LstmCellRefs, LstmGradAcc, Mode,
    ParamStore, Tensor, LSTM_PARAM_SUFFIXES,
};
use crate::rng::RngStream;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct InverseModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// A padded minibatch of acoustic sequences, time-major: steps[t] holds the
/// t-th frame of every sequence, mask[t][k] says whether sequence k is still
/// live at time t.
#[derive(Debug, Clone)]
pub struct SeqBatch {
    pub steps: Vec<Tensor>,
    pub mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
}

impl SeqBatch {
    /// Builds a batch from per-sequence frame matrices [T_k x dim].
    pub fn new(seqs: &[&Tensor]) -> Result<SeqBatch> {
        if seqs.is_empty() {
            return Err(Error::Contract("empty sequence batch".into()));
        }
        let dim = seqs[0].cols();
        if seqs.iter().any(|s| s.cols() != dim || s.rows() == 0) {
            return Err(Error::Contract(
                "sequences must be non-empty and share the feature dimension".into(),
            ));
        }
        let k = seqs.len();
        let lengths: Vec<usize> = seqs.iter().map(|s| s.rows()).collect();
        let t_max = *lengths.iter().max().unwrap();
        let mut steps = Vec::with_capacity(t_max);
        let mut mask = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let mut step = Tensor::zeros(vec![k, dim]);
            let mut live = vec![false; k];
            for (idx, seq) in seqs.iter().enumerate() {
                if t < seq.rows() {
                    step.row_mut(idx).copy_from_slice(seq.row(t));
                    live[idx] = true;
                }
            }
            steps.push(step);
            mask.push(live);
        }
        Ok(SeqBatch {
            steps,
            mask,
            lengths,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn t_max(&self) -> usize {
        self.steps.len()
    }

    /// Total number of valid (unpadded) frames.
    pub fn n_valid(&self) -> usize {
        self.lengths.iter().sum()
    }
}

struct StepCache {
    cache1: LstmCache,
    drop1_mask: Tensor,
    cache2: LstmCache,
    drop2_mask: Tensor,
    drop2_out: Tensor,
    squashed: Tensor,
}

pub struct InverseCaches {
    steps: Vec<StepCache>,
    batch: usize,
}

impl InverseModel {
    pub fn init(config: &ModelConfig, stream: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let h = config.lstm_cells;
        let mut params = ParamStore::new();
        for (layer, in_dim) in [("g.lstm1", config.out_dim), ("g.lstm2", h)] {
            for sfx in LSTM_PARAM_SUFFIXES {
                let name = format!("{layer}.{sfx}");
                let t = match sfx.as_bytes()[0] {
                    b'w' => glorot(in_dim, h, stream),
                    b'u' => glorot(h, h, stream),
                    // forget-gate bias +1 encourages early memory retention
                    _ if sfx == "b_f" => Tensor::filled(vec![h], 1.0),
                    _ => Tensor::zeros(vec![h]),
                };
                params.insert(&name, t)?;
            }
        }
        params.insert("g.head.w", glorot(h, config.in_dim, stream))?;
        params.insert("g.head.b", Tensor::zeros(vec![config.in_dim]))?;
        Ok(InverseModel {
            config: config.clone(),
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Self {
        InverseModel { config, params }
    }

    /// a = g(s) over a padded batch; returns per-step [K x 6] outputs and the
    /// caches backward needs. Dropout applies between layers in train mode.
    pub fn forward_batch(
        &self,
        batch: &SeqBatch,
        mode: Mode,
        dropout: &mut RngStream,
    ) -> Result<(Vec<Tensor>, InverseCaches)> {
        if batch.steps[0].cols() != self.config.out_dim {
            return Err(Error::Contract(format!(
                "inverse model input width {} != {}",
                batch.steps[0].cols(),
                self.config.out_dim
            )));
        }
        let k = batch.batch_size();
        let h = self.config.lstm_cells;
        let p = self.config.dropout_p;
        let l1 = LstmCellRefs::from_store(&self.params, "g.lstm1");
        let l2 = LstmCellRefs::from_store(&self.params, "g.lstm2");
        let (mut h1, mut c1) = (Tensor::zeros(vec![k, h]), Tensor::zeros(vec![k, h]));
        let (mut h2, mut c2) = (Tensor::zeros(vec![k, h]), Tensor::zeros(vec![k, h]));
        let mut outputs = Vec::with_capacity(batch.t_max());
        let mut steps = Vec::with_capacity(batch.t_max());
        for x in &batch.steps {
            let (h1_t, c1_t, cache1) = lstm_cell_forward(x, &h1, &c1, &l1)?;
            let (drop1_out, drop1_mask) = dropout_forward(&h1_t, p, dropout, mode)?;
            let (h2_t, c2_t, cache2) = lstm_cell_forward(&drop1_out, &h2, &c2, &l2)?;
            let (drop2_out, drop2_mask) = dropout_forward(&h2_t, p, dropout, mode)?;
            let pre = dense_forward(
                &drop2_out,
                self.params.value("g.head.w"),
                self.params.value("g.head.b"),
            )?;
            let squashed = tanh_forward(&pre);
            outputs.push(squashed.clone());
            steps.push(StepCache {
                cache1,
                drop1_mask,
                cache2,
                drop2_mask,
                drop2_out,
                squashed,
            });
            h1 = h1_t;
            c1 = c1_t;
            h2 = h2_t;
            c2 = c2_t;
        }
        Ok((outputs, InverseCaches { steps, batch: k }))
    }

    /// Single-sequence convenience wrapper: s [T x 18] to a [T x 6].
    pub fn apply(&self, s: &Tensor, mode: Mode, dropout: &mut RngStream) -> Result<Tensor> {
        let batch = SeqBatch::new(&[s])?;
        let (outs, _) = self.forward_batch(&batch, mode, dropout)?;
        let t = outs.len();
        let d = self.config.in_dim;
        let mut flat = Tensor::zeros(vec![t, d]);
        for (row, step) in outs.iter().enumerate() {
            flat.row_mut(row).copy_from_slice(step.row(0));
        }
        Ok(flat)
    }

    /// Pure infer-mode application (dropout off, no randomness consumed).
    pub fn infer(&self, s: &Tensor) -> Result<Tensor> {
        let mut unused = RngStream::new(0, "unused");
        self.apply(s, Mode::Infer, &mut unused)
    }

    /// Full BPTT from per-step output gradients (entries for padded slots
    /// must be zero, which masked losses guarantee). Accumulates into the
    /// parameter grads.
    pub fn backward_batch(&mut self, caches: &InverseCaches, d_out: &[Tensor]) -> Result<()> {
        if d_out.len() != caches.steps.len() {
            return Err(Error::Contract(format!(
                "{} gradient steps for {} cached steps",
                d_out.len(),
                caches.steps.len()
            )));
        }
        let k = caches.batch;
        let h = self.config.lstm_cells;
        let in_dim = self.config.out_dim;
        let l1 = LstmCellRefs::from_store(&self.params, "g.lstm1");
        let l2 = LstmCellRefs::from_store(&self.params, "g.lstm2");
        let mut acc1 = LstmGradAcc::zeros(in_dim, h);
        let mut acc2 = LstmGradAcc::zeros(h, h);
        let mut d_head_w = Tensor::zeros(vec![h, self.config.in_dim]);
        let mut d_head_b = Tensor::zeros(vec![self.config.in_dim]);
        let (mut dh1, mut dc1) = (Tensor::zeros(vec![k, h]), Tensor::zeros(vec![k, h]));
        let (mut dh2, mut dc2) = (Tensor::zeros(vec![k, h]), Tensor::zeros(vec![k, h]));
        let head_w = self.params.value("g.head.w");
        for (step, dy) in caches.steps.iter().zip(d_out).rev() {
            let d_pre = tanh_backward(&step.squashed, dy);
            let (d_drop2, dw, db) = dense_backward(&step.drop2_out, head_w, &d_pre)?;
            for (a, b) in d_head_w.data_mut().iter_mut().zip(dw.data()) {
                *a += b;
            }
            for (a, b) in d_head_b.data_mut().iter_mut().zip(db.data()) {
                *a += b;
            }
            let mut dh2_total = dropout_backward(&step.drop2_mask, &d_drop2);
            for (a, b) in dh2_total.data_mut().iter_mut().zip(dh2.data()) {
                *a += b;
            }
            let (d_drop1, dh2_prev, dc2_prev) =
                lstm_cell_backward(&step.cache2, &l2, &dh2_total, &dc2, &mut acc2)?;
            dh2 = dh2_prev;
            dc2 = dc2_prev;
            let mut dh1_total = dropout_backward(&step.drop1_mask, &d_drop1);
            for (a, b) in dh1_total.data_mut().iter_mut().zip(dh1.data()) {
                *a += b;
            }
            let (_, dh1_prev, dc1_prev) =
                lstm_cell_backward(&step.cache1, &l1, &dh1_total, &dc1, &mut acc1)?;
            dh1 = dh1_prev;
            dc1 = dc1_prev;
        }
        acc1.fold_into(&mut self.params, "g.lstm1");
        acc2.fold_into(&mut self.params, "g.lstm2");
        self.params.add_grad("g.head.w", &d_head_w);
        self.params.add_grad("g.head.b", &d_head_b);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::plant::ACOUSTIC_DIM;

    fn random_seq(t: usize, d: usize, stream: &mut RngStream) -> Tensor {
        Tensor::new(
            vec![t, d],
            (0..t * d).map(|_| stream.next_range(-1.0, 1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn init_deterministic_count_pinned() {
        let cfg = ModelConfig::desk();
        let a = InverseModel::init(&cfg, &mut RngStream::new(5, "init/g")).unwrap();
        let b = InverseModel::init(&cfg, &mut RngStream::new(5, "init/g")).unwrap();
        assert_eq!(a.params.checksum(), b.params.checksum());
        assert_eq!(a.params.n_scalars(), 15_046);
        assert!(a
            .params
            .value("g.lstm1.b_f")
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(a
            .params
            .value("g.lstm1.b_i")
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn outputs_strictly_inside_unit_cube() {
        let g = InverseModel::init(&ModelConfig::desk(), &mut RngStream::new(2, "init/g")).unwrap();
        let mut s = RngStream::new(3, "data");
        let seq = random_seq(30, ACOUSTIC_DIM, &mut s);
        let a = g.infer(&seq).unwrap();
        assert_eq!(a.shape(), &[30, 6]);
        for v in a.data() {
            assert!(v.abs() < 1.0, "output {v} not strictly inside (-1,1)");
        }
    }

    #[test]
    fn single_step_equals_stacked_cells() {
        let cfg = ModelConfig::desk();
        let g = InverseModel::init(&cfg, &mut RngStream::new(9, "init/g")).unwrap();
        let mut s = RngStream::new(10, "data");
        let seq = random_seq(1, ACOUSTIC_DIM, &mut s);
        let want = g.infer(&seq).unwrap();

        // manual: two zero-state cells plus head plus squash
        let h = cfg.lstm_cells;
        let zero = Tensor::zeros(vec![1, h]);
        let l1 = LstmCellRefs::from_store(&g.params, "g.lstm1");
        let (h1, _, _) = lstm_cell_forward(&seq, &zero, &zero, &l1).unwrap();
        let l2 = LstmCellRefs::from_store(&g.params, "g.lstm2");
        let (h2, _, _) = lstm_cell_forward(&h1, &zero, &zero, &l2).unwrap();
        let pre =
            dense_forward(&h2, g.params.value("g.head.w"), g.params.value("g.head.b")).unwrap();
        let manual = tanh_forward(&pre);
        assert_eq!(want.data(), manual.data());
    }

    #[test]
    fn bptt_matches_finite_difference() {
        let cfg = ModelConfig::desk();
        let mut g = InverseModel::init(&cfg, &mut RngStream::new(31, "init/g")).unwrap();
        let mut s = RngStream::new(32, "data");
        let seq = random_seq(20, ACOUSTIC_DIM, &mut s);
        let target = random_seq(20, 6, &mut s);
        let batch = SeqBatch::new(&[&seq]).unwrap();

        // analytic grads, pinned dropout
        let mut drop = RngStream::new(55, "dropout/g");
        let (outs, caches) = g.forward_batch(&batch, Mode::Train, &mut drop).unwrap();
        let n = (20 * 6) as f64;
        let d_out: Vec<Tensor> = outs
            .iter()
            .enumerate()
            .map(|(t, o)| {
                let mut d = Tensor::zeros(vec![1, 6]);
                for j in 0..6 {
                    d.set(0, j, 2.0 * (o.at(0, j) - target.at(t, j)) / n);
                }
                d
            })
            .collect();
        g.backward_batch(&caches, &d_out).unwrap();

        let cfg2 = cfg.clone();
        let (seq2, target2) = (seq.clone(), target.clone());
        let report = grad_check(
            move |store| {
                let m = InverseModel::from_params(cfg2.clone(), store.clone());
                let batch = SeqBatch::new(&[&seq2]).unwrap();
                let mut drop = RngStream::new(55, "dropout/g");
                let (outs, _) = m.forward_batch(&batch, Mode::Train, &mut drop).unwrap();
                let mut loss = 0.0;
                for (t, o) in outs.iter().enumerate() {
                    for j in 0..6 {
                        let e = o.at(0, j) - target2.at(t, j);
                        loss += e * e;
                    }
                }
                loss / n
            },
            &mut g.params,
            3,
            1e-4,
            &mut RngStream::new(8, "pick"),
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn padded_batch_matches_separate_sequences() {
        // infer-mode outputs for ragged batch members equal their solo runs
        let g = InverseModel::init(&ModelConfig::desk(), &mut RngStream::new(4, "init/g")).unwrap();
        let mut s = RngStream::new(5, "data");
        let seq_a = random_seq(12, ACOUSTIC_DIM, &mut s);
        let seq_b = random_seq(7, ACOUSTIC_DIM, &mut s);
        let batch = SeqBatch::new(&[&seq_a, &seq_b]).unwrap();
        assert_eq!(batch.t_max(), 12);
        assert_eq!(batch.n_valid(), 19);
        let mut unused = RngStream::new(0, "x");
        let (outs, _) = g.forward_batch(&batch, Mode::Infer, &mut unused).unwrap();
        let solo_a = g.infer(&seq_a).unwrap();
        let solo_b = g.infer(&seq_b).unwrap();
        for t in 0..12 {
            assert_eq!(outs[t].row(0), solo_a.row(t));
        }
        for t in 0..7 {
            assert_eq!(outs[t].row(1), solo_b.row(t));
        }
    }
}

//! Single LSTM cell step with explicit cache and exact backward pass.
//!
//! Gate order is input, forget, output, candidate. Parameters live in the
//! owning model's ParamStore under `{prefix}.{w,u,b}_{i,f,o,c}`; the cell
//! functions see them through `LstmCellRefs` so no copies are made per step.

use crate::numerics::params::ParamStore;
use crate::numerics::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};
use crate::numerics::layers::stable_sigmoid;
use crate::{Error, Result};

/// Borrowed views of one cell's twelve parameter tensors.
/// W_* are [Din x H], U_* are [H x H], b_* are [H].
pub struct LstmCellRefs<'a> {
    pub w_i: &'a Tensor,
    pub u_i: &'a Tensor,
    pub b_i: &'a Tensor,
    pub w_f: &'a Tensor,
    pub u_f: &'a Tensor,
    pub b_f: &'a Tensor,
    pub w_o: &'a Tensor,
    pub u_o: &'a Tensor,
    pub b_o: &'a Tensor,
    pub w_c: &'a Tensor,
    pub u_c: &'a Tensor,
    pub b_c: &'a Tensor,
}

pub const LSTM_PARAM_SUFFIXES: [&str; 12] = [
    "w_i", "u_i", "b_i", "w_f", "u_f", "b_f", "w_o", "u_o", "b_o", "w_c", "u_c", "b_c",
];

impl<'a> LstmCellRefs<'a> {
    pub fn from_store(store: &'a ParamStore, prefix: &str) -> Self {
        let v = |s: &str| store.value(&format!("{prefix}.{s}"));
        LstmCellRefs {
            w_i: v("w_i"),
            u_i: v("u_i"),
            b_i: v("b_i"),
            w_f: v("w_f"),
            u_f: v("u_f"),
            b_f: v("b_f"),
            w_o: v("w_o"),
            u_o: v("u_o"),
            b_o: v("b_o"),
            w_c: v("w_c"),
            u_c: v("u_c"),
            b_c: v("b_c"),
        }
    }

    fn in_dim(&self) -> usize {
        self.w_i.rows()
    }

    fn hidden(&self) -> usize {
        self.w_i.cols()
    }
}

/// Per-timestep activations needed by the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub x: Tensor,
    pub h_prev: Tensor,
    pub c_prev: Tensor,
    pub i: Tensor,
    pub f: Tensor,
    pub o: Tensor,
    pub chat: Tensor,
    pub tanh_c: Tensor,
}

/// Owned gradient accumulators for one cell, summed over timesteps by the
/// caller and then folded into the ParamStore.
#[derive(Debug, Clone)]
pub struct LstmGradAcc {
    pub w_i: Tensor,
    pub u_i: Tensor,
    pub b_i: Tensor,
    pub w_f: Tensor,
    pub u_f: Tensor,
    pub b_f: Tensor,
    pub w_o: Tensor,
    pub u_o: Tensor,
    pub b_o: Tensor,
    pub w_c: Tensor,
    pub u_c: Tensor,
    pub b_c: Tensor,
}

impl LstmGradAcc {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        let w = || Tensor::zeros(vec![in_dim, hidden]);
        let u = || Tensor::zeros(vec![hidden, hidden]);
        let b = || Tensor::zeros(vec![hidden]);
        LstmGradAcc {
            w_i: w(),
            u_i: u(),
            b_i: b(),
            w_f: w(),
            u_f: u(),
            b_f: b(),
            w_o: w(),
            u_o: u(),
            b_o: b(),
            w_c: w(),
            u_c: u(),
            b_c: b(),
        }
    }

    pub fn fold_into(&self, store: &mut ParamStore, prefix: &str) {
        let pairs: [(&str, &Tensor); 12] = [
            ("w_i", &self.w_i),
            ("u_i", &self.u_i),
            ("b_i", &self.b_i),
            ("w_f", &self.w_f),
            ("u_f", &self.u_f),
            ("b_f", &self.b_f),
            ("w_o", &self.w_o),
            ("u_o", &self.u_o),
            ("b_o", &self.b_o),
            ("w_c", &self.w_c),
            ("u_c", &self.u_c),
            ("b_c", &self.b_c),
        ];
        for (suffix, g) in pairs {
            store.add_grad(&format!("{prefix}.{suffix}"), g);
        }
    }
}

fn gate_preact(x: &Tensor, h_prev: &Tensor, w: &Tensor, u: &Tensor, b: &Tensor) -> Tensor {
    let mut a = matmul(x, w);
    let hu = matmul(h_prev, u);
    for (av, hv) in a.data_mut().iter_mut().zip(hu.data()) {
        *av += hv;
    }
    for r in 0..a.rows() {
        for (av, bv) in a.row_mut(r).iter_mut().zip(b.data()) {
            *av += bv;
        }
    }
    a
}

/// i,f,o = sigma(x W + h U + b); chat = tanh(x W + h U + b);
/// c_t = f.c_prev + i.chat; h_t = o.tanh(c_t).
pub fn lstm_cell_forward(
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    p: &LstmCellRefs,
) -> Result<(Tensor, Tensor, LstmCache)> {
    let n = x.rows();
    let (din, h) = (p.in_dim(), p.hidden());
    if x.cols() != din || h_prev.shape() != [n, h] || c_prev.shape() != [n, h] {
        return Err(Error::Contract(format!(
            "lstm cell shapes x{:?} h{:?} c{:?} for Din={din} H={h}",
            x.shape(),
            h_prev.shape(),
            c_prev.shape()
        )));
    }
    let mut i = gate_preact(x, h_prev, p.w_i, p.u_i, p.b_i);
    let mut f = gate_preact(x, h_prev, p.w_f, p.u_f, p.b_f);
    let mut o = gate_preact(x, h_prev, p.w_o, p.u_o, p.b_o);
    let mut chat = gate_preact(x, h_prev, p.w_c, p.u_c, p.b_c);
    i.data_mut().iter_mut().for_each(|v| *v = stable_sigmoid(*v));
    f.data_mut().iter_mut().for_each(|v| *v = stable_sigmoid(*v));
    o.data_mut().iter_mut().for_each(|v| *v = stable_sigmoid(*v));
    chat.data_mut().iter_mut().for_each(|v| *v = v.tanh());

    let mut c = Tensor::zeros(vec![n, h]);
    for idx in 0..n * h {
        c.data_mut()[idx] = f.data()[idx] * c_prev.data()[idx] + i.data()[idx] * chat.data()[idx];
    }
    let mut tanh_c = c.clone();
    tanh_c.data_mut().iter_mut().for_each(|v| *v = v.tanh());
    let mut h_t = Tensor::zeros(vec![n, h]);
    for idx in 0..n * h {
        h_t.data_mut()[idx] = o.data()[idx] * tanh_c.data()[idx];
    }
    let cache = LstmCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        i,
        f,
        o,
        chat,
        tanh_c,
    };
    let c_t = c;
    Ok((h_t, c_t, cache))
}

/// Exact gradients of the cell equations. dh_t/dc_t are the gradients
/// arriving at this step's outputs (dc_t already includes the next step's
/// dc_prev contribution). Parameter gradients accumulate into `acc`.
pub fn lstm_cell_backward(
    cache: &LstmCache,
    p: &LstmCellRefs,
    dh_t: &Tensor,
    dc_t: &Tensor,
    acc: &mut LstmGradAcc,
) -> Result<(Tensor, Tensor, Tensor)> {
    if !dh_t.same_shape(&cache.i) || !dc_t.same_shape(&cache.i) {
        return Err(Error::Contract(format!(
            "lstm backward shapes dh{:?} dc{:?} cache{:?}",
            dh_t.shape(),
            dc_t.shape(),
            cache.i.shape()
        )));
    }
    let n = dh_t.rows();
    let h = dh_t.cols();
    let sz = n * h;

    // through h_t = o . tanh(c)
    let mut da_o = Tensor::zeros(vec![n, h]);
    let mut dc = dc_t.clone();
    for idx in 0..sz {
        let o = cache.o.data()[idx];
        let tc = cache.tanh_c.data()[idx];
        let dh = dh_t.data()[idx];
        da_o.data_mut()[idx] = dh * tc * o * (1.0 - o);
        dc.data_mut()[idx] += dh * o * (1.0 - tc * tc);
    }
    // through c = f.c_prev + i.chat
    let mut da_i = Tensor::zeros(vec![n, h]);
    let mut da_f = Tensor::zeros(vec![n, h]);
    let mut da_c = Tensor::zeros(vec![n, h]);
    let mut dc_prev = Tensor::zeros(vec![n, h]);
    for idx in 0..sz {
        let dcv = dc.data()[idx];
        let i = cache.i.data()[idx];
        let f = cache.f.data()[idx];
        let ch = cache.chat.data()[idx];
        da_i.data_mut()[idx] = dcv * ch * i * (1.0 - i);
        da_f.data_mut()[idx] = dcv * cache.c_prev.data()[idx] * f * (1.0 - f);
        da_c.data_mut()[idx] = dcv * i * (1.0 - ch * ch);
        dc_prev.data_mut()[idx] = dcv * f;
    }

    let add_into = |dst: &mut Tensor, src: &Tensor| {
        for (a, b) in dst.data_mut().iter_mut().zip(src.data()) {
            *a += b;
        }
    };
    let colsum_into = |dst: &mut Tensor, src: &Tensor| {
        for r in 0..src.rows() {
            for (a, v) in dst.data_mut().iter_mut().zip(src.row(r)) {
                *a += v;
            }
        }
    };

    let mut dx = matmul_a_bt(&da_i, p.w_i);
    add_into(&mut dx, &matmul_a_bt(&da_f, p.w_f));
    add_into(&mut dx, &matmul_a_bt(&da_o, p.w_o));
    add_into(&mut dx, &matmul_a_bt(&da_c, p.w_c));

    let mut dh_prev = matmul_a_bt(&da_i, p.u_i);
    add_into(&mut dh_prev, &matmul_a_bt(&da_f, p.u_f));
    add_into(&mut dh_prev, &matmul_a_bt(&da_o, p.u_o));
    add_into(&mut dh_prev, &matmul_a_bt(&da_c, p.u_c));

    add_into(&mut acc.w_i, &matmul_at_b(&cache.x, &da_i));
    add_into(&mut acc.w_f, &matmul_at_b(&cache.x, &da_f));
    add_into(&mut acc.w_o, &matmul_at_b(&cache.x, &da_o));
    add_into(&mut acc.w_c, &matmul_at_b(&cache.x, &da_c));
    add_into(&mut acc.u_i, &matmul_at_b(&cache.h_prev, &da_i));
    add_into(&mut acc.u_f, &matmul_at_b(&cache.h_prev, &da_f));
    add_into(&mut acc.u_o, &matmul_at_b(&cache.h_prev, &da_o));
    add_into(&mut acc.u_c, &matmul_at_b(&cache.h_prev, &da_c));
    colsum_into(&mut acc.b_i, &da_i);
    colsum_into(&mut acc.b_f, &da_f);
    colsum_into(&mut acc.b_o, &da_o);
    colsum_into(&mut acc.b_c, &da_c);

    Ok((dx, dh_prev, dc_prev))
}

//! Dense, tanh, batch-norm, and dropout layers with explicit backward passes.

use crate::numerics::tensor::{debug_check_finite, matmul, matmul_a_bt, matmul_at_b, Tensor};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Forward-pass mode. Train updates batch statistics and samples dropout
/// masks; infer uses running statistics and passes inputs through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// y[n,j] = sum_i x[n,i] W[i,j] + b[j]
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.cols() != w.rows() || b.len() != w.cols() {
        return Err(Error::Contract(format!(
            "dense shapes x{:?} W{:?} b{:?}",
            x.shape(),
            w.shape(),
            b.shape()
        )));
    }
    debug_check_finite(x, "dense_forward");
    let mut y = matmul(x, w);
    for r in 0..y.rows() {
        for (v, bv) in y.row_mut(r).iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    Ok(y)
}

/// dx = dy W^T; dW = x^T dy; db = column sums of dy.
pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    if dy.rows() != x.rows() || dy.cols() != w.cols() {
        return Err(Error::Contract(format!(
            "dense backward shapes x{:?} W{:?} dy{:?}",
            x.shape(),
            w.shape(),
            dy.shape()
        )));
    }
    let dx = matmul_a_bt(dy, w);
    let dw = matmul_at_b(x, dy);
    let mut db = Tensor::zeros(vec![w.cols()]);
    for r in 0..dy.rows() {
        for (a, v) in db.data_mut().iter_mut().zip(dy.row(r)) {
            *a += v;
        }
    }
    Ok((dx, dw, db))
}

pub fn tanh_forward(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.tanh());
    y
}

/// dx from the activated output y = tanh(x): dx = dy (1 - y^2).
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    assert!(y.same_shape(dy), "tanh_backward shapes");
    let mut dx = dy.clone();
    for (d, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= 1.0 - yv * yv;
    }
    dx
}

/// Sigmoid that never evaluates exp of a large positive argument.
#[inline]
pub fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Running statistics for one batch-norm layer. The learned gamma/beta live
/// in the model's ParamStore; this struct only tracks inference statistics.
#[derive(Debug, Clone)]
pub struct BatchNormState {
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub fn new(dim: usize, momentum: f64, epsilon: f64) -> Self {
        BatchNormState {
            running_mean: Tensor::zeros(vec![dim]),
            running_var: Tensor::filled(vec![dim], 1.0),
            momentum,
            epsilon,
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }
}

/// Everything batchnorm_backward needs from the matching train-mode forward.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub x_hat: Tensor,
    pub inv_std: Tensor,
    pub gamma: Tensor,
}

/// Train: normalize by batch statistics (biased variance), scale/shift, and
/// fold the batch stats into the running averages. Infer: normalize by the
/// running statistics; no cache is produced.
pub fn batchnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &mut BatchNormState,
    mode: Mode,
) -> Result<(Tensor, Option<BatchNormCache>)> {
    let d = state.dim();
    if x.cols() != d || gamma.len() != d || beta.len() != d {
        return Err(Error::Contract(format!(
            "batchnorm feature dims x{:?} gamma{:?} beta{:?} state {d}",
            x.shape(),
            gamma.shape(),
            beta.shape()
        )));
    }
    debug_check_finite(x, "batchnorm_forward");
    let n = x.rows();
    match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Config(format!(
                    "batchnorm train mode requires batch >= 2, got {n}"
                )));
            }
            let nf = n as f64;
            let mut mean = vec![0.0; d];
            for r in 0..n {
                for (m, v) in mean.iter_mut().zip(x.row(r)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nf);
            // biased variance (divide by N), matching the running stats
            let mut var = vec![0.0; d];
            for r in 0..n {
                for ((vv, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                    let c = v - m;
                    *vv += c * c;
                }
            }
            var.iter_mut().for_each(|v| *v /= nf);

            let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();
            let mut y = Tensor::zeros(vec![n, d]);
            let mut x_hat = Tensor::zeros(vec![n, d]);
            for r in 0..n {
                for j in 0..d {
                    let xh = (x.at(r, j) - mean[j]) * inv_std[j];
                    x_hat.set(r, j, xh);
                    y.set(r, j, gamma.data()[j] * xh + beta.data()[j]);
                }
            }
            let mom = state.momentum;
            for j in 0..d {
                let rm = state.running_mean.data()[j];
                let rv = state.running_var.data()[j];
                state.running_mean.data_mut()[j] = mom * rm + (1.0 - mom) * mean[j];
                state.running_var.data_mut()[j] = mom * rv + (1.0 - mom) * var[j];
            }
            let cache = BatchNormCache {
                x_hat,
                inv_std: Tensor::new(vec![d], inv_std)?,
                gamma: gamma.clone(),
            };
            Ok((y, Some(cache)))
        }
        Mode::Infer => Ok((batchnorm_infer(x, gamma, beta, state)?, None)),
    }
}

/// Infer-mode normalization by running statistics, without touching state.
/// Equals batchnorm_forward in Infer mode; exists so frozen models can be
/// applied through a shared reference.
pub fn batchnorm_infer(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    state: &BatchNormState,
) -> Result<Tensor> {
    let d = state.dim();
    if x.cols() != d || gamma.len() != d || beta.len() != d {
        return Err(Error::Contract(format!(
            "batchnorm feature dims x{:?} gamma{:?} beta{:?} state {d}",
            x.shape(),
            gamma.shape(),
            beta.shape()
        )));
    }
    let mut y = Tensor::zeros(vec![x.rows(), d]);
    for r in 0..x.rows() {
        for j in 0..d {
            let inv = 1.0 / (state.running_var.data()[j] + state.epsilon).sqrt();
            let xh = (x.at(r, j) - state.running_mean.data()[j]) * inv;
            y.set(r, j, gamma.data()[j] * xh + beta.data()[j]);
        }
    }
    Ok(y)
}

/// Full train-mode gradient including the batch mean/variance coupling:
/// dx = (gamma * inv_std / N) * (N dy - sum(dy) - x_hat * sum(dy * x_hat)).
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    if !dy.same_shape(&cache.x_hat) {
        return Err(Error::Contract(format!(
            "batchnorm backward dy{:?} vs cache{:?}",
            dy.shape(),
            cache.x_hat.shape()
        )));
    }
    let (n, d) = (dy.rows(), dy.cols());
    let nf = n as f64;
    let mut dgamma = Tensor::zeros(vec![d]);
    let mut dbeta = Tensor::zeros(vec![d]);
    let mut sum_dy = vec![0.0; d];
    let mut sum_dy_xhat = vec![0.0; d];
    for r in 0..n {
        for j in 0..d {
            let dyv = dy.at(r, j);
            let xh = cache.x_hat.at(r, j);
            dgamma.data_mut()[j] += dyv * xh;
            dbeta.data_mut()[j] += dyv;
            sum_dy[j] += dyv;
            sum_dy_xhat[j] += dyv * xh;
        }
    }
    let mut dx = Tensor::zeros(vec![n, d]);
    for r in 0..n {
        for j in 0..d {
            let g = cache.gamma.data()[j];
            let inv = cache.inv_std.data()[j];
            let xh = cache.x_hat.at(r, j);
            let v = g * inv / nf * (nf * dy.at(r, j) - sum_dy[j] - xh * sum_dy_xhat[j]);
            dx.set(r, j, v);
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Inverted dropout: train scales kept entries by 1/(1-p) so infer is the
/// identity. Mask entries are 0 or 1/(1-p) and feed the backward pass.
pub fn dropout_forward(
    x: &Tensor,
    p: f64,
    stream: &mut RngStream,
    mode: Mode,
) -> Result<(Tensor, Tensor)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout p={p} outside [0,1)")));
    }
    match mode {
        Mode::Infer => Ok((x.clone(), Tensor::filled(x.shape().to_vec(), 1.0))),
        Mode::Train => {
            let scale = 1.0 / (1.0 - p);
            let mut mask = Tensor::zeros(x.shape().to_vec());
            for m in mask.data_mut() {
                // keep with probability 1-p
                if stream.next_f64() >= p {
                    *m = scale;
                }
            }
            let mut y = x.clone();
            for (v, m) in y.data_mut().iter_mut().zip(mask.data()) {
                *v *= m;
            }
            Ok((y, mask))
        }
    }
}

pub fn dropout_backward(mask: &Tensor, dy: &Tensor) -> Tensor {
    assert!(mask.same_shape(dy), "dropout_backward shapes");
    let mut dx = dy.clone();
    for (d, m) in dx.data_mut().iter_mut().zip(mask.data()) {
        *d *= m;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_identity_and_bias() {
        let x = Tensor::from_rows(&[vec![1.0]]);
        let w = Tensor::from_rows(&[vec![1.0]]);
        let b = Tensor::new(vec![1], vec![0.0]).unwrap();
        let y = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[1.0]);

        let x0 = Tensor::from_rows(&[vec![0.0, 0.0]]);
        let w2 = Tensor::from_rows(&[vec![0.7, -0.2], vec![1.5, 0.9]]);
        let b2 = Tensor::new(vec![2], vec![3.0, -1.0]).unwrap();
        let y0 = dense_forward(&x0, &w2, &b2).unwrap();
        assert_eq!(y0.data(), &[3.0, -1.0]);
    }

    #[test]
    fn dense_shape_mismatch_is_contract_error() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0]]);
        let w = Tensor::from_rows(&[vec![1.0]]);
        let b = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert!(matches!(
            dense_forward(&x, &w, &b),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn dense_backward_scalar_chain() {
        let x = Tensor::from_rows(&[vec![2.0]]);
        let w = Tensor::from_rows(&[vec![3.0]]);
        let dy = Tensor::from_rows(&[vec![1.0]]);
        let (dx, dw, db) = dense_backward(&x, &w, &dy).unwrap();
        assert_eq!(dx.data(), &[3.0]);
        assert_eq!(dw.data(), &[2.0]);
        assert_eq!(db.data(), &[1.0]);
    }

    #[test]
    fn dense_backward_zero_dy() {
        let x = Tensor::from_rows(&[vec![0.4, -0.3], vec![1.0, 2.0]]);
        let w = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![-0.1, 0.0, 0.5]]);
        let dy = Tensor::zeros(vec![2, 3]);
        let (dx, dw, db) = dense_backward(&x, &w, &dy).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(dw.data().iter().all(|&v| v == 0.0));
        assert!(db.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dense_db_equals_column_sums() {
        let x = Tensor::from_rows(&[vec![0.4, -0.3], vec![1.0, 2.0], vec![-0.5, 0.25]]);
        let w = Tensor::from_rows(&[vec![0.1, 0.2], vec![-0.1, 0.5]]);
        let dy = Tensor::filled(vec![3, 2], 1.0);
        let (_, _, db) = dense_backward(&x, &w, &dy).unwrap();
        assert_eq!(db.data(), &[3.0, 3.0]);
    }

    #[test]
    fn tanh_zero_and_saturation() {
        let y = tanh_forward(&Tensor::new(vec![3], vec![0.0, 25.0, -25.0]).unwrap());
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 1.0).abs() < 1e-15);
        assert!((y.data()[2] + 1.0).abs() < 1e-15);
        let dy = Tensor::filled(vec![3], 1.0);
        let dx = tanh_backward(&y, &dy);
        assert_eq!(dx.data()[0], 1.0);
        assert!(dx.data()[1].abs() < 1e-15 && dx.data()[1].is_finite());
        assert!(dx.data()[2].abs() < 1e-15 && dx.data()[2].is_finite());
    }

    #[test]
    fn sigmoid_stable_at_extremes() {
        assert_eq!(stable_sigmoid(0.0), 0.5);
        assert!((stable_sigmoid(700.0) - 1.0).abs() < 1e-15);
        assert!(stable_sigmoid(-700.0) > 0.0);
        assert!(stable_sigmoid(-700.0) < 1e-300);
        assert!(stable_sigmoid(-700.0).is_finite());
    }

    #[test]
    fn batchnorm_standardized_input_passthrough() {
        // two rows at -1 and +1: batch mean 0, biased var 1
        let x = Tensor::from_rows(&[vec![-1.0, -1.0], vec![1.0, 1.0]]);
        let gamma = Tensor::filled(vec![2], 1.0);
        let beta = Tensor::zeros(vec![2]);
        let mut st = BatchNormState::new(2, 0.9, 1e-5);
        let (y, cache) = batchnorm_forward(&x, &gamma, &beta, &mut st, Mode::Train).unwrap();
        assert!(cache.is_some());
        for (got, want) in y.data().iter().zip(x.data()) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
        // running stats moved toward the batch: mean 0.9*0+0.1*0, var 0.9*1+0.1*1
        assert_eq!(st.running_mean.data(), &[0.0, 0.0]);
        assert!((st.running_var.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_infer_unit_stats() {
        let x = Tensor::from_rows(&[vec![0.3, -0.8]]);
        let gamma = Tensor::filled(vec![2], 1.0);
        let beta = Tensor::zeros(vec![2]);
        let mut st = BatchNormState::new(2, 0.9, 1e-5);
        let (y, cache) = batchnorm_forward(&x, &gamma, &beta, &mut st, Mode::Infer).unwrap();
        assert!(cache.is_none());
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        for (got, want) in y.data().iter().zip(x.data()) {
            assert!((got - want * scale).abs() < 1e-15);
        }
    }

    #[test]
    fn batchnorm_train_needs_two_rows() {
        let x = Tensor::from_rows(&[vec![0.3]]);
        let gamma = Tensor::filled(vec![1], 1.0);
        let beta = Tensor::zeros(vec![1]);
        let mut st = BatchNormState::new(1, 0.9, 1e-5);
        assert!(matches!(
            batchnorm_forward(&x, &gamma, &beta, &mut st, Mode::Train),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn batchnorm_backward_zero_dy_and_symmetry() {
        let x = Tensor::from_rows(&[vec![0.2, 1.0], vec![-0.4, 2.0], vec![0.9, -3.0]]);
        let gamma = Tensor::new(vec![2], vec![1.3, 0.7]).unwrap();
        let beta = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
        let mut st = BatchNormState::new(2, 0.9, 1e-5);
        let (_, cache) = batchnorm_forward(&x, &gamma, &beta, &mut st, Mode::Train).unwrap();
        let cache = cache.unwrap();
        let (dx, dg, db) = batchnorm_backward(&cache, &Tensor::zeros(vec![3, 2])).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(dg.data().iter().all(|&v| v == 0.0));
        assert!(db.data().iter().all(|&v| v == 0.0));

        // identical rows with identical dy rows give identical dx rows
        let xi = Tensor::from_rows(&[vec![0.5, -0.1], vec![0.5, -0.1], vec![0.5, -0.1]]);
        // zero variance: inv_std = 1/sqrt(eps), still finite
        let mut st2 = BatchNormState::new(2, 0.9, 1e-5);
        let (_, c2) = batchnorm_forward(&xi, &gamma, &beta, &mut st2, Mode::Train).unwrap();
        let dy = Tensor::from_rows(&[vec![0.3, 0.7], vec![0.3, 0.7], vec![0.3, 0.7]]);
        let (dx2, _, _) = batchnorm_backward(&c2.unwrap(), &dy).unwrap();
        for r in 1..3 {
            for j in 0..2 {
                assert_eq!(dx2.at(r, j), dx2.at(0, j));
            }
        }
    }

    #[test]
    fn dropout_p_zero_and_infer_identity() {
        let x = Tensor::new(vec![4], vec![1.0, -2.0, 3.0, -4.0]).unwrap();
        let mut s = RngStream::new(5, "dropout");
        let (y, mask) = dropout_forward(&x, 0.0, &mut s, Mode::Train).unwrap();
        assert_eq!(y.data(), x.data());
        assert!(mask.data().iter().all(|&m| m == 1.0));
        let (yi, mi) = dropout_forward(&x, 0.6, &mut s, Mode::Infer).unwrap();
        assert_eq!(yi.data(), x.data());
        assert!(mi.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn dropout_rejects_bad_p() {
        let x = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut s = RngStream::new(5, "dropout");
        assert!(dropout_forward(&x, 1.0, &mut s, Mode::Train).is_err());
        assert!(dropout_forward(&x, -0.1, &mut s, Mode::Train).is_err());
    }

    #[test]
    fn dropout_keep_fraction_and_expectation() {
        let n = 100_000;
        let x = Tensor::filled(vec![n], 2.0);
        let mut s = RngStream::new(77, "dropout_mc");
        let (y, mask) = dropout_forward(&x, 0.25, &mut s, Mode::Train).unwrap();
        let kept = mask.data().iter().filter(|&&m| m > 0.0).count() as f64 / n as f64;
        assert!((kept - 0.75).abs() < 0.01, "kept fraction {kept}");
        let mean_y = y.data().iter().sum::<f64>() / n as f64;
        assert!((mean_y - 2.0).abs() < 0.04, "E[y] {mean_y}");
    }

    #[test]
    fn dropout_backward_routes_through_mask() {
        let x = Tensor::new(vec![6], vec![1.0; 6]).unwrap();
        let mut s = RngStream::new(9, "dropout_bw");
        let (_, mask) = dropout_forward(&x, 0.5, &mut s, Mode::Train).unwrap();
        let dy = Tensor::filled(vec![6], 1.0);
        let dx = dropout_backward(&mask, &dy);
        for (d, m) in dx.data().iter().zip(mask.data()) {
            assert_eq!(d, m);
        }
    }
}

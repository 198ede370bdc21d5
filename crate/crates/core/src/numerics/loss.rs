//! Mean squared error over all tensor entries.

use crate::numerics::tensor::Tensor;
use crate::{Error, Result};

/// loss = mean((pred - target)^2); dpred = 2(pred - target)/count.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if !pred.same_shape(target) {
        return Err(Error::Contract(format!(
            "mse shapes {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut dpred = Tensor::zeros(pred.shape().to_vec());
    let mut loss = 0.0;
    for ((d, &p), &t) in dpred.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let e = p - t;
        loss += e * e;
        *d = 2.0 * e / n;
    }
    Ok((loss / n, dpred))
}

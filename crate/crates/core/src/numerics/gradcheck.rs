//! Central finite-difference verification of analytic gradients.

use crate::numerics::params::ParamStore;
use crate::rng::RngStream;
use crate::{Error, Result};

/// Perturbation half-width for central differences.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares the analytic gradients already stored in `params` against central
/// finite differences of `loss`. The closure must be a deterministic pure
/// function of the parameter values (pin dropout masks, use infer-mode
/// statistics, fixed inputs). Checks up to `samples_per_param` entries of
/// each parameter tensor, chosen from `pick`; pass `usize::MAX` to check all.
///
/// Relative error per entry: |a - n| / max(|a| + |n|, 1e-6).
pub fn grad_check<L>(
    mut loss: L,
    params: &mut ParamStore,
    samples_per_param: usize,
    tolerance: f64,
    pick: &mut RngStream,
) -> Result<GradCheckReport>
where
    L: FnMut(&ParamStore) -> f64,
{
    let base_a = loss(params);
    let base_b = loss(params);
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::NonDeterministic(format!(
            "grad_check closure returned {base_a} then {base_b} at the same point"
        )));
    }

    let names: Vec<String> = params.names().to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        tolerance,
        pass: true,
    };
    for name in &names {
        let len = params.get(name).value.len();
        let indices: Vec<usize> = if samples_per_param >= len {
            (0..len).collect()
        } else {
            (0..samples_per_param)
                .map(|_| pick.next_below(len as u64) as usize)
                .collect()
        };
        for k in indices {
            let analytic = params.get(name).grad.data()[k];
            let orig = params.get(name).value.data()[k];
            let wp = orig + FD_STEP;
            let wm = orig - FD_STEP;
            params.get_mut(name).value.data_mut()[k] = wp;
            let lp = loss(params);
            params.get_mut(name).value.data_mut()[k] = wm;
            let lm = loss(params);
            params.get_mut(name).value.data_mut()[k] = orig;
            let numeric = (lp - lm) / (wp - wm);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = k;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    report.pass = report.max_rel_err < tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::tensor::Tensor;
    use std::cell::Cell;

    #[test]
    fn linear_sum_closure_is_exact() {
        let mut store = ParamStore::new();
        store
            .insert("w", Tensor::new(vec![3], vec![0.2, -0.7, 1.5]).unwrap())
            .unwrap();
        store.insert("v", Tensor::scalar(4.0)).unwrap();
        // loss = sum of all values; analytic gradient is exactly one
        store.add_grad("w", &Tensor::filled(vec![3], 1.0));
        store.add_grad("v", &Tensor::scalar(1.0));
        let report = grad_check(
            |s| {
                s.iter()
                    .flat_map(|(_, p)| p.value.data())
                    .sum::<f64>()
            },
            &mut store,
            usize::MAX,
            1e-8,
            &mut RngStream::new(0, "pick"),
        )
        .unwrap();
        assert!(report.pass, "{report:?}");
        assert_eq!(report.checked, 4);
        assert!(report.max_rel_err < 1e-9);
    }

    #[test]
    fn wrong_gradient_fails() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(0.3)).unwrap();
        store.add_grad("w", &Tensor::scalar(2.0)); // true grad of w^2 at 0.3 is 0.6
        let report = grad_check(
            |s| {
                let w = s.value("w").data()[0];
                w * w
            },
            &mut store,
            usize::MAX,
            1e-4,
            &mut RngStream::new(0, "pick"),
        )
        .unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn values_restored_after_check() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(0.123456789)).unwrap();
        store.add_grad("w", &Tensor::scalar(0.246913578));
        let _ = grad_check(
            |s| s.value("w").data()[0].powi(2),
            &mut store,
            usize::MAX,
            1e-4,
            &mut RngStream::new(0, "pick"),
        )
        .unwrap();
        assert_eq!(store.value("w").data()[0], 0.123456789);
    }

    #[test]
    fn nondeterministic_closure_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0)).unwrap();
        let calls = Cell::new(0u32);
        let err = grad_check(
            |_| {
                calls.set(calls.get() + 1);
                calls.get() as f64
            },
            &mut store,
            usize::MAX,
            1e-4,
            &mut RngStream::new(0, "pick"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonDeterministic(_)));
    }
}

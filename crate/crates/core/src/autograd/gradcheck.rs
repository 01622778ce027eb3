//! Central finite-difference verification of analytic gradients.

use super::{ComputationRecord, Tensor};
use crate::error::Result;

/// Outcome of a [`grad_check`] run.
#[derive(Clone, Debug)]
pub struct CheckReport {
    /// Largest relative error over the checked coordinates.
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Coordinates compared against central differences.
    pub checked: usize,
    /// Coordinates skipped because the one-sided differences disagree
    /// (a kink, i.e. a non-differentiable point) or the function left its
    /// domain under perturbation.
    pub excluded: usize,
    pub pass: bool,
}

/// Compare the analytic gradient of a scalar-valued tensor function against
/// central finite differences `(f(x+h) - f(x-h)) / 2h` at `point`.
///
/// Failures are reported, never thrown: an unevaluable base point yields a
/// failing report with zero checked coordinates.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64, tolerance: f64) -> CheckReport
where
    F: Fn(&mut ComputationRecord, &Tensor) -> Result<Tensor>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut rec = ComputationRecord::new();
        let x = rec.leaf(t);
        let out = f(&mut rec, &x)?;
        out.item()
    };

    let failed = |excluded: usize| CheckReport {
        max_rel_error: f64::INFINITY,
        tolerance,
        checked: 0,
        excluded,
        pass: false,
    };

    let f0 = match eval(point) {
        Ok(v) => v,
        Err(_) => return failed(0),
    };

    let analytic = {
        let mut rec = ComputationRecord::new();
        let x = rec.leaf(point);
        let loss = match f(&mut rec, &x) {
            Ok(l) => l,
            Err(_) => return failed(0),
        };
        let grads = match rec.backward(&loss) {
            Ok(g) => g,
            Err(_) => return failed(0),
        };
        grads.get(&x).expect("leaf belongs to record").to_vec()
    };

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    let mut excluded = 0;
    let mut data = point.data().to_vec();

    for i in 0..data.len() {
        let orig = data[i];

        data[i] = orig + step;
        let fp = eval(&Tensor::new(point.shape().to_vec(), data.clone()).expect("same shape"));
        data[i] = orig - step;
        let fm = eval(&Tensor::new(point.shape().to_vec(), data.clone()).expect("same shape"));
        data[i] = orig;

        let (fp, fm) = match (fp, fm) {
            (Ok(a), Ok(b)) => (a, b),
            _ => {
                excluded += 1;
                continue;
            }
        };

        let forward = (fp - f0) / step;
        let backward = (f0 - fm) / step;
        if (forward - backward).abs() > 0.05 * (1.0 + forward.abs().max(backward.abs())) {
            // the two one-sided slopes disagree: non-differentiable point
            excluded += 1;
            continue;
        }

        let central = (fp - fm) / (2.0 * step);
        let denom = analytic[i].abs().max(central.abs()).max(1e-4);
        max_rel = max_rel.max((analytic[i] - central).abs() / denom);
        checked += 1;
    }

    CheckReport {
        max_rel_error: max_rel,
        tolerance,
        checked,
        excluded,
        pass: max_rel < tolerance,
    }
}

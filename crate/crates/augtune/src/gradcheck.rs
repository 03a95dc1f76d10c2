//! Central-difference gradient checking.
//!
//! Used throughout the test suites to verify analytic gradients of layers,
//! losses and the unrolled hypergradient against an independent numerical
//! estimate.

use crate::tensor::Tensor;

/// Worst relative error between analytic and numerical derivatives.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `f` at `x0`.
///
/// `f` must be a deterministic function of its input (fix all seeds before
/// calling). Relative error uses `|a - n| / max(|a|, |n|, floor)` with a
/// small floor so agreeing near-zero entries do not blow up the ratio.
pub fn check_gradient(
    mut f: impl FnMut(&Tensor) -> f64,
    x0: &Tensor,
    analytic: &Tensor,
    h: f64,
) -> GradCheckReport {
    assert_eq!(x0.shape(), analytic.shape(), "gradient shape mismatch");
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let floor = 1e-7;
    for i in 0..x0.numel() {
        let mut xp = x0.clone();
        xp.data_mut()[i] += h;
        let fp = f(&xp);
        let mut xm = x0.clone();
        xm.data_mut()[i] -= h;
        let fm = f(&xm);
        let num = (fp - fm) / (2.0 * h);
        let ana = analytic.data()[i];
        let abs = (num - ana).abs();
        let rel = abs / num.abs().max(ana.abs()).max(floor);
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(rel);
    }
    GradCheckReport {
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        checked: x0.numel(),
    }
}

/// Central difference of a scalar-input function.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes() {
        let x0 = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
        let analytic = Tensor::from_vec(vec![2.0, -4.0, 1.0]);
        let rep = check_gradient(
            |x| x.data().iter().map(|v| v * v).sum(),
            &x0,
            &analytic,
            1e-5,
        );
        assert!(rep.max_rel_err < 1e-8, "{rep:?}");
    }

    #[test]
    fn wrong_gradient_detected() {
        let x0 = Tensor::from_vec(vec![1.0]);
        let analytic = Tensor::from_vec(vec![3.0]);
        let rep = check_gradient(|x| x.data()[0] * x.data()[0], &x0, &analytic, 1e-5);
        assert!(rep.max_rel_err > 0.1);
    }
}

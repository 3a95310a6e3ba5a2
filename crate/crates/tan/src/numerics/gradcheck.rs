//! Central finite-difference gradient checker.

use super::tensor::{Scalar, Tensor};

/// Perturbs every parameter coordinate by ±eps, forms the central
/// difference quotient of `f`, and compares it against the provided
/// analytic gradient. Returns the maximum relative discrepancy, where the
/// per-coordinate denominator is floored at 1e-3 so near-zero gradient
/// pairs are compared on an absolute scale.
pub fn finite_difference_check<T: Scalar>(
    f: &mut dyn FnMut(&[Tensor<T>]) -> T,
    params: &[Tensor<T>],
    analytic: &[Tensor<T>],
    eps: f64,
) -> f64 {
    assert!(eps > 0.0, "finite differences need a positive step");
    assert_eq!(params.len(), analytic.len());
    let step = T::from_f64(eps);
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, grad) in analytic.iter().enumerate() {
        assert_eq!(params[pi].shape(), grad.shape());
        for ci in 0..params[pi].numel() {
            let original = params[pi].data()[ci];
            work[pi].data_mut()[ci] = original + step;
            let plus = f(&work).as_f64();
            work[pi].data_mut()[ci] = original - step;
            let minus = f(&work).as_f64();
            work[pi].data_mut()[ci] = original;
            let fd = (plus - minus) / (2.0 * eps);
            let bp = grad.data()[ci].as_f64();
            let rel = (fd - bp).abs() / fd.abs().max(bp.abs()).max(1e-3);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let params = vec![Tensor::vector(vec![1.5f64, -2.0, 0.25])];
        let mut f = |ps: &[Tensor<f64>]| ps[0].data().iter().map(|&x| x * x).sum::<f64>();
        let analytic = vec![Tensor::vector(
            params[0].data().iter().map(|&x| 2.0 * x).collect(),
        )];
        let err = finite_difference_check(&mut f, &params, &analytic, 1e-5);
        assert!(err < 1e-8, "quadratic check error {err}");
    }

    #[test]
    fn constant_function_has_zero_discrepancy() {
        let params = vec![Tensor::vector(vec![3.0f64, 4.0])];
        let mut f = |_: &[Tensor<f64>]| 7.0f64;
        let analytic = vec![Tensor::zeros(&[2])];
        let err = finite_difference_check(&mut f, &params, &analytic, 1e-5);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn detects_a_corrupted_gradient() {
        let params = vec![Tensor::vector(vec![1.0f64, 2.0])];
        let mut f = |ps: &[Tensor<f64>]| {
            let mut tape = Tape::new();
            let p = tape.param(&ps[0]);
            let s = tape.sum(p);
            tape.value(s).item()
        };
        let corrupted = vec![Tensor::vector(vec![1.0f64, 1.5])];
        let err = finite_difference_check(&mut f, &params, &corrupted, 1e-5);
        assert!(err > 1e-2, "corruption went unnoticed: {err}");
    }
}

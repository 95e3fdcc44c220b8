//! Central finite-difference gradient oracle.
//!
//! This is the independent check every differentiable op and loss is tested
//! against; it never calls into the graph backward pass.

use crate::tensor::Tensor;

/// Central-difference gradient estimate of a scalar function, coordinate by
/// coordinate: `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_difference_gradient<E>(
    mut f: impl FnMut(&Tensor<f64>) -> std::result::Result<f64, E>,
    x: &Tensor<f64>,
    step: f64,
) -> std::result::Result<Tensor<f64>, E> {
    assert!(step > 0.0, "step must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape().to_vec());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Worst per-coordinate relative error between an analytic gradient and a
/// finite-difference estimate, with the denominator floored at 1 so that
/// near-zero coordinates are compared absolutely.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Default finite-difference step used by the 64-bit oracle suites.
pub const FD_STEP: f64 = 1e-3;

/// Relative-error bound the analytic gradients are held to.
pub const FD_TOLERANCE: f64 = 1e-4;

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::row(vec![0.4, -2.0, 7.0]);
        let g = finite_difference_gradient::<Infallible>(
            |t| Ok(t.data().iter().sum()),
            &x,
            1e-3,
        )
        .unwrap();
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn square_at_three_is_six() {
        let x = Tensor::scalar(3.0);
        let g = finite_difference_gradient::<Infallible>(
            |t| Ok(t.item() * t.item()),
            &x,
            1e-3,
        )
        .unwrap();
        // Symmetric difference cancels the even-order error term.
        assert!((g.item() - 6.0).abs() < 1e-9, "{}", g.item());
    }
}

//! Central finite-difference oracle for verifying backward passes.

use crate::nn::{Scalar, Tensor};

/// Gradient entries whose magnitude is below this fraction of the tensor's
/// largest gradient are compared against that floor instead of themselves.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every entry `i`, evaluated in `f64`.
pub fn numeric_grad(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    out
}

/// Like [`numeric_grad`] but only for the listed flat indices.
pub fn numeric_grad_at(x: &Tensor<f64>, indices: &[usize], h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Fourth-order five-point stencil
/// `(-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h` at the listed flat
/// indices. Truncation error is `O(h^4)`, which keeps the oracle accurate on
/// steep compositions where the plain central difference is not.
pub fn numeric_grad5_at(
    x: &Tensor<f64>,
    indices: &[usize],
    h: f64,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
) -> Vec<f64> {
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let orig = probe.data()[i];
            let mut at = |d: f64| {
                probe.data_mut()[i] = orig + d;
                f(&probe)
            };
            let v = -at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h);
            probe.data_mut()[i] = orig;
            v / (12.0 * h)
        })
        .collect()
}

/// Five-point estimate of `d/dt f(t)` at `t = 0`. Checking a gradient
/// against the derivative along a random direction probes every entry at
/// once with a far larger signal than any single entry gives, which keeps
/// round-off below the 64-bit tolerance on deep compositions.
pub fn directional_derivative(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

/// Largest relative error between analytic and numeric gradients.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = (scale * RELATIVE_FLOOR).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn assert_grad_close<T: Scalar>(analytic: &Tensor<T>, numeric: &Tensor<f64>, tol: f64) {
    assert_eq!(analytic.shape(), numeric.shape());
    let a: Vec<f64> = analytic.cast::<f64>().into_data();
    let err = max_relative_error(&a, numeric.data());
    assert!(err < tol, "max relative gradient error {err:e} exceeds {tol:e}");
}

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::nn::{Scalar, Tensor};

/// Rounds every entry to the nearest integer, ties to even.
pub fn quantize<T: Scalar>(m: &Tensor<T>) -> Tensor<T> {
    m.map(round_half_even)
}

pub fn round_half_even<T: Scalar>(x: T) -> T {
    let r = x.round();
    if (r - x).abs() == T::lit(0.5) {
        // `round` sends ties away from zero; step back toward the even neighbour
        let half = r / T::lit(2.0);
        if half.fract() != T::zero() {
            return r - (r - x).signum();
        }
    }
    r
}

/// Quantized values as integers. Values beyond the `i32` range saturate.
pub fn to_symbols<T: Scalar>(q: &Tensor<T>) -> Vec<i32> {
    q.data().iter().map(|v| v.to_f64().unwrap_or(0.0) as i32).collect()
}

/// Training surrogate for [`quantize`]: adds independent `U[-0.5, 0.5]` noise.
pub fn add_uniform_noise<T: Scalar, R: Rng + ?Sized>(m: &Tensor<T>, rng: &mut R) -> Tensor<T> {
    let dist = Uniform::new_inclusive(-0.5f64, 0.5).expect("valid bounds");
    let data = m.data().iter().map(|&v| v + T::lit(dist.sample(rng))).collect();
    Tensor::from_vec(m.shape(), data).expect("same length")
}

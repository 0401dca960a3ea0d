//! Checks a convolution's analytic input gradient against central finite
//! differences, in 64-bit and 32-bit arithmetic.

use deepcmc::nn::gradcheck::{max_relative_error, numeric_grad};
use deepcmc::nn::{conv2d, conv2d_backward, he_uniform, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> deepcmc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x: Tensor<f64> = he_uniform(&[1, 2, 8, 8], 1, &mut rng);
    let k: Tensor<f64> = he_uniform(&[4, 2, 5, 5], 50, &mut rng);
    let b: Tensor<f64> = he_uniform(&[4], 1, &mut rng);
    let w: Tensor<f64> = he_uniform(&[1, 4, 8, 8], 1, &mut rng);

    // loss = <w, conv(x)>, so the upstream gradient is w
    let loss = |x: &Tensor<f64>| -> f64 {
        let y = conv2d(x, &k, &b).expect("valid shapes");
        y.data().iter().zip(w.data()).map(|(a, c)| a * c).sum()
    };
    let numeric = numeric_grad(&x, 1e-4, loss);

    let g64 = conv2d_backward(&x, &k, &w)?;
    let e64 = max_relative_error(g64.input.data(), numeric.data());
    let g32 = conv2d_backward(&x.cast::<f32>(), &k.cast(), &w.cast())?;
    let a32: Vec<f64> = g32.input.data().iter().map(|&v| v as f64).collect();
    let e32 = max_relative_error(&a32, numeric.data());

    println!("conv2d input gradient: max relative error {e64:.2e} (f64), {e32:.2e} (f32)");
    Ok(())
}

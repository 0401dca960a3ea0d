//! Entropy-codes a skewed integer feature tensor with tables built from a
//! known distribution and compares the payload with the ideal code length.

use deepcmc::entropy::{entropy_decode, entropy_encode, ideal_bits, CodingModel, FrequencyTable, QuantizedFeatures};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> deepcmc::Result<()> {
    let (channels, height, width) = (16, 8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::<f64>::new(0.0, 1.5).expect("finite deviation");
    let mut values: Vec<i32> = (0..channels * height * width)
        .map(|_| normal.sample(&mut rng).round() as i32)
        .collect();
    // a few values far outside the table support travel as escapes
    for _ in 0..4 {
        let i = rng.random_range(0..values.len());
        values[i] = 1000;
    }
    let q = QuantizedFeatures::new(channels, height, width, values)?;

    // discretized Gaussian over [-8, 8]
    let mut probs: Vec<f64> = (-8..=8)
        .map(|k: i32| (-(k as f64).powi(2) / (2.0 * 1.5f64.powi(2))).exp())
        .collect();
    // the last entry is the escape symbol
    probs.push(1e-2);
    let table = FrequencyTable::from_probabilities(-8, &probs)?;
    let model = CodingModel::new(vec![table; channels]);

    let payload = entropy_encode(&q, &model)?;
    let back = entropy_decode(&payload, &model, channels, height, width)?;
    assert_eq!(back, q);
    println!(
        "{} symbols: {} payload bits, {:.1} ideal bits",
        q.len(),
        8 * payload.bytes.len(),
        ideal_bits(&q, &model)?
    );
    Ok(())
}

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::Dataset;
use crate::csi::ChannelMatrix;
use crate::entropy::ideal_bits;
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};
use crate::pipeline::compress::compress_sample;
use crate::pipeline::{decompress, DeepCmc, LambdaTable};

fn same_shape(h: &ChannelMatrix, h_hat: &ChannelMatrix) -> Result<()> {
    if (h.n_c(), h.n_t()) != (h_hat.n_c(), h_hat.n_t()) {
        return Err(Error::Shape(format!(
            "comparing {}x{} with {}x{}",
            h.n_c(),
            h.n_t(),
            h_hat.n_c(),
            h_hat.n_t()
        )));
    }
    Ok(())
}

fn c64(z: num_complex::Complex32) -> Complex64 {
    Complex64::new(z.re as f64, z.im as f64)
}

/// `||H - H_hat||^2 / ||H||^2`.
pub fn nmse_ratio(h: &ChannelMatrix, h_hat: &ChannelMatrix) -> Result<f64> {
    same_shape(h, h_hat)?;
    let reference = h.frobenius_sq();
    if reference == 0.0 {
        return Err(Error::ZeroNorm("reference channel"));
    }
    let err: f64 = h
        .entries()
        .iter()
        .zip(h_hat.entries())
        .map(|(a, b)| (c64(*a) - c64(*b)).norm_sqr())
        .sum();
    Ok(err / reference)
}

/// Normalized squared error in dB. A perfect reconstruction gives
/// negative infinity.
pub fn nmse(h: &ChannelMatrix, h_hat: &ChannelMatrix) -> Result<f64> {
    Ok(10.0 * nmse_ratio(h, h_hat)?.log10())
}

/// dB value of the mean of per-sample NMSE ratios.
pub fn nmse_db(ratios: &[f64]) -> f64 {
    if ratios.is_empty() {
        return f64::NAN;
    }
    10.0 * (ratios.iter().sum::<f64>() / ratios.len() as f64).log10()
}

/// Mean over subcarriers of `|h_hat_n^H h_n| / (||h_hat_n|| ||h_n||)`.
///
/// A subcarrier where either vector is zero is an error when `strict`;
/// otherwise it is left out of the mean (and `0` is returned when no
/// subcarrier is left).
pub fn cosine_corr(h: &ChannelMatrix, h_hat: &ChannelMatrix, strict: bool) -> Result<f64> {
    same_shape(h, h_hat)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for n in 0..h.n_c() {
        let (a, b) = (h.row(n), h_hat.row(n));
        let na: f64 = a.iter().map(|z| c64(*z).norm_sqr()).sum();
        let nb: f64 = b.iter().map(|z| c64(*z).norm_sqr()).sum();
        if na == 0.0 || nb == 0.0 {
            if strict {
                return Err(Error::ZeroNorm("subcarrier row"));
            }
            continue;
        }
        let dot: Complex64 = a.iter().zip(b).map(|(x, y)| c64(*y).conj() * c64(*x)).sum();
        sum += (dot.norm() / (na * nb).sqrt()).min(1.0);
        used += 1;
    }
    Ok(if used == 0 { 0.0 } else { sum / used as f64 })
}

/// Averages over a test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    /// `(16 + 8 * payload bytes) / (n_c n_t)`.
    pub bit_rate: f64,
    /// Payload bits only.
    pub payload_bit_rate: f64,
    /// Every framed bit, including header and checksum.
    pub framed_bit_rate: f64,
    /// Ideal code length of the quantized latents under the coding tables.
    pub entropy: f64,
    /// Cross-entropy of the quantized latents under the learned prior.
    pub model_rate: f64,
    pub nmse_db: f64,
    pub rho: f64,
}

struct SampleEval {
    bit_rate: f64,
    payload_bit_rate: f64,
    framed_bit_rate: f64,
    entropy: f64,
    model_rate: f64,
    nmse: f64,
    rho: f64,
}

fn eval_sample<T: Scalar>(h: &ChannelMatrix, model: &DeepCmc<T>) -> Result<SampleEval> {
    let (pc, pt) = model.arch().padded_dims(h.n_c(), h.n_t());
    let coded = compress_sample(&h.zero_pad(pc, pt)?, model)?;
    let mut stream = coded.bitstream;
    stream.n_c = h.n_c() as u16;
    stream.n_t = h.n_t() as u16;
    let h_hat = decompress(&stream, model)?;
    let dims = (h.n_c() * h.n_t()) as f64;
    let q = &coded.symbols;
    let latent = Tensor::<T>::from_vec(
        &[1, q.channels, q.height, q.width],
        q.values.iter().map(|&v| T::lit(v as f64)).collect(),
    )?;
    let model_bits: f64 = model
        .prior
        .likelihoods(&latent)?
        .data()
        .iter()
        .map(|p| -p.to_f64().unwrap_or(0.0).log2())
        .sum();
    Ok(SampleEval {
        bit_rate: stream.bit_rate(),
        payload_bit_rate: stream.payload_bit_rate(),
        framed_bit_rate: stream.framed_bits() as f64 / dims,
        entropy: ideal_bits(q, model.coding()?)? / dims,
        model_rate: model_bits / dims,
        nmse: nmse_ratio(h, &h_hat)?,
        rho: cosine_corr(h, &h_hat, false)?,
    })
}

/// Compresses and reconstructs every sample (in parallel) and averages the
/// rate and distortion metrics. Matrices whose sides are not multiples of 16
/// are zero-padded for coding and cropped before measuring.
pub fn evaluate<T: Scalar>(model: &DeepCmc<T>, test: &Dataset) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Config("test set is empty".into()));
    }
    let per: Vec<SampleEval> = test
        .samples()
        .par_iter()
        .map(|h| eval_sample(h, model))
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let mean = |f: fn(&SampleEval) -> f64| per.iter().map(f).sum::<f64>() / n;
    let ratios: Vec<f64> = per.iter().map(|s| s.nmse).collect();
    Ok(EvalReport {
        samples: per.len(),
        bit_rate: mean(|s| s.bit_rate),
        payload_bit_rate: mean(|s| s.payload_bit_rate),
        framed_bit_rate: mean(|s| s.framed_bit_rate),
        entropy: mean(|s| s.entropy),
        model_rate: mean(|s| s.model_rate),
        nmse_db: nmse_db(&ratios),
        rho: mean(|s| s.rho),
    })
}

/// One point of a rate-distortion sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    pub lambda: f64,
    /// Bits per channel dimension including the 16-bit lambda id.
    pub bit_rate: f64,
    pub payload_bit_rate: f64,
    pub entropy: f64,
    pub nmse_db: f64,
    pub rho: f64,
}

pub const RD_CSV_HEADER: &str = "lambda,bit_rate,entropy,nmse_db,rho";

/// Evaluates each checkpoint on the test set, one point per checkpoint.
pub fn rd_sweep<T: Scalar>(models: &[DeepCmc<T>], lambdas: &LambdaTable, test: &Dataset) -> Result<Vec<RdPoint>> {
    if let Some(first) = models.first() {
        if let Some(other) = models.iter().find(|m| m.arch() != first.arch()) {
            return Err(Error::Config(format!(
                "checkpoints differ in architecture: {:?} vs {:?}",
                first.arch(),
                other.arch()
            )));
        }
    }
    models
        .iter()
        .map(|m| {
            let r = evaluate(m, test)?;
            Ok(RdPoint {
                lambda: m.lambda(lambdas)?,
                bit_rate: r.bit_rate,
                payload_bit_rate: r.payload_bit_rate,
                entropy: r.entropy,
                nmse_db: r.nmse_db,
                rho: r.rho,
            })
        })
        .collect()
}

pub fn write_rd_csv(points: &[RdPoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "{RD_CSV_HEADER}")?;
    for p in points {
        writeln!(w, "{},{},{},{},{}", p.lambda, p.bit_rate, p.entropy, p.nmse_db, p.rho)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_channel, sample_rng, ChannelGenConfig};
    use num_complex::Complex32;
    use proptest::prelude::*;

    fn channel(seed: u64) -> ChannelMatrix {
        generate_channel(
            &ChannelGenConfig {
                n_c: 8,
                n_t: 4,
                ..ChannelGenConfig::desk()
            },
            &mut sample_rng(seed, 0),
        )
        .unwrap()
    }

    fn scaled(h: &ChannelMatrix, c: Complex32) -> ChannelMatrix {
        ChannelMatrix::new(h.n_c(), h.n_t(), h.entries().iter().map(|z| z * c).collect()).unwrap()
    }

    #[test]
    fn nmse_reference_values() {
        let h = channel(1);
        assert_eq!(nmse(&h, &h).unwrap(), f64::NEG_INFINITY);
        assert!(nmse(&h, &ChannelMatrix::zeros(8, 4)).unwrap().abs() < 1e-6);
        assert!(nmse(&h, &scaled(&h, Complex32::new(2.0, 0.0))).unwrap().abs() < 1e-6);
        assert!(matches!(nmse(&ChannelMatrix::zeros(8, 4), &h), Err(Error::ZeroNorm(_))));
        assert!(nmse(&h, &ChannelMatrix::zeros(8, 5)).is_err());
    }

    #[test]
    fn orthogonal_rows_have_zero_correlation() {
        let e = |k: usize| (0..4).map(move |i| Complex32::new((i == k) as u8 as f32, 0.0));
        let a = ChannelMatrix::new(2, 4, e(0).chain(e(1)).collect()).unwrap();
        let b = ChannelMatrix::new(2, 4, e(2).chain(e(3)).collect()).unwrap();
        assert_eq!(cosine_corr(&a, &b, true).unwrap(), 0.0);
    }

    #[test]
    fn zero_rows_follow_the_strict_flag() {
        let h = channel(2);
        let z = ChannelMatrix::zeros(8, 4);
        assert!(cosine_corr(&h, &z, true).is_err());
        assert_eq!(cosine_corr(&h, &z, false).unwrap(), 0.0);
    }

    #[test]
    fn mean_ratio_in_db() {
        assert!((nmse_db(&[0.1, 0.1]) + 10.0).abs() < 1e-12);
        assert!((nmse_db(&[1.0, 0.0]) - 10.0 * 0.5f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let p = RdPoint {
            lambda: 1e4,
            bit_rate: 0.5,
            payload_bit_rate: 0.4,
            entropy: 0.45,
            nmse_db: -3.0,
            rho: 0.9,
        };
        let mut out = Vec::new();
        write_rd_csv(&[p], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "lambda,bit_rate,entropy,nmse_db,rho\n10000,0.5,0.45,-3,0.9\n"
        );
    }

    proptest! {
        #[test]
        fn correlation_is_scale_and_phase_invariant(seed in 0u64..200, re in -3.0f32..3.0, im in -3.0f32..3.0) {
            prop_assume!(re.abs() + im.abs() > 1e-2);
            let h = channel(seed);
            prop_assert!((cosine_corr(&h, &h, true).unwrap() - 1.0).abs() < 1e-6);
            let rho = cosine_corr(&h, &scaled(&h, Complex32::new(re, im)), true).unwrap();
            prop_assert!((rho - 1.0).abs() < 1e-6);
        }

        #[test]
        fn correlation_lies_in_unit_interval(a in 0u64..100, b in 100u64..200) {
            let rho = cosine_corr(&channel(a), &channel(b), true).unwrap();
            prop_assert!((0.0..=1.0).contains(&rho));
        }
    }
}

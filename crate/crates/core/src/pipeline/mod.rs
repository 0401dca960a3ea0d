//! End-to-end compressor: rate-distortion training, checkpoints, bitstream
//! compression and evaluation metrics.

mod checkpoint;
mod compress;
mod metrics;
mod train;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use compress::{compress, compress_padded, compress_sample, decompress, reconstruct_unquantized, CompressedSample};
pub use metrics::{
    cosine_corr, evaluate, nmse, nmse_db, nmse_ratio, rd_sweep, write_rd_csv, EvalReport, RdPoint, RD_CSV_HEADER,
};
pub use train::{sigma_from, train, EpochStats, TrainConfig, TrainHistory};

use rand::Rng;

use crate::codec::{ArchConfig, CodecNet};
use crate::csi::{batch_tensor, ChannelMatrix};
use crate::entropy::{quantize, support_from_symbols, to_symbols, CodingModel, FactorizedPrior};
use crate::error::{Error, Result};
use crate::nn::{join, Param, Parameters, Scalar, Tensor};

/// Rate-distortion weights addressable by a 16-bit id on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaTable {
    values: Vec<f64>,
}

/// The six trade-off points of the reference sweep.
pub const PAPER_LAMBDAS: [f64; 6] = [1e4, 5e4, 1e5, 5e5, 1e6, 5e6];

impl Default for LambdaTable {
    fn default() -> Self {
        LambdaTable {
            values: PAPER_LAMBDAS.to_vec(),
        }
    }
}

impl LambdaTable {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() > u16::MAX as usize + 1 {
            return Err(Error::Config("lambda table must have 1..=65536 entries".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "lambda values must be positive and strictly increasing".into(),
            ));
        }
        Ok(LambdaTable { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, id: u16) -> Result<f64> {
        self.values
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Config(format!("lambda id {id} not in table of {}", self.values.len())))
    }

    /// Id of the entry closest to `lambda` (in log scale) and whether it
    /// matches exactly.
    pub fn nearest(&self, lambda: f64) -> Result<(u16, bool)> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        let (id, v) = self
            .values
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1.ln() - lambda.ln())
                    .abs()
                    .total_cmp(&(b.1.ln() - lambda.ln()).abs())
            })
            .expect("table is non-empty");
        Ok((id as u16, *v == lambda))
    }
}

/// Rate term (bits per channel dimension), distortion term and their
/// weighted sum `rate + lambda * mse`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub rate: f64,
    pub mse: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn new(rate: f64, mse: f64, lambda: f64) -> Self {
        LossTerms {
            rate,
            mse,
            total: rate + lambda * mse,
        }
    }
}

/// Distortion term of the loss for a `[n, 2, n_c, n_t]` batch of normalized
/// channels: per sample, the mean squared error over the `2 n_c n_t` real
/// entries divided by `n_c n_t`, averaged over the batch.
pub fn mse_term<T: Scalar>(reconstruction: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    Ok(mse_with_grad(reconstruction, target, false)?.0)
}

fn mse_with_grad<T: Scalar>(y: &Tensor<T>, x: &Tensor<T>, grad: bool) -> Result<(f64, Option<Tensor<T>>)> {
    y.expect_shape(x.shape())?;
    let [n, c, h, w] = x.dims4()?;
    let dims = (h * w) as f64;
    let norm = (n.max(1) * c * h * w) as f64 * dims;
    let sq: f64 = y
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| {
            let d = (*a - *b).to_f64().unwrap_or(f64::NAN);
            d * d
        })
        .sum();
    let dy = grad.then(|| {
        let k = T::lit(2.0 / norm);
        y.zip_map(x, |a, b| k * (a - b)).expect("shapes checked")
    });
    Ok((sq / norm, dy))
}

/// A trained compressor: feature networks, learned prior, the coding tables
/// frozen from it, and the lambda id it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepCmc<T> {
    pub net: CodecNet<T>,
    pub prior: FactorizedPrior<T>,
    /// Present once the model has been finalized for coding.
    pub coding: Option<CodingModel>,
    pub lambda_id: u16,
}

impl<T: Scalar> DeepCmc<T> {
    pub fn new<R: Rng + ?Sized>(arch: ArchConfig, sigma_norm: f64, lambda_id: u16, rng: &mut R) -> Result<Self> {
        let net = CodecNet::new(arch, sigma_norm, rng)?;
        let prior = FactorizedPrior::new(arch.latent, rng);
        Ok(DeepCmc {
            net,
            prior,
            coding: None,
            lambda_id,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.net.arch
    }

    pub fn lambda(&self, table: &LambdaTable) -> Result<f64> {
        table.get(self.lambda_id)
    }

    pub fn coding(&self) -> Result<&CodingModel> {
        self.coding
            .as_ref()
            .ok_or_else(|| Error::Config("model has no coding tables; finalize it after training".into()))
    }

    pub fn cast<U: Scalar>(&self) -> DeepCmc<U> {
        DeepCmc {
            net: self.net.cast(),
            prior: self.prior.cast(),
            coding: self.coding.clone(),
            lambda_id: self.lambda_id,
        }
    }

    /// Normalized `[n, 2, n_c, n_t]` input tensor for a batch of channels.
    pub fn input_tensor(&self, batch: &[&ChannelMatrix]) -> Result<Tensor<T>> {
        for h in batch {
            self.net.arch.check_dims(h.n_c(), h.n_t())?;
        }
        batch_tensor(batch, self.net.sigma_norm)
    }

    /// Training-mode loss for a normalized batch `x` with explicit latent
    /// noise (use zeros for the quantization-free path).
    pub fn loss(&mut self, x: &Tensor<T>, noise: &Tensor<T>, lambda: f64) -> Result<LossTerms> {
        let (m, _) = self.net.encoder.forward_train(x)?;
        let noisy = m.add(noise)?;
        let rate = self.prior.rate(&noisy)?.to_f64().unwrap_or(f64::NAN);
        let (y, _) = self.net.decoder.forward_train(&noisy)?;
        Ok(LossTerms::new(rate, mse_term(&y, x)?, lambda))
    }

    /// Like [`Self::loss`], also accumulating the gradient of `total` into
    /// every parameter (encoder, decoder and prior). Returns the loss and the
    /// gradient with respect to `x`.
    pub fn loss_backward(&mut self, x: &Tensor<T>, noise: &Tensor<T>, lambda: f64) -> Result<(LossTerms, Tensor<T>)> {
        let (m, enc_cache) = self.net.encoder.forward_train(x)?;
        let noisy = m.add(noise)?;
        let (rate, d_rate) = self.prior.rate_backward(&noisy, T::one())?;
        let (y, dec_cache) = self.net.decoder.forward_train(&noisy)?;
        let (mse, dy) = mse_with_grad(&y, x, true)?;
        let dy = dy.expect("gradient requested").scale(T::lit(lambda));
        let mut dm = self.net.decoder.backward(&dec_cache, &dy)?;
        dm.add_assign(&d_rate)?;
        let mut dx = self.net.encoder.backward(&enc_cache, &dm)?;
        // the distortion term also depends on x directly through the target
        let (_, dx_target) = mse_with_grad(&x.clone(), &y, true)?;
        dx.add_assign(&dx_target.expect("gradient requested").scale(T::lit(lambda)))?;
        let terms = LossTerms::new(rate.to_f64().unwrap_or(f64::NAN), mse, lambda);
        Ok((terms, dx))
    }

    /// Inference-mode latents `[n, latent, n_c/16, n_t/16]` of a batch.
    pub fn encode_batch(&self, batch: &[&ChannelMatrix]) -> Result<Tensor<T>> {
        self.net.encoder.forward(&self.input_tensor(batch)?)
    }

    /// Freezes the prior into integer coding tables whose support covers
    /// the quantized latents of `samples` (plus a margin).
    pub fn finalize(&mut self, samples: &[ChannelMatrix]) -> Result<()> {
        let latent = self.net.arch.latent;
        let mut symbols = Vec::new();
        let mut plane = 1;
        for chunk in samples.chunks(64) {
            let refs: Vec<&ChannelMatrix> = chunk.iter().collect();
            let m = self.encode_batch(&refs)?;
            let [_, _, h, w] = m.dims4()?;
            plane = h * w;
            symbols.extend(to_symbols(&quantize(&m)));
        }
        let supports = support_from_symbols(&symbols, latent, plane);
        self.coding = Some(CodingModel::from_prior(&self.prior, &supports)?);
        Ok(())
    }
}

impl<T: Scalar> Parameters<T> for DeepCmc<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.net.visit_params(prefix, f);
        self.prior.visit_params(&join(prefix, "prior"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.net.visit_buffers(prefix, f);
    }
}

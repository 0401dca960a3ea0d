use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::Dataset;
use crate::codec::ArchConfig;
use crate::entropy::add_uniform_noise;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Parameters, Tensor};
use crate::pipeline::{DeepCmc, LambdaTable, LossTerms};

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam step size for the encoder and decoder.
    pub lr: f64,
    /// Adam step size for the prior, which has to track the latent scale.
    pub prior_lr: f64,
    pub seed: u64,
    pub lambdas: LambdaTable,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: ArchConfig::default(),
            epochs: 40,
            batch_size: 16,
            lr: 1e-3,
            prior_lr: 1e-3,
            seed: 0,
            lambdas: LambdaTable::default(),
        }
    }
}

/// Mean loss terms of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub rate: f64,
    pub mse: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// Mean total loss over the first and last `fraction` of epochs.
    pub fn head_tail_means(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = self.epochs.len();
        if n == 0 {
            return None;
        }
        let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        let mean = |s: &[EpochStats]| s.iter().map(|e| e.total).sum::<f64>() / s.len() as f64;
        Some((mean(&self.epochs[..k]), mean(&self.epochs[n - k..])))
    }
}

/// Input scale: root mean square of the real and imaginary parts, rounded
/// to `f32` so that a checkpoint reproduces it exactly.
pub fn sigma_from(dataset: &Dataset) -> Result<f64> {
    let count = 2 * dataset.n_c() * dataset.n_t() * dataset.len();
    let energy: f64 = dataset.samples().iter().map(|h| h.frobenius_sq()).sum();
    let sigma = (energy / count.max(1) as f64).sqrt() as f32 as f64;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::ZeroNorm("training set"));
    }
    Ok(sigma)
}

/// Minimizes `rate + lambda * mse` over the dataset with Adam, sampling
/// fresh quantization noise for every latent at every step, then freezes
/// the prior into coding tables over the training latents.
pub fn train(dataset: &Dataset, lambda_id: u16, cfg: &TrainConfig) -> Result<(DeepCmc<f32>, TrainHistory)> {
    let lambda = cfg.lambdas.get(lambda_id)?;
    cfg.arch.validate()?;
    cfg.arch.check_dims(dataset.n_c(), dataset.n_t())?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let sigma = sigma_from(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = DeepCmc::<f32>::new(cfg.arch, sigma, lambda_id, &mut rng)?;
    let mut net_opt = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut prior_opt = Adam::new(AdamConfig {
        lr: cfg.prior_lr,
        ..AdamConfig::default()
    });
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossTerms::new(0.0, 0.0, lambda);
        let mut batches = 0usize;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            // batch statistics need more than one sample
            if idx.len() < 2 && dataset.len() >= 2 {
                continue;
            }
            let batch: Vec<_> = idx.iter().map(|&i| &dataset.samples()[i]).collect();
            let x = model.input_tensor(&batch)?;
            let latent_shape = latent_shape(&model, &x)?;
            let noise = add_uniform_noise(&Tensor::zeros(&latent_shape), &mut rng);
            model.zero_grad();
            let (terms, _) = model.loss_backward(&x, &noise, lambda)?;
            if !terms.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    loss: terms.total,
                });
            }
            net_opt.step(&mut model.net)?;
            prior_opt.step(&mut model.prior)?;
            sum = LossTerms::new(sum.rate + terms.rate, sum.mse + terms.mse, lambda);
            batches += 1;
        }
        let k = batches.max(1) as f64;
        let stats = EpochStats {
            epoch,
            rate: sum.rate / k,
            mse: sum.mse / k,
            total: sum.total / k,
        };
        info!(
            "epoch {epoch}: rate {:.4} bits, mse {:.3e}, loss {:.4}",
            stats.rate, stats.mse, stats.total
        );
        history.epochs.push(stats);
    }
    model.finalize(dataset.samples())?;
    Ok((model, history))
}

fn latent_shape(model: &DeepCmc<f32>, x: &Tensor<f32>) -> Result<Vec<usize>> {
    let [n, _, h, w] = x.dims4()?;
    let f = model.arch().total_factor();
    Ok(vec![n, model.arch().latent, h / f, w / f])
}

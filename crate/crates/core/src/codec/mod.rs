//! Fully convolutional feature encoder and decoder.
//!
//! The encoder maps the 2-plane (real, imaginary) channel tensor to a
//! `latent × n_c/16 × n_t/16` feature tensor; the decoder inverts the shape
//! contract. No layer depends on the spatial size, so one set of weights
//! serves every input whose sides are multiples of the total downsampling.

mod layers;

pub use layers::{DownCache, DownStage, NormAct, ResidualBlock, ResidualCache, UpCache, UpStage};

use rand::Rng;

use crate::csi::ChannelMatrix;
use crate::error::{Error, Result};
use crate::nn::{join, BatchNorm2d, BnCache, Conv2d, Param, Parameters, Scalar, Tensor};

/// Layer layout shared by encoder, decoder and checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    /// Channel width of the hidden stages.
    pub hidden: usize,
    /// Number of latent feature maps.
    pub latent: usize,
    /// Encoder kernel sizes, first stage first. The decoder uses them reversed.
    pub kernels: [usize; 3],
    /// Encoder downsampling factors. The decoder upsamples by them reversed.
    pub factors: [usize; 3],
    pub residual_kernel: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden: 256,
            latent: 256,
            kernels: [9, 5, 5],
            factors: [4, 2, 2],
            residual_kernel: 5,
        }
    }
}

impl ArchConfig {
    pub fn with_hidden(hidden: usize) -> Self {
        ArchConfig {
            hidden,
            ..Default::default()
        }
    }

    pub fn total_factor(&self) -> usize {
        self.factors.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.latent == 0 {
            return Err(Error::Config("channel widths must be positive".into()));
        }
        if self.kernels.iter().chain([&self.residual_kernel]).any(|k| k % 2 == 0) {
            return Err(Error::Config("kernel sizes must be odd".into()));
        }
        if self.factors.contains(&0) {
            return Err(Error::Config("resampling factors must be positive".into()));
        }
        Ok(())
    }

    /// Padded size needed for an `n_c × n_t` matrix.
    pub fn padded_dims(&self, n_c: usize, n_t: usize) -> (usize, usize) {
        let f = self.total_factor();
        (n_c.div_ceil(f) * f, n_t.div_ceil(f) * f)
    }

    pub fn check_dims(&self, n_c: usize, n_t: usize) -> Result<()> {
        let (pc, pt) = self.padded_dims(n_c, n_t);
        if (pc, pt) != (n_c, n_t) || n_c == 0 || n_t == 0 {
            return Err(Error::NotMultipleOf16 {
                n_c,
                n_t,
                padded_n_c: pc.max(self.total_factor()),
                padded_n_t: pt.max(self.total_factor()),
            });
        }
        Ok(())
    }
}

/// `M = f_en(H)`: three conv stages, each followed by downsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder<T> {
    pub stages: Vec<DownStage<T>>,
}

impl<T: Scalar> FeatureEncoder<T> {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Self {
        let widths = [2, arch.hidden, arch.hidden, arch.latent];
        let stages = (0..3)
            .map(|i| DownStage::new(widths[i], widths[i + 1], arch.kernels[i], arch.factors[i], i < 2, rng))
            .collect();
        FeatureEncoder { stages }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = x.clone();
        for s in &self.stages {
            y = s.forward(&y)?;
        }
        Ok(y)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<DownCache<T>>)> {
        let mut y = x.clone();
        let mut caches = Vec::with_capacity(self.stages.len());
        for s in &mut self.stages {
            let (out, c) = s.forward_train(&y)?;
            caches.push(c);
            y = out;
        }
        Ok((y, caches))
    }

    pub fn backward(&mut self, caches: &[DownCache<T>], dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = dy.clone();
        for (s, c) in self.stages.iter_mut().zip(caches).rev() {
            d = s.backward(c, &d)?;
        }
        Ok(d)
    }

    pub fn cast<U: Scalar>(&self) -> FeatureEncoder<U> {
        FeatureEncoder {
            stages: self.stages.iter().map(DownStage::cast).collect(),
        }
    }
}

impl<T: Scalar> Parameters<T> for FeatureEncoder<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_params(&join(prefix, &format!("stage{i}")), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_buffers(&join(prefix, &format!("stage{i}")), f);
        }
    }
}

/// Two residual blocks and a closing conv+norm, wrapped by one identity
/// shortcut from trunk input to trunk output.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrunk<T> {
    pub blocks: Vec<ResidualBlock<T>>,
    pub conv: Conv2d<T>,
    pub norm: BatchNorm2d<T>,
}

pub struct TrunkCache<T> {
    blocks: Vec<ResidualCache<T>>,
    body: Tensor<T>,
    bn: BnCache<T>,
}

impl<T: Scalar> ResidualTrunk<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, kernel: usize, rng: &mut R) -> Self {
        ResidualTrunk {
            blocks: (0..2).map(|_| ResidualBlock::new(channels, kernel, rng)).collect(),
            conv: Conv2d::new(channels, channels, kernel, rng),
            norm: BatchNorm2d::new(channels),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = x.clone();
        for b in &self.blocks {
            y = b.forward(&y)?;
        }
        let r = self.norm.forward_infer(&self.conv.forward(&y)?)?;
        x.add(&r)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, TrunkCache<T>)> {
        let mut y = x.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let (out, c) = b.forward_train(&y)?;
            blocks.push(c);
            y = out;
        }
        let (r, bn) = self.norm.forward_train(&self.conv.forward(&y)?)?;
        Ok((x.add(&r)?, TrunkCache { blocks, body: y, bn }))
    }

    pub fn backward(&mut self, cache: &TrunkCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.norm.backward(&cache.bn, dy)?;
        let mut d = self.conv.backward(&cache.body, &d)?;
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            d = b.backward(c, &d)?;
        }
        d.add_assign(dy)?;
        Ok(d)
    }

    pub fn cast<U: Scalar>(&self) -> ResidualTrunk<U> {
        ResidualTrunk {
            blocks: self.blocks.iter().map(ResidualBlock::cast).collect(),
            conv: self.conv.cast(),
            norm: self.norm.cast(),
        }
    }
}

impl<T: Scalar> Parameters<T> for ResidualTrunk<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params(&join(prefix, &format!("block{i}")), f);
        }
        self.conv.visit_params(&join(prefix, "conv"), f);
        self.norm.visit_params(&join(prefix, "bn"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_buffers(&join(prefix, &format!("block{i}")), f);
        }
        self.norm.visit_buffers(&join(prefix, "bn"), f);
    }
}

/// `Ĥ = f_de(M̂)`: residual trunk, then three upsample+conv stages; the last
/// conv emits the two output planes without normalization or activation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDecoder<T> {
    pub trunk: ResidualTrunk<T>,
    pub stages: Vec<UpStage<T>>,
}

pub struct DecoderCache<T> {
    trunk: TrunkCache<T>,
    stages: Vec<UpCache<T>>,
}

impl<T: Scalar> FeatureDecoder<T> {
    pub fn new<R: Rng + ?Sized>(arch: &ArchConfig, rng: &mut R) -> Self {
        let trunk = ResidualTrunk::new(arch.latent, arch.residual_kernel, rng);
        let widths = [arch.latent, arch.hidden, arch.hidden, 2];
        let stages = (0..3)
            .map(|i| {
                UpStage::new(
                    widths[i],
                    widths[i + 1],
                    arch.kernels[2 - i],
                    arch.factors[2 - i],
                    i < 2,
                    rng,
                )
            })
            .collect();
        FeatureDecoder { trunk, stages }
    }

    fn check(&self, m: &Tensor<T>) -> Result<()> {
        let c = m.dims4()?[1];
        let expected = self.trunk.conv.in_channels();
        if c != expected {
            return Err(Error::Shape(format!(
                "decoder expects {expected} feature maps, got {c}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, m: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(m)?;
        let mut y = self.trunk.forward(m)?;
        for s in &self.stages {
            y = s.forward(&y)?;
        }
        Ok(y)
    }

    pub fn forward_train(&mut self, m: &Tensor<T>) -> Result<(Tensor<T>, DecoderCache<T>)> {
        self.check(m)?;
        let (mut y, trunk) = self.trunk.forward_train(m)?;
        let mut stages = Vec::with_capacity(self.stages.len());
        for s in &mut self.stages {
            let (out, c) = s.forward_train(&y)?;
            stages.push(c);
            y = out;
        }
        Ok((y, DecoderCache { trunk, stages }))
    }

    pub fn backward(&mut self, cache: &DecoderCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = dy.clone();
        for (s, c) in self.stages.iter_mut().zip(&cache.stages).rev() {
            d = s.backward(c, &d)?;
        }
        self.trunk.backward(&cache.trunk, &d)
    }

    pub fn cast<U: Scalar>(&self) -> FeatureDecoder<U> {
        FeatureDecoder {
            trunk: self.trunk.cast(),
            stages: self.stages.iter().map(UpStage::cast).collect(),
        }
    }
}

impl<T: Scalar> Parameters<T> for FeatureDecoder<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.trunk.visit_params(&join(prefix, "trunk"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_params(&join(prefix, &format!("stage{i}")), f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.trunk.visit_buffers(&join(prefix, "trunk"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_buffers(&join(prefix, &format!("stage{i}")), f);
        }
    }
}

/// Encoder and decoder plus the global input scale `σ_norm`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecNet<T> {
    pub arch: ArchConfig,
    pub encoder: FeatureEncoder<T>,
    pub decoder: FeatureDecoder<T>,
    pub sigma_norm: f64,
}

impl<T: Scalar> CodecNet<T> {
    pub fn new<R: Rng + ?Sized>(arch: ArchConfig, sigma_norm: f64, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        if !(sigma_norm > 0.0 && sigma_norm.is_finite()) {
            return Err(Error::Config(format!("sigma_norm must be positive, got {sigma_norm}")));
        }
        Ok(CodecNet {
            arch,
            encoder: FeatureEncoder::new(&arch, rng),
            decoder: FeatureDecoder::new(&arch, rng),
            sigma_norm,
        })
    }

    /// Continuous latent `M` of one channel matrix, shape `[latent, n_c/16, n_t/16]`.
    pub fn feature_encode(&self, h: &ChannelMatrix) -> Result<Tensor<T>> {
        self.arch.check_dims(h.n_c(), h.n_t())?;
        self.encoder.forward(&h.to_tensor(self.sigma_norm))
    }

    /// Reconstruction `Ĥ` from a (quantized or noisy) latent, de-normalized.
    pub fn feature_decode(&self, m: &Tensor<T>) -> Result<ChannelMatrix> {
        let y = self.decoder.forward(m)?;
        ChannelMatrix::from_tensor(&y, self.sigma_norm)
    }

    pub fn cast<U: Scalar>(&self) -> CodecNet<U> {
        CodecNet {
            arch: self.arch,
            encoder: self.encoder.cast(),
            decoder: self.decoder.cast(),
            sigma_norm: self.sigma_norm,
        }
    }
}

impl<T: Scalar> Parameters<T> for CodecNet<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.decoder.visit_params(&join(prefix, "decoder"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.encoder.visit_buffers(&join(prefix, "encoder"), f);
        self.decoder.visit_buffers(&join(prefix, "decoder"), f);
    }
}

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{
    avg_pool, avg_pool_backward, join, upsample_nearest, upsample_nearest_backward, BatchNorm2d, BnCache, Conv2d,
    Param, Parameters, Prelu, Scalar, Tensor,
};

/// Batch norm followed by PReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAct<T> {
    pub norm: BatchNorm2d<T>,
    pub act: Prelu<T>,
}

pub struct NormActCache<T> {
    bn: BnCache<T>,
    pre_act: Tensor<T>,
}

impl<T: Scalar> NormAct<T> {
    pub fn new(channels: usize) -> Self {
        NormAct {
            norm: BatchNorm2d::new(channels),
            act: Prelu::new(channels),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.act.forward(&self.norm.forward_infer(x)?)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, NormActCache<T>)> {
        let (pre_act, bn) = self.norm.forward_train(x)?;
        let y = self.act.forward(&pre_act)?;
        Ok((y, NormActCache { bn, pre_act }))
    }

    pub fn backward(&mut self, cache: &NormActCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.act.backward(&cache.pre_act, dy)?;
        self.norm.backward(&cache.bn, &d)
    }

    pub fn cast<U: Scalar>(&self) -> NormAct<U> {
        NormAct {
            norm: self.norm.cast(),
            act: self.act.cast(),
        }
    }
}

impl<T: Scalar> Parameters<T> for NormAct<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.norm.visit_params(&join(prefix, "bn"), f);
        self.act.visit_params(&join(prefix, "prelu"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.norm.visit_buffers(&join(prefix, "bn"), f);
    }
}

/// Encoder stage: conv, average-pool downsampling, then optional norm+PReLU.
/// Pooling straight after the conv keeps the pair linear, so content above
/// the pooled band survives as aliases instead of being rectified away.
#[derive(Debug, Clone, PartialEq)]
pub struct DownStage<T> {
    pub conv: Conv2d<T>,
    pub norm_act: Option<NormAct<T>>,
    pub factor: usize,
}

pub struct DownCache<T> {
    input: Tensor<T>,
    norm_act: Option<NormActCache<T>>,
}

impl<T: Scalar> DownStage<T> {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        factor: usize,
        activated: bool,
        rng: &mut R,
    ) -> Self {
        DownStage {
            conv: Conv2d::new(c_in, c_out, kernel, rng),
            norm_act: activated.then(|| NormAct::new(c_out)),
            factor,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = avg_pool(&self.conv.forward(x)?, self.factor)?;
        match &self.norm_act {
            Some(na) => na.forward(&y),
            None => Ok(y),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, DownCache<T>)> {
        let mut out = avg_pool(&self.conv.forward(x)?, self.factor)?;
        let mut na_cache = None;
        if let Some(na) = &mut self.norm_act {
            let (a, c) = na.forward_train(&out)?;
            out = a;
            na_cache = Some(c);
        }
        Ok((
            out,
            DownCache {
                input: x.clone(),
                norm_act: na_cache,
            },
        ))
    }

    pub fn backward(&mut self, cache: &DownCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = dy.clone();
        if let (Some(na), Some(c)) = (&mut self.norm_act, &cache.norm_act) {
            d = na.backward(c, &d)?;
        }
        self.conv.backward(&cache.input, &avg_pool_backward(&d, self.factor)?)
    }

    pub fn cast<U: Scalar>(&self) -> DownStage<U> {
        DownStage {
            conv: self.conv.cast(),
            norm_act: self.norm_act.as_ref().map(NormAct::cast),
            factor: self.factor,
        }
    }
}

impl<T: Scalar> Parameters<T> for DownStage<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        if let Some(na) = &mut self.norm_act {
            na.visit_params(prefix, f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        if let Some(na) = &mut self.norm_act {
            na.visit_buffers(prefix, f);
        }
    }
}

/// Decoder stage: nearest-neighbour upsampling, conv, optional norm+PReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct UpStage<T> {
    pub factor: usize,
    pub conv: Conv2d<T>,
    pub norm_act: Option<NormAct<T>>,
}

pub struct UpCache<T> {
    upsampled: Tensor<T>,
    norm_act: Option<NormActCache<T>>,
}

impl<T: Scalar> UpStage<T> {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        factor: usize,
        activated: bool,
        rng: &mut R,
    ) -> Self {
        UpStage {
            factor,
            conv: Conv2d::new(c_in, c_out, kernel, rng),
            norm_act: activated.then(|| NormAct::new(c_out)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = self.conv.forward(&upsample_nearest(x, self.factor)?)?;
        if let Some(na) = &self.norm_act {
            y = na.forward(&y)?;
        }
        Ok(y)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, UpCache<T>)> {
        let upsampled = upsample_nearest(x, self.factor)?;
        let mut y = self.conv.forward(&upsampled)?;
        let mut na_cache = None;
        if let Some(na) = &mut self.norm_act {
            let (a, c) = na.forward_train(&y)?;
            y = a;
            na_cache = Some(c);
        }
        Ok((
            y,
            UpCache {
                upsampled,
                norm_act: na_cache,
            },
        ))
    }

    pub fn backward(&mut self, cache: &UpCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut d = dy.clone();
        if let (Some(na), Some(c)) = (&mut self.norm_act, &cache.norm_act) {
            d = na.backward(c, &d)?;
        }
        let d = self.conv.backward(&cache.upsampled, &d)?;
        upsample_nearest_backward(&d, self.factor)
    }

    pub fn cast<U: Scalar>(&self) -> UpStage<U> {
        UpStage {
            factor: self.factor,
            conv: self.conv.cast(),
            norm_act: self.norm_act.as_ref().map(NormAct::cast),
        }
    }
}

impl<T: Scalar> Parameters<T> for UpStage<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        if let Some(na) = &mut self.norm_act {
            na.visit_params(prefix, f);
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        if let Some(na) = &mut self.norm_act {
            na.visit_buffers(prefix, f);
        }
    }
}

/// `x + bn(conv(prelu(bn(conv(x)))))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    pub inner: NormAct<T>,
    pub conv2: Conv2d<T>,
    pub norm2: BatchNorm2d<T>,
}

pub struct ResidualCache<T> {
    input: Tensor<T>,
    inner: NormActCache<T>,
    activated: Tensor<T>,
    bn2: BnCache<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, kernel: usize, rng: &mut R) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(channels, channels, kernel, rng),
            inner: NormAct::new(channels),
            conv2: Conv2d::new(channels, channels, kernel, rng),
            norm2: BatchNorm2d::new(channels),
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        let c = x.dims4()?[1];
        let (ci, co) = (self.conv1.in_channels(), self.conv2.out_channels());
        if c != ci || ci != co {
            return Err(Error::Shape(format!(
                "residual block maps {ci} -> {co} channels; input has {c}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let a = self.inner.forward(&self.conv1.forward(x)?)?;
        let r = self.norm2.forward_infer(&self.conv2.forward(&a)?)?;
        x.add(&r)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ResidualCache<T>)> {
        self.check(x)?;
        let (activated, inner) = self.inner.forward_train(&self.conv1.forward(x)?)?;
        let (r, bn2) = self.norm2.forward_train(&self.conv2.forward(&activated)?)?;
        let y = x.add(&r)?;
        Ok((
            y,
            ResidualCache {
                input: x.clone(),
                inner,
                activated,
                bn2,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ResidualCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.norm2.backward(&cache.bn2, dy)?;
        let d = self.conv2.backward(&cache.activated, &d)?;
        let d = self.inner.backward(&cache.inner, &d)?;
        let mut dx = self.conv1.backward(&cache.input, &d)?;
        dx.add_assign(dy)?;
        Ok(dx)
    }

    pub fn cast<U: Scalar>(&self) -> ResidualBlock<U> {
        ResidualBlock {
            conv1: self.conv1.cast(),
            inner: self.inner.cast(),
            conv2: self.conv2.cast(),
            norm2: self.norm2.cast(),
        }
    }
}

impl<T: Scalar> Parameters<T> for ResidualBlock<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.inner.visit_params(&join(prefix, "inner"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.norm2.visit_params(&join(prefix, "bn2"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.inner.visit_buffers(&join(prefix, "inner"), f);
        self.norm2.visit_buffers(&join(prefix, "bn2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BN_EPS, PRELU_INIT_SLOPE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block_1x1(w1: f64, w2: f64) -> ResidualBlock<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = ResidualBlock::<f64>::new(1, 1, &mut rng);
        b.conv1.weight.value.data_mut()[0] = w1;
        b.conv2.weight.value.data_mut()[0] = w2;
        b.conv1.bias.value.data_mut()[0] = 0.0;
        b.conv2.bias.value.data_mut()[0] = 0.0;
        b
    }

    #[test]
    fn zero_weights_give_identity() {
        let mut b = block_1x1(0.0, 0.0);
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let (y, _) = b.forward_train(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_hand_computation() {
        let mut b = block_1x1(2.0, -1.5);
        let xs = [1.0, -2.0, 0.5, 3.0];
        let x = Tensor::from_vec(&[1, 1, 2, 2], xs.to_vec()).unwrap();
        let (y, _) = b.forward_train(&x).unwrap();

        let norm = |v: &[f64]| -> Vec<f64> {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m) / (var + BN_EPS).sqrt()).collect()
        };
        let c1: Vec<f64> = xs.iter().map(|v| 2.0 * v).collect();
        let a1: Vec<f64> = norm(&c1)
            .into_iter()
            .map(|v| if v < 0.0 { PRELU_INIT_SLOPE * v } else { v })
            .collect();
        let c2: Vec<f64> = a1.iter().map(|v| -1.5 * v).collect();
        let expected: Vec<f64> = norm(&c2).iter().zip(&xs).map(|(r, x)| r + x).collect();
        for (a, e) in y.data().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = ResidualBlock::<f32>::new(3, 5, &mut rng);
        let x = crate::nn::he_uniform(&[2, 3, 4, 1], 1, &mut rng);
        let (y, _) = b.forward_train(&x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(b.forward(&Tensor::zeros(&[1, 2, 4, 1])).is_err());
    }
}

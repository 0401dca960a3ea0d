use crate::error::{Error, Result};
use crate::nn::param::{join, Param, Parameters};
use crate::nn::{Mode, Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
/// Weight kept on the old running statistic at each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel batch normalization over batch and spatial positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// False until the first training-mode forward pass (or a checkpoint load).
    pub initialized: bool,
}

/// Saved activations for [`BatchNorm2d::backward`].
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            initialized: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<[usize; 4]> {
        let dims = x.dims4()?;
        if dims[1] != self.channels() {
            return Err(Error::Shape(format!(
                "batch norm has {} channels, input has {}",
                self.channels(),
                dims[1]
            )));
        }
        Ok(dims)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(y, _)| y),
            Mode::Infer => self.forward_infer(x),
        }
    }

    /// Normalizes with batch statistics and folds them into the running
    /// statistics by exponential moving average.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let [n, c, h, w] = self.check(x)?;
        let hw = h * w;
        let count = n * hw;
        if count < 2 {
            return Err(Error::Shape(format!(
                "training-mode batch norm needs at least 2 values per channel, got {count}"
            )));
        }
        let eps = T::lit(BN_EPS);
        let mom = T::lit(BN_MOMENTUM);
        let cnt = T::lit(count as f64);
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let values = || (0..n).flat_map(move |b| (0..hw).map(move |i| (b * c + ch) * hw + i));
            let mean = values().map(|i| x.data()[i]).sum::<T>() / cnt;
            let var = values()
                .map(|i| {
                    let d = x.data()[i] - mean;
                    d * d
                })
                .sum::<T>()
                / cnt;
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            let (g, b) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            for i in values() {
                let xh = (x.data()[i] - mean) * is;
                xhat.data_mut()[i] = xh;
                y.data_mut()[i] = g * xh + b;
            }
            let unbiased = var * cnt / (cnt - T::one());
            if self.initialized {
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = mom * *rm + (T::one() - mom) * mean;
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = mom * *rv + (T::one() - mom) * unbiased;
            } else {
                self.running_mean.data_mut()[ch] = mean;
                self.running_var.data_mut()[ch] = unbiased;
            }
        }
        self.initialized = true;
        Ok((y, BnCache { xhat, inv_std }))
    }

    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, c, h, w] = self.check(x)?;
        if !self.initialized {
            return Err(Error::UninitializedStats);
        }
        let hw = h * w;
        let eps = T::lit(BN_EPS);
        let mut y = x.clone();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            let ch = (i / hw) % c;
            let is = T::one() / (self.running_var.data()[ch] + eps).sqrt();
            *v = self.gamma.value.data()[ch] * (*v - self.running_mean.data()[ch]) * is + self.beta.value.data()[ch];
        }
        Ok(y)
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.check(dy)?;
        dy.expect_shape(cache.xhat.shape())?;
        let hw = h * w;
        let cnt = T::lit((n * hw) as f64);
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let idx = || (0..n).flat_map(move |b| (0..hw).map(move |i| (b * c + ch) * hw + i));
            let sum_dy = idx().map(|i| dy.data()[i]).sum::<T>();
            let sum_dy_xhat = idx().map(|i| dy.data()[i] * cache.xhat.data()[i]).sum::<T>();
            let g = self.gamma.value.data()[ch];
            self.gamma.grad.data_mut()[ch] = self.gamma.grad.data()[ch] + sum_dy_xhat;
            self.beta.grad.data_mut()[ch] = self.beta.grad.data()[ch] + sum_dy;
            let k = g * cache.inv_std[ch] / cnt;
            for i in idx() {
                dx.data_mut()[i] = k * (cnt * dy.data()[i] - sum_dy - cache.xhat.data()[i] * sum_dy_xhat);
            }
        }
        Ok(dx)
    }

    pub fn cast<U: Scalar>(&self) -> BatchNorm2d<U> {
        BatchNorm2d {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            initialized: self.initialized,
        }
    }
}

impl<T: Scalar> Parameters<T> for BatchNorm2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
        // persisted so a loaded layer can run inference
        let mut flag = Tensor::scalar(if self.initialized { T::one() } else { T::zero() });
        f(join(prefix, "initialized"), &mut flag);
        self.initialized = flag.data()[0] != T::zero();
    }
}

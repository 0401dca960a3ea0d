use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::nn::{join, Param, Parameters, Scalar, Tensor};

/// Width of the two hidden stages of each per-channel cumulative function.
pub const PRIOR_WIDTH: usize = 8;

/// Smallest likelihood used in the rate; keeps `-log2 p` finite.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

const W: usize = PRIOR_WIDTH;

/// Learned fully factorized prior: one monotone cumulative function
/// `c(x) = sigmoid(f3(g2(f2(g1(f1(x))))))` per feature channel.
///
/// The `f` stages are affine with softplus-constrained (positive) weights,
/// the `g` stages are `z + tanh(a) * tanh(z)`, so each channel's `c` is
/// strictly increasing in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedPrior<T> {
    /// Raw first-stage weights, `[channels, 8]`.
    pub h1: Param<T>,
    pub b1: Param<T>,
    pub a1: Param<T>,
    /// Raw second-stage weights, `[channels, 8, 8]` (output-major).
    pub h2: Param<T>,
    pub b2: Param<T>,
    pub a2: Param<T>,
    /// Raw final weights, `[channels, 8]`.
    pub h3: Param<T>,
    pub b3: Param<T>,
}

/// Intermediate values of one logit evaluation.
#[derive(Clone, Copy)]
struct Trace<T> {
    x: T,
    u1: [T; W],
    t1: [T; W],
    u2: [T; W],
    t2: [T; W],
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    y.exp_m1().ln()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> FactorizedPrior<T> {
    /// Starts every channel at (approximately) the standard logistic CDF:
    /// the stages compose to the identity up to small random offsets.
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let jitter = Uniform::new_inclusive(-0.05, 0.05).expect("valid bounds");
        let mut small = |shape: &[usize]| {
            let len = shape.iter().product();
            let data = (0..len).map(|_| T::lit(jitter.sample(rng))).collect();
            Param::new(Tensor::from_vec(shape, data).expect("length matches shape"))
        };
        let b1 = small(&[channels, W]);
        let b2 = small(&[channels, W]);
        let b3 = small(&[channels]);
        let full = |shape: &[usize], v: f64| Param::new(Tensor::full(shape, T::lit(v)));
        FactorizedPrior {
            h1: full(&[channels, W], softplus_inv(1.0)),
            b1,
            a1: full(&[channels, W], 0.0),
            h2: full(&[channels, W, W], softplus_inv(1.0 / W as f64)),
            b2,
            a2: full(&[channels, W], 0.0),
            h3: full(&[channels, W], softplus_inv(1.0 / W as f64)),
            b3,
        }
    }

    pub fn channels(&self) -> usize {
        self.b3.value.len()
    }

    pub fn cast<U: Scalar>(&self) -> FactorizedPrior<U> {
        FactorizedPrior {
            h1: self.h1.cast(),
            b1: self.b1.cast(),
            a1: self.a1.cast(),
            h2: self.h2.cast(),
            b2: self.b2.cast(),
            a2: self.a2.cast(),
            h3: self.h3.cast(),
            b3: self.b3.cast(),
        }
    }

    /// Positive weights and gates of channel `c`, computed once per batch.
    fn channel(&self, c: usize) -> Channel<T> {
        let sp = |v: T| T::lit(softplus(v.to_f64().unwrap_or(0.0)));
        let mut ch = Channel::<T>::default();
        for i in 0..W {
            ch.w1[i] = sp(self.h1.value.data()[c * W + i]);
            ch.b1[i] = self.b1.value.data()[c * W + i];
            ch.g1[i] = self.a1.value.data()[c * W + i].tanh();
            ch.b2[i] = self.b2.value.data()[c * W + i];
            ch.g2[i] = self.a2.value.data()[c * W + i].tanh();
            ch.w3[i] = sp(self.h3.value.data()[c * W + i]);
            for j in 0..W {
                ch.w2[i][j] = sp(self.h2.value.data()[(c * W + i) * W + j]);
            }
        }
        ch.b3 = self.b3.value.data()[c];
        ch
    }

    /// Logit of the cumulative function, `c(x) = sigmoid(logit(x))`.
    pub fn logit(&self, channel: usize, x: T) -> T {
        self.channel(channel).forward(x).0
    }

    pub fn cdf(&self, channel: usize, x: T) -> T {
        sigmoid(self.logit(channel, x))
    }

    /// Probability of the unit bin centred on `x`: `c(x + 1/2) - c(x - 1/2)`.
    pub fn bin_probability(&self, channel: usize, x: T) -> T {
        let ch = self.channel(channel);
        let half = T::lit(0.5);
        bin(ch.forward(x + half).0, ch.forward(x - half).0).0
    }

    /// Per-element likelihoods of a `[n, channels, h, w]` (or `[channels, h, w]`)
    /// tensor, floored at [`LIKELIHOOD_FLOOR`].
    pub fn likelihoods(&self, m: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.check(m)?;
        let hw = h * w;
        let floor = T::lit(LIKELIHOOD_FLOOR);
        let half = T::lit(0.5);
        let mut out = Tensor::zeros(m.shape());
        for ch in 0..c {
            let model = self.channel(ch);
            for b in 0..n {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    let x = m.data()[i];
                    let p = bin(model.forward(x + half).0, model.forward(x - half).0).0;
                    out.data_mut()[i] = p.max(floor);
                }
            }
        }
        Ok(out)
    }

    /// Mean over the batch of `-(1/(n_c n_t)) sum log2 p`, where `n_c n_t`
    /// is the channel-matrix size (`256` times the latent plane).
    pub fn rate(&self, m: &Tensor<T>) -> Result<T> {
        let [n, _, h, w] = self.check(m)?;
        let bits: T = self.likelihoods(m)?.data().iter().map(|p| -p.log2()).sum();
        Ok(bits / T::lit((n * 256 * h * w).max(1) as f64))
    }

    /// Rate (as [`Self::rate`]) and its gradient with respect to `m`;
    /// parameter gradients are accumulated scaled by `weight`.
    pub fn rate_backward(&mut self, m: &Tensor<T>, weight: T) -> Result<(T, Tensor<T>)> {
        let [n, c, h, w] = self.check(m)?;
        let hw = h * w;
        let norm = T::lit((n * 256 * hw).max(1) as f64);
        let floor = T::lit(LIKELIHOOD_FLOOR);
        let half = T::lit(0.5);
        let ln2 = T::lit(std::f64::consts::LN_2);
        let mut dm = Tensor::zeros(m.shape());
        let mut total = T::zero();
        for ch in 0..c {
            let model = self.channel(ch);
            let mut grads = ChannelGrads::<T>::default();
            for b in 0..n {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    let x = m.data()[i];
                    let (lu, tu) = model.forward(x + half);
                    let (ll, tl) = model.forward(x - half);
                    let (p, dpu, dpl) = bin(lu, ll);
                    if p > floor {
                        total = total - p.log2();
                        // d(-log2 p)/dp, already divided by the normalizer
                        let dp = -T::one() / (p * ln2 * norm);
                        let dx = model.backward(&tu, dp * dpu, weight, &mut grads)
                            + model.backward(&tl, dp * dpl, weight, &mut grads);
                        dm.data_mut()[i] = dx;
                    } else {
                        total = total - floor.log2();
                    }
                }
            }
            self.accumulate(ch, &model, &grads);
        }
        Ok((total / norm, dm.scale(weight)))
    }

    fn check(&self, m: &Tensor<T>) -> Result<[usize; 4]> {
        let dims = m.dims4()?;
        if dims[1] != self.channels() {
            return Err(Error::Shape(format!(
                "prior has {} channels, features have {}",
                self.channels(),
                dims[1]
            )));
        }
        Ok(dims)
    }

    /// Chains gradients with respect to the positive weights and gates back
    /// to the raw parameters.
    fn accumulate(&mut self, c: usize, model: &Channel<T>, g: &ChannelGrads<T>) {
        // softplus' = sigmoid of the raw value; tanh' = 1 - tanh^2
        let dsp = |raw: T| sigmoid(raw);
        for i in 0..W {
            let k = c * W + i;
            self.h1.grad.data_mut()[k] = self.h1.grad.data()[k] + g.w1[i] * dsp(self.h1.value.data()[k]);
            self.b1.grad.data_mut()[k] = self.b1.grad.data()[k] + g.b1[i];
            self.a1.grad.data_mut()[k] = self.a1.grad.data()[k] + g.g1[i] * (T::one() - model.g1[i] * model.g1[i]);
            self.b2.grad.data_mut()[k] = self.b2.grad.data()[k] + g.b2[i];
            self.a2.grad.data_mut()[k] = self.a2.grad.data()[k] + g.g2[i] * (T::one() - model.g2[i] * model.g2[i]);
            self.h3.grad.data_mut()[k] = self.h3.grad.data()[k] + g.w3[i] * dsp(self.h3.value.data()[k]);
            for j in 0..W {
                let k2 = k * W + j;
                self.h2.grad.data_mut()[k2] = self.h2.grad.data()[k2] + g.w2[i][j] * dsp(self.h2.value.data()[k2]);
            }
        }
        self.b3.grad.data_mut()[c] = self.b3.grad.data()[c] + g.b3;
    }
}

/// `(p, dp/dl_up, dp/dl_lo)` for the bin between two logits, evaluated on
/// the side of the sigmoid where it is not saturated.
fn bin<T: Scalar>(upper: T, lower: T) -> (T, T, T) {
    let s = if upper + lower > T::zero() { -T::one() } else { T::one() };
    let su = sigmoid(s * upper);
    let sl = sigmoid(s * lower);
    let p = (su - sl).abs();
    (p, su * (T::one() - su), -(sl * (T::one() - sl)))
}

#[derive(Clone, Copy)]
struct Channel<T> {
    w1: [T; W],
    b1: [T; W],
    g1: [T; W],
    w2: [[T; W]; W],
    b2: [T; W],
    g2: [T; W],
    w3: [T; W],
    b3: T,
}

impl<T: Scalar> Default for Channel<T> {
    fn default() -> Self {
        Channel {
            w1: [T::zero(); W],
            b1: [T::zero(); W],
            g1: [T::zero(); W],
            w2: [[T::zero(); W]; W],
            b2: [T::zero(); W],
            g2: [T::zero(); W],
            w3: [T::zero(); W],
            b3: T::zero(),
        }
    }
}

type ChannelGrads<T> = Channel<T>;

impl<T: Scalar> Channel<T> {
    fn forward(&self, x: T) -> (T, Trace<T>) {
        let mut tr = Trace {
            x,
            u1: [T::zero(); W],
            t1: [T::zero(); W],
            u2: [T::zero(); W],
            t2: [T::zero(); W],
        };
        for i in 0..W {
            let z = self.w1[i] * x + self.b1[i];
            tr.t1[i] = z.tanh();
            tr.u1[i] = z + self.g1[i] * tr.t1[i];
        }
        for i in 0..W {
            let mut z = self.b2[i];
            for j in 0..W {
                z = z + self.w2[i][j] * tr.u1[j];
            }
            tr.t2[i] = z.tanh();
            tr.u2[i] = z + self.g2[i] * tr.t2[i];
        }
        let mut l = self.b3;
        for i in 0..W {
            l = l + self.w3[i] * tr.u2[i];
        }
        (l, tr)
    }

    /// Accumulates `weight * dl * dlogit/dtheta` into `g` and returns
    /// `dl * dlogit/dx` (unweighted).
    fn backward(&self, tr: &Trace<T>, dl: T, weight: T, g: &mut ChannelGrads<T>) -> T {
        let wd = dl * weight;
        g.b3 = g.b3 + wd;
        let mut dz2 = [T::zero(); W];
        for i in 0..W {
            g.w3[i] = g.w3[i] + wd * tr.u2[i];
            let du2 = dl * self.w3[i];
            g.g2[i] = g.g2[i] + weight * du2 * tr.t2[i];
            dz2[i] = du2 * (T::one() + self.g2[i] * (T::one() - tr.t2[i] * tr.t2[i]));
        }
        let mut du1 = [T::zero(); W];
        for i in 0..W {
            g.b2[i] = g.b2[i] + weight * dz2[i];
            for j in 0..W {
                g.w2[i][j] = g.w2[i][j] + weight * dz2[i] * tr.u1[j];
                du1[j] = du1[j] + self.w2[i][j] * dz2[i];
            }
        }
        let mut dx = T::zero();
        for i in 0..W {
            g.g1[i] = g.g1[i] + weight * du1[i] * tr.t1[i];
            let dz1 = du1[i] * (T::one() + self.g1[i] * (T::one() - tr.t1[i] * tr.t1[i]));
            g.b1[i] = g.b1[i] + weight * dz1;
            g.w1[i] = g.w1[i] + weight * dz1 * tr.x;
            dx = dx + self.w1[i] * dz1;
        }
        dx
    }
}

impl<T: Scalar> Parameters<T> for FactorizedPrior<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "h1"), &mut self.h1);
        f(join(prefix, "b1"), &mut self.b1);
        f(join(prefix, "a1"), &mut self.a1);
        f(join(prefix, "h2"), &mut self.h2);
        f(join(prefix, "b2"), &mut self.b2);
        f(join(prefix, "a2"), &mut self.a2);
        f(join(prefix, "h3"), &mut self.h3);
        f(join(prefix, "b3"), &mut self.b3);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_grad_close, numeric_grad};
    use crate::nn::he_uniform;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prior(seed: u64) -> FactorizedPrior<f64> {
        FactorizedPrior::new(4, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// A prior with random, non-trivial parameters.
    fn scrambled(seed: u64) -> FactorizedPrior<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = prior(seed);
        p.visit_params("", &mut |_, param| {
            let noise: Tensor<f64> = he_uniform(param.value.shape(), 6, &mut rng);
            param.value.add_assign(&noise).unwrap();
        });
        p
    }

    #[test]
    fn fresh_prior_is_close_to_standard_logistic() {
        let p = prior(1);
        let logistic = 1.0 / (1.0 + (-0.5f64).exp()) - 1.0 / (1.0 + 0.5f64.exp());
        assert!((logistic - 0.2449).abs() < 1e-4);
        for c in 0..4 {
            let p0 = p.bin_probability(c, 0.0);
            assert!((p0 - logistic).abs() < 0.1 * logistic, "channel {c}: p(0) = {p0}");
        }
    }

    #[test]
    fn rate_of_an_empty_batch_is_zero() {
        let p = prior(1);
        assert_eq!(p.rate(&Tensor::zeros(&[0, 4, 1, 1])).unwrap(), 0.0);
    }

    #[test]
    fn rejects_channel_mismatch() {
        assert!(prior(1).rate(&Tensor::zeros(&[1, 3, 1, 1])).is_err());
    }

    #[test]
    fn rate_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m: Tensor<f64> = he_uniform(&[2, 4, 2, 1], 1, &mut rng).scale(2.0);
        let mut p = scrambled(9);
        p.zero_grad();
        let (rate, dm) = p.rate_backward(&m, 1.0).unwrap();
        assert!((rate - p.rate(&m).unwrap()).abs() < 1e-12);
        let probe = p.clone();
        let numeric = numeric_grad(&m, 1e-5, |x| probe.rate(x).unwrap());
        assert_grad_close(&dm, &numeric, 1e-6);

        let mut names = Vec::new();
        let mut analytic = Vec::new();
        p.visit_params("", &mut |name, param| {
            names.push(name);
            analytic.push(param.grad.clone());
        });
        for (idx, name) in names.iter().enumerate() {
            let numeric = {
                let base = p.clone();
                let mut value = None;
                base.clone().visit_params("", &mut |n, param| {
                    if &n == name {
                        value = Some(param.value.clone());
                    }
                });
                numeric_grad(&value.unwrap(), 1e-5, |v| {
                    let mut q = base.clone();
                    q.visit_params("", &mut |n, param| {
                        if &n == name {
                            param.value = v.clone();
                        }
                    });
                    q.rate(&m).unwrap()
                })
            };
            assert_grad_close(&analytic[idx], &numeric, 1e-6);
        }
    }

    #[test]
    fn f32_rate_gradient_matches_f64_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m: Tensor<f64> = he_uniform(&[2, 4, 2, 2], 1, &mut rng);
        let p64 = scrambled(3);
        let mut p32: FactorizedPrior<f32> = p64.cast();
        let (_, dm) = p32.rate_backward(&m.cast(), 1.0).unwrap();
        let numeric = numeric_grad(&m, 1e-4, |x| p64.rate(x).unwrap());
        assert_grad_close(&dm.cast::<f64>(), &numeric, 1e-3);
    }

    proptest! {
        #[test]
        fn cdf_is_strictly_increasing(seed in 0u64..64, x in -20.0f64..20.0, dx in 1e-3f64..5.0) {
            let p = scrambled(seed);
            for c in 0..4 {
                prop_assert!(p.logit(c, x + dx) > p.logit(c, x));
                let prob = p.bin_probability(c, x);
                prop_assert!((0.0..=1.0).contains(&prob));
            }
        }

        #[test]
        fn bins_partition_unity(seed in 0u64..64) {
            // telescoping: bins over [-K-1/2, K+1/2] plus both tails sum to one
            let p = scrambled(seed);
            for c in 0..4 {
                let inner: f64 = (-40..=40).map(|k| p.bin_probability(c, k as f64)).sum();
                let tails = p.cdf(c, -40.5) + (1.0 - p.cdf(c, 40.5));
                prop_assert!((inner + tails - 1.0).abs() < 1e-9);
            }
        }
    }
}

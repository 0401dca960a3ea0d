use crate::error::{Error, Result};
use crate::nn::param::{join, Param, Parameters};
use crate::nn::{Scalar, Tensor};

/// Initial negative-branch slope.
pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// Gradients of [`prelu`].
#[derive(Debug, Clone)]
pub struct PreluGrads<T> {
    pub input: Tensor<T>,
    pub slope: Tensor<T>,
}

fn check<T: Scalar>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<[usize; 4]> {
    let dims = x.dims4()?;
    if slope.len() != dims[1] {
        return Err(Error::Shape(format!(
            "prelu has {} slopes for {} channels",
            slope.len(),
            dims[1]
        )));
    }
    Ok(dims)
}

/// Per-channel parametric ReLU: `x` for `x ≥ 0`, `a·x` otherwise.
pub fn prelu<T: Scalar>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, c, h, w] = check(x, slope)?;
    let hw = h * w;
    let mut y = x.clone();
    for (i, v) in y.data_mut().iter_mut().enumerate() {
        if *v < T::zero() {
            *v = *v * slope.data()[(i / hw) % c];
        }
    }
    Ok(y)
}

pub fn prelu_backward<T: Scalar>(x: &Tensor<T>, slope: &Tensor<T>, dy: &Tensor<T>) -> Result<PreluGrads<T>> {
    let [_, c, h, w] = check(x, slope)?;
    dy.expect_shape(x.shape())?;
    let hw = h * w;
    let mut dx = Tensor::zeros(x.shape());
    let mut da = Tensor::zeros(&[c]);
    for (i, (&xv, &g)) in x.data().iter().zip(dy.data()).enumerate() {
        let ch = (i / hw) % c;
        if xv < T::zero() {
            dx.data_mut()[i] = g * slope.data()[ch];
            da.data_mut()[ch] = da.data()[ch] + g * xv;
        } else {
            dx.data_mut()[i] = g;
        }
    }
    Ok(PreluGrads { input: dx, slope: da })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prelu<T> {
    pub slope: Param<T>,
}

impl<T: Scalar> Prelu<T> {
    pub fn new(channels: usize) -> Self {
        Prelu {
            slope: Param::new(Tensor::full(&[channels], T::lit(PRELU_INIT_SLOPE))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        prelu(x, &self.slope.value)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = prelu_backward(x, &self.slope.value, dy)?;
        self.slope.grad.add_assign(&g.slope)?;
        Ok(g.input)
    }

    pub fn cast<U: Scalar>(&self) -> Prelu<U> {
        Prelu {
            slope: self.slope.cast(),
        }
    }
}

impl<T: Scalar> Parameters<T> for Prelu<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "slope"), &mut self.slope);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_grad_close, numeric_grad};

    fn one(v: f64) -> Tensor<f64> {
        Tensor::from_vec(&[1, 1, 1], vec![v]).unwrap()
    }

    #[test]
    fn branches() {
        let a = Tensor::from_vec(&[1], vec![0.25]).unwrap();
        assert_eq!(prelu(&one(1.5), &a).unwrap().data(), &[1.5]);
        assert_eq!(prelu(&one(-2.0), &a).unwrap().data(), &[-0.5]);
        let g = prelu_backward(&one(-2.0), &a, &one(1.0)).unwrap();
        assert_eq!(g.slope.data(), &[-2.0]);
        assert_eq!(g.input.data(), &[0.25]);
    }

    #[test]
    fn unit_slope_is_identity() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![-3.0, -0.1, 0.0, 4.0]).unwrap();
        let a = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        assert_eq!(prelu(&x, &a).unwrap(), x);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = Tensor::from_vec(&[2, 2, 2, 2], (0..16).map(|i| (i as f64 * 0.73).sin() + 0.05).collect()).unwrap();
        let a = Tensor::from_vec(&[2], vec![0.25, -0.4]).unwrap();
        let w: Vec<f64> = (0..16).map(|i| (i as f64 * 1.3).cos()).collect();
        let loss = |x: &Tensor<f64>, a: &Tensor<f64>| -> f64 {
            prelu(x, a).unwrap().data().iter().zip(&w).map(|(p, q)| p * q).sum()
        };
        let dy = Tensor::from_vec(&[2, 2, 2, 2], w.clone()).unwrap();
        let g = prelu_backward(&x, &a, &dy).unwrap();
        assert_grad_close(&g.input, &numeric_grad(&x, 1e-4, |p| loss(p, &a)), 1e-6);
        assert_grad_close(&g.slope, &numeric_grad(&a, 1e-4, |p| loss(&x, p)), 1e-6);
    }
}

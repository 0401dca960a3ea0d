use num_complex::Complex32;

use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Complex downlink channel matrix `H`, `n_c` subcarriers by `n_t` antennas,
/// stored row-major by subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    n_c: usize,
    n_t: usize,
    entries: Vec<Complex32>,
}

impl ChannelMatrix {
    pub fn new(n_c: usize, n_t: usize, entries: Vec<Complex32>) -> Result<Self> {
        if n_c == 0 || n_t == 0 {
            return Err(Error::Shape(format!("channel dims must be positive, got {n_c}x{n_t}")));
        }
        if entries.len() != n_c * n_t {
            return Err(Error::Shape(format!(
                "{n_c}x{n_t} channel needs {} entries, got {}",
                n_c * n_t,
                entries.len()
            )));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Shape("channel entries must be finite".into()));
        }
        Ok(ChannelMatrix { n_c, n_t, entries })
    }

    pub fn zeros(n_c: usize, n_t: usize) -> Self {
        ChannelMatrix {
            n_c,
            n_t,
            entries: vec![Complex32::new(0.0, 0.0); n_c * n_t],
        }
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn entries(&self) -> &[Complex32] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Complex32] {
        &mut self.entries
    }

    pub fn get(&self, subcarrier: usize, antenna: usize) -> Complex32 {
        self.entries[subcarrier * self.n_t + antenna]
    }

    /// Channel gain vector `h_n` of one subcarrier.
    pub fn row(&self, subcarrier: usize) -> &[Complex32] {
        &self.entries[subcarrier * self.n_t..(subcarrier + 1) * self.n_t]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr() as f64).sum()
    }

    /// Two-plane real tensor `[2, n_c, n_t]` (real, imaginary), divided by `scale`.
    pub fn to_tensor<T: Scalar>(&self, scale: f64) -> Tensor<T> {
        let inv = 1.0 / scale;
        let plane = self.n_c * self.n_t;
        let mut data = vec![T::zero(); 2 * plane];
        for (i, z) in self.entries.iter().enumerate() {
            data[i] = T::lit(z.re as f64 * inv);
            data[plane + i] = T::lit(z.im as f64 * inv);
        }
        Tensor::from_vec(&[2, self.n_c, self.n_t], data).expect("two planes")
    }

    /// Inverse of [`to_tensor`](Self::to_tensor); accepts `[2, h, w]` or `[1, 2, h, w]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, scale: f64) -> Result<Self> {
        let [n, c, h, w] = t.dims4()?;
        if n != 1 || c != 2 {
            return Err(Error::Shape(format!(
                "expected one 2-plane tensor, got shape {:?}",
                t.shape()
            )));
        }
        let plane = h * w;
        let d = t.data();
        let entries = (0..plane)
            .map(|i| {
                Complex32::new(
                    (d[i].to_f64().unwrap_or(f64::NAN) * scale) as f32,
                    (d[plane + i].to_f64().unwrap_or(f64::NAN) * scale) as f32,
                )
            })
            .collect();
        ChannelMatrix::new(h, w, entries)
    }

    /// Copy enlarged to `n_c × n_t` with zero rows and columns appended.
    pub fn zero_pad(&self, n_c: usize, n_t: usize) -> Result<Self> {
        if n_c < self.n_c || n_t < self.n_t {
            return Err(Error::Shape(format!(
                "cannot pad {}x{} to {n_c}x{n_t}",
                self.n_c, self.n_t
            )));
        }
        let mut out = ChannelMatrix::zeros(n_c, n_t);
        for r in 0..self.n_c {
            out.entries[r * n_t..r * n_t + self.n_t].copy_from_slice(self.row(r));
        }
        Ok(out)
    }

    /// Copy of the top-left `n_c × n_t` block.
    pub fn crop(&self, n_c: usize, n_t: usize) -> Result<Self> {
        if n_c > self.n_c || n_t > self.n_t {
            return Err(Error::Shape(format!(
                "cannot crop {}x{} to {n_c}x{n_t}",
                self.n_c, self.n_t
            )));
        }
        let entries = (0..n_c).flat_map(|r| self.row(r)[..n_t].iter().copied()).collect();
        ChannelMatrix::new(n_c, n_t, entries)
    }
}

/// Stacks channel matrices of equal size into a `[batch, 2, n_c, n_t]` tensor.
pub fn batch_tensor<T: Scalar>(batch: &[&ChannelMatrix], scale: f64) -> Result<Tensor<T>> {
    let first = batch.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
    let (n_c, n_t) = (first.n_c(), first.n_t());
    let mut data = Vec::with_capacity(batch.len() * 2 * n_c * n_t);
    for h in batch {
        if (h.n_c(), h.n_t()) != (n_c, n_t) {
            return Err(Error::Shape("batch mixes channel sizes".into()));
        }
        data.extend_from_slice(h.to_tensor::<T>(scale).data());
    }
    Tensor::from_vec(&[batch.len(), 2, n_c, n_t], data)
}

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::param::{he_uniform, join, Param, Parameters};
use crate::nn::{Scalar, Tensor};

/// Gradients of a SAME-padded convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

struct Geometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    /// Kernel taps `(ky, kx)` that reach at least one in-bounds input pixel.
    /// Taps outside this set only ever see zero padding.
    taps: Vec<(usize, usize)>,
}

impl Geometry {
    fn new<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Self> {
        let [batch, c_in, h, w] = input.dims4()?;
        let &[c_out, k_in, kh, kw] = kernel.shape() else {
            return Err(Error::Shape(format!(
                "conv kernel must be rank 4 (out, in, kh, kw), got {:?}",
                kernel.shape()
            )));
        };
        if k_in != c_in {
            return Err(Error::Shape(format!(
                "conv input has {c_in} channels but kernel expects {k_in}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!(
                "SAME padding needs odd kernel dims, got {kh}x{kw}"
            )));
        }
        if let Some(b) = bias {
            if b.len() != c_out {
                return Err(Error::Shape(format!(
                    "conv bias has {} entries for {c_out} output channels",
                    b.len()
                )));
            }
        }
        let (ph, pw) = (kh / 2, kw / 2);
        let mut taps = Vec::with_capacity(kh * kw);
        for ky in 0..kh {
            if ky.abs_diff(ph) >= h {
                continue;
            }
            for kx in 0..kw {
                if kx.abs_diff(pw) < w {
                    taps.push((ky, kx));
                }
            }
        }
        Ok(Geometry {
            batch,
            c_in,
            c_out,
            h,
            w,
            kh,
            kw,
            taps,
        })
    }

    fn rows(&self) -> usize {
        self.c_in * self.taps.len()
    }

    fn pixels(&self) -> usize {
        self.h * self.w
    }

    /// Kernel restricted to active taps, laid out `c_out × (c_in · taps)`.
    fn gather_kernel<T: Scalar>(&self, kernel: &[T]) -> Vec<T> {
        let rows = self.rows();
        let t = self.taps.len();
        let mut out = vec![T::zero(); self.c_out * rows];
        for co in 0..self.c_out {
            for ci in 0..self.c_in {
                let base = (co * self.c_in + ci) * self.kh * self.kw;
                for (ti, &(ky, kx)) in self.taps.iter().enumerate() {
                    out[co * rows + ci * t + ti] = kernel[base + ky * self.kw + kx];
                }
            }
        }
        out
    }

    fn scatter_kernel<T: Scalar>(&self, packed: &[T], kernel: &mut [T]) {
        let rows = self.rows();
        let t = self.taps.len();
        for co in 0..self.c_out {
            for ci in 0..self.c_in {
                let base = (co * self.c_in + ci) * self.kh * self.kw;
                for (ti, &(ky, kx)) in self.taps.iter().enumerate() {
                    kernel[base + ky * self.kw + kx] =
                        kernel[base + ky * self.kw + kx] + packed[co * rows + ci * t + ti];
                }
            }
        }
    }

    /// Valid output range along one axis for a tap offset `d` (input = out + d).
    fn span(len: usize, k: usize, tap: usize) -> (usize, usize, isize) {
        let d = tap as isize - (k / 2) as isize;
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).min(len as isize).max(0) as usize;
        (lo, hi, d)
    }

    fn im2col<T: Scalar>(&self, sample: &[T], col: &mut [T]) {
        let (h, w) = (self.h, self.w);
        let hw = self.pixels();
        let t = self.taps.len();
        col.iter_mut().for_each(|v| *v = T::zero());
        for ci in 0..self.c_in {
            let plane = &sample[ci * hw..(ci + 1) * hw];
            for (ti, &(ky, kx)) in self.taps.iter().enumerate() {
                let row = &mut col[(ci * t + ti) * hw..(ci * t + ti + 1) * hw];
                let (y0, y1, dy) = Self::span(h, self.kh, ky);
                let (x0, x1, dx) = Self::span(w, self.kw, kx);
                for y in y0..y1 {
                    let src = ((y as isize + dy) as usize) * w;
                    let dst = y * w;
                    for x in x0..x1 {
                        row[dst + x] = plane[src + (x as isize + dx) as usize];
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, col: &[T], sample: &mut [T]) {
        let (h, w) = (self.h, self.w);
        let hw = self.pixels();
        let t = self.taps.len();
        for ci in 0..self.c_in {
            let plane = &mut sample[ci * hw..(ci + 1) * hw];
            for (ti, &(ky, kx)) in self.taps.iter().enumerate() {
                let row = &col[(ci * t + ti) * hw..(ci * t + ti + 1) * hw];
                let (y0, y1, dy) = Self::span(h, self.kh, ky);
                let (x0, x1, dx) = Self::span(w, self.kw, kx);
                for y in y0..y1 {
                    let dst = ((y as isize + dy) as usize) * w;
                    let src = y * w;
                    for x in x0..x1 {
                        let i = dst + (x as isize + dx) as usize;
                        plane[i] = plane[i] + row[src + x];
                    }
                }
            }
        }
    }
}

/// Upper bound on im2col buffer entries; larger batches are processed in chunks.
const COL_BUDGET: usize = 1 << 22;

/// Below this many output channels the shift-and-accumulate path beats
/// im2col + GEMM.
const DIRECT_MAX_OUT: usize = 4;

impl Geometry {
    fn chunk(&self) -> usize {
        (COL_BUDGET / (self.rows() * self.pixels()).max(1)).clamp(1, self.batch.max(1))
    }
}

/// SAME-padded stride-1 2-D convolution (cross-correlation).
///
/// `input` is `[n, c_in, h, w]` (or `[c_in, h, w]`), `kernel` is
/// `[c_out, c_in, kh, kw]` with odd spatial dims, `bias` has `c_out` entries.
/// Pixels outside the border read as zero.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let g = Geometry::new(input, kernel, Some(bias))?;
    let hw = g.pixels();
    let mut out = Tensor::zeros(&input.with_spatial(g.c_out, g.h, g.w));
    if g.batch == 0 || hw == 0 {
        return Ok(out);
    }
    for (i, plane) in out.data_mut().chunks_mut(hw).enumerate() {
        plane.fill(bias.data()[i % g.c_out]);
    }
    if g.taps.is_empty() {
        return Ok(out);
    }
    if g.c_out <= DIRECT_MAX_OUT {
        direct_forward(&g, input.data(), kernel.data(), out.data_mut());
        return Ok(out);
    }
    let rows = g.rows();
    let wm = g.gather_kernel(kernel.data());
    let chunk = g.chunk();
    let mut col = vec![T::zero(); rows * chunk * hw];
    let mut sample_col = vec![T::zero(); rows * hw];
    let mut y = vec![T::zero(); g.c_out * chunk * hw];
    for start in (0..g.batch).step_by(chunk) {
        let count = chunk.min(g.batch - start);
        let cols = count * hw;
        batch_im2col(&g, input.data(), start, count, &mut sample_col, &mut col[..rows * cols]);
        T::gemm(
            g.c_out,
            rows,
            cols,
            &wm,
            false,
            &col[..rows * cols],
            false,
            T::zero(),
            &mut y[..g.c_out * cols],
        );
        // y is [c_out, count, hw]; output is [n, c_out, hw]
        for co in 0..g.c_out {
            for s in 0..count {
                let src = &y[(co * count + s) * hw..(co * count + s + 1) * hw];
                let dst = &mut out.data_mut()[((start + s) * g.c_out + co) * hw..][..hw];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = *d + v;
                }
            }
        }
    }
    Ok(out)
}

/// Columns for `count` samples laid out `[rows, count · hw]`.
fn batch_im2col<T: Scalar>(g: &Geometry, input: &[T], start: usize, count: usize, scratch: &mut [T], col: &mut [T]) {
    let hw = g.pixels();
    let in_stride = g.c_in * hw;
    let cols = count * hw;
    for s in 0..count {
        let n = start + s;
        g.im2col(&input[n * in_stride..(n + 1) * in_stride], scratch);
        for r in 0..g.rows() {
            col[r * cols + s * hw..r * cols + (s + 1) * hw].copy_from_slice(&scratch[r * hw..(r + 1) * hw]);
        }
    }
}

/// Zero-padded copy of every plane with row stride `w + kw - 1`, so each tap
/// becomes one contiguous shifted slice.
struct Padded {
    wp: usize,
    plane: usize,
    span: usize,
}

impl Padded {
    fn new(g: &Geometry) -> Self {
        let wp = g.w + g.kw - 1;
        let hp = g.h + g.kh - 1;
        Padded {
            wp,
            plane: wp * hp,
            span: (g.h - 1) * wp + g.w,
        }
    }

    fn pad<T: Scalar>(&self, g: &Geometry, src: &[T], dst: &mut [T], top: usize, left: usize) {
        dst.fill(T::zero());
        for y in 0..g.h {
            let d = (y + top) * self.wp + left;
            dst[d..d + g.w].copy_from_slice(&src[y * g.w..(y + 1) * g.w]);
        }
    }

    fn offset(&self, ky: usize, kx: usize) -> usize {
        ky * self.wp + kx
    }
}

/// Dot product with independent lane accumulators so it vectorizes.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] = lanes[i] + x[i] * y[i];
        }
    }
    lanes.iter().copied().sum::<T>() + tail
}

fn direct_forward<T: Scalar>(g: &Geometry, input: &[T], kernel: &[T], out: &mut [T]) {
    let hw = g.pixels();
    let p = Padded::new(g);
    let taps = g.kh * g.kw;
    let mut padded = vec![T::zero(); g.c_in * p.plane];
    let mut acc = vec![T::zero(); g.c_out * p.span];
    for n in 0..g.batch {
        for ci in 0..g.c_in {
            let src = &input[(n * g.c_in + ci) * hw..][..hw];
            p.pad(
                g,
                src,
                &mut padded[ci * p.plane..(ci + 1) * p.plane],
                g.kh / 2,
                g.kw / 2,
            );
        }
        acc.fill(T::zero());
        for co in 0..g.c_out {
            let a = &mut acc[co * p.span..(co + 1) * p.span];
            for ci in 0..g.c_in {
                let plane = &padded[ci * p.plane..(ci + 1) * p.plane];
                let kbase = (co * g.c_in + ci) * taps;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = kernel[kbase + ky * g.kw + kx];
                        let off = p.offset(ky, kx);
                        for (d, &v) in a.iter_mut().zip(&plane[off..off + p.span]) {
                            *d = *d + wv * v;
                        }
                    }
                }
            }
            let dst = &mut out[(n * g.c_out + co) * hw..][..hw];
            for y in 0..g.h {
                for (d, &v) in dst[y * g.w..(y + 1) * g.w].iter_mut().zip(&a[y * p.wp..]) {
                    *d = *d + v;
                }
            }
        }
    }
}

fn direct_backward<T: Scalar>(g: &Geometry, input: &[T], kernel: &[T], upstream: &[T], grads: &mut ConvGrads<T>) {
    let hw = g.pixels();
    let p = Padded::new(g);
    let taps = g.kh * g.kw;
    let mut padded = vec![T::zero(); p.plane];
    let mut dpad = vec![T::zero(); p.plane];
    // upstream laid out with stride wp; gap columns stay zero
    let mut dy = vec![T::zero(); g.c_out * p.plane];
    for n in 0..g.batch {
        for co in 0..g.c_out {
            let src = &upstream[(n * g.c_out + co) * hw..][..hw];
            p.pad(g, src, &mut dy[co * p.plane..(co + 1) * p.plane], 0, 0);
        }
        for ci in 0..g.c_in {
            let x = &input[(n * g.c_in + ci) * hw..][..hw];
            p.pad(g, x, &mut padded, g.kh / 2, g.kw / 2);
            dpad.fill(T::zero());
            for co in 0..g.c_out {
                let d = &dy[co * p.plane..co * p.plane + p.span];
                let kbase = (co * g.c_in + ci) * taps;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let k = kbase + ky * g.kw + kx;
                        let wv = kernel[k];
                        let off = p.offset(ky, kx);
                        let acc = dot(d, &padded[off..off + p.span]);
                        for (t, &gv) in dpad[off..off + p.span].iter_mut().zip(d) {
                            *t = *t + wv * gv;
                        }
                        let kg = &mut grads.kernel.data_mut()[k];
                        *kg = *kg + acc;
                    }
                }
            }
            let dx = &mut grads.input.data_mut()[(n * g.c_in + ci) * hw..][..hw];
            let (top, left) = (g.kh / 2, g.kw / 2);
            for y in 0..g.h {
                let s = (y + top) * p.wp + left;
                for (t, &v) in dx[y * g.w..(y + 1) * g.w].iter_mut().zip(&dpad[s..s + g.w]) {
                    *t = *t + v;
                }
            }
        }
    }
}

/// Exact gradients of [`conv2d`] given the gradient of its output.
pub fn conv2d_backward<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, upstream: &Tensor<T>) -> Result<ConvGrads<T>> {
    let g = Geometry::new(input, kernel, None)?;
    upstream.expect_shape(&input.with_spatial(g.c_out, g.h, g.w))?;
    let hw = g.pixels();
    let rows = g.rows();
    let mut grads = ConvGrads {
        input: Tensor::zeros(input.shape()),
        kernel: Tensor::zeros(kernel.shape()),
        bias: Tensor::zeros(&[g.c_out]),
    };
    if hw == 0 {
        return Ok(grads);
    }
    for (i, plane) in upstream.data().chunks(hw).enumerate() {
        let b = &mut grads.bias.data_mut()[i % g.c_out];
        *b = *b + plane.iter().copied().sum::<T>();
    }
    if rows == 0 || g.batch == 0 {
        return Ok(grads);
    }
    if g.c_out <= DIRECT_MAX_OUT {
        direct_backward(&g, input.data(), kernel.data(), upstream.data(), &mut grads);
        return Ok(grads);
    }
    let wm = g.gather_kernel(kernel.data());
    let chunk = g.chunk();
    let mut dwm = vec![T::zero(); g.c_out * rows];
    let mut col = vec![T::zero(); rows * chunk * hw];
    let mut dcol = vec![T::zero(); rows * chunk * hw];
    let mut scratch = vec![T::zero(); rows * hw];
    let mut dy = vec![T::zero(); g.c_out * chunk * hw];
    let in_stride = g.c_in * hw;
    for start in (0..g.batch).step_by(chunk) {
        let count = chunk.min(g.batch - start);
        let cols = count * hw;
        for co in 0..g.c_out {
            for s in 0..count {
                dy[(co * count + s) * hw..][..hw]
                    .copy_from_slice(&upstream.data()[((start + s) * g.c_out + co) * hw..][..hw]);
            }
        }
        let dy = &dy[..g.c_out * cols];
        batch_im2col(&g, input.data(), start, count, &mut scratch, &mut col[..rows * cols]);
        T::gemm(
            g.c_out,
            cols,
            rows,
            dy,
            false,
            &col[..rows * cols],
            true,
            T::one(),
            &mut dwm,
        );
        T::gemm(
            rows,
            g.c_out,
            cols,
            &wm,
            true,
            dy,
            false,
            T::zero(),
            &mut dcol[..rows * cols],
        );
        for s in 0..count {
            for r in 0..rows {
                scratch[r * hw..(r + 1) * hw].copy_from_slice(&dcol[r * cols + s * hw..r * cols + (s + 1) * hw]);
            }
            let n = start + s;
            g.col2im(
                &scratch,
                &mut grads.input.data_mut()[n * in_stride..(n + 1) * in_stride],
            );
        }
    }
    g.scatter_kernel(&dwm, grads.kernel.data_mut());
    Ok(grads)
}

/// Convolution layer with trainable kernel and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, kernel: usize, rng: &mut R) -> Self {
        let shape = [c_out, c_in, kernel, kernel];
        Conv2d {
            weight: Param::new(he_uniform(&shape, c_in * kernel * kernel, rng)),
            bias: Param::new(Tensor::zeros(&[c_out])),
        }
    }

    pub fn from_tensors(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Conv2d {
            weight: Param::new(weight),
            bias: Param::new(bias),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight.value, &self.bias.value)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let g = conv2d_backward(x, &self.weight.value, dy)?;
        self.weight.grad.add_assign(&g.kernel)?;
        self.bias.grad.add_assign(&g.bias)?;
        Ok(g.input)
    }

    pub fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

impl<T: Scalar> Parameters<T> for Conv2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_grad_close, numeric_grad};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    /// Nested-loop reference: zero padding, cross-correlation.
    fn direct_conv(input: &Tensor<f64>, kernel: &Tensor<f64>, bias: &[f64]) -> Tensor<f64> {
        let [n, ci_n, h, w] = input.dims4().unwrap();
        let [co_n, _, kh, kw] = <[usize; 4]>::try_from(kernel.shape()).unwrap();
        let mut out = Tensor::zeros(&[n, co_n, h, w]);
        for b in 0..n {
            for co in 0..co_n {
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = bias[co];
                        for ci in 0..ci_n {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = y as isize + ky as isize - (kh / 2) as isize;
                                    let ix = x as isize + kx as isize - (kw / 2) as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += input.data()[((b * ci_n + ci) * h + iy as usize) * w + ix as usize]
                                        * kernel.data()[((co * ci_n + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out.data_mut()[((b * co_n + co) * h + y) * w + x] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn scalar_product() {
        let y = conv2d(&t(&[1, 1, 1], &[2.0]), &t(&[1, 1, 1, 1], &[3.0]), &t(&[1], &[0.0])).unwrap();
        assert_eq!(y.data(), &[6.0]);
        assert_eq!(y.shape(), &[1, 1, 1]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Tensor<f64> = he_uniform(&[2, 1, 6, 5], 1, &mut rng);
        let mut k = vec![0.0; 25];
        k[12] = 1.0;
        let y = conv2d(&x, &t(&[1, 1, 5, 5], &k), &t(&[1], &[0.0])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_on_ones_input() {
        let y = conv2d(
            &t(&[1, 3, 3], &[1.0; 9]),
            &t(&[1, 1, 3, 3], &[1.0; 9]),
            &t(&[1], &[0.0]),
        )
        .unwrap();
        // Frozen from the nested-loop reference.
        let expected = direct_conv(&t(&[1, 3, 3], &[1.0; 9]), &t(&[1, 1, 3, 3], &[1.0; 9]), &[0.0]);
        assert_eq!(expected.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
        assert_eq!(y.data(), expected.data());
    }

    #[test]
    fn matches_nested_loop_reference_on_odd_geometries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(h, w, k) in &[(1, 1, 5), (4, 1, 5), (3, 7, 3), (8, 2, 9), (5, 5, 1)] {
            let x: Tensor<f64> = he_uniform(&[2, 3, h, w], 1, &mut rng);
            for c_out in [2, 6] {
                let kern: Tensor<f64> = he_uniform(&[c_out, 3, k, k], 1, &mut rng);
                let bias: Vec<f64> = (0..c_out).map(|i| 0.1 * i as f64 - 0.2).collect();
                let y = conv2d(&x, &kern, &t(&[c_out], &bias)).unwrap();
                let r = direct_conv(&x, &kern, &bias);
                for (a, b) in y.data().iter().zip(r.data()) {
                    assert!((a - b).abs() < 1e-12, "{h}x{w} k{k}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let err = conv2d(&x, &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1])).unwrap_err();
        assert!(err.to_string().contains("2 channels"));
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 2, 2]), &Tensor::zeros(&[1])).is_err());
        let dy = Tensor::zeros(&[1, 1, 3, 4]);
        assert!(conv2d_backward(&x, &Tensor::zeros(&[1, 2, 3, 3]), &dy).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Tensor<f64> = he_uniform(&[1, 2, 4, 4], 1, &mut rng);
        let k: Tensor<f64> = he_uniform(&[3, 2, 3, 3], 1, &mut rng);
        let g = conv2d_backward(&x, &k, &Tensor::zeros(&[1, 3, 4, 4])).unwrap();
        assert_eq!(g.input.max_abs(), 0.0);
        assert_eq!(g.kernel.max_abs(), 0.0);
        assert_eq!(g.bias.max_abs(), 0.0);
    }

    #[test]
    fn scalar_case_gradients() {
        let g = conv2d_backward(
            &t(&[1, 1, 1], &[2.0]),
            &t(&[1, 1, 1, 1], &[3.0]),
            &t(&[1, 1, 1], &[1.0]),
        )
        .unwrap();
        assert_eq!(g.input.data(), &[3.0]);
        assert_eq!(g.kernel.data(), &[2.0]);
        assert_eq!(g.bias.data(), &[1.0]);
    }

    #[test]
    fn backward_matches_finite_differences_f64() {
        for c_out in [4, 6] {
            check_backward(c_out);
        }
    }

    fn check_backward(c_out: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Tensor<f64> = he_uniform(&[2, 2, 8, 8], 1, &mut rng);
        let k: Tensor<f64> = he_uniform(&[c_out, 2, 5, 5], 10, &mut rng);
        let b: Tensor<f64> = he_uniform(&[c_out], 1, &mut rng);
        let w: Tensor<f64> = he_uniform(&[2, c_out, 8, 8], 1, &mut rng);
        let loss = |x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            let y = conv2d(x, k, b).unwrap();
            y.data().iter().zip(w.data()).map(|(a, c)| a * c).sum()
        };
        let g = conv2d_backward(&x, &k, &w).unwrap();
        let nx = numeric_grad(&x, 1e-4, |xp| loss(xp, &k, &b));
        let nk = numeric_grad(&k, 1e-4, |kp| loss(&x, kp, &b));
        let nb = numeric_grad(&b, 1e-4, |bp| loss(&x, &k, bp));
        assert_grad_close(&g.input, &nx, 1e-6);
        assert_grad_close(&g.kernel, &nk, 1e-6);
        assert_grad_close(&g.bias, &nb, 1e-6);
    }
}

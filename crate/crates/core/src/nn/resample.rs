use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

/// Non-overlapping `factor × factor` block means.
pub fn avg_pool<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Shape(format!(
            "avg_pool factor {factor} does not divide spatial dims {h}x{w}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let inv = T::one() / T::lit((factor * factor) as f64);
    let mut y = Tensor::zeros(&x.with_spatial(c, oh, ow));
    let src = x.data();
    let dst = y.data_mut();
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for dy in 0..factor {
                    let row = (plane * h + oy * factor + dy) * w + ox * factor;
                    for dx in 0..factor {
                        acc = acc + src[row + dx];
                    }
                }
                dst[(plane * oh + oy) * ow + ox] = acc * inv;
            }
        }
    }
    Ok(y)
}

/// Adjoint of [`avg_pool`]: spreads each gradient evenly over its block.
pub fn avg_pool_backward<T: Scalar>(dy: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let inv = T::one() / T::lit((factor * factor) as f64);
    Ok(upsample_nearest(dy, factor)?.scale(inv))
}

/// Replicates every entry into a `factor × factor` block.
pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    if factor == 0 {
        return Err(Error::Shape("upsample factor must be positive".into()));
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut y = Tensor::zeros(&x.with_spatial(c, oh, ow));
    let src = x.data();
    let dst = y.data_mut();
    for plane in 0..n * c {
        for oy in 0..oh {
            let srow = (plane * h + oy / factor) * w;
            let drow = (plane * oh + oy) * ow;
            for ox in 0..ow {
                dst[drow + ox] = src[srow + ox / factor];
            }
        }
    }
    Ok(y)
}

/// Adjoint of [`upsample_nearest`]: block sums.
pub fn upsample_nearest_backward<T: Scalar>(dy: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let k = T::lit((factor * factor) as f64);
    Ok(avg_pool(dy, factor)?.scale(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn block_mean_and_replication() {
        let p = avg_pool(&t(&[1, 2, 2], &[1.0, 3.0, 5.0, 7.0]), 2).unwrap();
        assert_eq!(p.data(), &[4.0]);
        let u = upsample_nearest(&t(&[1, 1, 1], &[4.0]), 2).unwrap();
        assert_eq!(u.data(), &[4.0; 4]);
        assert_eq!(u.shape(), &[1, 2, 2]);
    }

    #[test]
    fn pool_rejects_non_divisible() {
        assert!(avg_pool(&Tensor::<f32>::zeros(&[1, 1, 6, 4]), 4).is_err());
    }

    #[test]
    fn backward_passes_are_adjoints() {
        // <pool(x), y> == <x, pool_backward(y)>
        let x = t(&[1, 2, 4, 4], &(0..32).map(|i| (i as f64).sin()).collect::<Vec<_>>());
        let y = t(&[1, 2, 2, 2], &(0..8).map(|i| (i as f64).cos()).collect::<Vec<_>>());
        let lhs: f64 = avg_pool(&x, 2)
            .unwrap()
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .data()
            .iter()
            .zip(avg_pool_backward(&y, 2).unwrap().data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let lhs: f64 = upsample_nearest(&y, 2)
            .unwrap()
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = y
            .data()
            .iter()
            .zip(upsample_nearest_backward(&x, 2).unwrap().data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pool_after_upsample_is_identity(
            h in 1usize..5, w in 1usize..5, f in 1usize..5,
            seed in any::<u64>(),
        ) {
            let data: Vec<f64> = (0..2 * h * w).map(|i| ((seed as f64) * 1e-3 + i as f64).sin()).collect();
            let x = t(&[2, h, w], &data);
            let back = avg_pool(&upsample_nearest(&x, f).unwrap(), f).unwrap();
            for (a, b) in back.data().iter().zip(x.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn upsample_after_pool_is_identity_on_block_constant(
            h in 1usize..4, w in 1usize..4, f in 1usize..4, seed in any::<u64>(),
        ) {
            let coarse: Vec<f64> = (0..h * w).map(|i| ((seed % 1000) as f64 + i as f64).cos()).collect();
            let x = upsample_nearest(&t(&[1, h, w], &coarse), f).unwrap();
            let back = upsample_nearest(&avg_pool(&x, f).unwrap(), f).unwrap();
            for (a, b) in back.data().iter().zip(x.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

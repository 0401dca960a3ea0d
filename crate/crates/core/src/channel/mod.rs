//! Synthetic multipath OFDM channels seen from a uniform linear array, and
//! the dataset file they are stored in.

mod dataset;

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;

use crate::csi::ChannelMatrix;
use crate::error::{Error, Result};

pub use dataset::{read_dataset, write_dataset, Dataset, DATASET_MAGIC, DATASET_VERSION};

/// Parameters of the multipath generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGenConfig {
    pub n_c: usize,
    pub n_t: usize,
    /// Number of propagation paths `L`.
    pub paths: usize,
    /// OFDM sampling rate in Hz.
    pub sample_rate: f64,
    /// Path delays are drawn from `[0, delay_spread]` seconds.
    pub delay_spread: f64,
    /// Average path power `E|alpha|^2`.
    pub sigma_alpha_sq: f64,
    /// Antenna spacing over carrier wavelength.
    pub d_over_lambda: f64,
    /// Angles of departure are drawn uniformly from this interval (radians).
    pub aod_range: (f64, f64),
    pub seed: u64,
}

impl Default for ChannelGenConfig {
    fn default() -> Self {
        ChannelGenConfig {
            n_c: 256,
            n_t: 32,
            paths: 8,
            sample_rate: 20e6,
            delay_spread: 1e-6,
            sigma_alpha_sq: 1.0,
            d_over_lambda: 0.5,
            aod_range: (-PI / 3.0, PI / 3.0),
            seed: 0,
        }
    }
}

/// Largest path delay of [`ChannelGenConfig::desk`], in seconds.
pub const DESK_DELAY_SPREAD: f64 = 2.5e-7;

impl ChannelGenConfig {
    /// Desk-scale scenario at 64 x 16. The delay spread shrinks with the
    /// subcarrier count so that a path's phase turns no faster per
    /// subcarrier than in the 256-subcarrier default (at most 20/256 of a
    /// cycle).
    pub fn desk() -> Self {
        ChannelGenConfig {
            n_c: 64,
            n_t: 16,
            delay_spread: DESK_DELAY_SPREAD,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_c == 0 || self.n_t == 0 {
            return bad("n_c and n_t must be positive");
        }
        if self.n_c > u16::MAX as usize || self.n_t > u16::MAX as usize {
            return bad("n_c and n_t must fit in 16 bits");
        }
        if self.paths == 0 {
            return bad("at least one path is required");
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return bad("sample rate must be positive");
        }
        if !(self.delay_spread >= 0.0 && self.delay_spread.is_finite()) {
            return bad("delay spread must be non-negative");
        }
        if !(self.sigma_alpha_sq >= 0.0 && self.sigma_alpha_sq.is_finite()) {
            return bad("path power must be non-negative");
        }
        if !(self.d_over_lambda > 0.0 && self.d_over_lambda.is_finite()) {
            return bad("antenna spacing must be positive");
        }
        let (lo, hi) = self.aod_range;
        if !(lo <= hi && lo > -PI / 2.0 && hi < PI / 2.0) {
            return bad("angle-of-departure range must lie inside (-pi/2, pi/2)");
        }
        Ok(())
    }
}

/// One propagation path: complex gain, delay (s) and angle of departure (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub alpha: Complex64,
    pub delay: f64,
    pub aod: f64,
}

/// Array response `a_k = exp(-j 2 pi (d/lambda) k sin(phi))`, `k = 0..n_t`.
pub fn ula_response(phi: f64, n_t: usize, d_over_lambda: f64) -> Vec<Complex64> {
    let step = -2.0 * PI * d_over_lambda * phi.sin();
    (0..n_t).map(|k| Complex64::from_polar(1.0, step * k as f64)).collect()
}

/// Channel built from explicit paths:
/// `h_n = sqrt(n_t / L) sum_l alpha_l exp(-j 2 pi tau_l f_s n / n_c) a(phi_l)`.
pub fn channel_from_paths(cfg: &ChannelGenConfig, paths: &[Path]) -> Result<ChannelMatrix> {
    if paths.is_empty() {
        return Err(Error::Config("at least one path is required".into()));
    }
    let (n_c, n_t) = (cfg.n_c, cfg.n_t);
    let gain = (n_t as f64 / paths.len() as f64).sqrt();
    let mut acc = vec![Complex64::new(0.0, 0.0); n_c * n_t];
    for p in paths {
        let a = ula_response(p.aod, n_t, cfg.d_over_lambda);
        let step = -2.0 * PI * p.delay * cfg.sample_rate / n_c as f64;
        for n in 0..n_c {
            let coeff = p.alpha * Complex64::from_polar(gain, step * n as f64);
            for (slot, ak) in acc[n * n_t..(n + 1) * n_t].iter_mut().zip(&a) {
                *slot += coeff * ak;
            }
        }
    }
    let entries = acc.iter().map(|z| Complex32::new(z.re as f32, z.im as f32)).collect();
    ChannelMatrix::new(n_c, n_t, entries)
}

/// Draws `L` i.i.d. paths: `alpha ~ CN(0, sigma^2)`, delay uniform in
/// `[0, delay_spread]`, AoD uniform in `aod_range`.
pub fn draw_paths<R: Rng + ?Sized>(cfg: &ChannelGenConfig, rng: &mut R) -> Vec<Path> {
    let normal = Normal::new(0.0, (cfg.sigma_alpha_sq / 2.0).sqrt()).expect("finite deviation");
    let delay = Uniform::new_inclusive(0.0, cfg.delay_spread).expect("valid delay range");
    let aod = Uniform::new_inclusive(cfg.aod_range.0, cfg.aod_range.1).expect("valid angle range");
    (0..cfg.paths)
        .map(|_| Path {
            alpha: Complex64::new(normal.sample(rng), normal.sample(rng)),
            delay: delay.sample(rng),
            aod: aod.sample(rng),
        })
        .collect()
}

pub fn generate_channel<R: Rng + ?Sized>(cfg: &ChannelGenConfig, rng: &mut R) -> Result<ChannelMatrix> {
    cfg.validate()?;
    let paths = draw_paths(cfg, rng);
    channel_from_paths(cfg, &paths)
}

/// Generator for sample `index` of the dataset seeded by `seed`; samples are
/// independent of each other and of the thread count.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `count` channels generated in parallel from `cfg.seed`.
pub fn generate_dataset(cfg: &ChannelGenConfig, count: usize) -> Result<Dataset> {
    cfg.validate()?;
    let samples = (0..count)
        .into_par_iter()
        .map(|i| generate_channel(cfg, &mut sample_rng(cfg.seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(cfg.n_c, cfg.n_t, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-12
    }

    #[test]
    fn ula_examples() {
        assert!(ula_response(0.0, 5, 0.5)
            .iter()
            .all(|&z| close(z, Complex64::new(1.0, 0.0))));
        let r = ula_response(PI / 2.0, 2, 0.5);
        assert!(close(r[0], Complex64::new(1.0, 0.0)));
        assert!(close(r[1], Complex64::new(-1.0, 0.0)));
        for phi in [-1.2, -0.3, 0.7, 1.5] {
            assert!(ula_response(phi, 16, 0.37)
                .iter()
                .all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn single_forced_path_is_flat() {
        let cfg = ChannelGenConfig {
            n_c: 8,
            n_t: 4,
            paths: 1,
            ..ChannelGenConfig::default()
        };
        let h = channel_from_paths(
            &cfg,
            &[Path {
                alpha: Complex64::new(1.0, 0.0),
                delay: 0.0,
                aod: 0.0,
            }],
        )
        .unwrap();
        for z in h.entries() {
            assert!((z.re - 2.0).abs() < 1e-6 && z.im.abs() < 1e-6);
        }
    }

    #[test]
    fn single_path_channels_are_rank_one() {
        let cfg = ChannelGenConfig {
            n_c: 16,
            n_t: 8,
            paths: 1,
            ..ChannelGenConfig::desk()
        };
        for i in 0..20 {
            let h = generate_channel(&cfg, &mut sample_rng(3, i)).unwrap();
            let scale = h.entries().iter().map(|z| z.norm()).fold(0.0f32, f32::max) as f64;
            for r in 0..h.n_c() - 1 {
                for c in 0..h.n_t() - 1 {
                    let g = |a, b| {
                        let z = h.get(a, b);
                        Complex64::new(z.re as f64, z.im as f64)
                    };
                    let minor = g(r, c) * g(r + 1, c + 1) - g(r, c + 1) * g(r + 1, c);
                    assert!(minor.norm() <= 1e-5 * scale * scale, "minor {minor}");
                }
            }
        }
    }

    #[test]
    fn adjacent_subcarriers_are_more_correlated_than_distant_ones() {
        let cfg = ChannelGenConfig::desk();
        let ds = generate_dataset(&cfg, 1000).unwrap();
        let corr = |h: &ChannelMatrix, a: usize, b: usize| {
            let (x, y) = (h.row(a), h.row(b));
            let dot: Complex32 = x.iter().zip(y).map(|(p, q)| p * q.conj()).sum();
            let nx: f32 = x.iter().map(|z| z.norm_sqr()).sum();
            let ny: f32 = y.iter().map(|z| z.norm_sqr()).sum();
            (dot.norm() / (nx * ny).sqrt()) as f64
        };
        let (mut near, mut far) = (0.0, 0.0);
        for h in ds.samples() {
            near += corr(h, 0, 1);
            far += corr(h, 0, cfg.n_c / 2);
        }
        assert!(near > far, "adjacent {near} vs half-band {far}");
    }

    #[test]
    fn doubling_path_power_doubles_energy() {
        let base = ChannelGenConfig {
            seed: 5,
            ..ChannelGenConfig::desk()
        };
        let energy = |cfg: &ChannelGenConfig| {
            let ds = generate_dataset(cfg, 4000).unwrap();
            ds.samples().iter().map(|h| h.frobenius_sq()).sum::<f64>() / 4000.0
        };
        let e1 = energy(&base);
        let e2 = energy(&ChannelGenConfig {
            sigma_alpha_sq: 2.0,
            seed: 6,
            ..base.clone()
        });
        // Monte Carlo with 8 paths per sample; a few percent of statistical slack
        assert!((e2 / e1 - 2.0).abs() < 0.1, "ratio {}", e2 / e1);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = ChannelGenConfig {
            seed: 42,
            ..ChannelGenConfig::desk()
        };
        let a = generate_dataset(&cfg, 16).unwrap();
        let b = generate_dataset(&cfg, 16).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&ChannelGenConfig { seed: 43, ..cfg }, 16).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_invalid_configs() {
        let ok = ChannelGenConfig::desk();
        assert!(ok.validate().is_ok());
        for bad in [
            ChannelGenConfig { paths: 0, ..ok.clone() },
            ChannelGenConfig {
                sample_rate: 0.0,
                ..ok.clone()
            },
            ChannelGenConfig {
                delay_spread: -1.0,
                ..ok.clone()
            },
            ChannelGenConfig {
                d_over_lambda: 0.0,
                ..ok.clone()
            },
            ChannelGenConfig {
                aod_range: (-2.0, 0.0),
                ..ok.clone()
            },
            ChannelGenConfig { n_t: 0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}

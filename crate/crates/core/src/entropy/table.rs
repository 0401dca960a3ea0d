use crate::entropy::FactorizedPrior;
use crate::error::{Error, Result};
use crate::nn::Scalar;

/// Probability precision of the coder: frequencies of one channel sum to
/// `1 << PRECISION_BITS`.
pub const PRECISION_BITS: u32 = 16;
pub const TOTAL_FREQ: u32 = 1 << PRECISION_BITS;

/// Margin added on both sides of the observed latent range.
pub const SUPPORT_MARGIN: i32 = 2;

/// Support bounds are clamped to this magnitude; anything beyond is escaped.
pub const MAX_SUPPORT: i32 = 2048;

/// Raw bits that follow an escape symbol.
pub const ESCAPE_RAW_BITS: u32 = 32;

/// Integer frequency table of one channel. Symbol `i < len - 1` stands for
/// the value `k_min + i`; the last symbol is the escape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    k_min: i32,
    freqs: Vec<u32>,
    cumulative: Vec<u32>,
}

impl FrequencyTable {
    /// Validates that there is at least one in-support symbol plus the escape,
    /// every frequency is positive and the total is exactly [`TOTAL_FREQ`].
    pub fn new(k_min: i32, freqs: Vec<u32>) -> Result<Self> {
        if freqs.len() < 2 || freqs.len() > TOTAL_FREQ as usize {
            return Err(Error::format("frequency table", format!("{} symbols", freqs.len())));
        }
        if freqs.contains(&0) {
            return Err(Error::format("frequency table", "zero frequency"));
        }
        let total: u64 = freqs.iter().map(|&f| f as u64).sum();
        if total != TOTAL_FREQ as u64 {
            return Err(Error::format(
                "frequency table",
                format!("total {total}, expected {TOTAL_FREQ}"),
            ));
        }
        let k_max = k_min as i64 + freqs.len() as i64 - 2;
        if k_max > i32::MAX as i64 {
            return Err(Error::format("frequency table", "support overflows i32"));
        }
        let mut cumulative = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0;
        cumulative.push(0);
        for &f in &freqs {
            acc += f;
            cumulative.push(acc);
        }
        Ok(FrequencyTable {
            k_min,
            freqs,
            cumulative,
        })
    }

    /// Quantizes probabilities (in-support bins then escape) to 16-bit
    /// frequencies: every symbol gets at least one unit and the remainder is
    /// handed out by largest fractional part, ties to the lower index.
    pub fn from_probabilities(k_min: i32, probs: &[f64]) -> Result<Self> {
        let n = probs.len();
        if n < 2 || n > TOTAL_FREQ as usize {
            return Err(Error::format("frequency table", format!("{n} symbols")));
        }
        let clean: Vec<f64> = probs
            .iter()
            .map(|&p| if p.is_finite() { p.max(0.0) } else { 0.0 })
            .collect();
        let sum: f64 = clean.iter().sum();
        let spare = (TOTAL_FREQ as usize - n) as f64;
        let scaled: Vec<f64> = if sum > 0.0 {
            clean.iter().map(|p| p / sum * spare).collect()
        } else {
            vec![spare / n as f64; n]
        };
        let mut freqs: Vec<u32> = scaled.iter().map(|s| 1 + s.floor() as u32).collect();
        let assigned: u64 = freqs.iter().map(|&f| f as u64).sum();
        let mut left = TOTAL_FREQ as u64 - assigned;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (scaled[a] - scaled[a].floor(), scaled[b] - scaled[b].floor());
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            freqs[i] += 1;
            left -= 1;
        }
        Self::new(k_min, freqs)
    }

    pub fn k_min(&self) -> i32 {
        self.k_min
    }

    pub fn k_max(&self) -> i32 {
        self.k_min + self.freqs.len() as i32 - 2
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn symbol_count(&self) -> usize {
        self.freqs.len()
    }

    pub fn escape(&self) -> usize {
        self.freqs.len() - 1
    }

    /// Symbol index for value `k`, or `None` when it must be escaped.
    pub fn symbol(&self, k: i32) -> Option<usize> {
        if k < self.k_min || k > self.k_max() {
            None
        } else {
            Some((k as i64 - self.k_min as i64) as usize)
        }
    }

    pub fn value(&self, symbol: usize) -> i32 {
        self.k_min + symbol as i32
    }

    /// `(cumulative, frequency)` of a symbol.
    pub fn interval(&self, symbol: usize) -> (u32, u32) {
        (self.cumulative[symbol], self.freqs[symbol])
    }

    /// Symbol whose interval contains `target` (`target < TOTAL_FREQ`).
    pub fn lookup(&self, target: u32) -> usize {
        self.cumulative.partition_point(|&c| c <= target) - 1
    }

    /// Coded probability of `k`: its bin for in-support values, the escape
    /// mass otherwise.
    pub fn probability(&self, k: i32) -> f64 {
        let s = self.symbol(k).unwrap_or(self.escape());
        self.freqs[s] as f64 / TOTAL_FREQ as f64
    }

    /// Ideal code length of `k` in bits, counting escape raw bits.
    pub fn cost_bits(&self, k: i32) -> f64 {
        match self.symbol(k) {
            Some(_) => -self.probability(k).log2(),
            None => -self.probability(k).log2() + ESCAPE_RAW_BITS as f64,
        }
    }
}

/// Finalized entropy model shared bit-exactly by encoder and decoder: one
/// [`FrequencyTable`] per feature channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingModel {
    tables: Vec<FrequencyTable>,
}

impl CodingModel {
    pub fn new(tables: Vec<FrequencyTable>) -> Self {
        CodingModel { tables }
    }

    /// Freezes a learned prior over per-channel supports `[k_min, k_max]`.
    pub fn from_prior<T: Scalar>(prior: &FactorizedPrior<T>, supports: &[(i32, i32)]) -> Result<Self> {
        if supports.len() != prior.channels() {
            return Err(Error::Shape(format!(
                "{} support ranges for a prior with {} channels",
                supports.len(),
                prior.channels()
            )));
        }
        let prior: FactorizedPrior<f64> = prior.cast();
        let tables = supports
            .iter()
            .enumerate()
            .map(|(c, &(lo, hi))| {
                let (lo, hi) = (lo.clamp(-MAX_SUPPORT, MAX_SUPPORT), hi.clamp(-MAX_SUPPORT, MAX_SUPPORT));
                let (lo, hi) = (lo.min(hi), lo.max(hi));
                let mut probs: Vec<f64> = (lo..=hi).map(|k| prior.bin_probability(c, k as f64)).collect();
                let tails = prior.cdf(c, lo as f64 - 0.5) + (1.0 - prior.cdf(c, hi as f64 + 0.5));
                probs.push(tails);
                FrequencyTable::from_probabilities(lo, &probs)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CodingModel { tables })
    }

    /// A model whose every channel is uniform over `[k_min, k_max]` with the
    /// smallest possible escape mass.
    pub fn uniform(channels: usize, k_min: i32, k_max: i32) -> Result<Self> {
        let n = (k_max - k_min + 1) as usize;
        let mut probs = vec![1.0; n];
        probs.push(0.0);
        let table = FrequencyTable::from_probabilities(k_min, &probs)?;
        Ok(CodingModel {
            tables: vec![table; channels],
        })
    }

    pub fn channels(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, channel: usize) -> &FrequencyTable {
        &self.tables[channel]
    }

    pub fn tables(&self) -> &[FrequencyTable] {
        &self.tables
    }
}

/// Per-channel `(k_min, k_max)` observed in `[n, channels, h, w]` symbols,
/// widened by [`SUPPORT_MARGIN`]. Channels with no observation get `[-M, M]`.
pub fn support_from_symbols(symbols: &[i32], channels: usize, plane: usize) -> Vec<(i32, i32)> {
    let mut bounds = vec![(i32::MAX, i32::MIN); channels];
    if plane > 0 {
        for (i, &v) in symbols.iter().enumerate() {
            let c = (i / plane) % channels;
            bounds[c] = (bounds[c].0.min(v), bounds[c].1.max(v));
        }
    }
    bounds
        .into_iter()
        .map(|(lo, hi)| {
            if lo > hi {
                (-SUPPORT_MARGIN, SUPPORT_MARGIN)
            } else {
                (lo.saturating_sub(SUPPORT_MARGIN), hi.saturating_add(SUPPORT_MARGIN))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_bad_tables() {
        assert!(FrequencyTable::new(0, vec![TOTAL_FREQ]).is_err());
        assert!(FrequencyTable::new(0, vec![TOTAL_FREQ, 0]).is_err());
        assert!(FrequencyTable::new(0, vec![100, 100]).is_err());
        assert!(FrequencyTable::new(0, vec![TOTAL_FREQ - 1, 1]).is_ok());
    }

    #[test]
    fn uniform_four_bins_cost_two_bits() {
        let model = CodingModel::uniform(1, -2, 1).unwrap();
        let t = model.table(0);
        assert_eq!(t.freqs(), &[16384, 16384, 16384, 16383, 1]);
        for k in -2..=1 {
            assert!((t.cost_bits(k) - 2.0).abs() < 1e-4);
        }
        assert_eq!(t.symbol(2), None);
        assert!((t.cost_bits(5) - (16.0 + 32.0)).abs() < 1e-9);
    }

    #[test]
    fn lookup_inverts_intervals() {
        let t = FrequencyTable::from_probabilities(-3, &[0.1, 0.5, 0.2, 0.15, 0.05]).unwrap();
        for s in 0..t.symbol_count() {
            let (cum, f) = t.interval(s);
            assert_eq!(t.lookup(cum), s);
            assert_eq!(t.lookup(cum + f - 1), s);
        }
        assert_eq!(t.value(0), -3);
        assert_eq!(t.k_max(), 0);
    }

    #[test]
    fn support_widens_observed_range() {
        // two channels, plane of 2, batch of 2
        let symbols = [0, 3, -1, 1, 5, 2, 0, 0];
        assert_eq!(support_from_symbols(&symbols, 2, 2), vec![(-2, 7), (-3, 3)]);
        assert_eq!(support_from_symbols(&[], 1, 4), vec![(-2, 2)]);
    }

    #[test]
    fn prior_tables_are_normalized() {
        let prior = FactorizedPrior::<f32>::new(3, &mut ChaCha8Rng::seed_from_u64(0));
        let model = CodingModel::from_prior(&prior, &[(-5, 5), (-1, 1), (0, 0)]).unwrap();
        for t in model.tables() {
            assert_eq!(t.freqs().iter().sum::<u32>(), TOTAL_FREQ);
            let p0 = t.probability(0);
            assert!((p0 - 0.2449).abs() < 0.03, "{p0}");
        }
        assert!(CodingModel::from_prior(&prior, &[(0, 0)]).is_err());
    }

    proptest! {
        #[test]
        fn quantized_tables_sum_exactly(probs in prop::collection::vec(0.0f64..1.0, 2..300), k_min in -100i32..100) {
            let t = FrequencyTable::from_probabilities(k_min, &probs).unwrap();
            prop_assert_eq!(t.freqs().iter().map(|&f| f as u64).sum::<u64>(), TOTAL_FREQ as u64);
            prop_assert!(t.freqs().iter().all(|&f| f >= 1));
            let sum: f64 = probs.iter().sum();
            if sum > 0.0 {
                for (f, p) in t.freqs().iter().zip(&probs) {
                    // one reserved unit, one rounding unit, and the share of the reserve
                    let share = p / sum;
                    let exact = share * TOTAL_FREQ as f64;
                    prop_assert!((*f as f64 - exact).abs() <= 2.0 + share * probs.len() as f64);
                }
            }
        }
    }
}

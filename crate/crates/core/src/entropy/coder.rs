use crate::entropy::range::{RangeDecoder, RangeEncoder};
use crate::entropy::table::CodingModel;
use crate::error::{Error, Result};

/// Integer feature tensor `[channels, height, width]` in channel-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedFeatures {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<i32>,
}

impl QuantizedFeatures {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<i32>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} feature tensor",
                values.len()
            )));
        }
        Ok(QuantizedFeatures {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Entropy-coded symbols plus a CRC-32 of the symbol stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    pub bytes: Vec<u8>,
    pub checksum: u32,
}

/// CRC-32 of the values as little-endian `i32`s.
pub fn symbol_checksum(values: &[i32]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for v in values {
        h.update(&v.to_le_bytes());
    }
    h.finalize()
}

fn check_channels(q_channels: usize, model: &CodingModel) -> Result<()> {
    if q_channels > model.channels() {
        return Err(Error::Shape(format!(
            "{q_channels} feature channels but the coding model has {}",
            model.channels()
        )));
    }
    Ok(())
}

fn encode_raw(enc: &mut RangeEncoder, v: i32) {
    let bits = v as u32;
    enc.encode(bits >> 16, 1);
    enc.encode(bits & 0xffff, 1);
}

fn decode_raw(dec: &mut RangeDecoder) -> Result<i32> {
    let hi = dec.target()?;
    dec.consume(hi, 1)?;
    let lo = dec.target()?;
    dec.consume(lo, 1)?;
    Ok(((hi << 16) | lo) as i32)
}

/// Arithmetic-codes every value with its channel's table. Values outside the
/// table's support are sent as the escape symbol followed by 32 raw bits.
pub fn entropy_encode(q: &QuantizedFeatures, model: &CodingModel) -> Result<Payload> {
    check_channels(q.channels, model)?;
    let plane = q.plane();
    let mut enc = RangeEncoder::new();
    for (i, &v) in q.values.iter().enumerate() {
        let table = model.table(i / plane);
        match table.symbol(v) {
            Some(s) => {
                let (cum, freq) = table.interval(s);
                enc.encode(cum, freq);
            }
            None => {
                let (cum, freq) = table.interval(table.escape());
                enc.encode(cum, freq);
                encode_raw(&mut enc, v);
            }
        }
    }
    Ok(Payload {
        bytes: enc.finish(),
        checksum: symbol_checksum(&q.values),
    })
}

/// Inverse of [`entropy_encode`]. A truncated or corrupt payload, or a table
/// that differs from the encoder's, fails the checksum (or the coder's own
/// interval checks) instead of returning wrong values.
pub fn entropy_decode(
    payload: &Payload,
    model: &CodingModel,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<QuantizedFeatures> {
    check_channels(channels, model)?;
    let plane = height * width;
    let count = channels * plane;
    let mut dec = RangeDecoder::new(&payload.bytes);
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let table = model.table(i / plane);
        let s = table.lookup(dec.target()?);
        let (cum, freq) = table.interval(s);
        dec.consume(cum, freq)?;
        if s == table.escape() {
            values.push(decode_raw(&mut dec)?);
        } else {
            values.push(table.value(s));
        }
    }
    let actual = symbol_checksum(&values);
    if actual != payload.checksum {
        return Err(Error::Checksum {
            expected: payload.checksum,
            actual,
        });
    }
    QuantizedFeatures::new(channels, height, width, values)
}

/// Ideal code length in bits of `q` under `model`, counting escape raw bits.
pub fn ideal_bits(q: &QuantizedFeatures, model: &CodingModel) -> Result<f64> {
    check_channels(q.channels, model)?;
    let plane = q.plane().max(1);
    Ok(q.values
        .iter()
        .enumerate()
        .map(|(i, &v)| model.table(i / plane).cost_bits(v))
        .sum())
}

/// `-(1/(n_c n_t)) sum log2 p` of `q` under the coding tables, where the
/// channel matrix has `n_c n_t = 256 * height * width` entries.
pub fn rate_estimate(q: &QuantizedFeatures, model: &CodingModel) -> Result<f64> {
    Ok(ideal_bits(q, model)? / (256 * q.plane()).max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::table::{FrequencyTable, TOTAL_FREQ};
    use proptest::prelude::*;

    fn binary_model(p: f64) -> CodingModel {
        CodingModel::new(vec![FrequencyTable::from_probabilities(0, &[p, 1.0 - p, 0.0]).unwrap()])
    }

    #[test]
    fn eight_uniform_symbols_fit_in_a_few_bytes() {
        let model = CodingModel::uniform(1, 0, 3).unwrap();
        let q = QuantizedFeatures::new(1, 8, 1, vec![0, 3, 1, 2, 2, 0, 3, 1]).unwrap();
        let payload = entropy_encode(&q, &model).unwrap();
        // 16 ideal bits = 2 bytes, plus at most 4 bytes of coder overhead
        assert!(payload.bytes.len() <= 6, "{} bytes", payload.bytes.len());
        assert_eq!(entropy_decode(&payload, &model, 1, 8, 1).unwrap(), q);
    }

    #[test]
    fn skewed_binary_source_is_near_entropy() {
        use rand::{Rng, SeedableRng};
        let model = binary_model(0.99);
        let h = -(0.99f64 * 0.99f64.log2() + 0.01 * 0.01f64.log2());
        let ideal = 1000.0 * h / 8.0;
        assert!((ideal - 10.1).abs() < 0.05);
        // a single draw's length swings by bytes with the number of ones and
        // byte rounding, so compare the mean over independent sequences
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let runs = 500;
        let mut total = 0;
        for _ in 0..runs {
            let values: Vec<i32> = (0..1000).map(|_| rng.random_bool(0.01) as i32).collect();
            let q = QuantizedFeatures::new(1, 1000, 1, values).unwrap();
            let payload = entropy_encode(&q, &model).unwrap();
            assert_eq!(entropy_decode(&payload, &model, 1, 1000, 1).unwrap(), q);
            total += payload.bytes.len();
        }
        let mean = total as f64 / runs as f64;
        assert!((mean - ideal).abs() <= 0.05 * ideal, "{mean} bytes vs {ideal}");
    }

    #[test]
    fn empty_tensor_gives_empty_payload() {
        let model = CodingModel::uniform(4, -2, 2).unwrap();
        let q = QuantizedFeatures::new(0, 1, 1, vec![]).unwrap();
        let payload = entropy_encode(&q, &model).unwrap();
        assert!(payload.bytes.is_empty());
        assert!(entropy_decode(&payload, &model, 0, 1, 1).unwrap().is_empty());
    }

    #[test]
    fn escapes_carry_extreme_values() {
        let model = CodingModel::uniform(2, -1, 1).unwrap();
        let q = QuantizedFeatures::new(2, 2, 1, vec![i32::MIN, 0, i32::MAX, -70000]).unwrap();
        let payload = entropy_encode(&q, &model).unwrap();
        assert_eq!(entropy_decode(&payload, &model, 2, 2, 1).unwrap(), q);
        let bits = ideal_bits(&q, &model).unwrap();
        assert!(bits > 3.0 * 32.0);
    }

    #[test]
    fn mismatched_model_is_detected() {
        let enc_model = CodingModel::uniform(1, -8, 8).unwrap();
        let dec_model = CodingModel::new(vec![FrequencyTable::from_probabilities(
            -8,
            &(0..18).map(|i| 1.0 + i as f64).collect::<Vec<_>>(),
        )
        .unwrap()]);
        let q = QuantizedFeatures::new(1, 64, 1, (0..64).map(|i| (i % 17) - 8).collect()).unwrap();
        let payload = entropy_encode(&q, &enc_model).unwrap();
        assert!(entropy_decode(&payload, &dec_model, 1, 64, 1).is_err());
    }

    #[test]
    fn truncation_is_detected() {
        let model = CodingModel::uniform(1, -8, 8).unwrap();
        let q = QuantizedFeatures::new(1, 200, 1, (0..200).map(|i| (i * 7 % 17) - 8).collect()).unwrap();
        let payload = entropy_encode(&q, &model).unwrap();
        for keep in [0, 1, payload.bytes.len() / 2, payload.bytes.len() - 1] {
            let cut = Payload {
                bytes: payload.bytes[..keep].to_vec(),
                checksum: payload.checksum,
            };
            assert!(entropy_decode(&cut, &model, 1, 200, 1).is_err(), "kept {keep} bytes");
        }
    }

    #[test]
    fn rejects_more_channels_than_tables() {
        let model = CodingModel::uniform(1, 0, 1).unwrap();
        let q = QuantizedFeatures::new(2, 1, 1, vec![0, 1]).unwrap();
        assert!(entropy_encode(&q, &model).is_err());
    }

    #[test]
    fn uniform_rate_is_two_bits() {
        let model = CodingModel::uniform(256, -2, 1).unwrap();
        let q = QuantizedFeatures::new(256, 1, 1, (0..256).map(|i| i % 4 - 2).collect()).unwrap();
        // 2 bits per latent, 256 latents per 256 channel entries
        assert!((ideal_bits(&q, &model).unwrap() / 256.0 - 2.0).abs() < 1e-4);
        assert!((rate_estimate(&q, &model).unwrap() - 2.0).abs() < 1e-4);
    }

    #[test]
    fn degenerate_model_costs_nothing() {
        let t = FrequencyTable::new(5, vec![TOTAL_FREQ - 1, 1]).unwrap();
        let q = QuantizedFeatures::new(1, 100, 1, vec![5; 100]).unwrap();
        let bits = ideal_bits(&q, &CodingModel::new(vec![t])).unwrap();
        assert!(bits < 100.0 * 3e-5);
    }

    proptest! {
        #[test]
        fn lossless_roundtrip(
            channels in 1usize..6,
            h in 1usize..5,
            w in 1usize..3,
            seed in prop::collection::vec(-30i32..30, 60),
        ) {
            let model = CodingModel::uniform(channels, -20, 20).unwrap();
            let values: Vec<i32> = (0..channels * h * w).map(|i| seed[i % seed.len()]).collect();
            let q = QuantizedFeatures::new(channels, h, w, values).unwrap();
            let payload = entropy_encode(&q, &model).unwrap();
            prop_assert_eq!(entropy_decode(&payload, &model, channels, h, w).unwrap(), q);
        }
    }
}

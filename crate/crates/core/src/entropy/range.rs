//! Byte-oriented range coder with a 48-bit window and carry propagation
//! into the output buffer.

use crate::entropy::table::PRECISION_BITS;
use crate::error::{Error, Result};

const WINDOW_BITS: u32 = 48;
const WINDOW: u64 = 1 << WINDOW_BITS;
const MASK: u64 = WINDOW - 1;
/// Renormalize while the range is below this.
const BOTTOM: u64 = 1 << (WINDOW_BITS - 8);
const WINDOW_BYTES: usize = (WINDOW_BITS / 8) as usize;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: WINDOW,
            out: Vec::new(),
        }
    }

    /// Narrows to `[cum, cum + freq)` out of `1 << PRECISION_BITS`.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && (cum as u64 + freq as u64) <= 1 << PRECISION_BITS);
        let r = self.range >> PRECISION_BITS;
        self.low += r * cum as u64;
        self.range = r * freq as u64;
        if self.low >= WINDOW {
            self.carry();
            self.low &= MASK;
        }
        while self.range < BOTTOM {
            self.out.push((self.low >> (WINDOW_BITS - 8)) as u8);
            self.low = (self.low << 8) & MASK;
            self.range <<= 8;
        }
    }

    fn carry(&mut self) {
        for byte in self.out.iter_mut().rev() {
            let (v, overflow) = byte.overflowing_add(1);
            *byte = v;
            if !overflow {
                return;
            }
        }
        unreachable!("carry past the start of the stream");
    }

    /// Emits the shortest byte string that selects a value inside the final
    /// interval; trailing zero bytes are dropped since the decoder reads
    /// zeros past the end.
    pub fn finish(mut self) -> Vec<u8> {
        for bytes in 0..=WINDOW_BYTES {
            let unit = 1u64 << (WINDOW_BITS as usize - 8 * bytes);
            let value = self.low.div_ceil(unit) * unit;
            if value < self.low + self.range {
                if value >= WINDOW {
                    self.carry();
                }
                let value = value & MASK;
                for i in 0..bytes {
                    self.out.push((value >> (WINDOW_BITS as usize - 8 * (i + 1))) as u8);
                }
                break;
            }
        }
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    input: &'a [u8],
    pos: usize,
    /// Offset of the code value from the bottom of the current interval.
    offset: u64,
    range: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut dec = RangeDecoder {
            input,
            pos: 0,
            offset: 0,
            range: WINDOW,
        };
        for _ in 0..WINDOW_BYTES {
            dec.offset = (dec.offset << 8) | dec.next_byte() as u64;
        }
        dec
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Position of the code value in `[0, 1 << PRECISION_BITS)`; must be
    /// followed by [`Self::consume`] with the interval that contains it.
    pub fn target(&self) -> Result<u32> {
        let t = self.offset / (self.range >> PRECISION_BITS);
        if t >= 1 << PRECISION_BITS {
            return Err(Error::CorruptPayload("code value outside every symbol interval".into()));
        }
        Ok(t as u32)
    }

    pub fn consume(&mut self, cum: u32, freq: u32) -> Result<()> {
        let r = self.range >> PRECISION_BITS;
        let start = r * cum as u64;
        let width = r * freq as u64;
        if self.offset < start || self.offset - start >= width {
            return Err(Error::CorruptPayload("code value outside the decoded interval".into()));
        }
        self.offset -= start;
        self.range = width;
        while self.range < BOTTOM {
            self.offset = (self.offset << 8) | self.next_byte() as u64;
            self.range <<= 8;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOTAL: u32 = 1 << PRECISION_BITS;

    fn roundtrip(intervals: &[(u32, u32)]) -> Vec<u8> {
        let mut enc = RangeEncoder::new();
        for &(c, f) in intervals {
            enc.encode(c, f);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        for &(c, f) in intervals {
            let t = dec.target().unwrap();
            assert!(t >= c && t < c + f, "target {t} outside [{c}, {})", c + f);
            dec.consume(c, f).unwrap();
        }
        bytes
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(RangeEncoder::new().finish().is_empty());
    }

    #[test]
    fn certain_symbols_cost_almost_nothing() {
        let bytes = roundtrip(&[(0, TOTAL - 1); 1000]);
        assert!(bytes.len() <= 2, "{} bytes", bytes.len());
    }

    #[test]
    fn top_intervals_exercise_carries() {
        // always picking the highest cell drives low toward the window top
        let mut intervals = vec![(TOTAL - 1, 1); 50];
        intervals.extend(vec![(TOTAL - 3, 3); 200]);
        intervals.extend(vec![(1, TOTAL - 1); 200]);
        roundtrip(&intervals);
    }

    proptest! {
        #[test]
        fn arbitrary_intervals_roundtrip(cells in prop::collection::vec((0u32..TOTAL, 1u32..4096), 0..400)) {
            let intervals: Vec<(u32, u32)> = cells
                .into_iter()
                .map(|(c, f)| (c.min(TOTAL - f), f))
                .collect();
            roundtrip(&intervals);
        }
    }
}

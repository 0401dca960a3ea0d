use std::io::{Read, Write};

use crate::entropy::Payload;
use crate::error::{Error, Result};

pub const BITSTREAM_MAGIC: &[u8; 4] = b"CMC1";
pub const BITSTREAM_VERSION: u8 = 1;

/// Bits spent on the lambda id, the only header field counted in the
/// reported bit rate.
pub const LAMBDA_ID_BITS: usize = 16;

/// Header bits other than the lambda id: magic, version, `n_c`, `n_t` and
/// payload length.
pub const FRAMING_BITS: usize = 32 + 8 + 16 + 16 + 32;

pub const CHECKSUM_BITS: usize = 32;

/// Framed compressed channel matrix. Little-endian layout:
/// `"CMC1"`, version u8, lambda id u16, `n_c` u16, `n_t` u16,
/// payload length u32, payload, checksum u32.
///
/// `n_c` and `n_t` are the dimensions of the original matrix; when they are
/// not multiples of 16 the payload codes the zero-padded matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub lambda_id: u16,
    pub n_c: u16,
    pub n_t: u16,
    pub payload: Payload,
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.framed_bits() / 8);
        out.extend_from_slice(BITSTREAM_MAGIC);
        out.push(BITSTREAM_VERSION);
        out.extend_from_slice(&self.lambda_id.to_le_bytes());
        out.extend_from_slice(&self.n_c.to_le_bytes());
        out.extend_from_slice(&self.n_t.to_le_bytes());
        out.extend_from_slice(&(self.payload.bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload.bytes);
        out.extend_from_slice(&self.payload.checksum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        if cursor.take(4)? != BITSTREAM_MAGIC {
            return Err(Error::format("bitstream", "bad magic"));
        }
        let version = cursor.take(1)?[0];
        if version != BITSTREAM_VERSION {
            return Err(Error::format("bitstream", format!("unsupported version {version}")));
        }
        let lambda_id = cursor.u16()?;
        let n_c = cursor.u16()?;
        let n_t = cursor.u16()?;
        let len = cursor.u32()? as usize;
        let payload = cursor.take(len)?.to_vec();
        let checksum = cursor.u32()?;
        if cursor.pos != bytes.len() {
            return Err(Error::format("bitstream", "trailing bytes after checksum"));
        }
        Ok(Bitstream {
            lambda_id,
            n_c,
            n_t,
            payload: Payload {
                bytes: payload,
                checksum,
            },
        })
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Bits counted by the reported bit rate: lambda id plus payload.
    pub fn counted_bits(&self) -> usize {
        LAMBDA_ID_BITS + 8 * self.payload.bytes.len()
    }

    /// Every bit on the wire.
    pub fn framed_bits(&self) -> usize {
        self.counted_bits() + CHECKSUM_BITS + FRAMING_BITS
    }

    /// Counted bits per channel dimension.
    pub fn bit_rate(&self) -> f64 {
        self.counted_bits() as f64 / self.dims() as f64
    }

    /// Payload bits per channel dimension, without the lambda id.
    pub fn payload_bit_rate(&self) -> f64 {
        (8 * self.payload.bytes.len()) as f64 / self.dims() as f64
    }

    fn dims(&self) -> usize {
        (self.n_c as usize * self.n_t as usize).max(1)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated("bitstream"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bitstream {
        Bitstream {
            lambda_id: 4,
            n_c: 64,
            n_t: 16,
            payload: Payload {
                bytes: vec![1, 2, 3, 250],
                checksum: 0xdead_beef,
            },
        }
    }

    #[test]
    fn header_roundtrip_and_layout() {
        let s = sample();
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..5], b"CMC1\x01");
        assert_eq!(&bytes[5..7], &[4, 0]);
        assert_eq!(&bytes[7..9], &[64, 0]);
        assert_eq!(&bytes[9..11], &[16, 0]);
        assert_eq!(&bytes[11..15], &[4, 0, 0, 0]);
        assert_eq!(&bytes[bytes.len() - 4..], &0xdead_beefu32.to_le_bytes());
        assert_eq!(bytes.len() * 8, s.framed_bits());
        assert_eq!(Bitstream::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn rate_accounting() {
        let s = sample();
        assert_eq!(s.counted_bits(), 16 + 32);
        assert!((s.bit_rate() * 1024.0 - 48.0).abs() < 1e-12);
        assert!((s.payload_bit_rate() * 1024.0 - 32.0).abs() < 1e-12);
        assert_eq!(s.framed_bits(), s.counted_bits() + 32 + 104);
    }

    #[test]
    fn rejects_malformed_streams() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            assert!(Bitstream::from_bytes(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Bitstream::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(Bitstream::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Bitstream::from_bytes(&long).is_err());
    }
}

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex32;

use crate::csi::ChannelMatrix;
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"CSID";
pub const DATASET_VERSION: u16 = 1;

/// Channel matrices of one size.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_c: usize,
    n_t: usize,
    samples: Vec<ChannelMatrix>,
}

impl Dataset {
    pub fn new(n_c: usize, n_t: usize, samples: Vec<ChannelMatrix>) -> Result<Self> {
        if n_c == 0 || n_t == 0 || n_c > u16::MAX as usize || n_t > u16::MAX as usize {
            return Err(Error::Shape(format!("dataset dims {n_c}x{n_t} out of range")));
        }
        if let Some(h) = samples.iter().find(|h| h.n_c() != n_c || h.n_t() != n_t) {
            return Err(Error::Shape(format!(
                "{}x{} sample in a {n_c}x{n_t} dataset",
                h.n_c(),
                h.n_t()
            )));
        }
        Ok(Dataset { n_c, n_t, samples })
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ChannelMatrix] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<ChannelMatrix> {
        self.samples
    }

    /// Dataset restricted to the samples in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let samples = self
            .samples
            .get(range.clone())
            .ok_or_else(|| Error::Shape(format!("range {range:?} outside {} samples", self.len())))?;
        Dataset::new(self.n_c, self.n_t, samples.to_vec())
    }

    /// Serializes as `"CSID"`, version u16, `n_c` u16, `n_t` u16, count u32,
    /// then interleaved `f32` real/imaginary parts, all little-endian.
    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_c as u16).to_le_bytes())?;
        w.write_all(&(self.n_t as u16).to_le_bytes())?;
        let count = u32::try_from(self.len()).map_err(|_| Error::Config("too many samples".into()))?;
        w.write_all(&count.to_le_bytes())?;
        for h in &self.samples {
            for z in h.entries() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut header = [0u8; 14];
        read_exact(&mut r, &mut header)?;
        if &header[..4] != DATASET_MAGIC {
            return Err(Error::format("dataset", "bad magic"));
        }
        let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]);
        let version = u16_at(4);
        if version != DATASET_VERSION {
            return Err(Error::format("dataset", format!("unsupported version {version}")));
        }
        let (n_c, n_t) = (u16_at(6) as usize, u16_at(8) as usize);
        let count = u32::from_le_bytes(header[10..14].try_into().expect("four bytes")) as usize;
        let mut buf = vec![0u8; n_c * n_t * 8];
        let mut samples = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            read_exact(&mut r, &mut buf)?;
            let entries = buf
                .chunks_exact(8)
                .map(|c| {
                    let re = f32::from_le_bytes(c[..4].try_into().expect("four bytes"));
                    let im = f32::from_le_bytes(c[4..].try_into().expect("four bytes"));
                    Complex32::new(re, im)
                })
                .collect();
            samples.push(ChannelMatrix::new(n_c, n_t, entries).map_err(|e| Error::format("dataset", e.to_string()))?);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::format("dataset", "trailing bytes after the last sample"));
        }
        Dataset::new(n_c, n_t, samples).map_err(|e| Error::format("dataset", e.to_string()))
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated("dataset"),
        _ => Error::Io(e),
    })
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    ds.write_to(File::create(path)?)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::read_from(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_dataset, ChannelGenConfig};

    #[test]
    fn single_entry_layout() {
        let h = ChannelMatrix::new(1, 1, vec![Complex32::new(1.0, 2.0)]).unwrap();
        let mut bytes = Vec::new();
        Dataset::new(1, 1, vec![h]).unwrap().write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"CSID");
        assert_eq!(&bytes[14..], &[0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40]);
    }

    #[test]
    fn file_roundtrip_and_header() {
        let ds = generate_dataset(
            &ChannelGenConfig {
                seed: 9,
                ..ChannelGenConfig::desk()
            },
            100,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.csid");
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!((back.n_c(), back.n_t(), back.len()), (64, 16, 100));
        assert_eq!(back, ds);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 14 + 100 * 64 * 16 * 8);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let ds = generate_dataset(
            &ChannelGenConfig {
                seed: 1,
                n_c: 4,
                n_t: 2,
                ..ChannelGenConfig::desk()
            },
            3,
        )
        .unwrap();
        let mut bytes = Vec::new();
        ds.write_to(&mut bytes).unwrap();
        for cut in [0, 3, 13, 14, bytes.len() - 1] {
            assert!(Dataset::read_from(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Dataset::read_from(&bad[..]), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[4] = 7;
        assert!(Dataset::read_from(&bad[..]).is_err());
        let mut long = bytes;
        long.push(1);
        assert!(Dataset::read_from(&long[..]).is_err());
    }

    #[test]
    fn rejects_mixed_sizes() {
        assert!(Dataset::new(2, 2, vec![ChannelMatrix::zeros(2, 3)]).is_err());
    }
}

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::ArchConfig;
use crate::entropy::{CodingModel, FrequencyTable};
use crate::error::{Error, Result};
use crate::nn::{Parameters, Tensor};
use crate::pipeline::DeepCmc;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CMCK";
pub const CHECKPOINT_VERSION: u16 = 1;

const WHAT: &str = "checkpoint";

/// Serializes a model, little-endian:
///
/// ```text
/// "CMCK" | version u16
/// hidden u16 | latent u16 | (kernel u8, factor u8) x 3 | residual kernel u8
/// lambda id u16 | sigma_norm f32
/// record count u32, then per record:
///     name length u16 | name | rank u8 | dims u32 x rank | f32 data
/// table count u16, then per table:
///     k_min i32 | symbol count u32 | frequencies u32 x count
/// ```
///
/// Records hold every parameter and batch-norm buffer; a model without
/// coding tables stores a table count of zero.
pub fn write_checkpoint(model: &DeepCmc<f32>, w: impl Write) -> Result<()> {
    let mut w = BufWriter::new(w);
    let arch = model.arch();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&u16_field(arch.hidden, "hidden width")?.to_le_bytes())?;
    w.write_all(&u16_field(arch.latent, "latent width")?.to_le_bytes())?;
    for i in 0..3 {
        w.write_all(&[
            u8_field(arch.kernels[i], "kernel")?,
            u8_field(arch.factors[i], "factor")?,
        ])?;
    }
    w.write_all(&[u8_field(arch.residual_kernel, "residual kernel")?])?;
    w.write_all(&model.lambda_id.to_le_bytes())?;
    w.write_all(&(model.net.sigma_norm as f32).to_le_bytes())?;

    let records = collect_records(&mut model.clone());
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in &records {
        w.write_all(&u16_field(name.len(), "record name")?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[u8_field(t.rank(), "rank")?])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }

    let tables = model.coding.as_ref().map(CodingModel::tables).unwrap_or(&[]);
    w.write_all(&u16_field(tables.len(), "table count")?.to_le_bytes())?;
    for t in tables {
        w.write_all(&t.k_min().to_le_bytes())?;
        w.write_all(&(t.symbol_count() as u32).to_le_bytes())?;
        for f in t.freqs() {
            w.write_all(&f.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn u16_field(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit 16 bits")))
}

fn u8_field(v: usize, what: &str) -> Result<u8> {
    u8::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit 8 bits")))
}

fn collect_records(model: &mut DeepCmc<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut records = Vec::new();
    model.visit_params("", &mut |name, p| records.push((name, p.value.clone())));
    model.visit_buffers("", &mut |name, t| records.push((name, t.clone())));
    records
}

pub fn read_checkpoint(r: impl Read) -> Result<DeepCmc<f32>> {
    let mut r = Reader {
        inner: BufReader::new(r),
    };
    if &r.bytes::<4>()? != CHECKPOINT_MAGIC {
        return Err(Error::format(WHAT, "bad magic"));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(WHAT, format!("unsupported version {version}")));
    }
    let hidden = r.u16()? as usize;
    let latent = r.u16()? as usize;
    let mut kernels = [0; 3];
    let mut factors = [0; 3];
    for i in 0..3 {
        let [k, f] = r.bytes::<2>()?;
        kernels[i] = k as usize;
        factors[i] = f as usize;
    }
    let residual_kernel = r.bytes::<1>()?[0] as usize;
    let arch = ArchConfig {
        hidden,
        latent,
        kernels,
        factors,
        residual_kernel,
    };
    arch.validate().map_err(|e| Error::format(WHAT, e.to_string()))?;
    let lambda_id = r.u16()?;
    let sigma = f32::from_le_bytes(r.bytes::<4>()?) as f64;

    let count = r.u32()? as usize;
    let mut records = BTreeMap::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.vec(len)?).map_err(|_| Error::format(WHAT, "record name is not UTF-8"))?;
        let rank = r.bytes::<1>()?[0] as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.vec(
            len.checked_mul(4)
                .ok_or_else(|| Error::format(WHAT, "record too large"))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
            .collect();
        let tensor = Tensor::from_vec(&shape, data).map_err(|e| Error::format(WHAT, e.to_string()))?;
        if records.insert(name.clone(), tensor).is_some() {
            return Err(Error::format(WHAT, format!("duplicate record {name}")));
        }
    }

    let tables = r.u16()? as usize;
    let mut freq_tables = Vec::with_capacity(tables);
    for _ in 0..tables {
        let k_min = r.u32()? as i32;
        let n = r.u32()? as usize;
        if n > 1 << 16 {
            return Err(Error::format(WHAT, format!("table with {n} symbols")));
        }
        let freqs = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        freq_tables.push(FrequencyTable::new(k_min, freqs).map_err(|e| Error::format(WHAT, e.to_string()))?);
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::format(WHAT, "trailing bytes"));
    }

    // the random initialization is overwritten record by record
    let mut model = DeepCmc::<f32>::new(arch, sigma, lambda_id, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| Error::format(WHAT, e.to_string()))?;
    let mut fill = |name: String, slot: &mut Tensor<f32>, problem: &mut Option<String>| match records.remove(&name) {
        Some(t) if t.shape() == slot.shape() => *slot = t,
        Some(t) => {
            problem.get_or_insert(format!("{name} has shape {:?}, expected {:?}", t.shape(), slot.shape()));
        }
        None => {
            problem.get_or_insert(format!("missing record {name}"));
        }
    };
    let mut problem = None;
    model.visit_params("", &mut |name, p| fill(name, &mut p.value, &mut problem));
    model.visit_buffers("", &mut |name, t| fill(name, t, &mut problem));
    if let Some(p) = problem {
        return Err(Error::format(WHAT, p));
    }
    if let Some(name) = records.keys().next() {
        return Err(Error::format(WHAT, format!("unexpected record {name}")));
    }
    if !freq_tables.is_empty() {
        if freq_tables.len() != arch.latent {
            return Err(Error::format(
                WHAT,
                format!(
                    "{} coding tables for {} latent channels",
                    freq_tables.len(),
                    arch.latent
                ),
            ));
        }
        model.coding = Some(CodingModel::new(freq_tables));
    }
    Ok(model)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Truncated(WHAT),
            _ => Error::Io(e),
        })
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b)?;
        Ok(b)
    }

    /// Reads `len` bytes without trusting `len` for the allocation up front.
    fn vec(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        (&mut self.inner).take(len as u64).read_to_end(&mut out)?;
        if out.len() != len {
            return Err(Error::Truncated(WHAT));
        }
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
}

pub fn save_checkpoint(model: &DeepCmc<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, File::create(path)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DeepCmc<f32>> {
    read_checkpoint(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_dataset, ChannelGenConfig};

    fn finalized_model() -> DeepCmc<f32> {
        let ds = generate_dataset(
            &ChannelGenConfig {
                n_c: 16,
                n_t: 16,
                seed: 4,
                ..ChannelGenConfig::desk()
            },
            4,
        )
        .unwrap();
        let mut model =
            DeepCmc::<f32>::new(ArchConfig::with_hidden(4), 0.375, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let x = model.input_tensor(&ds.samples().iter().collect::<Vec<_>>()).unwrap();
        // one training-mode pass initializes the batch-norm statistics
        model.loss(&x, &Tensor::zeros(&[4, 256, 1, 1]), 1.0).unwrap();
        model.finalize(ds.samples()).unwrap();
        model
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let model = finalized_model();
        let mut bytes = Vec::new();
        write_checkpoint(&model, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"CMCK");
        let back = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(back, model);
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn file_helpers_roundtrip() {
        let model = finalized_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cmck");
        save_checkpoint(&model, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), model);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let mut bytes = Vec::new();
        write_checkpoint(&finalized_model(), &mut bytes).unwrap();
        for cut in [0, 5, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(read_checkpoint(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(read_checkpoint(&bad[..]).is_err());
        // an even kernel size fails architecture validation
        let mut bad = bytes.clone();
        bad[10] = 4;
        assert!(read_checkpoint(&bad[..]).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(read_checkpoint(&long[..]).is_err());
    }
}

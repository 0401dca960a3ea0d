use crate::csi::ChannelMatrix;
use crate::entropy::{entropy_decode, entropy_encode, quantize, to_symbols, Bitstream, QuantizedFeatures};
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};
use crate::pipeline::DeepCmc;

/// A bitstream together with the quantized latent it codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedSample {
    pub bitstream: Bitstream,
    pub symbols: QuantizedFeatures,
}

fn dim16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Config(format!("{what} = {v} does not fit the 16-bit header field")))
}

/// Encodes, quantizes and entropy-codes one channel matrix whose sides are
/// multiples of 16.
pub fn compress<T: Scalar>(h: &ChannelMatrix, model: &DeepCmc<T>) -> Result<Bitstream> {
    Ok(compress_sample(h, model)?.bitstream)
}

/// [`compress`] that also returns the quantized latent.
pub fn compress_sample<T: Scalar>(h: &ChannelMatrix, model: &DeepCmc<T>) -> Result<CompressedSample> {
    let coding = model.coding()?;
    let (n_c, n_t) = (dim16(h.n_c(), "n_c")?, dim16(h.n_t(), "n_t")?);
    let m = model.net.feature_encode(h)?;
    let [_, c, fh, fw] = m.dims4()?;
    let symbols = QuantizedFeatures::new(c, fh, fw, to_symbols(&quantize(&m)))?;
    let payload = entropy_encode(&symbols, coding)?;
    Ok(CompressedSample {
        bitstream: Bitstream {
            lambda_id: model.lambda_id,
            n_c,
            n_t,
            payload,
        },
        symbols,
    })
}

/// Compresses a matrix of any size: it is zero-padded to multiples of 16
/// for coding, and the header keeps the original dimensions so that
/// [`decompress`] crops the padding away.
pub fn compress_padded<T: Scalar>(h: &ChannelMatrix, model: &DeepCmc<T>) -> Result<Bitstream> {
    let (pc, pt) = model.arch().padded_dims(h.n_c(), h.n_t());
    let mut s = compress_sample(&h.zero_pad(pc, pt)?, model)?.bitstream;
    s.n_c = dim16(h.n_c(), "n_c")?;
    s.n_t = dim16(h.n_t(), "n_t")?;
    Ok(s)
}

/// Decodes the latent of a bitstream and reconstructs the channel matrix
/// with the header's dimensions.
pub fn decompress<T: Scalar>(s: &Bitstream, model: &DeepCmc<T>) -> Result<ChannelMatrix> {
    if s.lambda_id != model.lambda_id {
        return Err(Error::Config(format!(
            "bitstream was coded for lambda id {}, model is for {}",
            s.lambda_id, model.lambda_id
        )));
    }
    let (n_c, n_t) = (s.n_c as usize, s.n_t as usize);
    if n_c == 0 || n_t == 0 {
        return Err(Error::format("bitstream", "zero dimension in header"));
    }
    let arch = model.arch();
    let (pc, pt) = arch.padded_dims(n_c, n_t);
    let f = arch.total_factor();
    let symbols = entropy_decode(&s.payload, model.coding()?, arch.latent, pc / f, pt / f)?;
    let m = symbols_tensor::<T>(&symbols)?;
    model.net.feature_decode(&m)?.crop(n_c, n_t)
}

fn symbols_tensor<T: Scalar>(q: &QuantizedFeatures) -> Result<Tensor<T>> {
    let data = q.values.iter().map(|&v| T::lit(v as f64)).collect();
    Tensor::from_vec(&[1, q.channels, q.height, q.width], data)
}

/// Debug path with quantization and coding bypassed: the direct
/// autoencoder output.
pub fn reconstruct_unquantized<T: Scalar>(h: &ChannelMatrix, model: &DeepCmc<T>) -> Result<ChannelMatrix> {
    let m = model.net.feature_encode(h)?;
    model.net.feature_decode(&m)
}

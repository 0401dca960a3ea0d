//! Quantization, the learned factorized prior, and the arithmetic coder that
//! turns quantized features into bitstreams.

mod bitstream;
mod coder;
mod prior;
mod quant;
mod range;
mod table;

pub use bitstream::{Bitstream, BITSTREAM_MAGIC, BITSTREAM_VERSION, CHECKSUM_BITS, FRAMING_BITS, LAMBDA_ID_BITS};
pub use coder::{
    entropy_decode, entropy_encode, ideal_bits, rate_estimate, symbol_checksum, Payload, QuantizedFeatures,
};
pub use prior::{FactorizedPrior, LIKELIHOOD_FLOOR, PRIOR_WIDTH};
pub use quant::{add_uniform_noise, quantize, round_half_even, to_symbols};
pub use range::{RangeDecoder, RangeEncoder};
pub use table::{
    support_from_symbols, CodingModel, FrequencyTable, ESCAPE_RAW_BITS, MAX_SUPPORT, PRECISION_BITS, SUPPORT_MARGIN,
    TOTAL_FREQ,
};

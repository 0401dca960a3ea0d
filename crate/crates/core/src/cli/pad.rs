use crate::csi::ChannelMatrix;
use crate::error::{Error, Result};

/// What to do with a matrix whose sides are not multiples of 16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum PadPolicy {
    /// Fail, naming the dimensions the input would need.
    #[default]
    Reject,
    /// Append zero subcarriers and antennas.
    ZeroPad,
}

/// Original and padded sizes; empty when nothing was added.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaddingRecord {
    pub original: (usize, usize),
    pub padded: (usize, usize),
}

impl PaddingRecord {
    pub fn is_empty(&self) -> bool {
        self.original == self.padded
    }

    pub fn added_rows(&self) -> usize {
        self.padded.0 - self.original.0
    }

    pub fn added_cols(&self) -> usize {
        self.padded.1 - self.original.1
    }
}

/// Pads `h` to the next multiples of 16 under `policy`.
pub fn pad_to_16(h: &ChannelMatrix, policy: PadPolicy) -> Result<(ChannelMatrix, PaddingRecord)> {
    let original = (h.n_c(), h.n_t());
    let padded = (h.n_c().div_ceil(16) * 16, h.n_t().div_ceil(16) * 16);
    let record = PaddingRecord { original, padded };
    if record.is_empty() {
        return Ok((h.clone(), record));
    }
    match policy {
        PadPolicy::Reject => Err(Error::NotMultipleOf16 {
            n_c: original.0,
            n_t: original.1,
            padded_n_c: padded.0,
            padded_n_t: padded.1,
        }),
        PadPolicy::ZeroPad => Ok((h.zero_pad(padded.0, padded.1)?, record)),
    }
}

/// Removes the padding described by `record`.
pub fn crop(h: &ChannelMatrix, record: &PaddingRecord) -> Result<ChannelMatrix> {
    if (h.n_c(), h.n_t()) != record.padded {
        return Err(Error::Shape(format!(
            "expected a {}x{} matrix to crop, got {}x{}",
            record.padded.0,
            record.padded.1,
            h.n_c(),
            h.n_t()
        )));
    }
    h.crop(record.original.0, record.original.1)
}

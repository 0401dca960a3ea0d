//! Trains a small model briefly, then compresses one held-out channel to a
//! bitstream, decodes it and reports rate and distortion. Pass a checkpoint
//! path to use a trained model instead.
//!
//! cargo run --release --example compress_roundtrip -- [model.cmck]

use deepcmc::channel::{generate_dataset, ChannelGenConfig};
use deepcmc::codec::ArchConfig;
use deepcmc::entropy::Bitstream;
use deepcmc::pipeline::{compress, cosine_corr, decompress, load_checkpoint, nmse, train, DeepCmc, TrainConfig};

fn model() -> deepcmc::Result<DeepCmc<f32>> {
    if let Some(path) = std::env::args().nth(1) {
        return load_checkpoint(path);
    }
    let data = generate_dataset(
        &ChannelGenConfig {
            seed: 1,
            ..ChannelGenConfig::desk()
        },
        200,
    )?;
    let cfg = TrainConfig {
        arch: ArchConfig::with_hidden(16),
        epochs: 3,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    Ok(train(&data, 4, &cfg)?.0)
}

fn main() -> deepcmc::Result<()> {
    let model = model()?;
    let test = generate_dataset(
        &ChannelGenConfig {
            seed: 2,
            ..ChannelGenConfig::desk()
        },
        1,
    )?;
    let h = &test.samples()[0];

    let bytes = compress(h, &model)?.to_bytes();
    let stream = Bitstream::from_bytes(&bytes)?;
    let h_hat = decompress(&stream, &model)?;

    println!(
        "{} bytes on the wire, {} counted bits",
        bytes.len(),
        stream.counted_bits()
    );
    println!("bit rate {:.4} bits per channel dimension", stream.bit_rate());
    println!(
        "nmse {:.2} dB, rho {:.3}",
        nmse(h, &h_hat)?,
        cosine_corr(h, &h_hat, false)?
    );
    Ok(())
}

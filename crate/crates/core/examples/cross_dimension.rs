//! One set of weights serves every size: a model trained on 64x16
//! channels is evaluated on 48, 96 and 128 subcarriers. 48 is not a
//! multiple of the downsampling factor and is zero-padded for coding.

use deepcmc::channel::{generate_dataset, ChannelGenConfig};
use deepcmc::codec::ArchConfig;
use deepcmc::pipeline::{evaluate, train, TrainConfig};

fn main() -> deepcmc::Result<()> {
    let gen = ChannelGenConfig {
        seed: 8,
        ..ChannelGenConfig::desk()
    };
    let cfg = TrainConfig {
        arch: ArchConfig::with_hidden(16),
        epochs: 3,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let (model, _) = train(&generate_dataset(&gen, 200)?, 4, &cfg)?;
    for n_c in [48, 64, 96, 128] {
        let test = generate_dataset(&ChannelGenConfig { n_c, seed: 9, ..gen }, 50)?;
        let r = evaluate(&model, &test)?;
        println!(
            "n_c {n_c:>3}: bit_rate {:.4}, nmse {:.2} dB, rho {:.3}",
            r.bit_rate, r.nmse_db, r.rho
        );
    }
    Ok(())
}

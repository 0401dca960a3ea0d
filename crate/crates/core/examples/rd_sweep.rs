//! Trains one small model per lambda and writes the rate-distortion curve
//! as CSV to stdout.

use std::io;

use deepcmc::channel::{generate_dataset, ChannelGenConfig};
use deepcmc::codec::ArchConfig;
use deepcmc::pipeline::{rd_sweep, train, write_rd_csv, TrainConfig};

fn main() -> deepcmc::Result<()> {
    let gen = ChannelGenConfig {
        seed: 5,
        ..ChannelGenConfig::desk()
    };
    let train_set = generate_dataset(&gen, 200)?;
    let test_set = generate_dataset(&ChannelGenConfig { seed: 6, ..gen }, 50)?;
    let cfg = TrainConfig {
        arch: ArchConfig::with_hidden(16),
        epochs: 3,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let models = [0u16, 2, 4]
        .iter()
        .map(|&id| Ok(train(&train_set, id, &cfg)?.0))
        .collect::<deepcmc::Result<Vec<_>>>()?;
    let points = rd_sweep(&models, &cfg.lambdas, &test_set)?;
    write_rd_csv(&points, io::stdout().lock())
}

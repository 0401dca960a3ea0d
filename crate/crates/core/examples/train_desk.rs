//! Desk-scale training run: 2000 synthetic 64x16 channels, one lambda,
//! evaluated on 500 held-out matrices.
//!
//! cargo run --release --example train_desk -- [lambda_id] [epochs] [hidden] [lr] [delay_spread]

use std::env;

use deepcmc::channel::{generate_dataset, ChannelGenConfig};
use deepcmc::codec::ArchConfig;
use deepcmc::pipeline::{evaluate, train, TrainConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> deepcmc::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let lambda_id: u16 = arg(1, 4);
    let cfg = TrainConfig {
        arch: ArchConfig::with_hidden(arg(3, 32)),
        epochs: arg(2, 10),
        lr: arg(4, TrainConfig::default().lr),
        seed: 7,
        ..TrainConfig::default()
    };
    let desk = ChannelGenConfig::desk();
    let gen = ChannelGenConfig {
        seed: 42,
        delay_spread: arg(5, desk.delay_spread),
        ..desk
    };
    let train_set = generate_dataset(&gen, 2000)?;
    let test_set = generate_dataset(&ChannelGenConfig { seed: 43, ..gen }, 500)?;
    let (model, history) = train(&train_set, lambda_id, &cfg)?;
    let report = evaluate(&model, &test_set)?;
    if let Some(last) = history.epochs.last() {
        println!(
            "final training loss {:.4} (rate {:.4}, mse {:.3e})",
            last.total, last.rate, last.mse
        );
    }
    println!(
        "lambda {}: bit_rate {:.4}, entropy {:.4}, model_rate {:.4}, nmse {:.2} dB, rho {:.3}",
        cfg.lambdas.get(lambda_id)?,
        report.bit_rate,
        report.entropy,
        report.model_rate,
        report.nmse_db,
        report.rho
    );
    Ok(())
}

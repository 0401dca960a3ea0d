//! Generates a small synthetic dataset, writes it to disk and reports the
//! mean per-subcarrier channel energy against its expected value.

use deepcmc::channel::{generate_dataset, read_dataset, write_dataset, ChannelGenConfig};

fn main() -> deepcmc::Result<()> {
    let cfg = ChannelGenConfig {
        seed: 42,
        ..ChannelGenConfig::desk()
    };
    let data = generate_dataset(&cfg, 200)?;
    let dir = std::env::temp_dir().join("deepcmc-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("channels.csid");
    write_dataset(&data, &path)?;
    let back = read_dataset(&path)?;
    assert_eq!(back, data);

    let rows = (data.len() * cfg.n_c) as f64;
    let energy: f64 = data.samples().iter().map(|h| h.frobenius_sq()).sum::<f64>() / rows;
    let expected = (cfg.n_t * cfg.n_t) as f64 * cfg.sigma_alpha_sq;
    println!(
        "{} matrices of {}x{} written to {}",
        data.len(),
        cfg.n_c,
        cfg.n_t,
        path.display()
    );
    println!("mean |h_n|^2 = {energy:.2} (expected {expected:.2})");
    Ok(())
}

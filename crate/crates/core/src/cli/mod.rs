//! Command-line front end. Every subcommand is deterministic given its
//! flags and input files; all randomness derives from `--seed`.

mod pad;

pub use pad::{crop, pad_to_16, PadPolicy, PaddingRecord};

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::channel::{generate_dataset, read_dataset, write_dataset, ChannelGenConfig, Dataset, DESK_DELAY_SPREAD};
use crate::codec::ArchConfig;
use crate::entropy::Bitstream;
use crate::error::{Error, Result};
use crate::pipeline::{
    compress, cosine_corr, decompress, evaluate, load_checkpoint, nmse_db, nmse_ratio, rd_sweep, save_checkpoint,
    train, write_rd_csv, LambdaTable, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "deepcmc",
    version,
    about = "Learned compression of massive-MIMO channel matrices"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic channel dataset.
    Gen(GenArgs),
    /// Train a model for one lambda and write a checkpoint.
    Train(TrainArgs),
    /// Compress one matrix of a dataset into a bitstream.
    Compress(CompressArgs),
    /// Reconstruct a matrix from a bitstream.
    Decompress(DecompressArgs),
    /// Report rate and distortion of a model, or the distortion of a reconstruction.
    Eval(EvalArgs),
    /// Evaluate several checkpoints and write a rate-distortion CSV.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Subcarriers.
    #[arg(long, default_value_t = 64)]
    pub nc: usize,
    /// Transmit antennas.
    #[arg(long, default_value_t = 16)]
    pub nt: usize,
    #[arg(long)]
    pub count: usize,
    /// Propagation paths per matrix.
    #[arg(long, default_value_t = 8)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Path gain variance.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_sq: f64,
    /// Largest path delay in seconds.
    #[arg(long, default_value_t = DESK_DELAY_SPREAD)]
    pub delay_spread: f64,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 20e6)]
    pub sample_rate: f64,
    #[arg(short, long)]
    pub output: PathBuf,
}

/// Lambda given by table id or by value.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct LambdaArg {
    /// Index into the lambda table.
    #[arg(long)]
    pub lambda_id: Option<u16>,
    /// Lambda value; resolved to the nearest table entry.
    #[arg(long)]
    pub lambda: Option<f64>,
}

impl LambdaArg {
    fn resolve(&self, table: &LambdaTable) -> Result<u16> {
        match (self.lambda_id, self.lambda) {
            (Some(id), _) => {
                table.get(id)?;
                Ok(id)
            }
            (None, Some(value)) => {
                let (id, exact) = table.nearest(value)?;
                if !exact {
                    warn!("lambda {value} is not in the table; using {} (id {id})", table.get(id)?);
                }
                Ok(id)
            }
            (None, None) => Err(Error::Config("a lambda or lambda id is required".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub lambda: LambdaArg,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub prior_lr: f64,
    /// Width of the hidden convolution stages.
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional CSV of per-epoch losses.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = PadPolicy::Reject)]
    pub pad: PadPolicy,
}

#[derive(Debug, Args)]
pub struct DecompressArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub input: PathBuf,
    /// Dataset file holding the single reconstructed matrix.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to run over the whole dataset.
    #[arg(long, required_unless_present = "reconstruction")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Compare this reconstruction with sample `--index` of the data instead.
    #[arg(long, conflicts_with = "model")]
    pub reconstruction: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, value_enum, default_value_t = PadPolicy::Reject)]
    pub pad: PadPolicy,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated checkpoints.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = PadPolicy::Reject)]
    pub pad: PadPolicy,
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code: 0 on success, 2 on usage errors, 1 on runtime errors.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Runs a parsed command, writing reports to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Compress(a) => compress_cmd(a, out),
        Command::Decompress(a) => decompress_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Sweep(a) => sweep_cmd(a, out),
    }
}

fn gen(a: GenArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = ChannelGenConfig {
        n_c: a.nc,
        n_t: a.nt,
        paths: a.paths,
        sample_rate: a.sample_rate,
        delay_spread: a.delay_spread,
        sigma_alpha_sq: a.sigma_sq,
        seed: a.seed,
        ..ChannelGenConfig::default()
    };
    let data = generate_dataset(&cfg, a.count)?;
    write_dataset(&data, &a.output)?;
    writeln!(
        out,
        "wrote {} matrices of {}x{} to {}",
        a.count,
        a.nc,
        a.nt,
        a.output.display()
    )?;
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let cfg = TrainConfig {
        arch: ArchConfig::with_hidden(a.hidden),
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        prior_lr: a.prior_lr,
        seed: a.seed,
        lambdas: LambdaTable::default(),
    };
    let id = a.lambda.resolve(&cfg.lambdas)?;
    info!(
        "training on {} matrices with lambda {} (id {id})",
        data.len(),
        cfg.lambdas.get(id)?
    );
    let (model, history) = train(&data, id, &cfg)?;
    save_checkpoint(&model, &a.output)?;
    if let Some(path) = &a.history {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "epoch,rate,mse,total")?;
        for e in &history.epochs {
            writeln!(w, "{},{},{},{}", e.epoch, e.rate, e.mse, e.total)?;
        }
        w.flush()?;
    }
    if let Some(last) = history.epochs.last() {
        writeln!(
            out,
            "final epoch: rate {} mse {} loss {}",
            last.rate, last.mse, last.total
        )?;
    }
    writeln!(out, "wrote {}", a.output.display())?;
    Ok(())
}

fn sample(data: &Dataset, index: usize) -> Result<&crate::csi::ChannelMatrix> {
    data.samples()
        .get(index)
        .ok_or_else(|| Error::Config(format!("index {index} out of range for {} samples", data.len())))
}

fn compress_cmd(a: CompressArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let data = read_dataset(&a.data)?;
    let h = sample(&data, a.index)?;
    let (padded, record) = pad_to_16(h, a.pad)?;
    let mut stream = compress(&padded, &model)?;
    // the header carries the original size so decompression crops
    stream.n_c = record.original.0 as u16;
    stream.n_t = record.original.1 as u16;
    let mut w = BufWriter::new(File::create(&a.output)?);
    stream.write_to(&mut w)?;
    w.flush()?;
    writeln!(
        out,
        "bits={} bit_rate={} payload_bytes={}",
        stream.counted_bits(),
        stream.bit_rate(),
        stream.payload.bytes.len()
    )?;
    Ok(())
}

fn decompress_cmd(a: DecompressArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_checkpoint(&a.model)?;
    let stream = Bitstream::read_from(&mut BufReader::new(File::open(&a.input)?))?;
    let h = decompress(&stream, &model)?;
    let (n_c, n_t) = (h.n_c(), h.n_t());
    write_dataset(&Dataset::new(n_c, n_t, vec![h])?, &a.output)?;
    writeln!(out, "wrote {n_c}x{n_t} reconstruction to {}", a.output.display())?;
    Ok(())
}

fn check_pad(data: &Dataset, policy: PadPolicy) -> Result<()> {
    if let Some(h) = data.samples().first() {
        pad_to_16(h, policy)?;
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let data = read_dataset(&a.data)?;
    if let Some(path) = &a.reconstruction {
        let h = sample(&data, a.index)?;
        let rec = read_dataset(path)?;
        let h_hat = sample(&rec, 0)?;
        let ratio = nmse_ratio(h, h_hat)?;
        writeln!(out, "nmse_db={}", nmse_db(&[ratio]))?;
        writeln!(out, "rho={}", cosine_corr(h, h_hat, false)?)?;
        return Ok(());
    }
    let model_path = a
        .model
        .as_deref()
        .ok_or_else(|| Error::Config("--model or --reconstruction is required".into()))?;
    check_pad(&data, a.pad)?;
    let model = load_checkpoint(model_path)?;
    let r = evaluate(&model, &data)?;
    writeln!(out, "samples={}", r.samples)?;
    writeln!(out, "lambda={}", model.lambda(&LambdaTable::default())?)?;
    writeln!(out, "bit_rate={}", r.bit_rate)?;
    writeln!(out, "payload_bit_rate={}", r.payload_bit_rate)?;
    writeln!(out, "framed_bit_rate={}", r.framed_bit_rate)?;
    writeln!(out, "entropy={}", r.entropy)?;
    writeln!(out, "model_rate={}", r.model_rate)?;
    writeln!(out, "nmse_db={}", r.nmse_db)?;
    writeln!(out, "rho={}", r.rho)?;
    Ok(())
}

fn sweep_cmd(a: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let data = read_dataset(&a.data)?;
    check_pad(&data, a.pad)?;
    let models = a.models.iter().map(load_checkpoint).collect::<Result<Vec<_>>>()?;
    let points = rd_sweep(&models, &LambdaTable::default(), &data)?;
    let mut w = BufWriter::new(File::create(&a.output)?);
    write_rd_csv(&points, &mut w)?;
    w.flush()?;
    writeln!(out, "wrote {} points to {}", points.len(), a.output.display())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(dispatch(["deepcmc", "frobnicate"]), 2);
        assert_eq!(dispatch(["deepcmc", "gen", "--nc", "64"]), 2);
        assert_eq!(dispatch(["deepcmc", "gen", "--count", "1", "-o", "x", "--bogus"]), 2);
        assert_eq!(
            dispatch([
                "deepcmc",
                "train",
                "--data",
                "d",
                "-o",
                "m",
                "--lambda",
                "1e4",
                "--lambda-id",
                "0"
            ]),
            2
        );
    }

    #[test]
    fn runtime_errors_exit_with_one() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.csid");
        let m = missing.to_str().unwrap();
        assert_eq!(dispatch(["deepcmc", "eval", "--model", m, "--data", m]), 1);
    }

    #[test]
    fn gen_writes_requested_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csid");
        let p = path.to_str().unwrap();
        let args = [
            "deepcmc", "gen", "--nc", "64", "--nt", "16", "--count", "20", "--paths", "8", "--seed", "42", "-o", p,
        ];
        assert_eq!(dispatch(args), 0);
        let d = read_dataset(&path).unwrap();
        assert_eq!((d.n_c(), d.n_t(), d.len()), (64, 16, 20));
        let first = std::fs::read(&path).unwrap();
        assert_eq!(dispatch(args), 0);
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn lambda_by_value_snaps_to_table() {
        let t = LambdaTable::default();
        let by_value = |v: f64| {
            LambdaArg {
                lambda_id: None,
                lambda: Some(v),
            }
            .resolve(&t)
            .unwrap()
        };
        assert_eq!(by_value(1e6), 4);
        assert_eq!(by_value(9e5), 4);
        assert_eq!(
            LambdaArg {
                lambda_id: Some(2),
                lambda: None
            }
            .resolve(&t)
            .unwrap(),
            2
        );
        assert!(LambdaArg {
            lambda_id: Some(99),
            lambda: None
        }
        .resolve(&t)
        .is_err());
    }
}

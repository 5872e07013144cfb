use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mimo_ep::channel_model::{AngleSharing, ChannelRealization, TapIndexing};
use mimo_ep::channel_estimator::GmpCorrection;
use mimo_ep::decoder::BcjrMetric;
use mimo_ep::harness::{flop_estimate, monte_carlo, write_csv, Algorithm, Execution, FlopParams, SimConfig, Variant};
use mimo_ep::seed::{self, tag};
use mimo_ep::Error;
use serde::de::DeserializeOwned;

#[derive(Debug, Parser)]
#[command(name = "mimo-ep", version, about = "Joint channel estimation and decoding for uplink MIMO-OFDM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the Monte Carlo BER/NMSE simulation and write CSV.
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        /// CSV output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the effective configuration as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Print per-turbo-iteration FLOP counts.
    Flops(FlopArgs),
    /// Draw one channel realization and write it to a file.
    GenChannel {
        #[command(flatten)]
        sim: SimArgs,
        /// Trial index whose channel is drawn.
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Output path; `.csv` writes text, anything else the binary format.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Every `SimConfig` field as an optional override of the config file.
#[derive(Debug, Args)]
struct SimArgs {
    /// TOML config; fields not present keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the 64 x 8 16QAM system instead of the desk-scale one.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    symbols: Option<usize>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    subcarriers: Option<usize>,
    #[arg(long)]
    pilots: Option<usize>,
    #[arg(long)]
    cp_len: Option<usize>,
    #[arg(long)]
    bits_per_symbol: Option<usize>,
    /// Feedback generator in octal, e.g. 117.
    #[arg(long, value_parser = parse_octal)]
    code_feedback: Option<u32>,
    /// Feedforward generator in octal, e.g. 155.
    #[arg(long, value_parser = parse_octal)]
    code_feedforward: Option<u32>,
    #[arg(long)]
    code_terminate: Option<bool>,
    #[arg(long)]
    code_rate: Option<f64>,
    #[arg(long)]
    array_rows: Option<usize>,
    #[arg(long)]
    array_cols: Option<usize>,
    #[arg(long)]
    spacing_el: Option<f64>,
    #[arg(long)]
    spacing_az: Option<f64>,
    #[arg(long)]
    taps: Option<usize>,
    #[arg(long)]
    pdp_decay: Option<f64>,
    /// per-user or per-tap.
    #[arg(long, value_parser = parse_kebab::<AngleSharing>)]
    angles: Option<AngleSharing>,
    /// one-based or zero-based.
    #[arg(long, value_parser = parse_kebab::<TapIndexing>)]
    indexing: Option<TapIndexing>,
    /// Comma-separated Eb/N0 grid in dB.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    eb_n0_db: Option<Vec<f64>>,
    #[arg(long)]
    turbo_iters: Option<usize>,
    #[arg(long)]
    first_inner: Option<usize>,
    #[arg(long)]
    later_inner: Option<usize>,
    /// Comma-separated list of ep-qa-l, ep-qa, bp-ga, mfb-pcsi.
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<Variant>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long)]
    workers: Option<usize>,
    /// first-order or table.
    #[arg(long, value_parser = parse_kebab::<GmpCorrection>)]
    correction: Option<GmpCorrection>,
    /// log-map or max-log.
    #[arg(long, value_parser = parse_kebab::<BcjrMetric>)]
    metric: Option<BcjrMetric>,
}

#[derive(Debug, Args)]
struct FlopArgs {
    /// Subcarrier counts; the other dimensions follow the 64 x 8 sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 256, 512, 1024])]
    subcarriers: Vec<usize>,
    /// Algorithms to tabulate.
    #[arg(long, value_delimiter = ',', default_values_t = Algorithm::ALL)]
    algorithms: Vec<Algorithm>,
}

fn parse_octal(s: &str) -> Result<u32, String> {
    let digits = s.trim_start_matches("0o");
    u32::from_str_radix(digits, 8).map_err(|e| format!("`{s}` is not an octal number: {e}"))
}

fn parse_kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    T::deserialize(toml::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

macro_rules! overlay {
    ($cfg:ident, $args:ident, $($field:ident),* $(,)?) => {
        $(if let Some(v) = $args.$field.clone() { $cfg.$field = v; })*
    };
}

impl SimArgs {
    fn resolve(&self) -> Result<SimConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None if self.full_scale => SimConfig::full_scale(),
            None => SimConfig::default(),
        };
        let args = self;
        overlay!(
            cfg, args, symbols, users, subcarriers, pilots, cp_len, bits_per_symbol, code_feedback,
            code_feedforward, code_terminate, code_rate, array_rows, array_cols, spacing_el, spacing_az, taps,
            pdp_decay, angles, indexing, eb_n0_db, turbo_iters, first_inner, later_inner, variants, trials, seed,
            workers, correction, metric,
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(sim: &SimArgs, out: Option<&Path>, print_config: bool) -> Result<(), Error> {
    let cfg = sim.resolve()?;
    if print_config {
        let text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
        print!("{text}");
        return Ok(());
    }
    log::info!(
        "{} trials, {} Eb/N0 points, {} variants, {} antennas x {} users",
        cfg.trials,
        cfg.eb_n0_db.len(),
        cfg.variants.len(),
        cfg.antennas(),
        cfg.users
    );
    let mut w = output(out)?;
    let records = monte_carlo(&cfg, Execution::from_workers(cfg.workers))?;
    for r in &records {
        log::debug!("{} {} dB iter {}: {:.3} s", r.variant, r.eb_n0_db, r.turbo_iter, r.elapsed_s);
    }
    write_csv(&records, &mut w)?;
    w.flush()?;
    Ok(())
}

fn flops(args: &FlopArgs) -> Result<(), Error> {
    let mut w = output(None)?;
    writeln!(w, "algorithm,subcarriers,detection,estimation,total")?;
    for &k in &args.subcarriers {
        let p = FlopParams::complexity_sweep(k);
        for &alg in &args.algorithms {
            let f = flop_estimate(&p, alg)?;
            writeln!(w, "{alg},{k},{:.0},{:.0},{:.0}", f.detection, f.estimation, f.total())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn gen_channel(sim: &SimArgs, trial: u64, out: &Path) -> Result<(), Error> {
    let cfg = sim.resolve()?;
    let ch_cfg = cfg.channel()?;
    let ch = ChannelRealization::generate(&mut seed::rng(cfg.seed, &[trial, tag::CHANNEL]), &ch_cfg)?;
    let file = BufWriter::new(File::create(out)?);
    if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        ch.write_csv(file)?;
    } else {
        ch.write_binary(file)?;
    }
    log::info!("wrote {} x {} x {} channel to {}", ch.antennas, ch.users, ch.taps, out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { sim, out, print_config } => simulate(sim, out.as_deref(), *print_config),
        Command::Flops(args) => flops(args),
        Command::GenChannel { sim, trial, out } => gen_channel(sim, *trial, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

//! `qsvrg` — run bit-metered optimization experiments from a config file,
//! tabulate the certified epoch-length bounds, snapshot datasets, and spot
//! check the stochastic rounding.
//!
//! Exit codes: 0 success, 1 invalid configuration (every violation is
//! listed), 2 a run diverged (partial traces are still written, marked in
//! their headers).

mod config;
mod experiment;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qsvrg::data::write_atomic;
use qsvrg::quantizer::{self, GridSpec};
use qsvrg::theory::{min_epoch_length, sigma_adaptive, BoundError, ProblemConstants};

use experiment::CliError;

#[derive(Parser)]
#[command(name = "qsvrg", version, about = "Bit-metered distributed-optimization simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute every configured (algorithm, seed) pair; one trace CSV each
    Run(RunArgs),
    /// Like `run`, plus a cross-algorithm comparison CSV and a plot script
    Bench(RunArgs),
    /// Tabulate minimum certified epoch lengths over a bit-width sweep
    Bounds(BoundsArgs),
    /// Load a dataset and write a verified binary snapshot
    DataPrep(DataPrepArgs),
    /// Empirically check one lattice's rounding for bias
    QuantizerSelftest(SelftestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// experiment description (TOML)
    #[arg(long)]
    config: PathBuf,
    /// output directory (overrides $QSVRG_OUT and the file's setting)
    #[arg(long)]
    out: Option<PathBuf>,
    /// replace the file's seed list, e.g. --seeds 1,2,3
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// replace the file's dataset subsample size
    #[arg(long)]
    subsample: Option<usize>,
}

#[derive(Args)]
struct BoundsArgs {
    /// strong convexity modulus
    #[arg(long)]
    mu: f64,
    /// smoothness constant
    #[arg(long)]
    lipschitz: f64,
    /// problem dimension
    #[arg(long)]
    dim: usize,
    /// step size
    #[arg(long)]
    alpha: f64,
    /// contraction targets, e.g. --sigma-targets 0.2,0.5,0.9,0.99
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.5, 0.9, 0.99])]
    sigma_targets: Vec<f64>,
    /// smallest per-coordinate width in the sweep
    #[arg(long, default_value_t = 8)]
    bits_lo: u32,
    /// largest per-coordinate width in the sweep
    #[arg(long, default_value_t = 32)]
    bits_hi: u32,
    /// directory for bounds.csv
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct DataPrepArgs {
    /// experiment description whose [dataset] section to snapshot
    #[arg(long)]
    config: PathBuf,
    /// directory for the snapshot file
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// replace the file's dataset subsample size
    #[arg(long)]
    subsample: Option<usize>,
}

#[derive(Args)]
struct SelftestArgs {
    /// per-coordinate width of the lattice
    #[arg(long, default_value_t = 4)]
    bits_per_coord: u32,
    /// lattice dimension
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// lattice center (same value in every coordinate)
    #[arg(long, default_value_t = 0.0)]
    center: f64,
    /// lattice radius
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// test point as center + offset * radius per coordinate
    #[arg(long, default_value_t = 0.37)]
    offset: f64,
    #[arg(long, default_value_t = 200_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(CliError::Invalid(violations)) => {
            eprintln!("configuration invalid ({} problem(s)):", violations.len());
            for v in &violations {
                eprintln!("  - {v}");
            }
            ExitCode::from(1)
        }
        Err(CliError::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch() -> Result<ExitCode, CliError> {
    match Cli::parse().cmd {
        Cmd::Run(args) => run_experiment(args, false),
        Cmd::Bench(args) => run_experiment(args, true),
        Cmd::Bounds(args) => cmd_bounds(args),
        Cmd::DataPrep(args) => cmd_data_prep(args),
        Cmd::QuantizerSelftest(args) => cmd_selftest(args),
    }
}

fn run_experiment(args: RunArgs, bench: bool) -> Result<ExitCode, CliError> {
    let bytes = std::fs::read(&args.config)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.config.display())))?;
    let hash = config::config_hash(&bytes);
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Invalid(vec!["config file is not UTF-8".into()]))?;
    let overrides = config::Overrides { out: args.out, seeds: args.seeds, subsample: args.subsample };
    let exp = config::resolve(&text, &overrides).map_err(CliError::Invalid)?;
    let outcome = experiment::execute(&exp, &hash, bench)?;
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    if outcome.diverged > 0 {
        eprintln!("{} run(s) diverged; their traces carry the failure marker", outcome.diverged);
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bounds(args: BoundsArgs) -> Result<ExitCode, CliError> {
    if args.bits_lo == 0 || args.bits_lo > args.bits_hi {
        return Err(CliError::Invalid(vec![format!(
            "bit sweep {}..{} is empty or starts at zero",
            args.bits_lo, args.bits_hi
        )]));
    }
    let mut s = String::new();
    let _ = writeln!(s, "# code_version: {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# mu: {}", args.mu);
    let _ = writeln!(s, "# lipschitz: {}", args.lipschitz);
    let _ = writeln!(s, "# dim: {}", args.dim);
    let _ = writeln!(s, "# alpha: {}", args.alpha);
    s.push_str("sigma_bar,bits_per_coord,min_epoch_length,rate_at_min_length,status\n");
    for &sigma_bar in &args.sigma_targets {
        for bits in args.bits_lo..=args.bits_hi {
            let mut c = ProblemConstants {
                mu: args.mu,
                lipschitz: args.lipschitz,
                d: args.dim,
                alpha: args.alpha,
                t: 1,
                bits_per_dim: bits,
            };
            match min_epoch_length(&c, sigma_bar) {
                Ok(t) => {
                    c.t = t;
                    let rate = sigma_adaptive(&c).expect("certified pair must have a valid rate");
                    let _ = writeln!(s, "{sigma_bar},{bits},{t},{rate},ok");
                }
                Err(e) => {
                    let _ = writeln!(s, "{sigma_bar},{bits},,,{}", status_word(&e));
                }
            }
        }
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let path = args.out.join("bounds.csv");
    write_atomic(&path, s.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

/// Stable single-word status for the bounds table.
fn status_word(e: &BoundError) -> &'static str {
    match e {
        BoundError::BitsInsufficient { .. } => "bits-insufficient",
        BoundError::TargetUnreachable { .. } => "target-unreachable",
        BoundError::BadTarget { .. } => "bad-target",
        BoundError::StepTooLarge { .. } => "step-too-large",
        BoundError::BadConstants { .. } => "bad-constants",
        _ => "inapplicable",
    }
}

fn cmd_data_prep(args: DataPrepArgs) -> Result<ExitCode, CliError> {
    let bytes = std::fs::read(&args.config)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.config.display())))?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Invalid(vec!["config file is not UTF-8".into()]))?;
    let overrides =
        config::Overrides { out: None, seeds: None, subsample: args.subsample };
    let exp = config::resolve(&text, &overrides).map_err(CliError::Invalid)?;
    let data = config::load_data(&exp).map_err(CliError::Invalid)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    let path = args.out.join(format!("dataset-{}.bin", &data.hash[..16]));
    qsvrg::data::save_snapshot(&data.dataset, &path)?;
    println!(
        "source: {} ({} samples, dim {})",
        data.source,
        data.dataset.n(),
        data.dataset.d()
    );
    println!("dataset_hash: {}", data.hash);
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_selftest(args: SelftestArgs) -> Result<ExitCode, CliError> {
    let center = vec![args.center; args.dim];
    let grid = GridSpec::uniform(center, args.radius, args.bits_per_coord)
        .map_err(|e| CliError::Invalid(vec![format!("lattice rejected: {e}")]))?;
    let w: Vec<f64> = (0..args.dim).map(|_| args.center + args.offset * args.radius).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let report = quantizer::self_test(&grid, &w, args.trials, &mut rng)
        .map_err(|e| CliError::Invalid(vec![format!("self test rejected its input: {e}")]))?;
    println!(
        "lattice: dim {}, radius {}, {} bits/coordinate (spacing {})",
        args.dim,
        args.radius,
        args.bits_per_coord,
        grid.spacing(0)
    );
    println!("test point: center + {} * radius in every coordinate", args.offset);
    println!("trials: {} (seed {})", report.trials, args.seed);
    println!("max |bias|: {:.3e}", report.max_abs_bias);
    println!("max |bias| / standard error: {:.3}", report.max_bias_se_ratio);
    println!("max |rounding error| / spacing: {:.4}", report.max_err_spacing_ratio);
    // 5 standard errors over d coordinates: essentially never by chance
    let unbiased = report.max_bias_se_ratio <= 5.0;
    let in_cell = report.max_err_spacing_ratio <= 1.0 + 1e-12;
    if unbiased && in_cell {
        println!("verdict: unbiased within sampling error; rounding stays inside its cell");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("verdict: FAILED ({})", if unbiased { "rounding left its cell" } else { "bias too large" });
        Ok(ExitCode::from(1))
    }
}

//! Drives the configured (algorithm, seed) grid, writes one trace CSV per
//! run, and optionally a cross-algorithm comparison table plus a plot-script
//! template. All file bodies are a pure function of (config, seed): no
//! timestamps, atomic writes, provenance in the headers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use qsvrg::data::{write_atomic, DataError};
use qsvrg::metrics::{solve_reference, Trace};
use qsvrg::objective::{FiniteSum, ShardedSum};
use qsvrg::optimizers::{run, OptimizerConfig, RunError, RunOutput};

use crate::config::{load_data, Experiment, LoadedData};

/// What happened across the whole grid; the exit code derives from it.
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub diverged: usize,
}

pub enum CliError {
    /// Complete validation report; exit code 1.
    Invalid(Vec<String>),
    /// Filesystem trouble while writing results; exit code 1.
    Io(String),
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Io(e.to_string())
    }
}

/// One finished run, ready for the comparison table.
struct BenchRow {
    tag: String,
    algorithm: String,
    seed: u64,
    status: String,
    epochs_run: usize,
    trace_file: String,
    output: Option<RunOutput>,
}

pub fn execute(
    exp: &Experiment,
    config_hash: &str,
    bench: bool,
) -> Result<Outcome, CliError> {
    let data = load_data(exp).map_err(CliError::Invalid)?;
    let logistic = data.dataset.to_logistic(data.lambda);
    let sharded;
    let obj: &dyn FiniteSum = match &data.shards {
        None => &logistic,
        Some(shards) => {
            sharded = ShardedSum::new(&logistic, shards.clone())
                .map_err(|e| CliError::Invalid(vec![format!("worker model rejected: {e}")]))?;
            &sharded
        }
    };

    // late validation: constraints that need the dataset dimension
    let mut violations = Vec::new();
    for plan in &exp.algos {
        let mut cfg = plan.concretize(obj.dim(), exp.seeds[0]);
        // zero-epoch entries skip the runner entirely (header-only trace),
        // so check the rest of their settings against a stand-in count
        cfg.epochs = cfg.epochs.max(1);
        for v in cfg.validate(obj) {
            violations.push(format!("[[algo]] \"{}\": {v}", plan.tag));
        }
    }
    if !violations.is_empty() {
        return Err(CliError::Invalid(violations));
    }

    let f_star = if exp.reference {
        let r = solve_reference(obj, exp.reference_tol)
            .map_err(|e| CliError::Invalid(vec![format!(
                "reference solve failed ({e}); set reference = false to run without a suboptimality column"
            )]))?;
        Some(r.value)
    } else {
        None
    };

    let dir = exp.out_dir.join(config_hash);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;

    let mut outcome = Outcome { files: Vec::new(), diverged: 0 };
    let mut rows = Vec::new();
    for plan in &exp.algos {
        for &seed in &exp.seeds {
            let cfg = plan.concretize(obj.dim(), seed);
            let file_name = format!("{}-s{seed}.trace.csv", plan.tag);
            let path = dir.join(&file_name);
            let (status, trace, output) = if cfg.epochs == 0 {
                ("ok (no epochs configured)".to_string(), Trace::new(), None)
            } else {
                match run(obj, &cfg, f_star) {
                    Ok(out) => ("ok".to_string(), out.trace.clone(), Some(out)),
                    Err(RunError::Diverged { epoch, inner_step, partial }) => {
                        outcome.diverged += 1;
                        let status = match inner_step {
                            Some(t) => format!("diverged at epoch {epoch}, inner step {t}"),
                            None => format!("diverged at epoch {epoch}"),
                        };
                        (status, partial.trace.clone(), Some(*partial))
                    }
                    Err(RunError::Invalid(v)) => {
                        unreachable!("validated configuration rejected at run time: {v:?}")
                    }
                }
            };
            let meta = run_meta(exp, &data, plan.tag.as_str(), &cfg, config_hash, obj, f_star, &status);
            write_trace(&path, &trace, &meta)?;
            outcome.files.push(path);
            rows.push(BenchRow {
                tag: plan.tag.clone(),
                algorithm: plan.algorithm.to_string(),
                seed,
                status,
                epochs_run: trace.records.len().saturating_sub(1),
                trace_file: file_name,
                output,
            });
        }
    }

    if bench {
        let bench_path = dir.join("bench.csv");
        write_atomic(&bench_path, bench_csv(exp, &data, config_hash, &rows).as_bytes())?;
        outcome.files.push(bench_path);
        let plot_path = dir.join("plot.gnuplot");
        write_atomic(&plot_path, plot_script(&rows).as_bytes())?;
        outcome.files.push(plot_path);
    }
    Ok(outcome)
}

fn write_trace(path: &Path, trace: &Trace, meta: &[(&str, String)]) -> Result<(), CliError> {
    let mut buf = Vec::new();
    trace
        .write_csv(&mut buf, meta)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    write_atomic(path, &buf)?;
    Ok(())
}

/// Provenance and resolved parameters embedded at the top of each trace.
#[allow(clippy::too_many_arguments)]
fn run_meta(
    exp: &Experiment,
    data: &LoadedData,
    tag: &str,
    cfg: &OptimizerConfig,
    config_hash: &str,
    obj: &dyn FiniteSum,
    f_star: Option<f64>,
    status: &str,
) -> Vec<(&'static str, String)> {
    let mut meta: Vec<(&'static str, String)> = vec![
        ("algorithm", cfg.algorithm.to_string()),
        ("label", tag.to_string()),
        ("seed", cfg.seed.to_string()),
        ("config_hash", config_hash.to_string()),
        ("code_version", env!("CARGO_PKG_VERSION").to_string()),
        ("source", data.source.to_string()),
        ("dataset_hash", data.hash.clone()),
        ("samples", data.dataset.n().to_string()),
        ("dim", data.dataset.d().to_string()),
        ("workers", obj.n_terms().to_string()),
        ("lambda", data.lambda.to_string()),
        ("mu", obj.strong_convexity().to_string()),
        ("lipschitz", obj.lipschitz().to_string()),
        ("epochs", cfg.epochs.to_string()),
        ("epoch_length", cfg.epoch_length.to_string()),
        ("step_size", step_size_text(&cfg.step_sizes)),
        ("bits_param", cfg.bits_param.to_string()),
        ("bits_grad", cfg.bits_grad.to_string()),
    ];
    if let Some(fs) = f_star {
        meta.push(("f_star", fs.to_string()));
    }
    if !exp.reference {
        meta.push(("f_star", "not solved".to_string()));
    }
    meta.push(("status", status.to_string()));
    meta
}

fn bench_csv(exp: &Experiment, data: &LoadedData, config_hash: &str, rows: &[BenchRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# config_hash: {config_hash}");
    let _ = writeln!(s, "# code_version: {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# dataset_hash: {}", data.hash);
    let _ = writeln!(s, "# seeds: {}", join(&exp.seeds));
    s.push_str(
        "label,algorithm,seed,status,epochs_run,final_loss,final_grad_norm,final_delta,\
         bits_up,bits_down,bits_announce,rejections,param_clamps,grad_clamps,radius_floor_events\n",
    );
    for row in rows {
        let _ = write!(s, "{},{},{},{},{}", row.tag, row.algorithm, row.seed, row.status, row.epochs_run);
        match (&row.output, row.output.as_ref().and_then(|o| o.trace.records.last())) {
            (Some(out), Some(last)) => {
                let announce = out.meter.total() - (last.bits_up + last.bits_down);
                let _ = writeln!(
                    s,
                    ",{},{},{},{},{},{},{},{},{},{}",
                    last.loss,
                    last.grad_norm,
                    last.delta,
                    last.bits_up,
                    last.bits_down,
                    announce,
                    out.rejections,
                    out.param_clamps,
                    out.grad_clamps,
                    out.radius_floor_events
                );
            }
            // zero-epoch entries: nothing ran, nothing to report
            _ => {
                let _ = writeln!(s, ",,,,,,,,,,");
            }
        }
    }
    s
}

/// A gnuplot template over the emitted traces: objective value against
/// cumulative uplink traffic, one curve per (algorithm, seed).
fn plot_script(rows: &[BenchRow]) -> String {
    let mut s = String::from(
        "# Render with: gnuplot plot.gnuplot (produces comparison.svg next to the traces)\n\
         set datafile separator ','\n\
         set datafile commentschars '#'\n\
         set terminal svg size 900,600\n\
         set output 'comparison.svg'\n\
         set logscale y\n\
         set xlabel 'cumulative uplink bits'\n\
         set ylabel 'objective value'\n\
         set key outside right\n\
         plot \\\n",
    );
    let mut first = true;
    for row in rows {
        if row.epochs_run == 0 {
            continue;
        }
        if !first {
            s.push_str(", \\\n");
        }
        first = false;
        // trace columns: k,loss,grad_norm,delta,bits_up,...
        let _ = write!(
            s,
            "  '{}' using 5:2 with linespoints title '{} s{}'",
            row.trace_file, row.tag, row.seed
        );
    }
    s.push('\n');
    s.push_str("# swap `using 5:2` for `using 1:2` to plot against the epoch index instead\n");
    s
}

fn join(seeds: &[u64]) -> String {
    seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ")
}

fn step_size_text(s: &qsvrg::optimizers::StepSizes) -> String {
    match s {
        qsvrg::optimizers::StepSizes::Constant(a) => a.to_string(),
        qsvrg::optimizers::StepSizes::PerEpoch(seq) => {
            seq.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(" ")
        }
    }
}

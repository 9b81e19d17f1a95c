//! Experiment description files: a TOML document with a `[dataset]` section,
//! a `[run]` section of shared defaults, and one `[[algo]]` table per
//! algorithm. Validation is collect-everything: a bad file reports every
//! violated constraint in one pass, not just the first.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::Deserialize;

use qsvrg::data::{self, DataError, LabeledDataset, PartitionPolicy};
use qsvrg::optimizers::{Algorithm, FixedGrids, OptimizerConfig, StepSizes};

/// Top-level document. Unknown keys are rejected so typos surface as
/// validation errors instead of silently ignored settings.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: DatasetSection,
    pub run: RunSection,
    #[serde(default, rename = "algo")]
    pub algos: Vec<AlgoSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// "power" | "mnist" | "synthetic" | "snapshot"
    pub source: String,
    /// power: the semicolon-separated CSV; snapshot: the binary file
    pub path: Option<PathBuf>,
    /// mnist: IDX image / label pair
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    /// mnist: the digit treated as the +1 class
    pub digit: Option<u8>,
    /// keep only this many rows (power: uniform draw; mnist: leading rows)
    pub subsample: Option<usize>,
    /// ridge weight of the logistic objective (default 0.1)
    pub lambda: Option<f64>,
    /// number of workers; omit for one worker per sample
    pub workers: Option<usize>,
    /// "contiguous" (default) | "round-robin"
    pub partition: Option<String>,
    // synthetic only:
    pub n: Option<usize>,
    pub d: Option<usize>,
    /// separation margin of the synthetic labels (default 3.0)
    pub margin: Option<f64>,
    /// generator seed for the synthetic draw (default 0)
    pub data_seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// output directory (overridden by --out, then $QSVRG_OUT)
    pub out: Option<PathBuf>,
    pub seeds: Vec<u64>,
    /// outer iterations; 0 emits header-only traces without running
    pub epochs: usize,
    pub epoch_length: Option<usize>,
    pub step_size: Option<f64>,
    pub step_sizes: Option<Vec<f64>>,
    /// starting point (defaults to the zero vector)
    pub initial_point: Option<Vec<f64>>,
    /// solve for the optimum so traces carry a suboptimality column
    /// (default true)
    pub reference: Option<bool>,
    pub reference_tol: Option<f64>,
}

/// Scalar-or-vector config values: a scalar is broadcast across coordinates.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Broadcastable {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Broadcastable {
    fn concretize(&self, d: usize) -> Vec<f64> {
        match self {
            Broadcastable::Scalar(v) => vec![*v; d],
            Broadcastable::Vector(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoSection {
    pub name: String,
    /// file-name label; defaults to `name`, must be unique across entries
    pub tag: Option<String>,
    /// per-coordinate width applied to both grids (bits = value * d)
    pub bits_per_coord: Option<u32>,
    /// whole-vector widths (mutually exclusive with bits_per_coord)
    pub bits_param: Option<u64>,
    pub bits_grad: Option<u64>,
    pub step_size: Option<f64>,
    pub step_sizes: Option<Vec<f64>>,
    pub epochs: Option<usize>,
    pub epoch_length: Option<usize>,
    /// explicit shared lattice (both must appear together)
    pub fixed_center: Option<Broadcastable>,
    pub fixed_radius: Option<f64>,
}

/// One fully-resolved algorithm entry, still awaiting the dataset dimension
/// for bit widths and grid centers.
#[derive(Debug, Clone)]
pub struct AlgoPlan {
    pub algorithm: Algorithm,
    pub tag: String,
    section: AlgoSection,
    run_defaults: RunDefaults,
}

#[derive(Debug, Clone)]
struct RunDefaults {
    epochs: usize,
    epoch_length: usize,
    step_size: Option<f64>,
    step_sizes: Option<Vec<f64>>,
    initial_point: Option<Vec<f64>>,
}

impl AlgoPlan {
    pub fn epochs(&self) -> usize {
        self.section.epochs.unwrap_or(self.run_defaults.epochs)
    }

    /// Build the runner configuration once the dimension is known.
    pub fn concretize(&self, d: usize, seed: u64) -> OptimizerConfig {
        let s = &self.section;
        let step_sizes = match (&s.step_sizes, s.step_size) {
            (Some(seq), _) => StepSizes::PerEpoch(seq.clone()),
            (None, Some(a)) => StepSizes::Constant(a),
            (None, None) => match (&self.run_defaults.step_sizes, self.run_defaults.step_size) {
                (Some(seq), _) => StepSizes::PerEpoch(seq.clone()),
                (None, Some(a)) => StepSizes::Constant(a),
                // surfaces as a BadStepSize violation downstream
                (None, None) => StepSizes::Constant(f64::NAN),
            },
        };
        let per_coord = s.bits_per_coord.map(|b| b as u64 * d as u64);
        let fixed_grids = match (&s.fixed_center, s.fixed_radius) {
            (Some(center), Some(radius)) => {
                FixedGrids::Shared { center: center.concretize(d), radius }
            }
            _ => FixedGrids::FromInitialPoint,
        };
        OptimizerConfig {
            algorithm: self.algorithm,
            step_sizes,
            epoch_length: s.epoch_length.unwrap_or(self.run_defaults.epoch_length),
            epochs: self.epochs(),
            bits_param: per_coord.or(s.bits_param).unwrap_or(0),
            bits_grad: per_coord.or(s.bits_grad).unwrap_or(0),
            fixed_grids,
            initial_point: self.run_defaults.initial_point.clone(),
            seed,
        }
    }
}

/// Everything the runner needs, resolved from file + flag overrides.
#[derive(Debug)]
pub struct Experiment {
    pub dataset: DatasetPlan,
    pub lambda: f64,
    pub workers: Option<usize>,
    pub partition: PartitionPolicy,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub algos: Vec<AlgoPlan>,
    pub reference: bool,
    pub reference_tol: f64,
}

/// A loadable dataset description (paths already existence-checked).
#[derive(Debug, Clone)]
pub enum DatasetPlan {
    Power { path: PathBuf, subsample: Option<usize> },
    Mnist { images: PathBuf, labels: PathBuf, digit: u8, subsample: Option<usize> },
    Synthetic { n: usize, d: usize, margin: f64, data_seed: u64 },
    Snapshot { path: PathBuf },
}

/// Dataset plus its provenance, ready for objective construction.
pub struct LoadedData {
    pub dataset: LabeledDataset,
    pub hash: String,
    pub source: &'static str,
    pub lambda: f64,
    /// worker shards; `None` means one worker per sample
    pub shards: Option<Vec<Vec<usize>>>,
}

impl DatasetPlan {
    pub fn source_name(&self) -> &'static str {
        match self {
            DatasetPlan::Power { .. } => "power",
            DatasetPlan::Mnist { .. } => "mnist",
            DatasetPlan::Synthetic { .. } => "synthetic",
            DatasetPlan::Snapshot { .. } => "snapshot",
        }
    }

    pub fn load(&self) -> Result<LabeledDataset, DataError> {
        match self {
            DatasetPlan::Power { path, subsample } => {
                // the loader draws the subsample with its own fixed stream;
                // seed 0 keeps every invocation of one config identical
                let (ds, _report) = data::load_power_csv(path, *subsample, 0)?;
                Ok(ds)
            }
            DatasetPlan::Mnist { images, labels, digit, subsample } => {
                let m = data::load_mnist_idx(images, labels)?;
                let d = m.dim();
                let keep = subsample.unwrap_or(m.n).min(m.n);
                let y = data::binarize_one_vs_all(&m.labels[..keep], *digit);
                let x: std::sync::Arc<[f64]> = if keep == m.n {
                    m.images.clone()
                } else {
                    m.images[..keep * d].to_vec().into()
                };
                data::LabeledDataset::new(x, y, d, None)
            }
            DatasetPlan::Synthetic { n, d, margin, data_seed } => {
                let (ds, _w_true) = data::synthesize(*n, *d, *data_seed, *margin)?;
                Ok(ds)
            }
            DatasetPlan::Snapshot { path } => data::load_snapshot(path),
        }
    }
}

/// Flag-level overrides applied on top of the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub subsample: Option<usize>,
}

/// Parse and cross-check a config file. Returns the resolved experiment or
/// the complete list of violations.
pub fn resolve(text: &str, overrides: &Overrides) -> Result<Experiment, Vec<String>> {
    let file: FileConfig = match toml::from_str(text) {
        Ok(f) => f,
        Err(e) => return Err(vec![format!("config parse error: {}", first_line(&e.to_string()))]),
    };
    let mut violations = Vec::new();

    let dataset = resolve_dataset(&file.dataset, overrides.subsample, &mut violations);

    let seeds = overrides.seeds.clone().unwrap_or_else(|| file.run.seeds.clone());
    if seeds.is_empty() {
        violations.push("[run] seeds: at least one seed is required".into());
    }
    let mut dup = HashSet::new();
    for &s in &seeds {
        if !dup.insert(s) {
            violations.push(format!("[run] seeds: seed {s} appears more than once"));
        }
    }

    let out_dir = overrides
        .out
        .clone()
        .or_else(|| std::env::var_os("QSVRG_OUT").map(PathBuf::from))
        .or_else(|| file.run.out.clone())
        .unwrap_or_else(|| PathBuf::from("results"));

    if file.run.step_size.is_some() && file.run.step_sizes.is_some() {
        violations.push("[run] step_size and step_sizes are mutually exclusive".into());
    }
    let reference_tol = file.run.reference_tol.unwrap_or(1e-10);
    if !(reference_tol.is_finite() && reference_tol > 0.0) {
        violations.push(format!("[run] reference_tol must be a positive number, got {reference_tol}"));
    }

    if file.algos.is_empty() {
        violations.push("no [[algo]] sections: nothing to run".into());
    }

    let run_defaults = RunDefaults {
        epochs: file.run.epochs,
        epoch_length: file.run.epoch_length.unwrap_or(0),
        step_size: file.run.step_size,
        step_sizes: file.run.step_sizes.clone(),
        initial_point: file.run.initial_point.clone(),
    };

    let mut tags = HashSet::new();
    let mut algos = Vec::new();
    for (idx, section) in file.algos.iter().enumerate() {
        let where_ = |tag: &str| format!("[[algo]] #{} (\"{}\")", idx + 1, tag);
        let tag = section.tag.clone().unwrap_or_else(|| section.name.clone());
        if !tags.insert(tag.clone()) {
            violations.push(format!(
                "{}: duplicate label; give one entry an explicit unique `tag`",
                where_(&tag)
            ));
        }
        let algorithm = match section.name.parse::<Algorithm>() {
            Ok(a) => a,
            Err(e) => {
                violations.push(format!("{}: {e}", where_(&tag)));
                continue;
            }
        };
        check_algo_section(section, algorithm, &where_(&tag), &mut violations);
        algos.push(AlgoPlan { algorithm, tag, section: section.clone(), run_defaults: run_defaults.clone() });
    }

    let dataset = match dataset {
        Some(d) => d,
        None => return Err(violations), // unusable dataset: already reported
    };
    if violations.is_empty() {
        Ok(Experiment {
            dataset,
            lambda: file.dataset.lambda.unwrap_or(0.1),
            workers: file.dataset.workers,
            partition: file
                .dataset
                .partition
                .as_deref()
                .and_then(parse_partition)
                .unwrap_or(PartitionPolicy::Contiguous),
            out_dir,
            seeds,
            algos,
            reference: file.run.reference.unwrap_or(true),
            reference_tol,
        })
    } else {
        Err(violations)
    }
}

/// Constraints that don't need the dataset dimension.
fn check_algo_section(
    s: &AlgoSection,
    algorithm: Algorithm,
    where_: &str,
    violations: &mut Vec<String>,
) {
    let explicit_bits = s.bits_param.is_some() || s.bits_grad.is_some();
    if s.bits_per_coord.is_some() && explicit_bits {
        violations
            .push(format!("{where_}: bits_per_coord and bits_param/bits_grad are mutually exclusive"));
    }
    if algorithm.is_quantized() {
        if s.bits_per_coord.is_none() && !(s.bits_param.is_some() && s.bits_grad.is_some()) {
            violations.push(format!(
                "{where_}: quantized algorithm needs bits_per_coord or both bits_param and bits_grad"
            ));
        }
    } else if s.bits_per_coord.is_some() || explicit_bits {
        violations.push(format!("{where_}: bit widths are meaningless for an unquantized algorithm"));
    }
    let has_fixed = s.fixed_center.is_some() || s.fixed_radius.is_some();
    if has_fixed {
        if s.fixed_center.is_none() || s.fixed_radius.is_none() {
            violations.push(format!("{where_}: fixed_center and fixed_radius must appear together"));
        }
        if algorithm.is_adaptive() {
            violations.push(format!(
                "{where_}: fixed lattice specified, but this algorithm re-centers its grids each epoch"
            ));
        } else if !algorithm.is_quantized() {
            violations.push(format!("{where_}: fixed lattice specified for an unquantized algorithm"));
        }
    }
    if s.step_size.is_some() && s.step_sizes.is_some() {
        violations.push(format!("{where_}: step_size and step_sizes are mutually exclusive"));
    }
}

fn resolve_dataset(
    ds: &DatasetSection,
    subsample_override: Option<usize>,
    violations: &mut Vec<String>,
) -> Option<DatasetPlan> {
    let subsample = subsample_override.or(ds.subsample);
    if subsample == Some(0) {
        violations.push("[dataset] subsample must be at least 1 row".into());
    }
    let lambda = ds.lambda.unwrap_or(0.1);
    if !(lambda.is_finite() && lambda >= 0.0) {
        violations.push(format!("[dataset] lambda must be a finite non-negative number, got {lambda}"));
    }
    if let Some(w) = ds.workers {
        if w == 0 {
            violations.push("[dataset] workers must be at least 1 (omit for one per sample)".into());
        }
    }
    if let Some(p) = &ds.partition {
        if parse_partition(p).is_none() {
            violations.push(format!(
                "[dataset] partition \"{p}\" unknown (contiguous | round-robin)"
            ));
        }
        if ds.workers.is_none() {
            violations.push("[dataset] partition requires workers".into());
        }
    }

    let need_file = |key: &str, path: &Option<PathBuf>, violations: &mut Vec<String>| -> Option<PathBuf> {
        match path {
            None => {
                violations.push(format!("[dataset] {key} is required for source \"{}\"", ds.source));
                None
            }
            Some(p) if !p.is_file() => {
                violations.push(format!("[dataset] {key}: no such file: {}", p.display()));
                None
            }
            Some(p) => Some(p.clone()),
        }
    };

    match ds.source.as_str() {
        "power" => {
            reject_keys(ds, &["images", "labels", "digit", "n", "d", "margin", "data_seed"], violations);
            let path = need_file("path", &ds.path, violations)?;
            Some(DatasetPlan::Power { path, subsample })
        }
        "mnist" => {
            reject_keys(ds, &["path", "n", "d", "margin", "data_seed"], violations);
            let digit = ds.digit.unwrap_or(9);
            if digit > 9 {
                violations.push(format!("[dataset] digit must be 0..=9, got {digit}"));
            }
            let images = need_file("images", &ds.images, violations);
            let labels = need_file("labels", &ds.labels, violations);
            Some(DatasetPlan::Mnist { images: images?, labels: labels?, digit, subsample })
        }
        "synthetic" => {
            reject_keys(ds, &["path", "images", "labels", "digit"], violations);
            let mut n = match ds.n {
                Some(n) if n > 0 => n,
                _ => {
                    violations.push("[dataset] synthetic source needs n >= 1".into());
                    return None;
                }
            };
            let d = match ds.d {
                Some(d) if d > 0 => d,
                _ => {
                    violations.push("[dataset] synthetic source needs d >= 1".into());
                    return None;
                }
            };
            if let Some(s) = subsample {
                n = n.min(s);
            }
            Some(DatasetPlan::Synthetic {
                n,
                d,
                margin: ds.margin.unwrap_or(3.0),
                data_seed: ds.data_seed.unwrap_or(0),
            })
        }
        "snapshot" => {
            reject_keys(ds, &["images", "labels", "digit", "n", "d", "margin", "data_seed"], violations);
            if subsample.is_some() {
                violations.push("[dataset] snapshots are pre-baked; subsample is not supported".into());
            }
            let path = need_file("path", &ds.path, violations)?;
            Some(DatasetPlan::Snapshot { path })
        }
        other => {
            violations.push(format!(
                "[dataset] source \"{other}\" unknown (power | mnist | synthetic | snapshot)"
            ));
            None
        }
    }
}

/// Flag keys that belong to a different source than the one selected.
fn reject_keys(ds: &DatasetSection, foreign: &[&str], violations: &mut Vec<String>) {
    for key in foreign {
        let set = match *key {
            "path" => ds.path.is_some(),
            "images" => ds.images.is_some(),
            "labels" => ds.labels.is_some(),
            "digit" => ds.digit.is_some(),
            "n" => ds.n.is_some(),
            "d" => ds.d.is_some(),
            "margin" => ds.margin.is_some(),
            "data_seed" => ds.data_seed.is_some(),
            _ => unreachable!(),
        };
        if set {
            violations.push(format!(
                "[dataset] {key} does not apply to source \"{}\"",
                ds.source
            ));
        }
    }
}

pub fn parse_partition(name: &str) -> Option<PartitionPolicy> {
    match name {
        "contiguous" => Some(PartitionPolicy::Contiguous),
        "round-robin" => Some(PartitionPolicy::RoundRobin),
        _ => None,
    }
}

/// Load dataset + shards and package the provenance the outputs embed.
pub fn load_data(exp: &Experiment) -> Result<LoadedData, Vec<String>> {
    let dataset = exp.dataset.load().map_err(|e| vec![format!("dataset load failed: {e}")])?;
    let hash = dataset.content_hash();
    let shards = match exp.workers {
        None => None,
        Some(w) => Some(
            data::partition(dataset.n(), w, exp.partition, 0)
                .map_err(|e| vec![format!("worker partition failed: {e}")])?,
        ),
    };
    Ok(LoadedData {
        dataset,
        hash,
        source: exp.dataset.source_name(),
        lambda: exp.lambda,
        shards,
    })
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or_default().to_string()
}

/// Short content address of the config file itself.
pub fn config_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(12);
    for b in &digest[..6] {
        let _ = write!(s, "{b:02x}");
    }
    s
}

//! Dataset ingestion and generation: the UCI household power CSV, MNIST IDX
//! files, a synthetic linear-separation generator, worker partitioning, and
//! a cached binary snapshot format.
//!
//! Everything here is deterministic: the same file and options produce the
//! same dataset, byte for byte, and `content_hash` pins that identity for
//! run metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::objective::RidgeLogistic;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column {0:?} in header")]
    MissingColumn(&'static str),
    #[error("no usable rows after filtering")]
    Empty,
    #[error("label at row {row} must be -1 or +1, got {value}")]
    BadLabel { row: usize, value: f64 },
    #[error("feature at row {row}, column {col} is not finite")]
    NonFiniteFeature { row: usize, col: usize },
    #[error("feature matrix of {len} values is not rows*dim = {n}*{d}")]
    BadShape { len: usize, n: usize, d: usize },
    #[error("{path}: expected magic {expected}, found {found}")]
    BadMagic { path: String, expected: u32, found: u32 },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: file ends before the declared {expected} payload bytes")]
    Truncated { path: String, expected: usize },
    #[error("{path}: {extra} unexpected trailing bytes")]
    TrailingBytes { path: String, extra: usize },
    #[error("label byte {value} at index {index} is not a digit 0-9")]
    BadDigit { index: usize, value: u8 },
    #[error("need 1..=n_samples workers, got {workers} for {samples} samples")]
    BadWorkerCount { workers: usize, samples: usize },
    #[error("snapshot {path}: bad header")]
    BadSnapshotHeader { path: String },
    #[error("snapshot {path}: content hash mismatch (file corrupted or edited)")]
    SnapshotHashMismatch { path: String },
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

/// Per-column affine record of a normalization: raw = z * scale + mean.
/// Columns that were left untouched carry mean 0, scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// An immutable design matrix with -1/+1 labels. Features are shared behind
/// an `Arc` so several objectives (e.g. ten one-vs-all classifiers) can
/// reuse one matrix without copying it.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: Arc<[f64]>, // n x d, row-major
    labels: Vec<f64>,
    n: usize,
    d: usize,
    normalization: Option<Normalization>,
}

impl LabeledDataset {
    pub fn new(
        features: Arc<[f64]>,
        labels: Vec<f64>,
        d: usize,
        normalization: Option<Normalization>,
    ) -> Result<Self, DataError> {
        let n = labels.len();
        if n == 0 || d == 0 || features.len() != n * d {
            return Err(DataError::BadShape { len: features.len(), n, d });
        }
        for (row, &y) in labels.iter().enumerate() {
            if y != 1.0 && y != -1.0 {
                return Err(DataError::BadLabel { row, value: y });
            }
        }
        for (idx, &x) in features.iter().enumerate() {
            if !x.is_finite() {
                return Err(DataError::NonFiniteFeature { row: idx / d, col: idx % d });
            }
        }
        Ok(Self { features, labels, n, d, normalization })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn features(&self) -> Arc<[f64]> {
        Arc::clone(&self.features)
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    /// Build the ridge-logistic objective over this data.
    pub fn to_logistic(&self, lambda: f64) -> RidgeLogistic {
        RidgeLogistic::new(Arc::clone(&self.features), self.labels.clone(), self.d, lambda)
            .expect("validated dataset always builds an objective")
    }

    /// Same matrix, different labels — the one-vs-all workhorse.
    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Self, DataError> {
        Self::new(Arc::clone(&self.features), labels, self.d, self.normalization.clone())
    }

    /// SHA-256 over shape, feature bits, and label bits; hex-encoded.
    /// Identical data always hashes identically.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update((self.d as u64).to_le_bytes());
        for &x in self.features.iter() {
            h.update(x.to_le_bytes());
        }
        for &y in &self.labels {
            h.update(y.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// What happened during CSV ingestion, for logs and run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub rows_skipped: usize,
    /// Some(k) when a subsample of k rows was drawn from the kept rows.
    pub subsampled_to: Option<usize>,
    /// Threshold used for the binary label.
    pub label_median: f64,
    /// Feature columns left unnormalized because they were constant.
    pub constant_columns: Vec<usize>,
}

const POWER_TARGET: &str = "Global_active_power";
const POWER_NUMERIC: [&str; 6] = [
    "Global_reactive_power",
    "Voltage",
    "Global_intensity",
    "Sub_metering_1",
    "Sub_metering_2",
    "Sub_metering_3",
];

/// Feature column names of the power dataset in output order. The last
/// entry is a constant bias.
pub const POWER_FEATURES: [&str; 9] = [
    "Global_reactive_power",
    "Voltage",
    "Global_intensity",
    "Sub_metering_1",
    "Sub_metering_2",
    "Sub_metering_3",
    "hour_of_day",
    "minute_of_hour",
    "bias",
];

/// Load the UCI household electric power consumption CSV (semicolon
/// separated). Rows with missing markers (`?`) or unparsable fields are
/// skipped and counted. The binary label is +1 where `Global_active_power`
/// exceeds its median over the rows actually used. Features are the nine
/// [`POWER_FEATURES`] columns; every non-constant one is z-score normalized
/// (population standard deviation), and the affine record is kept on the
/// dataset so raw values are recoverable.
///
/// `subsample`: keep only this many rows, drawn uniformly without
/// replacement with the given seed (file order preserved). The median and
/// normalization are computed after subsampling, over the rows that remain.
pub fn load_power_csv(
    path: &Path,
    subsample: Option<usize>,
    seed: u64,
) -> Result<(LabeledDataset, LoadReport), DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .flexible(true)
        .from_reader(BufReader::new(file));

    let headers = reader.headers()?.clone();
    let col = |name: &'static str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(DataError::MissingColumn(name))
    };
    let time_idx = col("Time")?;
    let target_idx = col(POWER_TARGET)?;
    let mut numeric_idx = [0usize; 6];
    for (j, name) in POWER_NUMERIC.iter().enumerate() {
        numeric_idx[j] = col(name)?;
    }

    let mut rows_read = 0usize;
    let mut targets: Vec<f64> = Vec::new();
    // 8 data columns per row; bias appended later
    let mut raw: Vec<[f64; 8]> = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows_read += 1;
        let parsed = parse_power_row(&record, time_idx, target_idx, &numeric_idx);
        if let Some((target, feats)) = parsed {
            targets.push(target);
            raw.push(feats);
        }
    }
    let rows_skipped = rows_read - raw.len();
    if raw.is_empty() {
        return Err(DataError::Empty);
    }

    // Optional seeded subsample, keeping file order.
    let mut subsampled_to = None;
    if let Some(m) = subsample {
        if m < raw.len() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = rand::seq::index::sample(&mut rng, raw.len(), m).into_vec();
            picked.sort_unstable();
            raw = picked.iter().map(|&i| raw[i]).collect();
            targets = picked.iter().map(|&i| targets[i]).collect();
            subsampled_to = Some(m);
        }
    }

    let n = raw.len();
    let d = 9usize;
    let label_median = median(&targets);
    let labels: Vec<f64> =
        targets.iter().map(|&t| if t > label_median { 1.0 } else { -1.0 }).collect();

    let mut features = vec![0.0f64; n * d];
    for (i, feats) in raw.iter().enumerate() {
        features[i * d..i * d + 8].copy_from_slice(feats);
        features[i * d + 8] = 1.0;
    }
    let (normalization, constant_columns) = zscore_in_place(&mut features, n, d);

    let ds = LabeledDataset::new(features.into(), labels, d, Some(normalization))?;
    let report = LoadReport {
        rows_read,
        rows_kept: n,
        rows_skipped,
        subsampled_to,
        label_median,
        constant_columns,
    };
    Ok((ds, report))
}

fn parse_power_row(
    record: &csv::StringRecord,
    time_idx: usize,
    target_idx: usize,
    numeric_idx: &[usize; 6],
) -> Option<(f64, [f64; 8])> {
    let field = |i: usize| record.get(i).map(str::trim);
    let parse = |i: usize| -> Option<f64> {
        let s = field(i)?;
        if s == "?" || s.is_empty() {
            return None;
        }
        s.parse::<f64>().ok().filter(|v| v.is_finite())
    };
    let target = parse(target_idx)?;
    let mut feats = [0.0f64; 8];
    for (j, &idx) in numeric_idx.iter().enumerate() {
        feats[j] = parse(idx)?;
    }
    // Time is hh:mm:ss
    let time = field(time_idx)?;
    let mut parts = time.split(':');
    let hour: f64 = parts.next()?.parse().ok()?;
    let minute: f64 = parts.next()?.parse().ok()?;
    if !(0.0..24.0).contains(&hour) || !(0.0..60.0).contains(&minute) {
        return None;
    }
    feats[6] = hour;
    feats[7] = minute;
    Some((target, feats))
}

/// Median with the even-count convention of averaging the middle pair.
fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// z-score every non-constant column in place; returns the affine record
/// and the indices of columns left untouched.
fn zscore_in_place(features: &mut [f64], n: usize, d: usize) -> (Normalization, Vec<usize>) {
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    let mut constant = Vec::new();
    for j in 0..d {
        let mut m = 0.0;
        for i in 0..n {
            m += features[i * d + j];
        }
        m /= n as f64;
        let mut var = 0.0;
        for i in 0..n {
            let c = features[i * d + j] - m;
            var += c * c;
        }
        let std = (var / n as f64).sqrt();
        if std == 0.0 {
            constant.push(j);
            continue;
        }
        mean[j] = m;
        scale[j] = std;
        for i in 0..n {
            features[i * d + j] = (features[i * d + j] - m) / std;
        }
    }
    (Normalization { mean, scale }, constant)
}

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

/// Raw MNIST-format payload: pixel intensities scaled to [0,1] and digit
/// labels 0-9. Convert to a training problem with
/// [`binarize_one_vs_all`] + [`LabeledDataset::new`].
#[derive(Debug, Clone)]
pub struct MnistData {
    pub images: Arc<[f64]>, // n x (rows*cols), row-major
    pub labels: Vec<u8>,
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
}

impl MnistData {
    pub fn dim(&self) -> usize {
        self.rows * self.cols
    }
}

/// Parse an IDX image/label file pair (big-endian, magic 2051/2049).
/// Counts must agree; payloads must be exactly the declared size.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<MnistData, DataError> {
    let img_bytes = read_all(images_path)?;
    let lbl_bytes = read_all(labels_path)?;

    let mut cur = &img_bytes[..];
    let magic = read_u32(&mut cur, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.display().to_string(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(&mut cur, images_path)? as usize;
    let rows = read_u32(&mut cur, images_path)? as usize;
    let cols = read_u32(&mut cur, images_path)? as usize;
    let expected = n * rows * cols;
    if cur.len() < expected {
        return Err(DataError::Truncated { path: images_path.display().to_string(), expected });
    }
    if cur.len() > expected {
        return Err(DataError::TrailingBytes {
            path: images_path.display().to_string(),
            extra: cur.len() - expected,
        });
    }
    let images: Vec<f64> = cur.iter().map(|&b| b as f64 / 255.0).collect();

    let mut cur = &lbl_bytes[..];
    let magic = read_u32(&mut cur, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_path.display().to_string(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n_labels = read_u32(&mut cur, labels_path)? as usize;
    if n_labels != n {
        return Err(DataError::CountMismatch { images: n, labels: n_labels });
    }
    if cur.len() < n {
        return Err(DataError::Truncated { path: labels_path.display().to_string(), expected: n });
    }
    if cur.len() > n {
        return Err(DataError::TrailingBytes {
            path: labels_path.display().to_string(),
            extra: cur.len() - n,
        });
    }
    let labels = cur.to_vec();
    for (index, &value) in labels.iter().enumerate() {
        if value > 9 {
            return Err(DataError::BadDigit { index, value });
        }
    }
    Ok(MnistData { images: images.into(), labels, n, rows, cols })
}

fn read_all(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| io_err(path, e))?;
    Ok(buf)
}

fn read_u32(cur: &mut &[u8], path: &Path) -> Result<u32, DataError> {
    cur.read_u32::<BigEndian>().map_err(|e| io_err(path, e))
}

/// Serialize images (values in [0,1], rescaled to bytes) and labels back to
/// the IDX pair format. Written atomically (temp file + rename).
pub fn write_mnist_idx(
    data: &MnistData,
    images_path: &Path,
    labels_path: &Path,
) -> Result<(), DataError> {
    let mut img = Vec::with_capacity(16 + data.n * data.rows * data.cols);
    img.write_u32::<BigEndian>(IDX_IMAGES_MAGIC).unwrap();
    img.write_u32::<BigEndian>(data.n as u32).unwrap();
    img.write_u32::<BigEndian>(data.rows as u32).unwrap();
    img.write_u32::<BigEndian>(data.cols as u32).unwrap();
    img.extend(data.images.iter().map(|&x| (x * 255.0).round() as u8));

    let mut lbl = Vec::with_capacity(8 + data.n);
    lbl.write_u32::<BigEndian>(IDX_LABELS_MAGIC).unwrap();
    lbl.write_u32::<BigEndian>(data.n as u32).unwrap();
    lbl.extend_from_slice(&data.labels);

    write_atomic(images_path, &img)?;
    write_atomic(labels_path, &lbl)
}

/// Write a file atomically: contents land under a temp name first and are
/// renamed into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = BufWriter::new(File::create(&tmp).map_err(|e| io_err(&tmp, e))?);
        f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
        f.flush().map_err(|e| io_err(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// +1 where the label equals `digit`, -1 elsewhere.
pub fn binarize_one_vs_all(labels: &[u8], digit: u8) -> Vec<f64> {
    labels.iter().map(|&l| if l == digit { 1.0 } else { -1.0 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionPolicy {
    /// Consecutive runs; the first (n mod workers) shards get one extra
    /// sample, so 10 samples over 3 workers gives sizes (4, 3, 3).
    Contiguous,
    /// Sample i goes to worker i mod workers.
    RoundRobin,
}

/// Split sample indices 0..n into disjoint covering shards, one per worker.
/// `seed` is reserved for future randomized policies; both built-in
/// policies are deterministic and ignore it.
pub fn partition(
    n_samples: usize,
    n_workers: usize,
    policy: PartitionPolicy,
    _seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    if n_workers == 0 || n_workers > n_samples {
        return Err(DataError::BadWorkerCount { workers: n_workers, samples: n_samples });
    }
    let mut shards = vec![Vec::new(); n_workers];
    match policy {
        PartitionPolicy::Contiguous => {
            let base = n_samples / n_workers;
            let extra = n_samples % n_workers;
            let mut next = 0usize;
            for (j, shard) in shards.iter_mut().enumerate() {
                let size = base + usize::from(j < extra);
                shard.extend(next..next + size);
                next += size;
            }
        }
        PartitionPolicy::RoundRobin => {
            for i in 0..n_samples {
                shards[i % n_workers].push(i);
            }
        }
    }
    Ok(shards)
}

/// Draw an n x d standard-normal design matrix and label each point by a
/// noisy linear rule: label = sign(margin * <w_true, x> + e) with e drawn
/// from the standard logistic distribution and ||w_true|| = 1. Larger
/// `margin` means cleaner separation; 0 means pure noise. Returns the
/// dataset and w_true for diagnostics.
pub fn synthesize(
    n: usize,
    d: usize,
    seed: u64,
    margin: f64,
) -> Result<(LabeledDataset, Vec<f64>), DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    let mut w_true: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
    let norm: f64 = w_true.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for w in w_true.iter_mut() {
            *w /= norm;
        }
    }
    let mut features = vec![0.0f64; n * d];
    for x in features.iter_mut() {
        *x = normal.sample(&mut rng);
    }
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let dot: f64 =
            features[i * d..(i + 1) * d].iter().zip(&w_true).map(|(x, w)| x * w).sum();
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        let noise = (u / (1.0 - u)).ln();
        labels.push(if margin * dot + noise > 0.0 { 1.0 } else { -1.0 });
    }
    let ds = LabeledDataset::new(features.into(), labels, d, None)?;
    Ok((ds, w_true))
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"QDSNAP01";

/// Write a dataset to a binary snapshot: magic, shape, normalization
/// record, labels, features, and a trailing SHA-256 of everything before
/// it. Loading verifies the hash, so silent corruption cannot pass.
pub fn save_snapshot(ds: &LabeledDataset, path: &Path) -> Result<(), DataError> {
    let mut body: Vec<u8> = Vec::new();
    body.extend_from_slice(SNAPSHOT_MAGIC);
    body.write_u64::<LittleEndian>(ds.n as u64).unwrap();
    body.write_u64::<LittleEndian>(ds.d as u64).unwrap();
    match &ds.normalization {
        Some(nz) => {
            body.push(1);
            for &m in &nz.mean {
                body.write_f64::<LittleEndian>(m).unwrap();
            }
            for &s in &nz.scale {
                body.write_f64::<LittleEndian>(s).unwrap();
            }
        }
        None => body.push(0),
    }
    for &y in &ds.labels {
        body.write_f64::<LittleEndian>(y).unwrap();
    }
    for &x in ds.features.iter() {
        body.write_f64::<LittleEndian>(x).unwrap();
    }
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    write_atomic(path, &body)
}

/// Read back a [`save_snapshot`] file, verifying magic and content hash.
pub fn load_snapshot(path: &Path) -> Result<LabeledDataset, DataError> {
    let bytes = read_all(path)?;
    let bad_header = || DataError::BadSnapshotHeader { path: path.display().to_string() };
    if bytes.len() < SNAPSHOT_MAGIC.len() + 17 + 32 || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(bad_header());
    }
    let (body, stored_hash) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != stored_hash {
        return Err(DataError::SnapshotHashMismatch { path: path.display().to_string() });
    }
    let mut cur = &body[8..];
    let n = cur.read_u64::<LittleEndian>().map_err(|e| io_err(path, e))? as usize;
    let d = cur.read_u64::<LittleEndian>().map_err(|e| io_err(path, e))? as usize;
    let has_norm = cur.read_u8().map_err(|e| io_err(path, e))?;
    let mut read_vec = |len: usize| -> Result<Vec<f64>, DataError> {
        let mut v = vec![0.0f64; len];
        cur.read_f64_into::<LittleEndian>(&mut v).map_err(|e| io_err(path, e))?;
        Ok(v)
    };
    let normalization = match has_norm {
        0 => None,
        1 => {
            let mean = read_vec(d)?;
            let scale = read_vec(d)?;
            Some(Normalization { mean, scale })
        }
        _ => return Err(bad_header()),
    };
    let labels = read_vec(n)?;
    let features = read_vec(n * d)?;
    if !cur.is_empty() {
        return Err(DataError::TrailingBytes {
            path: path.display().to_string(),
            extra: cur.len(),
        });
    }
    LabeledDataset::new(features.into(), labels, d, normalization)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const POWER_HEADER: &str = "Date;Time;Global_active_power;Global_reactive_power;Voltage;\
Global_intensity;Sub_metering_1;Sub_metering_2;Sub_metering_3";

    fn write_power_csv(rows: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{POWER_HEADER}").unwrap();
        for r in rows {
            writeln!(f, "{r}").unwrap();
        }
        f
    }

    #[test]
    fn power_loader_shapes_filters_and_labels() {
        let f = write_power_csv(&[
            "16/12/2006;17:24:00;4.216;0.418;234.840;18.400;0.000;1.000;17.000",
            "16/12/2006;17:25:00;5.360;0.436;233.630;23.000;0.000;1.000;16.000",
            "16/12/2006;17:26:00;?;0.498;233.290;23.000;0.000;2.000;17.000",
            "16/12/2006;17:27:00;3.666;0.528;235.680;15.800;0.000;1.000;17.000",
            "16/12/2006;bogus;1.0;0.1;230.0;5.0;0.0;0.0;0.0",
            "16/12/2006;18:02:00;1.044;0.152;242.730;4.400;0.000;1.000;0.000",
        ]);
        let (ds, report) = load_power_csv(f.path(), None, 0).unwrap();
        assert_eq!(ds.d(), 9);
        assert_eq!(ds.n(), 4); // '?' row and bad-time row dropped
        assert_eq!(report.rows_read, 6);
        assert_eq!(report.rows_skipped, 2);
        // kept targets: 4.216, 5.360, 3.666, 1.044 -> median (3.666+4.216)/2 = 3.941
        assert_relative_eq!(report.label_median, 3.941, max_relative = 1e-12);
        assert_eq!(ds.labels(), &[1.0, 1.0, -1.0, -1.0]);
        // bias column stays exactly 1 and is reported constant
        assert!(ds.row(0)[8] == 1.0 && ds.row(3)[8] == 1.0);
        assert!(report.constant_columns.contains(&8));
        // Sub_metering_1 (all zeros) and Sub_metering_2 (all ones) are
        // constant in the kept rows too
        assert!(report.constant_columns.contains(&3));
        assert!(report.constant_columns.contains(&4));
        // normalized columns have mean ~0 and unit variance
        let nz = ds.normalization().unwrap();
        for j in [0usize, 1, 2, 5, 6, 7] {
            let mean: f64 = (0..4).map(|i| ds.row(i)[j]).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12, "column {j} mean {mean}");
            let var: f64 = (0..4).map(|i| ds.row(i)[j].powi(2)).sum::<f64>() / 4.0;
            assert_relative_eq!(var, 1.0, max_relative = 1e-9);
            assert!(nz.scale[j] > 0.0);
        }
    }

    #[test]
    fn power_loader_normalization_is_invertible() {
        let f = write_power_csv(&[
            "1/1/2007;00:10:00;1.5;0.1;240.1;6.0;0.0;1.0;18.0",
            "1/1/2007;05:30:00;2.5;0.3;241.5;7.5;0.0;2.0;19.0",
            "1/1/2007;13:45:00;0.5;0.2;238.9;2.2;0.0;0.0;17.0",
        ]);
        let (ds, _) = load_power_csv(f.path(), None, 0).unwrap();
        let nz = ds.normalization().unwrap();
        // column 1 = Voltage; reconstruct raw values
        let raws = [240.1, 241.5, 238.9];
        for (i, want) in raws.iter().enumerate() {
            let raw = ds.row(i)[1] * nz.scale[1] + nz.mean[1];
            assert!((raw - want).abs() < 1e-9);
        }
        // hour column (6): raw hours 0, 5, 13
        let hours = [0.0, 5.0, 13.0];
        for (i, want) in hours.iter().enumerate() {
            let raw = ds.row(i)[6] * nz.scale[6] + nz.mean[6];
            assert!((raw - want).abs() < 1e-9);
        }
    }

    #[test]
    fn power_loader_rejects_unusable_files() {
        let f = write_power_csv(&["16/12/2006;17:24:00;?;0.4;234.8;18.4;0.0;1.0;17.0"]);
        assert!(matches!(load_power_csv(f.path(), None, 0), Err(DataError::Empty)));

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "Date;Time;SomethingElse").unwrap();
        assert!(matches!(
            load_power_csv(g.path(), None, 0),
            Err(DataError::MissingColumn("Global_active_power"))
        ));
    }

    #[test]
    fn power_loader_subsample_is_deterministic() {
        let rows: Vec<String> = (0..20)
            .map(|i| format!("1/1/2007;{:02}:00:00;{}.0;0.1;240.0;5.0;0.0;1.0;2.0", i % 24, i))
            .collect();
        let row_refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let f = write_power_csv(&row_refs);
        let (a, ra) = load_power_csv(f.path(), Some(7), 42).unwrap();
        let (b, _) = load_power_csv(f.path(), Some(7), 42).unwrap();
        assert_eq!(a.n(), 7);
        assert_eq!(ra.subsampled_to, Some(7));
        assert_eq!(a.content_hash(), b.content_hash());
        let (c, _) = load_power_csv(f.path(), Some(7), 43).unwrap();
        assert_ne!(a.content_hash(), c.content_hash(), "different seed, different rows");
        // asking for more rows than exist keeps everything
        let (d, rd) = load_power_csv(f.path(), Some(100), 1).unwrap();
        assert_eq!(d.n(), 20);
        assert_eq!(rd.subsampled_to, None);
    }

    fn tiny_mnist() -> MnistData {
        // 3 images of 2x2 pixels
        MnistData {
            images: vec![
                0.0,
                1.0,
                128.0 / 255.0,
                64.0 / 255.0,
                1.0,
                1.0,
                0.0,
                0.0,
                10.0 / 255.0,
                20.0 / 255.0,
                30.0 / 255.0,
                40.0 / 255.0,
            ]
            .into(),
            labels: vec![9, 0, 4],
            n: 3,
            rows: 2,
            cols: 2,
        }
    }

    #[test]
    fn mnist_round_trip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("images.idx");
        let lbl = dir.path().join("labels.idx");
        write_mnist_idx(&tiny_mnist(), &img, &lbl).unwrap();
        let loaded = load_mnist_idx(&img, &lbl).unwrap();
        assert_eq!(loaded.n, 3);
        assert_eq!(loaded.dim(), 4);
        assert_eq!(loaded.labels, vec![9, 0, 4]);
        assert_relative_eq!(loaded.images[2], 128.0 / 255.0, max_relative = 1e-15);

        // serialize again: byte-identical files
        let img2 = dir.path().join("images2.idx");
        let lbl2 = dir.path().join("labels2.idx");
        write_mnist_idx(&loaded, &img2, &lbl2).unwrap();
        assert_eq!(std::fs::read(&img).unwrap(), std::fs::read(&img2).unwrap());
        assert_eq!(std::fs::read(&lbl).unwrap(), std::fs::read(&lbl2).unwrap());
    }

    #[test]
    fn mnist_loader_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("i.idx");
        let lbl = dir.path().join("l.idx");
        write_mnist_idx(&tiny_mnist(), &img, &lbl).unwrap();

        // wrong magic
        let mut bytes = std::fs::read(&img).unwrap();
        bytes[3] = 0;
        let bad = dir.path().join("bad.idx");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_mnist_idx(&bad, &lbl), Err(DataError::BadMagic { .. })));

        // truncated payload
        let bytes = std::fs::read(&img).unwrap();
        std::fs::write(&bad, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(load_mnist_idx(&bad, &lbl), Err(DataError::Truncated { .. })));

        // count mismatch
        let mut lbl_bytes = std::fs::read(&lbl).unwrap();
        lbl_bytes[7] = 2; // claim 2 labels
        lbl_bytes.truncate(8 + 2);
        std::fs::write(&bad, &lbl_bytes).unwrap();
        assert!(matches!(load_mnist_idx(&img, &bad), Err(DataError::CountMismatch { .. })));
    }

    #[test]
    fn binarize_marks_only_the_digit() {
        assert_eq!(binarize_one_vs_all(&[1, 2, 3], 9), vec![-1.0, -1.0, -1.0]);
        assert_eq!(binarize_one_vs_all(&[9, 2, 9], 9), vec![1.0, -1.0, 1.0]);
    }

    #[test]
    fn contiguous_partition_sizes() {
        let shards = partition(10, 3, PartitionPolicy::Contiguous, 0).unwrap();
        assert_eq!(shards[0], vec![0, 1, 2, 3]);
        assert_eq!(shards[1], vec![4, 5, 6]);
        assert_eq!(shards[2], vec![7, 8, 9]);
        // one worker gets everything
        let one = partition(4, 1, PartitionPolicy::Contiguous, 0).unwrap();
        assert_eq!(one, vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn round_robin_partition_interleaves() {
        let shards = partition(7, 3, PartitionPolicy::RoundRobin, 0).unwrap();
        assert_eq!(shards[0], vec![0, 3, 6]);
        assert_eq!(shards[1], vec![1, 4]);
        assert_eq!(shards[2], vec![2, 5]);
    }

    #[test]
    fn partition_rejects_bad_worker_counts() {
        assert!(matches!(
            partition(3, 0, PartitionPolicy::Contiguous, 0),
            Err(DataError::BadWorkerCount { .. })
        ));
        assert!(matches!(
            partition(3, 4, PartitionPolicy::Contiguous, 0),
            Err(DataError::BadWorkerCount { .. })
        ));
    }

    #[test]
    fn synthesize_is_deterministic_and_margin_separates() {
        let (a, wa) = synthesize(300, 5, 7, 8.0).unwrap();
        let (b, wb) = synthesize(300, 5, 7, 8.0).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(wa, wb);
        assert_relative_eq!(
            wa.iter().map(|x| x * x).sum::<f64>(),
            1.0,
            max_relative = 1e-12
        );
        // wide margin: labels mostly agree with the linear rule
        let agree = (0..a.n())
            .filter(|&i| {
                let dot: f64 = a.row(i).iter().zip(&wa).map(|(x, w)| x * w).sum();
                (dot > 0.0) == (a.labels()[i] > 0.0)
            })
            .count();
        assert!(agree >= 250, "agreement {agree}/300 too low for margin 8");
        // and both classes are present
        assert!(a.labels().iter().any(|&y| y > 0.0));
        assert!(a.labels().iter().any(|&y| y < 0.0));
    }

    #[test]
    fn snapshot_round_trips_and_detects_corruption() {
        let f = write_power_csv(&[
            "1/1/2007;00:10:00;1.5;0.1;240.1;6.0;0.0;1.0;18.0",
            "1/1/2007;05:30:00;2.5;0.3;241.5;7.5;0.0;2.0;19.0",
            "1/1/2007;13:45:00;0.5;0.2;238.9;2.2;0.0;0.0;17.0",
        ]);
        let (ds, _) = load_power_csv(f.path(), None, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let snap = dir.path().join("power.snap");
        save_snapshot(&ds, &snap).unwrap();
        let back = load_snapshot(&snap).unwrap();
        assert_eq!(back.content_hash(), ds.content_hash());
        assert_eq!(back.normalization(), ds.normalization());

        // flip one payload byte: the hash check must catch it
        let mut bytes = std::fs::read(&snap).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xFF;
        std::fs::write(&snap, &bytes).unwrap();
        assert!(matches!(
            load_snapshot(&snap),
            Err(DataError::SnapshotHashMismatch { .. })
        ));
    }

    #[test]
    fn content_hash_tracks_content() {
        let (a, _) = synthesize(10, 3, 1, 2.0).unwrap();
        let mut labels = a.labels().to_vec();
        labels[0] = -labels[0];
        let b = a.with_labels(labels).unwrap();
        assert_ne!(a.content_hash(), b.content_hash());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            /// any (n, workers, policy) partition is disjoint and covers 0..n
            #[test]
            fn partitions_are_disjoint_and_cover(
                n in 1usize..200,
                workers_frac in 0.0f64..1.0,
                round_robin in proptest::bool::ANY,
            ) {
                let workers = 1 + ((n - 1) as f64 * workers_frac) as usize;
                let policy = if round_robin {
                    PartitionPolicy::RoundRobin
                } else {
                    PartitionPolicy::Contiguous
                };
                let shards = partition(n, workers, policy, 0).unwrap();
                prop_assert_eq!(shards.len(), workers);
                let mut seen = vec![false; n];
                for shard in &shards {
                    prop_assert!(!shard.is_empty());
                    for &i in shard {
                        prop_assert!(!seen[i], "index {} duplicated", i);
                        seen[i] = true;
                    }
                }
                prop_assert!(seen.iter().all(|&s| s));
                // shard sizes within one of each other
                let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
                let min = *sizes.iter().min().unwrap();
                let max = *sizes.iter().max().unwrap();
                prop_assert!(max - min <= 1);
            }
        }
    }
}

//! Two-experiment data generation: a basic run with fixed bandwidth-25 gains
//! records the observer transient as the plant's signature, and a target run
//! with random eigenvalues from another initial state supplies the criteria.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{gains_from_eigenvalues, EigenTriple};
use crate::plant::{M1dParams, NoiseModel, NsParams, PlantKind, PlantSpec};
use crate::sim::{labeled_criteria, simulate, CriteriaVector, SimConfig, SimError, TransientRecorder};

/// Rows of the decimated basic-experiment transient.
pub const TRANSIENT_ROWS: usize = 1000;
/// Eigenvalue of the basic experiment observer.
pub const BASIC_EIGENVALUE: f64 = -25.0;
/// Range of every sampled eigenvalue.
pub const LAMBDA_RANGE: (f64, f64) = (-80.0, -1.0);
/// Guard for the logarithm of the NS IACD normalization.
pub const LOG_EPS: f64 = 1e-9;
/// Attempts per record before generation gives up on a diverging draw.
const MAX_ATTEMPTS: u64 = 64;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("bad transient encoding: {0}")]
    Transient(String),
    #[error("record {index} of split {split} diverged in every one of {MAX_ATTEMPTS} draws")]
    Exhausted { split: Split, index: usize },
    #[error("split counts must be at least 1")]
    EmptySplit,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Uniform sampling ranges of one plant kind.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KindRanges {
    pub params: &'static [(&'static str, f64, f64)],
    pub sigma_n: (f64, f64),
    pub x: (f64, f64),
    pub lambda: (f64, f64),
}

const NS_PARAMS: [(&str, f64, f64); 6] = [
    ("a1", 0.0, 2.0),
    ("a2", 0.0, 1.0),
    ("a3", 0.0, 2.0),
    ("a4", 0.5, 1.5),
    ("a5", 0.0, 0.3),
    ("a6", 0.0, 2.0),
];

const M1D_PARAMS: [(&str, f64, f64); 7] = [
    ("b1", -20.0, -4.0),
    ("b2", -30.0, -10.0),
    ("b3", 0.0, 0.5),
    ("b4", 0.0, 0.5),
    ("b5", 0.0, 2.0),
    ("b6", 0.0, 0.5),
    ("b7", 0.0, 2.0),
];

pub fn ranges(kind: PlantKind) -> KindRanges {
    match kind {
        PlantKind::Ns => KindRanges {
            params: &NS_PARAMS,
            sigma_n: (0.0, 0.01),
            x: (-1.0, 1.0),
            lambda: LAMBDA_RANGE,
        },
        PlantKind::M1d => KindRanges {
            params: &M1D_PARAMS,
            sigma_n: (0.0, 0.02),
            x: (-std::f64::consts::PI, std::f64::consts::PI),
            lambda: LAMBDA_RANGE,
        },
    }
}

/// Everything that defines one dataset record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub plant: PlantSpec<f64>,
    pub x_test0: [f64; 2],
    pub x0: [f64; 2],
    pub lambda: EigenTriple<f64>,
    pub split: Split,
    pub sample_seed: u64,
}

impl SampleSpec {
    /// Noise seed of the basic experiment.
    pub fn basic_seed(&self) -> u64 {
        mix(self.sample_seed ^ 0xB5)
    }

    /// Noise seed of the target experiment, independent of the basic one.
    pub fn target_seed(&self) -> u64 {
        mix(self.sample_seed ^ 0x7A)
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-record seed from the master seed, split, record index and attempt.
pub fn derive_seed(master: u64, split: Split, index: usize, attempt: u64) -> u64 {
    mix(mix(mix(master) ^ split.tag()) ^ index as u64).wrapping_add(mix(attempt))
}

/// Draws a plant, noise level, initial states and eigenvalues uniformly over
/// the ranges of `kind`.
pub fn sample_spec(kind: PlantKind, split: Split, seed: u64) -> SampleSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = ranges(kind);
    let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let params: Vec<f64> = r.params.iter().map(|&(_, lo, hi)| draw((lo, hi))).collect();
    let sigma = draw(r.sigma_n);
    let x_test0 = [draw(r.x), draw(r.x)];
    let x0 = [draw(r.x), draw(r.x)];
    let lam = [draw(r.lambda), draw(r.lambda), draw(r.lambda)];
    let noise = NoiseModel::new(sigma, 0);
    let plant = match kind {
        PlantKind::Ns => PlantSpec::ns(NsParams::new(params.try_into().unwrap()), noise),
        PlantKind::M1d => PlantSpec::m1d(M1dParams::new(params.try_into().unwrap()), noise),
    };
    // the upper end -1 is reachable by the inclusive draw, so new() cannot fail
    let lambda = EigenTriple::new(lam[0], lam[1], lam[2]).expect("sampled eigenvalues are negative");
    SampleSpec {
        plant,
        x_test0,
        x0,
        lambda,
        split,
        sample_seed: seed,
    }
}

/// Decimated observer transient of the basic experiment, `record_hz` rows per second.
pub fn basic_experiment(plant: &PlantSpec<f64>, x_test0: [f64; 2], seed: u64) -> Result<Vec<[f64; 3]>, SimError> {
    let gains = gains_from_eigenvalues(&EigenTriple::repeated(-BASIC_EIGENVALUE)?)?;
    let cfg = SimConfig::new(x_test0, seed);
    let mut rec = TransientRecorder::new(cfg.decimation());
    simulate(plant, &gains, &cfg, &mut rec)?;
    Ok(rec.rows)
}

/// Criteria of the target experiment; divergence saturates.
pub fn target_experiment(
    plant: &PlantSpec<f64>,
    lambda: &EigenTriple<f64>,
    x0: [f64; 2],
    seed: u64,
) -> Result<CriteriaVector<f64>, SimError> {
    labeled_criteria(plant, &gains_from_eigenvalues(lambda)?, &SimConfig::new(x0, seed))
}

pub fn run_basic_experiment(sample: &SampleSpec) -> Result<Vec<[f64; 3]>, SimError> {
    basic_experiment(&sample.plant, sample.x_test0, sample.basic_seed())
}

pub fn run_target_experiment(sample: &SampleSpec) -> Result<CriteriaVector<f64>, SimError> {
    target_experiment(&sample.plant, &sample.lambda, sample.x0, sample.target_seed())
}

/// Output normalization to `[0, 1]`.
pub fn normalize_criteria(raw: &CriteriaVector<f64>, kind: PlantKind) -> [f64; 4] {
    let v = match kind {
        PlantKind::Ns => [
            raw.iae / 3.7,
            raw.iac / 80.0,
            ((raw.iacd - 4.0).max(LOG_EPS).ln() - 3.0) / 8.0,
            raw.iadee / 50.0,
        ],
        PlantKind::M1d => [raw.iae / 8.0, raw.iac / 10.0, raw.iacd / 4000.0, raw.iadee / 100.0],
    };
    v.map(|x| x.clamp(0.0, 1.0))
}

/// Inverse of [`normalize_criteria`] on its unclipped range.
pub fn denormalize_criteria(norm: &[f64; 4], kind: PlantKind) -> CriteriaVector<f64> {
    let [a, b, c, d] = *norm;
    match kind {
        PlantKind::Ns => CriteriaVector::from_array([a * 3.7, b * 80.0, 4.0 + (8.0 * c + 3.0).exp(), d * 50.0]),
        PlantKind::M1d => CriteriaVector::from_array([a * 8.0, b * 10.0, c * 4000.0, d * 100.0]),
    }
}

/// Row-major little-endian `f64` bytes of a transient, base64 encoded.
pub fn encode_transient(rows: &[[f64; 3]]) -> String {
    let mut bytes = Vec::with_capacity(rows.len() * 24);
    for r in rows {
        for v in r {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    B64.encode(bytes)
}

pub fn decode_transient(text: &str) -> Result<Vec<[f64; 3]>, DatasetError> {
    let bytes = B64.decode(text).map_err(|e| DatasetError::Transient(e.to_string()))?;
    if bytes.len() % 24 != 0 {
        return Err(DatasetError::Transient(format!("{} bytes is not a whole number of rows", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(24)
        .map(|row| {
            let f = |i: usize| f64::from_le_bytes(row[i * 8..i * 8 + 8].try_into().unwrap());
            [f(0), f(1), f(2)]
        })
        .collect())
}

mod transient_b64 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(rows: &[[f64; 3]], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::encode_transient(rows))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[f64; 3]>, D::Error> {
        let text = String::deserialize(d)?;
        super::decode_transient(&text).map_err(D::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub sample: SampleSpec,
    #[serde(with = "transient_b64")]
    pub basic_transient: Vec<[f64; 3]>,
    pub criteria_raw: CriteriaVector<f64>,
    pub criteria_norm: [f64; 4],
}

/// Builds one record, redrawing when the basic experiment diverges.
pub fn generate_record(kind: PlantKind, split: Split, index: usize, master: u64) -> Result<DatasetRecord, DatasetError> {
    for attempt in 0..MAX_ATTEMPTS {
        let sample = sample_spec(kind, split, derive_seed(master, split, index, attempt));
        let transient = match run_basic_experiment(&sample) {
            Ok(t) => t,
            Err(SimError::Diverged { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let raw = run_target_experiment(&sample)?;
        return Ok(DatasetRecord {
            sample,
            basic_transient: transient,
            criteria_norm: normalize_criteria(&raw, kind),
            criteria_raw: raw,
        });
    }
    Err(DatasetError::Exhausted { split, index })
}

/// Records `0..count` of a split, generated in parallel and returned in index order.
pub fn generate_split(kind: PlantKind, split: Split, count: usize, master: u64) -> Result<Vec<DatasetRecord>, DatasetError> {
    (0..count)
        .into_par_iter()
        .map(|i| generate_record(kind, split, i, master))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 4000,
            val: 1000,
            test: 600,
        }
    }
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Distribution summary of one criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionSummary {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
    /// Counts of the normalized value in ten equal bins over `[0, 1]`.
    pub histogram: [usize; 10],
}

pub const CRITERION_NAMES: [&str; 4] = ["iae", "iac", "iacd", "iadee"];

pub fn summarize(records: &[DatasetRecord]) -> BTreeMap<String, CriterionSummary> {
    let mut out = BTreeMap::new();
    for (c, name) in CRITERION_NAMES.iter().enumerate() {
        let mut raw: Vec<f64> = records.iter().map(|r| r.criteria_raw.to_array()[c]).collect();
        raw.sort_by(f64::total_cmp);
        let n = raw.len();
        let median = match n {
            0 => f64::NAN,
            _ if n % 2 == 1 => raw[n / 2],
            _ => 0.5 * (raw[n / 2 - 1] + raw[n / 2]),
        };
        let mut histogram = [0usize; 10];
        for r in records {
            let v = r.criteria_norm[c];
            histogram[((v * 10.0) as usize).min(9)] += 1;
        }
        out.insert(
            name.to_string(),
            CriterionSummary {
                min: raw.first().copied().unwrap_or(f64::NAN),
                median,
                mean: raw.iter().sum::<f64>() / n.max(1) as f64,
                max: raw.last().copied().unwrap_or(f64::NAN),
                histogram,
            },
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetMeta {
    pub kind: PlantKind,
    pub master_seed: u64,
    pub counts: SplitCounts,
    pub ranges: KindRanges,
    pub basic_eigenvalue: f64,
    pub code_version: &'static str,
    pub summary: BTreeMap<String, BTreeMap<String, CriterionSummary>>,
}

pub fn kind_prefix(kind: PlantKind) -> String {
    kind.as_str().to_lowercase()
}

pub fn split_path(dir: &Path, kind: PlantKind, split: Split) -> PathBuf {
    dir.join(format!("{}_{}.jsonl", kind_prefix(kind), split))
}

pub fn meta_path(dir: &Path, kind: PlantKind) -> PathBuf {
    dir.join(format!("{}_meta.json", kind_prefix(kind)))
}

pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_records(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

/// Generates all three splits into `dir` and writes the meta file. Returns the
/// paths written, meta last.
pub fn generate_dataset(dir: &Path, kind: PlantKind, counts: SplitCounts, master: u64) -> Result<Vec<PathBuf>, DatasetError> {
    if Split::ALL.iter().any(|s| counts.get(*s) == 0) {
        return Err(DatasetError::EmptySplit);
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut paths = Vec::new();
    let mut summary = BTreeMap::new();
    for split in Split::ALL {
        let records = generate_split(kind, split, counts.get(split), master)?;
        let path = split_path(dir, kind, split);
        write_records(&path, &records)?;
        summary.insert(split.to_string(), summarize(&records));
        paths.push(path);
    }
    let meta = DatasetMeta {
        kind,
        master_seed: master,
        counts,
        ranges: ranges(kind),
        basic_eigenvalue: BASIC_EIGENVALUE,
        code_version: env!("CARGO_PKG_VERSION"),
        summary,
    };
    let path = meta_path(dir, kind);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    paths.push(path);
    Ok(paths)
}

//! Per-command JSON configs. Relative paths inside a config resolve against
//! the directory of the config file.

use std::path::{Path, PathBuf};

use esotune::control::EigenTriple;
use esotune::dataset::SplitCounts;
use esotune::estimator::{EstimatorConfig, TrainConfig};
use esotune::plant::{PlantKind, PlantSpec};
use esotune::sim::{CriterionWeights, SimConfig};
use esotune::tuner::{GainGrid, Selector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Reads a config, naming the offending field path on failure.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        CliError::Config(format!("{}: field `{}`: {}", path.display(), field, e.inner()))
    })
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn one() -> usize {
    1
}
fn three() -> usize {
    3
}
fn five() -> usize {
    5
}
fn default_omegas() -> Vec<f64> {
    (1..=80).map(f64::from).collect()
}
fn default_x_test0() -> [f64; 2] {
    [0.2, 0.1]
}
fn hundred() -> usize {
    100
}
fn twenty() -> usize {
    20
}
fn suite_base() -> u64 {
    1000
}
fn both_kinds() -> Vec<PlantKind> {
    vec![PlantKind::Ns, PlantKind::M1d]
}

/// Observer gains of a single run.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverSpec {
    Eigenvalues([f64; 3]),
    Bandwidth(f64),
}

impl ObserverSpec {
    pub fn triple(&self) -> Result<EigenTriple<f64>, CliError> {
        Ok(match *self {
            ObserverSpec::Eigenvalues([a, b, c]) => EigenTriple::new(a, b, c)?,
            ObserverSpec::Bandwidth(w) => EigenTriple::repeated(w)?,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub plant: PlantSpec<f64>,
    pub sim: SimConfig<f64>,
    pub observer: ObserverSpec,
    #[serde(default)]
    pub weights: Option<CriterionWeights<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub plant: PlantSpec<f64>,
    pub sim: SimConfig<f64>,
    #[serde(default = "default_omegas")]
    pub omegas: Vec<f64>,
    /// Noise realizations per bandwidth, seeds `seed .. seed + noise_seeds`.
    #[serde(default = "five")]
    pub noise_seeds: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDatasetConfig {
    pub kind: PlantKind,
    #[serde(default)]
    pub counts: SplitCounts,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub kind: PlantKind,
    pub dataset_dir: PathBuf,
    #[serde(default = "EstimatorConfig::desk")]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub training: TrainConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub plant: PlantSpec<f64>,
    pub sim: SimConfig<f64>,
    pub selector: Selector,
    pub weights: CriterionWeights<f64>,
    #[serde(default)]
    pub grid: GainGrid,
    #[serde(default = "three")]
    pub noise_seeds: usize,
    #[serde(default)]
    pub seed: u64,
    /// Initial state of the basic experiment (network selector).
    #[serde(default = "default_x_test0")]
    pub x_test0: [f64; 2],
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Draws of the random selector.
    #[serde(default = "hundred")]
    pub trials: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    pub plant: PlantSpec<f64>,
    pub sim: SimConfig<f64>,
    pub weights: CriterionWeights<f64>,
    #[serde(default)]
    pub grid: GainGrid,
    #[serde(default = "three")]
    pub noise_seeds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_x_test0")]
    pub x_test0: [f64; 2],
    #[serde(default)]
    pub model: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default = "both_kinds")]
    pub kinds: Vec<PlantKind>,
    #[serde(default = "twenty")]
    pub configs: usize,
    #[serde(default = "three")]
    pub noise_seeds: usize,
    #[serde(default = "suite_base")]
    pub base_seed: u64,
}

/// Either a single run (`plant`, `sim`, `observer`) or the randomized `suite`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckBoundsConfig {
    #[serde(default)]
    pub plant: Option<PlantSpec<f64>>,
    #[serde(default)]
    pub sim: Option<SimConfig<f64>>,
    #[serde(default)]
    pub observer: Option<ObserverSpec>,
    #[serde(default)]
    pub suite: Option<SuiteConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloFileConfig {
    pub kind: PlantKind,
    #[serde(default = "hundred")]
    pub trials: usize,
    pub weights: CriterionWeights<f64>,
    #[serde(default)]
    pub grid: GainGrid,
    #[serde(default = "one")]
    pub noise_seeds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub with_ideal: bool,
}

pub fn seed_list(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(i)).collect()
}

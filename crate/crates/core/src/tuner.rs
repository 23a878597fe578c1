//! Observer eigenvalue selection over a quantized grid.
//!
//! Candidates are scored with `J` computed either from network predictions or
//! from direct simulation averaged over noise seeds. Grid evaluation runs in
//! parallel and results are kept in grid order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{gains_from_eigenvalues, ControlError, EigenTriple};
use crate::dataset::{basic_experiment, sample_spec, SampleSpec, Split};
use crate::estimator::{EstimatorError, EstimatorModel};
use crate::plant::{PlantKind, PlantSpec};
use crate::sim::{cost, run_criteria, CriteriaVector, CriterionWeights, SimConfig, SimError};

/// Relative tolerance under which two costs count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;
/// Per-point tables above this size are left out of reports.
pub const REPORT_POINT_LIMIT: usize = 10_000;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("grid needs at least {min} points per axis, got {got}")]
    GridTooSmall { min: usize, got: usize },
    #[error("empty candidate set")]
    EmptyGrid,
    #[error("every candidate diverged")]
    AllDiverged,
    #[error("{0}")]
    InvalidInput(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Nn,
    Ideal,
    Bandwidth,
    Random,
}

/// Uniform eigenvalue grid `-1 - 79 s`, `s = 0, 1/(count-1), ..., 1`, on each axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainGrid {
    pub count: usize,
    /// Keep one representative (ascending) per unordered triple.
    pub canonical: bool,
}

impl Default for GainGrid {
    fn default() -> Self {
        Self {
            count: 21,
            canonical: true,
        }
    }
}

impl GainGrid {
    pub fn new(count: usize, canonical: bool) -> Result<Self, TuneError> {
        if count < 2 {
            return Err(TuneError::GridTooSmall { min: 2, got: count });
        }
        Ok(Self { count, canonical })
    }

    /// Axis values from -1 down to -80.
    pub fn axis(&self) -> Vec<f64> {
        let n = (self.count - 1) as f64;
        (0..self.count).map(|i| -1.0 - 79.0 * (i as f64 / n)).collect()
    }

    /// Bandwidths `1 + 79 s` on the same quantization.
    pub fn omegas(&self) -> Vec<f64> {
        self.axis().into_iter().map(|v| -v).collect()
    }

    pub fn point_count(&self) -> usize {
        let n = self.count;
        if self.canonical {
            n * (n + 1) * (n + 2) / 6
        } else {
            n * n * n
        }
    }
}

/// All grid triples in lexicographic index order. Canonical grids list
/// each unordered triple once, in ascending order.
pub fn build_grid(grid: &GainGrid) -> Result<Vec<EigenTriple<f64>>, TuneError> {
    if grid.count < 2 {
        return Err(TuneError::GridTooSmall { min: 2, got: grid.count });
    }
    let axis = grid.axis();
    let n = grid.count;
    let mut out = Vec::with_capacity(grid.point_count());
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if grid.canonical && !(i >= j && j >= k) {
                    continue;
                }
                // index i >= j >= k means axis[i] <= axis[j] <= axis[k]
                out.push(EigenTriple::new(axis[i], axis[j], axis[k])?);
            }
        }
    }
    Ok(out)
}

/// Bandwidth-parametrized candidates `(-w, -w, -w)`.
pub fn bandwidth_grid(omegas: &[f64]) -> Result<Vec<EigenTriple<f64>>, TuneError> {
    omegas.iter().map(|&w| Ok(EigenTriple::repeated(w)?)).collect()
}

/// Criteria of one candidate, `None` when a run diverged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointEval {
    pub lambda: EigenTriple<f64>,
    pub criteria: Option<CriteriaVector<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPoint {
    pub lambda: EigenTriple<f64>,
    pub j: f64,
    pub criteria: CriteriaVector<f64>,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub selector: Selector,
    pub lambda_star: EigenTriple<f64>,
    pub j_star: f64,
    pub criteria_star: CriteriaVector<f64>,
    pub points: Vec<ScoredPoint>,
}

/// Mean simulated criteria over `seeds`; `None` if any realization diverges.
pub fn simulate_point(spec: &PlantSpec<f64>, cfg: &SimConfig<f64>, lambda: &EigenTriple<f64>, seeds: &[u64]) -> Result<Option<CriteriaVector<f64>>, TuneError> {
    if seeds.is_empty() {
        return Err(TuneError::InvalidInput("at least one noise seed is required".into()));
    }
    let gains = gains_from_eigenvalues(lambda)?;
    let mut sum = [0.0; 4];
    for &seed in seeds {
        match run_criteria(spec, &gains, &cfg.with_seed(seed)) {
            Ok(c) => {
                for (s, v) in sum.iter_mut().zip(c.to_array()) {
                    *s += v;
                }
            }
            Err(SimError::Diverged { .. }) => return Ok(None),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(CriteriaVector::from_array(sum.map(|v| v / seeds.len() as f64))))
}

/// Direct-simulation criteria of every candidate.
pub fn evaluate_grid(spec: &PlantSpec<f64>, cfg: &SimConfig<f64>, grid: &[EigenTriple<f64>], seeds: &[u64]) -> Result<Vec<PointEval>, TuneError> {
    spec.noise.validate().map_err(SimError::Plant)?;
    cfg.validate()?;
    grid.par_iter()
        .map(|l| {
            Ok(PointEval {
                lambda: *l,
                criteria: simulate_point(spec, cfg, l, seeds)?,
            })
        })
        .collect()
}

/// Index of the minimum of `j` over the allowed points; near-ties go to the
/// largest eigenvalue sum (slowest observer), then to the earliest index.
pub fn argmin_with_tiebreak(j: &[f64], sums: &[f64], allowed: &[bool]) -> Option<usize> {
    let min = j
        .iter()
        .zip(allowed)
        .filter(|(v, &a)| a && v.is_finite())
        .map(|(v, _)| *v)
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let tol = TIE_TOLERANCE * min.abs();
    let mut best: Option<usize> = None;
    for i in 0..j.len() {
        if !allowed[i] || !(j[i] <= min + tol) {
            continue;
        }
        match best {
            Some(b) if sums[i] <= sums[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Scores evaluated points with `weights` and picks the best.
pub fn select_from(evals: &[PointEval], weights: &CriterionWeights<f64>, selector: Selector) -> Result<TuneResult, TuneError> {
    weights.validate()?;
    if evals.is_empty() {
        return Err(TuneError::EmptyGrid);
    }
    let points: Vec<ScoredPoint> = evals
        .iter()
        .map(|e| {
            let (criteria, diverged) = match e.criteria {
                Some(c) => (c, false),
                None => (CriteriaVector::diverged(), true),
            };
            ScoredPoint {
                lambda: e.lambda,
                j: cost(&criteria, weights),
                criteria,
                diverged,
            }
        })
        .collect();
    finish(points, selector)
}

fn finish(points: Vec<ScoredPoint>, selector: Selector) -> Result<TuneResult, TuneError> {
    let j: Vec<f64> = points.iter().map(|p| p.j).collect();
    let sums: Vec<f64> = points.iter().map(|p| p.lambda.sum()).collect();
    let allowed: Vec<bool> = points.iter().map(|p| !p.diverged).collect();
    let best = argmin_with_tiebreak(&j, &sums, &allowed).ok_or(TuneError::AllDiverged)?;
    Ok(TuneResult {
        selector,
        lambda_star: points[best].lambda,
        j_star: points[best].j,
        criteria_star: points[best].criteria,
        points,
    })
}

/// Grid search scored by direct simulation.
pub fn select_ideal(
    spec: &PlantSpec<f64>,
    cfg: &SimConfig<f64>,
    grid: &[EigenTriple<f64>],
    weights: &CriterionWeights<f64>,
    seeds: &[u64],
) -> Result<TuneResult, TuneError> {
    select_from(&evaluate_grid(spec, cfg, grid, seeds)?, weights, Selector::Ideal)
}

/// [`select_ideal`] restricted to repeated eigenvalues `-omega`.
pub fn select_bandwidth(
    spec: &PlantSpec<f64>,
    cfg: &SimConfig<f64>,
    omegas: &[f64],
    weights: &CriterionWeights<f64>,
    seeds: &[u64],
) -> Result<TuneResult, TuneError> {
    let grid = bandwidth_grid(omegas)?;
    select_from(&evaluate_grid(spec, cfg, &grid, seeds)?, weights, Selector::Bandwidth)
}

/// Operating conditions the network conditions on.
#[derive(Clone, Debug, PartialEq)]
pub struct NnContext {
    pub kind: PlantKind,
    pub transient: Vec<[f64; 3]>,
    pub sigma_n: f64,
    pub x_test0: [f64; 2],
    pub x0: [f64; 2],
}

impl NnContext {
    /// Runs the basic experiment on `spec` to obtain the transient.
    pub fn measure(spec: &PlantSpec<f64>, x_test0: [f64; 2], x0: [f64; 2], seed: u64) -> Result<Self, TuneError> {
        Ok(Self {
            kind: spec.kind(),
            transient: basic_experiment(spec, x_test0, seed)?,
            sigma_n: spec.noise.sigma_n,
            x_test0,
            x0,
        })
    }
}

/// Predicted criteria for every candidate, in grid order.
pub fn predict_grid(model: &EstimatorModel, ctx: &NnContext, grid: &[EigenTriple<f64>]) -> Result<Vec<CriteriaVector<f64>>, TuneError> {
    const CHUNK: usize = 1024;
    let emb = model.context(&ctx.transient, ctx.sigma_n, ctx.x_test0, ctx.x0, ctx.kind)?;
    let parts: Vec<Vec<CriteriaVector<f64>>> = grid.par_chunks(CHUNK).map(|c| emb.predict(c)).collect();
    Ok(parts.into_iter().flatten().collect())
}

/// Grid search scored by the network.
pub fn select_nn(model: &EstimatorModel, ctx: &NnContext, grid: &[EigenTriple<f64>], weights: &CriterionWeights<f64>) -> Result<TuneResult, TuneError> {
    weights.validate()?;
    if grid.is_empty() {
        return Err(TuneError::EmptyGrid);
    }
    let pred = predict_grid(model, ctx, grid)?;
    let points = grid
        .iter()
        .zip(pred)
        .map(|(l, c)| ScoredPoint {
            lambda: *l,
            j: cost(&c, weights),
            criteria: c,
            diverged: false,
        })
        .collect();
    finish(points, Selector::Nn)
}

/// Simulated cost of one candidate; diverging candidates cost `J` of the cap.
pub fn true_cost(spec: &PlantSpec<f64>, cfg: &SimConfig<f64>, lambda: &EigenTriple<f64>, weights: &CriterionWeights<f64>, seeds: &[u64]) -> Result<f64, TuneError> {
    let c = simulate_point(spec, cfg, lambda, seeds)?.unwrap_or_else(CriteriaVector::diverged);
    Ok(cost(&c, weights))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomDraw {
    pub omega: f64,
    pub j: f64,
}

/// Bandwidths drawn uniformly from `[1, 80]`, each scored by simulation.
pub fn random_baseline(
    spec: &PlantSpec<f64>,
    cfg: &SimConfig<f64>,
    weights: &CriterionWeights<f64>,
    trials: usize,
    seed: u64,
    seeds: &[u64],
) -> Result<Vec<RandomDraw>, TuneError> {
    if trials == 0 {
        return Err(TuneError::InvalidInput("trials must be at least 1".into()));
    }
    weights.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omegas: Vec<f64> = (0..trials).map(|_| rng.gen_range(1.0..=80.0)).collect();
    omegas
        .par_iter()
        .map(|&w| {
            Ok(RandomDraw {
                omega: w,
                j: true_cost(spec, cfg, &EigenTriple::repeated(w)?, weights, seeds)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeRow {
    pub lambda1: f64,
    pub lambda23: f64,
    pub j_true: f64,
    pub j_predicted: Option<f64>,
    pub diverged: bool,
}

/// `J` over the slice `lambda3 = lambda2` of the raw grid.
pub fn performance_landscape(
    spec: &PlantSpec<f64>,
    cfg: &SimConfig<f64>,
    weights: &CriterionWeights<f64>,
    axis: &[f64],
    seeds: &[u64],
    nn: Option<(&EstimatorModel, &NnContext)>,
) -> Result<Vec<LandscapeRow>, TuneError> {
    weights.validate()?;
    let mut grid = Vec::with_capacity(axis.len() * axis.len());
    for &a in axis {
        for &b in axis {
            grid.push(EigenTriple::new(a, b, b)?);
        }
    }
    let evals = evaluate_grid(spec, cfg, &grid, seeds)?;
    let pred = match nn {
        Some((m, ctx)) => Some(predict_grid(m, ctx, &grid)?),
        None => None,
    };
    Ok(evals
        .iter()
        .enumerate()
        .map(|(i, e)| LandscapeRow {
            lambda1: e.lambda.lambda1,
            lambda23: e.lambda.lambda2,
            j_true: cost(&e.criteria.unwrap_or_else(CriteriaVector::diverged), weights),
            j_predicted: pred.as_ref().map(|p| cost(&p[i], weights)),
            diverged: e.criteria.is_none(),
        })
        .collect())
}

pub fn write_landscape_csv<W: std::io::Write>(rows: &[LandscapeRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "lambda1,lambda23,j_true,j_predicted,diverged")?;
    for r in rows {
        let p = r.j_predicted.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.lambda1, r.lambda23, r.j_true, p, r.diverged)?;
    }
    Ok(())
}

/// Width of the eigenvalue-sum band holding the best `fraction` of the
/// landscape, relative to the full sum range (`lambda1 + 2 lambda23`).
pub fn valley_width(rows: &[LandscapeRow], fraction: f64) -> f64 {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| rows[a].j_true.total_cmp(&rows[b].j_true));
    let keep = ((rows.len() as f64 * fraction).ceil() as usize).clamp(1, rows.len().max(1));
    let sum = |r: &LandscapeRow| r.lambda1 + 2.0 * r.lambda23;
    let range = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    };
    let best = range(&mut idx[..keep].iter().map(|&i| sum(&rows[i])));
    let full = range(&mut rows.iter().map(sum));
    if full > 0.0 {
        best / full
    } else {
        0.0
    }
}

/// Ranks starting at 1, ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut k = i;
        while k + 1 < idx.len() && v[idx[k + 1]] == v[idx[i]] {
            k += 1;
        }
        let mean = (i + k) as f64 / 2.0 + 1.0;
        for &j in &idx[i..=k] {
            r[j] = mean;
        }
        i = k + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of tie-averaged ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    cov / (va * vb).sqrt()
}

/// One paired Monte-Carlo trial on a randomly drawn plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub sample: SampleSpec,
    pub lambda_nn: Option<EigenTriple<f64>>,
    pub j_nn: Option<f64>,
    pub omega_random: f64,
    pub j_random: f64,
    pub j_ideal: Option<f64>,
    pub j_bandwidth: Option<f64>,
}

impl TrialResult {
    pub fn nn_wins(&self) -> Option<bool> {
        self.j_nn.map(|j| j < self.j_random)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub kind: PlantKind,
    pub trials: usize,
    pub master_seed: u64,
    pub weights: CriterionWeights<f64>,
    pub grid: GainGrid,
    pub seeds: Vec<u64>,
    /// Also run the ideal and bandwidth selectors on each plant.
    pub with_ideal: bool,
}

/// Paired comparison of the network selector against a random bandwidth on
/// `trials` plants drawn from the dataset ranges.
pub fn monte_carlo(model: Option<&EstimatorModel>, mc: &MonteCarloConfig) -> Result<Vec<TrialResult>, TuneError> {
    if mc.trials == 0 {
        return Err(TuneError::InvalidInput("trials must be at least 1".into()));
    }
    if let Some(m) = model {
        m.check_kind(mc.kind)?;
    }
    let full = build_grid(&GainGrid { canonical: false, ..mc.grid })?;
    let canonical = build_grid(&GainGrid { canonical: true, ..mc.grid })?;
    let omegas = mc.grid.omegas();
    let mut rng = ChaCha8Rng::seed_from_u64(mc.master_seed);
    let draws: Vec<(u64, f64)> = (0..mc.trials).map(|_| (rng.gen(), rng.gen_range(1.0..=80.0))).collect();

    let mut out = Vec::with_capacity(mc.trials);
    for (index, &(plant_seed, omega)) in draws.iter().enumerate() {
        let sample = sample_spec(mc.kind, Split::Test, plant_seed);
        let cfg = SimConfig::new(sample.x0, 0);
        let (lambda_nn, j_nn) = match model {
            Some(m) => {
                let ctx = NnContext::measure(&sample.plant, sample.x_test0, sample.x0, sample.basic_seed())?;
                let pick = select_nn(m, &ctx, &full, &mc.weights)?.lambda_star;
                (Some(pick), Some(true_cost(&sample.plant, &cfg, &pick, &mc.weights, &mc.seeds)?))
            }
            None => (None, None),
        };
        let j_random = true_cost(&sample.plant, &cfg, &EigenTriple::repeated(omega)?, &mc.weights, &mc.seeds)?;
        let (j_ideal, j_bandwidth) = if mc.with_ideal {
            let evals = evaluate_grid(&sample.plant, &cfg, &canonical, &mc.seeds)?;
            let ideal = select_from(&evals, &mc.weights, Selector::Ideal).map(|r| r.j_star);
            let bw = select_from(&evaluate_grid(&sample.plant, &cfg, &bandwidth_grid(&omegas)?, &mc.seeds)?, &mc.weights, Selector::Bandwidth).map(|r| r.j_star);
            (ideal.ok(), bw.ok())
        } else {
            (None, None)
        };
        out.push(TrialResult {
            index,
            sample,
            lambda_nn,
            j_nn,
            omega_random: omega,
            j_random,
            j_ideal,
            j_bandwidth,
        });
    }
    Ok(out)
}

/// JSON tune report. Timing lives in the run manifest so reports stay
/// byte-identical across reruns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub selector: Selector,
    pub weights: CriterionWeights<f64>,
    pub grid: GainGrid,
    pub seeds: Vec<u64>,
    pub lambda_star: EigenTriple<f64>,
    pub j_star: f64,
    pub criteria_star: CriteriaVector<f64>,
    /// Simulated `J` at `lambda_star`, for selectors that score by prediction.
    pub j_simulated: Option<f64>,
    pub points_evaluated: usize,
    /// Omitted when more than [`REPORT_POINT_LIMIT`] points were evaluated.
    pub points: Option<Vec<ScoredPoint>>,
}

impl TuneReport {
    pub fn new(result: &TuneResult, weights: CriterionWeights<f64>, grid: GainGrid, seeds: Vec<u64>) -> Self {
        Self {
            selector: result.selector,
            weights,
            grid,
            seeds,
            lambda_star: result.lambda_star,
            j_star: result.j_star,
            criteria_star: result.criteria_star,
            j_simulated: None,
            points_evaluated: result.points.len(),
            points: (result.points.len() <= REPORT_POINT_LIMIT).then(|| result.points.clone()),
        }
    }
}

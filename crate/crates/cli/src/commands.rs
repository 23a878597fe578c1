use std::io::Write;
use std::path::Path;

use esotune::bounds::{check_theorem1, check_theorem2, check_theorem3, run_bound_suite, BoundReport};
use esotune::control::{gains_from_eigenvalues, EigenTriple};
use esotune::dataset::{generate_dataset, read_records, split_path, Split};
use esotune::estimator::{load_model, mape, predict_records, save_model, train, write_history_csv, EstimatorModel, FeatureScaling};
use esotune::plant::{PlantKind, PlantSpec};
use esotune::sim::{compute_criteria, cost, mean_criteria, run_closed_loop, CriteriaVector, CRITERION_CAP};
use esotune::tuner::{
    bandwidth_grid, build_grid, evaluate_grid, monte_carlo, performance_landscape, select_bandwidth, select_from, select_ideal, select_nn,
    spearman, true_cost, valley_width, write_landscape_csv, GainGrid, MonteCarloConfig, NnContext, Selector, TuneReport,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::*;
use crate::error::CliError;
use crate::output::Outputs;

/// Resolved config (for the digest) and the seeds the run used.
pub type RunInfo = (Value, Vec<u64>);

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

fn csv_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

fn base_dir(config: &Path) -> &Path {
    config.parent().unwrap_or(Path::new("."))
}

pub fn simulate(config: &Path, seed: Option<u64>, out: &mut Outputs) -> Result<RunInfo, CliError> {
    let mut cfg: SimulateConfig = load(config)?;
    if let Some(s) = seed {
        cfg.sim.seed = s;
    }
    let lambda = cfg.observer.triple()?;
    let traj = run_closed_loop(&cfg.plant, &gains_from_eigenvalues(&lambda)?, &cfg.sim)?;
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).map_err(csv_err(&out.path("trajectory.csv")))?;
    out.write("trajectory.csv", &csv)?;
    let criteria = compute_criteria(&traj);
    let j = cfg.weights.map(|w| cost(&criteria, &w));
    out.write_json(
        "criteria.json",
        &json!({ "eigenvalues": lambda, "criteria": criteria, "j": j }),
    )?;
    Ok((to_value(&cfg), vec![cfg.sim.seed]))
}

pub fn sweep(config: &Path, seed: Option<u64>, out: &mut Outputs) -> Result<RunInfo, CliError> {
    let mut cfg: SweepConfig = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.noise_seeds == 0 || cfg.omegas.is_empty() {
        return Err(CliError::Config("noise_seeds and omegas must be non-empty".into()));
    }
    let seeds = seed_list(cfg.seed, cfg.noise_seeds);
    let rows: Vec<Result<CriteriaVector<f64>, CliError>> = cfg
        .omegas
        .par_iter()
        .map(|&w| {
            if !(1.0..=80.0).contains(&w) {
                return Err(CliError::Config(format!("bandwidth {w} outside [1, 80]")));
            }
            Ok(mean_criteria(&cfg.plant, &esotune::gains_from_bandwidth(w)?, &cfg.sim, &seeds)?)
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let path = out.path("sweep.csv");
    let mut csv = Vec::new();
    writeln!(csv, "omega,iae,iac,iacd,iadee").map_err(csv_err(&path))?;
    for (w, c) in cfg.omegas.iter().zip(&rows) {
        writeln!(csv, "{},{},{},{},{}", w, c.iae, c.iac, c.iacd, c.iadee).map_err(csv_err(&path))?;
    }
    out.write("sweep.csv", &csv)?;
    let iae: Vec<f64> = rows.iter().map(|c| c.iae).collect();
    let at = |w: f64| cfg.omegas.iter().position(|&x| x == w).map(|i| rows[i].iacd);
    let argmin = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.iadee.total_cmp(&b.1.iadee))
        .map(|(i, _)| cfg.omegas[i]);
    out.write_json(
        "sweep_summary.json",
        &json!({
            "iae_spearman_vs_omega": (rows.len() > 1).then(|| spearman(&cfg.omegas, &iae)),
            "iacd_ratio_80_10": at(80.0).zip(at(10.0)).map(|(a, b)| a / b),
            "iadee_argmin_omega": argmin,
        }),
    )?;
    Ok((to_value(&cfg), seeds))
}

pub fn gen_dataset(config: &Path, seed: Option<u64>, out: &mut Outputs) -> Result<RunInfo, CliError> {
    let mut cfg: GenDatasetConfig = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    for p in generate_dataset(&out.dir, cfg.kind, cfg.counts, cfg.seed)? {
        out.register(p);
    }
    Ok((to_value(&cfg), vec![cfg.seed]))
}

pub fn train_cmd(config: &Path, seed: Option<u64>, out: &mut Outputs) -> Result<RunInfo, CliError> {
    let mut cfg: TrainFileConfig = load(config)?;
    if let Some(s) = seed {
        cfg.training.seed = s;
    }
    let dir = resolve(base_dir(config), &cfg.dataset_dir);
    let train_set = read_records(&split_path(&dir, cfg.kind, Split::Train))?;
    let val_set = read_records(&split_path(&dir, cfg.kind, Split::Val))?;
    let scaling = FeatureScaling::fit(cfg.kind, &train_set);
    let model = EstimatorModel::new(cfg.estimator, scaling, cfg.training.seed)?;
    let outcome = train(model, &train_set, &val_set, &cfg.training, |e| {
        eprintln!("epoch {:>3}  train {:.6}  val {:.6}", e.epoch, e.train_loss, e.val_loss);
    })?;
    let model_path = out.path("model.bin");
    save_model(&model_path, &outcome.model)?;
    out.register(model_path);
    let hist = out.path("history.csv");
    write_history_csv(&hist, &outcome.history)?;
    out.register(hist);

    let test_path = split_path(&dir, cfg.kind, Split::Test);
    let test_mape = if test_path.exists() {
        let test = read_records(&test_path)?;
        if test.is_empty() {
            None
        } else {
            let pred = predict_records(&outcome.model, &test, 64)?;
            let pred: Vec<CriteriaVector<f64>> = pred.iter().map(|p| esotune::dataset::denormalize_criteria(p, cfg.kind)).collect();
            let truth: Vec<CriteriaVector<f64>> = test.iter().map(|r| r.criteria_raw).collect();
            Some(mape(&pred, &truth, 1e-9))
        }
    } else {
        None
    };
    out.write_json(
        "train_metrics.json",
        &json!({
            "initial_val_loss": outcome.history[0].val_loss,
            "best_val_loss": outcome.model.metadata.best_val_loss,
            "best_epoch": outcome.model.metadata.best_epoch,
            "parameters": outcome.model.network.parameter_count(),
            "test_mape_percent": test_mape.map(|(m, _)| m),
            "test_mape_counts": test_mape.map(|(_, n)| n),
        }),
    )?;
    Ok((to_value(&cfg), vec![cfg.training.seed]))
}

fn load_kind_model(base: &Path, path: &Option<std::path::PathBuf>, kind: PlantKind) -> Result<EstimatorModel, CliError> {
    let p = path.as_ref().ok_or_else(|| CliError::Config("field `model` is required for the network selector".into()))?;
    let m = load_model(&resolve(base, p))?;
    m.check_kind(kind)?;
    Ok(m)
}

pub fn tune(config: &Path, seed: Option<u64>, out: &mut Outputs) -> Result<RunInfo, CliError> {
    let mut cfg: TuneConfig = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.noise_seeds == 0 {
        return Err(CliError::Config("noise_seeds must be at least 1".into()));
    }
    let seeds = seed_list(cfg.seed, cfg.noise_seeds);
    let (result, grid) = match cfg.selector {
        Selector::Ideal => (select_ideal(&cfg.plant, &cfg.sim, &build_grid(&cfg.grid)?, &cfg.weights, &seeds)?, cfg.grid),
        Selector::Bandwidth => (select_bandwidth(&cfg.plant, &cfg.sim, &cfg.grid.omegas(), &cfg.weights, &seeds)?, cfg.grid),
        Selector::Nn => {
            let model = load_kind_model(base_dir(config), &cfg.model, cfg.plant.kind())?;
            let ctx = NnContext::measure(&cfg.plant, cfg.x_test0, cfg.sim.x0, cfg.seed)?;
            let raw = GainGrid { canonical: false, ..cfg.grid };
            (select_nn(&model, &ctx, &build_grid(&raw)?, &cfg.weights)?, raw)
        }
        Selector::Random => {
            if cfg.trials == 0 {
                return Err(CliError::Config("trials must be at least 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let omegas: Vec<f64> = (0..cfg.trials).map(|_| rng.gen_range(1.0..=80.0)).collect();
            let evals = evaluate_grid(&cfg.plant, &cfg.sim, &bandwidth_grid(&omegas)?, &seeds)?;
            (select_from(&evals, &cfg.weights, Selector::Random)?, cfg.grid)
        }
    };
    let mut report = TuneReport::new(&result, cfg.weights, grid, seeds.clone());
    if cfg.selector == Selector::Nn {
        report.j_simulated = Some(true_cost(&cfg.plant, &cfg.sim, &result.lambda_star, &cfg.weights, &seeds)?);
    }
    out.write_json("tune_report.json", &report)?;
    Ok((to_value(&cfg), seeds))
}

pub fn landscape(config: &Path, seed: Option<u64>, out: &mut Outputs) -> Result<RunInfo, CliError> {
    let mut cfg: LandscapeConfig = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.noise_seeds == 0 {
        return Err(CliError::Config("noise_seeds must be at least 1".into()));
    }
    let seeds = seed_list(cfg.seed, cfg.noise_seeds);
    let nn = match &cfg.model {
        Some(_) => {
            let m = load_kind_model(base_dir(config), &cfg.model, cfg.plant.kind())?;
            let ctx = NnContext::measure(&cfg.plant, cfg.x_test0, cfg.sim.x0, cfg.seed)?;
            Some((m, ctx))
        }
        None => None,
    };
    let axis = GainGrid::new(cfg.grid.count, false)?.axis();
    let rows = performance_landscape(&cfg.plant, &cfg.sim, &cfg.weights, &axis, &seeds, nn.as_ref().map(|(m, c)| (m, c)))?;
    let mut csv = Vec::new();
    write_landscape_csv(&rows, &mut csv).map_err(csv_err(&out.path("landscape.csv")))?;
    out.write("landscape.csv", &csv)?;
    let rho = nn.as_ref().map(|_| {
        let t: Vec<f64> = rows.iter().map(|r| r.j_true).collect();
        let p: Vec<f64> = rows.iter().map(|r| r.j_predicted.unwrap_or(f64::NAN)).collect();
        spearman(&p, &t)
    });
    out.write_json(
        "landscape_summary.json",
        &json!({
            "points": rows.len(),
            "valley_width_best_5pct": valley_width(&rows, 0.05),
            "spearman_predicted_vs_true": rho,
        }),
    )?;
    Ok((to_value(&cfg), seeds))
}

fn strip(mut r: BoundReport) -> BoundReport {
    r.t.clear();
    r.margin.clear();
    r
}

pub fn check_bounds(config: &Path, seed: Option<u64>, out: &mut Outputs) -> Result<RunInfo, CliError> {
    let mut cfg: CheckBoundsConfig = load(config)?;
    if let Some(suite) = cfg.suite.as_mut() {
        if let Some(s) = seed {
            suite.base_seed = s;
        }
        let seeds = seed_list(0, suite.noise_seeds);
        let mut summaries = Vec::new();
        for &kind in &suite.kinds {
            summaries.push(run_bound_suite(kind, suite.configs, &seeds, suite.base_seed)?);
        }
        out.write_json("bounds_suite.json", &summaries)?;
        let violations: usize = summaries.iter().map(|s| s.violations.iter().sum::<usize>()).sum();
        eprintln!("bound violations: {violations}");
        return Ok((to_value(&cfg), seeds));
    }
    let missing = |f: &str| CliError::Config(format!("field `{f}` is required without `suite`"));
    let plant: PlantSpec<f64> = cfg.plant.ok_or_else(|| missing("plant"))?;
    let mut sim = cfg.sim.ok_or_else(|| missing("sim"))?;
    let observer = cfg.observer.ok_or_else(|| missing("observer"))?;
    if let Some(s) = seed {
        sim.seed = s;
    }
    let lambda: EigenTriple<f64> = observer.triple()?;
    let gains = gains_from_eigenvalues(&lambda)?;
    let omega = match observer {
        ObserverSpec::Bandwidth(w) => w,
        ObserverSpec::Eigenvalues(_) => -lambda.sum() / 3.0,
    };
    let reports = [check_theorem1(&plant, &gains, &sim)?, check_theorem2(&plant, omega, &sim)?, check_theorem3(&plant, &gains, &sim)?];
    for r in &reports {
        let name = format!("margins_theorem{}.csv", r.theorem);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).map_err(csv_err(&out.path(&name)))?;
        out.write(&name, &csv)?;
    }
    let stripped: Vec<BoundReport> = reports.into_iter().map(strip).collect();
    out.write_json("bounds.json", &stripped)?;
    cfg.sim = Some(sim);
    Ok((to_value(&cfg), vec![sim.seed]))
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn montecarlo(config: &Path, seed: Option<u64>, out: &mut Outputs) -> Result<RunInfo, CliError> {
    let mut cfg: MonteCarloFileConfig = load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.noise_seeds == 0 {
        return Err(CliError::Config("noise_seeds must be at least 1".into()));
    }
    let model = match &cfg.model {
        Some(_) => Some(load_kind_model(base_dir(config), &cfg.model, cfg.kind)?),
        None => None,
    };
    let seeds = seed_list(0, cfg.noise_seeds);
    let mc = MonteCarloConfig {
        kind: cfg.kind,
        trials: cfg.trials,
        master_seed: cfg.seed,
        weights: cfg.weights,
        grid: cfg.grid,
        seeds: seeds.clone(),
        with_ideal: cfg.with_ideal,
    };
    let trials = monte_carlo(model.as_ref(), &mc)?;
    let path = out.path("montecarlo.csv");
    let mut csv = Vec::new();
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    writeln!(csv, "trial,j_nn,j_random,omega_random,j_ideal,j_bandwidth").map_err(csv_err(&path))?;
    for t in &trials {
        writeln!(csv, "{},{},{},{},{},{}", t.index, opt(t.j_nn), t.j_random, t.omega_random, opt(t.j_ideal), opt(t.j_bandwidth)).map_err(csv_err(&path))?;
    }
    out.write("montecarlo.csv", &csv)?;
    let wins: Vec<bool> = trials.iter().filter_map(|t| t.nn_wins()).collect();
    let win_rate = (!wins.is_empty()).then(|| wins.iter().filter(|&&w| w).count() as f64 / wins.len() as f64);
    let mut jn: Vec<f64> = trials.iter().filter_map(|t| t.j_nn).collect();
    let mut jr: Vec<f64> = trials.iter().map(|t| t.j_random).collect();
    let dominance = cfg.with_ideal.then(|| {
        trials
            .iter()
            .all(|t| matches!((t.j_ideal, t.j_bandwidth), (Some(i), Some(b)) if i <= b))
    });
    out.write_json(
        "montecarlo.json",
        &json!({
            "trials": trials,
            "nn_win_rate": win_rate,
            "median_j_nn": median(&mut jn),
            "median_j_random": median(&mut jr),
            "ideal_le_bandwidth_all": dominance,
            "criterion_cap": CRITERION_CAP,
        }),
    )?;
    Ok((to_value(&cfg), seeds))
}

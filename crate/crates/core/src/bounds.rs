//! Lyapunov certificates and trajectory checks of the three error bounds:
//! the observer error under general gains, the observer error under
//! bandwidth gains, and the closed-loop state under observer-based feedback.
//!
//! The bounds are evaluated exactly as stated, with constants taken from
//! `P` solving `A^T P + P A = -2 I`. `D_bar` is the largest finite-difference
//! slope of the realized total disturbance and `n_bar` the noise truncation
//! bound. Plants with a discontinuous `d*` are checked segment by segment,
//! restarting the bound at each jump.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use rayon::prelude::*;

use crate::control::{gains_from_bandwidth, gains_from_eigenvalues, ControlError, ObserverGains};
use crate::dataset::{sample_spec, Split};
use crate::linalg::{eigenvalues, solve_linear, symmetric_eigenvalues, SquareMatrix};
use crate::plant::{PlantKind, PlantSpec};
use crate::scalar::{Field, Real};
use crate::sim::{run_closed_loop, Feedback, SimConfig, SimError, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("matrix is not Hurwitz: eigenvalue {re} + {im}i")]
    NotHurwitz { re: f64, im: f64 },
    #[error("Lyapunov equation is singular")]
    Singular,
    #[error("Lyapunov solution is not positive definite (smallest eigenvalue {0})")]
    NotPositiveDefinite(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Solves `A^T P + P A = -2 I` for symmetric `P` over any field, through the
/// `n (n + 1) / 2` independent entries of `P`.
pub fn lyapunov_solution<F: Field>(a: &SquareMatrix<F>) -> Option<SquareMatrix<F>> {
    let n = a.dim();
    let mut index = vec![vec![0usize; n]; n];
    let mut m = 0;
    for i in 0..n {
        for j in i..n {
            index[i][j] = m;
            index[j][i] = m;
            m += 1;
        }
    }
    let two = F::one() + F::one();
    let mut rows = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for i in 0..n {
        for j in i..n {
            // (A^T P + P A)_ij = sum_k A_ki P_kj + P_ik A_kj
            let mut row = vec![F::zero(); m];
            for k in 0..n {
                let c = index[k][j];
                row[c] = row[c].clone() + a.get(k, i);
                let c = index[i][k];
                row[c] = row[c].clone() + a.get(k, j);
            }
            rows.push(row);
            rhs.push(if i == j { F::zero() - two.clone() } else { F::zero() });
        }
    }
    let p = solve_linear(&rows, &rhs)?;
    let mut out = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, p[index[i][j]].clone());
        }
    }
    Some(out)
}

/// `P` together with the extreme eigenvalues and the bound constants
/// `[lmax / lmin, 1 / lmax, (lmax / lmin)^2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovCertificate<T> {
    pub a: SquareMatrix<T>,
    pub p: SquareMatrix<T>,
    pub eig_min_p: T,
    pub eig_max_p: T,
    pub constants: [T; 3],
}

impl<T: Real> LyapunovCertificate<T> {
    /// `max |A^T P + P A + 2 I|` over the entries.
    pub fn residual(&self) -> T {
        let lhs = self.a.transpose().matmul(&self.p);
        let rhs = self.p.matmul(&self.a);
        let n = self.a.dim();
        let mut worst = T::zero();
        for i in 0..n {
            for j in 0..n {
                let two_i = if i == j { T::lit(2.0) } else { T::zero() };
                worst = worst.max((lhs.get(i, j) + rhs.get(i, j) + two_i).abs());
            }
        }
        worst
    }
}

/// Certificate for a Hurwitz matrix. Non-Hurwitz input is rejected with the
/// offending eigenvalue.
pub fn solve_lyapunov<T: Real>(a: &SquareMatrix<T>) -> Result<LyapunovCertificate<T>, BoundsError> {
    for ev in eigenvalues(a) {
        let ev: Complex<T> = ev;
        if !(ev.re < T::zero()) {
            return Err(BoundsError::NotHurwitz {
                re: ev.re.to_f64_lossy(),
                im: ev.im.to_f64_lossy(),
            });
        }
    }
    let mut p = lyapunov_solution(a).ok_or(BoundsError::Singular)?;
    // symmetric by construction; the solve fills both triangles from one unknown
    let n = p.dim();
    for i in 0..n {
        for j in 0..i {
            p.set(i, j, p.get(j, i));
        }
    }
    let eig = symmetric_eigenvalues(&p);
    let (lo, hi) = (eig[0], eig[n - 1]);
    if !(lo > T::zero()) {
        return Err(BoundsError::NotPositiveDefinite(lo.to_f64_lossy()));
    }
    let ratio = hi / lo;
    Ok(LyapunovCertificate {
        a: a.clone(),
        p,
        eig_min_p: lo,
        eig_max_p: hi,
        constants: [ratio, T::one() / hi, ratio * ratio],
    })
}

/// Scaled observer error matrix under bandwidth gains.
pub fn h_zeta_star<T: Real>() -> SquareMatrix<T> {
    let l = T::lit;
    SquareMatrix::from_rows(&[[l(-3.0), l(1.0), l(0.0)], [l(-3.0), l(0.0), l(1.0)], [l(-1.0), l(0.0), l(0.0)]])
}

/// Scaled closed-loop state matrix under `k1 = k^2`, `k2 = 2k`.
pub fn h_epsilon_star<T: Real>() -> SquareMatrix<T> {
    let l = T::lit;
    SquareMatrix::from_rows(&[[l(0.0), l(1.0)], [l(-1.0), l(-2.0)]])
}

/// Right-hand side of the general-gain observer bound.
pub fn theorem1_rhs<T: Real>(c: &[T; 3], z0: T, t: T, d_bar: T, l_norm: T, n_bar: T) -> T {
    c[0] * z0 * (-c[1] * t).exp() + c[2] * (d_bar + l_norm * n_bar)
}

/// Steady part of the bandwidth-gain observer bound.
pub fn theorem2_steady<T: Real>(c: &[T; 3], omega: T, d_bar: T, n_bar: T) -> T {
    let w2 = omega * omega;
    (T::one() / w2).max(T::one()) / omega * c[2] * (d_bar + T::lit(3.0) * w2 * omega * n_bar)
}

/// Right-hand side of the bandwidth-gain observer bound.
pub fn theorem2_rhs<T: Real>(c: &[T; 3], omega: T, z0: T, t: T, d_bar: T, n_bar: T) -> T {
    let w2 = omega * omega;
    (T::one() / w2).max(w2) * (-c[1] * omega * t).exp() * c[0] * z0 + theorem2_steady(c, omega, d_bar, n_bar)
}

/// Right-hand side of the closed-loop state bound.
pub fn theorem3_rhs<T: Real>(c: &[T; 3], k: T, x0: T, t: T, sup_z: T) -> T {
    let m = (T::one() / k).max(k);
    m * c[0] * (-c[1] * k * t).exp() * x0 + c[2] * m * sup_z / k
}

/// Pointwise bound margins of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub id: String,
    pub theorem: u8,
    pub constants: [f64; 3],
    /// `D_bar` of every continuity segment (empty for the state bound).
    pub d_bar: Vec<f64>,
    pub n_bar: f64,
    pub t: Vec<f64>,
    /// `rhs(t) - lhs(t)`.
    pub margin: Vec<f64>,
    pub violated: bool,
    pub worst_margin: f64,
    pub worst_time: f64,
}

impl BoundReport {
    fn new(id: String, theorem: u8, constants: [f64; 3], d_bar: Vec<f64>, n_bar: f64, t: Vec<f64>, margin: Vec<f64>) -> Self {
        let (mut worst_margin, mut worst_time) = (f64::INFINITY, 0.0);
        for (tt, m) in t.iter().zip(&margin) {
            if *m < worst_margin || m.is_nan() {
                worst_margin = *m;
                worst_time = *tt;
            }
        }
        let violated = !(worst_margin >= 0.0);
        Self {
            id,
            theorem,
            constants,
            d_bar,
            n_bar,
            t,
            margin,
            violated,
            worst_margin,
            worst_time,
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,margin")?;
        for (t, m) in self.t.iter().zip(&self.margin) {
            writeln!(w, "{t},{m}")?;
        }
        Ok(())
    }
}

/// Sample ranges `[start, end)` between consecutive jumps of `d*`.
pub fn continuity_segments<T: Real>(spec: &PlantSpec<T>, t: &[T]) -> Vec<(usize, usize)> {
    let mut cuts = vec![0];
    for b in spec.discontinuities() {
        let i = t.partition_point(|v| *v < b);
        if i > *cuts.last().unwrap() && i < t.len() {
            cuts.push(i);
        }
    }
    cuts.push(t.len());
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Largest `|d[i+1] - d[i]| / dt` inside `[start, end)`.
pub fn disturbance_slope_bound<T: Real>(d: &[T], dt: T, start: usize, end: usize) -> T {
    (start + 1..end).fold(T::zero(), |m, i| m.max((d[i] - d[i - 1]).abs() / dt))
}

fn norm3<T: Real>(v: [T; 3]) -> T {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn observer_margins<T: Real>(
    spec: &PlantSpec<T>,
    traj: &Trajectory<T>,
    rhs: impl Fn(T, T, T) -> T,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let err: Vec<T> = traj.estimation_error().into_iter().map(norm3).collect();
    let dt = traj.dt();
    let mut d_bars = Vec::new();
    let mut margin = Vec::with_capacity(err.len());
    for (start, end) in continuity_segments(spec, &traj.t) {
        let d_bar = disturbance_slope_bound(&traj.d, dt, start, end);
        d_bars.push(d_bar.to_f64_lossy());
        let (t0, z0) = (traj.t[start], err[start]);
        for i in start..end {
            margin.push((rhs(z0, traj.t[i] - t0, d_bar) - err[i]).to_f64_lossy());
        }
    }
    (traj.t.iter().map(|v| v.to_f64_lossy()).collect(), margin, d_bars)
}

/// General-gain observer bound along a simulated run.
pub fn check_theorem1<T: Real>(
    spec: &PlantSpec<T>,
    gains: &ObserverGains<T>,
    cfg: &SimConfig<T>,
) -> Result<BoundReport, BoundsError> {
    let cert = solve_lyapunov(&gains.error_matrix())?;
    let traj = run_closed_loop(spec, gains, cfg)?;
    let (n_bar, l_norm, c) = (spec.noise.bound(), gains.norm(), cert.constants);
    let (t, margin, d_bar) = observer_margins(spec, &traj, |z0, t, d| theorem1_rhs(&c, z0, t, d, l_norm, n_bar));
    Ok(BoundReport::new(
        format!("{}-l{:.3}-{:.3}-{:.3}-s{}", spec.kind(), gains.l1.to_f64_lossy(), gains.l2.to_f64_lossy(), gains.l3.to_f64_lossy(), cfg.seed),
        1,
        c.map(|v| v.to_f64_lossy()),
        d_bar,
        n_bar.to_f64_lossy(),
        t,
        margin,
    ))
}

/// Bandwidth-gain observer bound along a simulated run.
pub fn check_theorem2<T: Real>(spec: &PlantSpec<T>, omega: T, cfg: &SimConfig<T>) -> Result<BoundReport, BoundsError> {
    let gains = gains_from_bandwidth(omega)?;
    let cert = solve_lyapunov(&h_zeta_star::<T>())?;
    let traj = run_closed_loop(spec, &gains, cfg)?;
    let (n_bar, c) = (spec.noise.bound(), cert.constants);
    let (t, margin, d_bar) = observer_margins(spec, &traj, |z0, t, d| theorem2_rhs(&c, omega, z0, t, d, n_bar));
    Ok(BoundReport::new(
        format!("{}-w{}-s{}", spec.kind(), omega.to_f64_lossy(), cfg.seed),
        2,
        c.map(|v| v.to_f64_lossy()),
        d_bar,
        n_bar.to_f64_lossy(),
        t,
        margin,
    ))
}

/// Closed-loop state bound along a simulated run. With
/// [`Feedback::TrueState`] the only perturbation left is the sample-and-hold
/// of the control, entered as an equivalent estimation error.
pub fn check_theorem3<T: Real>(
    spec: &PlantSpec<T>,
    gains: &ObserverGains<T>,
    cfg: &SimConfig<T>,
) -> Result<BoundReport, BoundsError> {
    let cert = solve_lyapunov(&h_epsilon_star::<T>())?;
    let traj = run_closed_loop(spec, gains, cfg)?;
    let sup_z = match cfg.feedback {
        Feedback::Observer => traj.estimation_error().into_iter().map(norm3).fold(T::zero(), T::max),
        Feedback::TrueState => hold_residual(spec, cfg.k, &traj)?,
    };
    let c = cert.constants;
    let x_norm = |x: [T; 2]| (x[0] * x[0] + x[1] * x[1]).sqrt();
    let x0 = x_norm(traj.x[0]);
    let margin = traj
        .t
        .iter()
        .zip(&traj.x)
        .map(|(t, x)| (theorem3_rhs(&c, cfg.k, x0, *t, sup_z) - x_norm(*x)).to_f64_lossy())
        .collect();
    Ok(BoundReport::new(
        format!("{}-k{}-s{}-{:?}", spec.kind(), cfg.k.to_f64_lossy(), cfg.seed, cfg.feedback),
        3,
        c.map(|v| v.to_f64_lossy()),
        Vec::new(),
        spec.noise.bound().to_f64_lossy(),
        traj.t.iter().map(|v| v.to_f64_lossy()).collect(),
        margin,
    ))
}

/// Largest mismatch between the held control and the continuous true-state
/// law, measured at the end of every hold interval. It acts on the loop
/// exactly like a disturbance estimate off by that amount.
fn hold_residual<T: Real>(spec: &PlantSpec<T>, k: T, traj: &Trajectory<T>) -> Result<T, BoundsError> {
    let (k1, k2) = (k * k, T::lit(2.0) * k);
    let mut worst = T::zero();
    for i in 1..traj.len() {
        let (x, t) = (traj.x[i], traj.t[i]);
        let accel = spec.drift(x, t) + spec.input_gain(x) * traj.u[i - 1] + spec.external_disturbance(t).map_err(SimError::from)?;
        worst = worst.max((accel + k1 * x[0] + k2 * x[1]).abs());
    }
    Ok(worst)
}

/// First time `‖z_tilde‖` drops to `fraction` of its initial value and stays below it.
pub fn settling_time<T: Real>(traj: &Trajectory<T>, fraction: T) -> Option<T> {
    let err: Vec<T> = traj.estimation_error().into_iter().map(norm3).collect();
    let target = *err.first()? * fraction;
    let last_above = err.iter().rposition(|e| *e > target)?;
    traj.t.get(last_above + 1).copied()
}

/// Outcome of the randomized bound suite for one plant kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub kind: PlantKind,
    pub configs: usize,
    pub seeds: Vec<u64>,
    /// Reports checked per theorem (index 0 is Theorem 1).
    pub checked: [usize; 3],
    pub violations: [usize; 3],
    /// Runs skipped because the closed loop diverged.
    pub diverged: usize,
    pub worst_margin: [f64; 3],
    /// Reports with the margin series dropped.
    pub reports: Vec<BoundReport>,
}

/// Checks the three bounds on `configs` plants drawn from the dataset ranges
/// (test split, sample seeds `base_seed + i`), each under every noise seed.
/// Theorems 1 and 3 use the sampled eigenvalues; Theorem 2 uses the bandwidth
/// equal to their mean magnitude.
pub fn run_bound_suite(kind: PlantKind, configs: usize, seeds: &[u64], base_seed: u64) -> Result<SuiteSummary, BoundsError> {
    let jobs: Vec<(usize, u64)> = (0..configs).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<Result<Vec<Option<BoundReport>>, BoundsError>> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let s = sample_spec(kind, Split::Test, base_seed + i as u64);
            let cfg = SimConfig::new(s.x0, seed);
            let gains = gains_from_eigenvalues(&s.lambda)?;
            let omega = -s.lambda.sum() / 3.0;
            let runs = [
                check_theorem1(&s.plant, &gains, &cfg),
                check_theorem2(&s.plant, omega, &cfg),
                check_theorem3(&s.plant, &gains, &cfg),
            ];
            runs.into_iter()
                .map(|r| match r {
                    Ok(mut rep) => {
                        rep.t = Vec::new();
                        rep.margin = Vec::new();
                        Ok(Some(rep))
                    }
                    Err(BoundsError::Sim(SimError::Diverged { .. })) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect();
    let mut out = SuiteSummary {
        kind,
        configs,
        seeds: seeds.to_vec(),
        checked: [0; 3],
        violations: [0; 3],
        diverged: 0,
        worst_margin: [f64::INFINITY; 3],
        reports: Vec::new(),
    };
    for r in results {
        for rep in r? {
            match rep {
                Some(rep) => {
                    let k = rep.theorem as usize - 1;
                    out.checked[k] += 1;
                    out.violations[k] += rep.violated as usize;
                    out.worst_margin[k] = out.worst_margin[k].min(rep.worst_margin);
                    out.reports.push(rep);
                }
                None => out.diverged += 1,
            }
        }
    }
    Ok(out)
}

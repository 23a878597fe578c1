//! Fixed-step closed-loop simulation of plant + observer + controller and the
//! integral quality criteria computed from it.
//!
//! The joint state `[x1, x2, z1_hat, z2_hat, z3_hat]` is advanced with classic
//! RK4. The control signal and the measurement noise are sampled once per
//! step and held over it; the observer sees `y = x1 + n` with `x1` evaluated at
//! every RK4 stage.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    control_law, controller_gains, eso_derivative, gains_from_bandwidth, ControlError,
    ControllerGains, ExtendedEstimate, ObserverGains,
};
use crate::plant::{PlantError, PlantSpec, HORIZON};
use crate::scalar::Real;

/// Criteria above this value are clipped; diverged runs report it for every criterion.
pub const CRITERION_CAP: f64 = 1e6;

/// State magnitude treated as a blow-up.
const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("closed loop diverged at t = {time} s")]
    Diverged { time: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

/// Which state the controller acts on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feedback {
    /// The usual observer-based control law.
    #[default]
    Observer,
    /// The controller is handed the true extended state; used to isolate the
    /// state-feedback part of the loop.
    TrueState,
}

fn default_dt<T: Real>() -> T {
    T::lit(0.001)
}
fn default_horizon<T: Real>() -> T {
    T::lit(HORIZON)
}
fn default_record_hz<T: Real>() -> T {
    T::lit(100.0)
}
fn default_k<T: Real>() -> T {
    T::lit(4.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SimConfig<T> {
    #[serde(default = "default_dt")]
    pub dt: T,
    #[serde(default = "default_horizon")]
    pub horizon: T,
    /// Rate of the decimated observer transient.
    #[serde(default = "default_record_hz")]
    pub record_hz: T,
    pub x0: [T; 2],
    /// Initial observer state; `None` starts from the first measurement,
    /// `(y(0), 0, 0)`.
    #[serde(default)]
    pub zhat0: Option<[T; 3]>,
    /// Controller pole magnitude (`k1 = k^2`, `k2 = 2k`).
    #[serde(default = "default_k")]
    pub k: T,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub feedback: Feedback,
}

impl<T: Real> SimConfig<T> {
    pub fn new(x0: [T; 2], seed: u64) -> Self {
        Self {
            dt: default_dt(),
            horizon: default_horizon(),
            record_hz: default_record_hz(),
            x0,
            zhat0: None,
            k: default_k(),
            seed,
            feedback: Feedback::Observer,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().to_usize().unwrap_or(0)
    }

    /// Samples between two recorded transient rows.
    pub fn decimation(&self) -> usize {
        (T::one() / (self.dt * self.record_hz)).round().to_usize().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.dt > T::zero()) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if !(self.horizon > T::zero()) || self.horizon > T::lit(HORIZON) {
            return bad("horizon must lie in (0, 10] s");
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > T::lit(1e-6) * ratio {
            return bad("horizon must be an integer number of steps");
        }
        if !(self.record_hz > T::zero()) {
            return bad("record_hz must be positive");
        }
        let dec = T::one() / (self.dt * self.record_hz);
        if dec < T::lit(0.5) || (dec - dec.round()).abs() > T::lit(1e-6) * dec {
            return bad("record_hz must divide the sampling rate");
        }
        if !self.x0.iter().all(|v| v.is_finite()) {
            return bad("x0 must be finite");
        }
        controller_gains(self.k)?;
        Ok(())
    }
}

/// Everything observed at one sampling instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample<T> {
    pub t: T,
    pub x: [T; 2],
    pub zhat: [T; 3],
    pub u: T,
    /// Ground-truth total disturbance with the applied control.
    pub d: T,
    pub y: T,
}

/// Consumer of per-step samples.
pub trait Recorder<T> {
    fn record(&mut self, step: usize, sample: &Sample<T>);
}

impl<T, A: Recorder<T>, B: Recorder<T>> Recorder<T> for (A, B) {
    fn record(&mut self, step: usize, sample: &Sample<T>) {
        self.0.record(step, sample);
        self.1.record(step, sample);
    }
}

/// Full-rate record of a closed-loop run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Trajectory<T> {
    pub t: Vec<T>,
    pub x: Vec<[T; 2]>,
    pub zhat: Vec<[T; 3]>,
    pub u: Vec<T>,
    pub d: Vec<T>,
    pub y: Vec<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            t: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            zhat: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            d: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Sampling step (time between the first two samples).
    pub fn dt(&self) -> T {
        if self.t.len() >= 2 {
            self.t[1] - self.t[0]
        } else {
            T::zero()
        }
    }

    /// True extended state `[x1, x2, d]` minus the estimate, per sample.
    pub fn estimation_error(&self) -> Vec<[T; 3]> {
        self.x
            .iter()
            .zip(&self.d)
            .zip(&self.zhat)
            .map(|((x, d), z)| [x[0] - z[0], x[1] - z[1], *d - z[2]])
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x1,x2,zhat1,zhat2,zhat3,u,d,y")?;
        for i in 0..self.len() {
            let (x, z) = (self.x[i], self.zhat[i]);
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                self.t[i], x[0], x[1], z[0], z[1], z[2], self.u[i], self.d[i], self.y[i]
            )?;
        }
        Ok(())
    }
}

impl<T: Real> Recorder<T> for Trajectory<T> {
    fn record(&mut self, _step: usize, s: &Sample<T>) {
        self.t.push(s.t);
        self.x.push(s.x);
        self.zhat.push(s.zhat);
        self.u.push(s.u);
        self.d.push(s.d);
        self.y.push(s.y);
    }
}

/// Observer estimate decimated to `record_hz`.
#[derive(Clone, Debug, Default)]
pub struct TransientRecorder<T> {
    pub every: usize,
    pub rows: Vec<[T; 3]>,
}

impl<T: Real> TransientRecorder<T> {
    pub fn new(every: usize) -> Self {
        Self {
            every: every.max(1),
            rows: Vec::new(),
        }
    }
}

impl<T: Real> Recorder<T> for TransientRecorder<T> {
    fn record(&mut self, step: usize, s: &Sample<T>) {
        if step.is_multiple_of(self.every) {
            self.rows.push(s.zhat);
        }
    }
}

/// The four integral criteria.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CriteriaVector<T> {
    pub iae: T,
    pub iac: T,
    pub iacd: T,
    pub iadee: T,
}

impl<T: Real> CriteriaVector<T> {
    pub fn from_array(a: [T; 4]) -> Self {
        Self {
            iae: a[0],
            iac: a[1],
            iacd: a[2],
            iadee: a[3],
        }
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.iae, self.iac, self.iacd, self.iadee]
    }

    /// Every criterion at the cap.
    pub fn diverged() -> Self {
        Self::from_array([T::lit(CRITERION_CAP); 4])
    }

    /// Clips each criterion to `[0, CRITERION_CAP]`; non-finite values map to the cap.
    pub fn saturated(&self) -> Self {
        let cap = T::lit(CRITERION_CAP);
        Self::from_array(self.to_array().map(|v| if v.is_finite() { v.min(cap) } else { cap }))
    }

    pub fn is_saturated(&self) -> bool {
        self.to_array().iter().any(|v| *v >= T::lit(CRITERION_CAP))
    }
}

/// Left-rectangle accumulation of the criteria, shared by the streaming and
/// the trajectory-based paths so both give identical bits.
#[derive(Clone, Debug)]
pub struct CriteriaAccumulator<T> {
    dt: T,
    sums: CriteriaVector<T>,
    last_u: Option<T>,
}

impl<T: Real> CriteriaAccumulator<T> {
    pub fn new(dt: T) -> Self {
        Self {
            dt,
            sums: CriteriaVector::default(),
            last_u: None,
        }
    }

    #[inline]
    fn push(&mut self, x1: T, u: T, d: T, d_hat: T) {
        self.sums.iae += x1.abs() * self.dt;
        self.sums.iac += u.abs() * self.dt;
        if let Some(prev) = self.last_u {
            self.sums.iacd += (u - prev).abs();
        }
        self.sums.iadee += (d - d_hat).abs() * self.dt;
        self.last_u = Some(u);
    }

    pub fn finish(&self) -> CriteriaVector<T> {
        self.sums
    }
}

impl<T: Real> Recorder<T> for CriteriaAccumulator<T> {
    #[inline]
    fn record(&mut self, _step: usize, s: &Sample<T>) {
        self.push(s.x[0], s.u, s.d, s.zhat[2]);
    }
}

/// IAE, IAC, IACD (sum of control increments) and IADEE of a trajectory.
pub fn compute_criteria<T: Real>(traj: &Trajectory<T>) -> CriteriaVector<T> {
    let mut acc = CriteriaAccumulator::new(traj.dt());
    for i in 0..traj.len() {
        acc.push(traj.x[i][0], traj.u[i], traj.d[i], traj.zhat[i][2]);
    }
    acc.finish()
}

/// User weights of the cost `J`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CriterionWeights<T> {
    pub alpha1: T,
    pub alpha2: T,
    pub alpha3: T,
    pub alpha4: T,
}

impl<T: Real> CriterionWeights<T> {
    pub fn new(alpha: [T; 4]) -> Result<Self, SimError> {
        let w = Self {
            alpha1: alpha[0],
            alpha2: alpha[1],
            alpha3: alpha[2],
            alpha4: alpha[3],
        };
        w.validate()?;
        Ok(w)
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.alpha1, self.alpha2, self.alpha3, self.alpha4]
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let a = self.to_array();
        if a.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(SimError::InvalidConfig("criterion weights must be non-negative".into()));
        }
        if a.iter().all(|v| *v == T::zero()) {
            return Err(SimError::InvalidConfig("at least one criterion weight must be positive".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, c: T) -> Self {
        Self {
            alpha1: self.alpha1 * c,
            alpha2: self.alpha2 * c,
            alpha3: self.alpha3 * c,
            alpha4: self.alpha4 * c,
        }
    }
}

/// `J = a1 IAE + a2 IAC + a3 IACD + a4 IADEE` on raw criteria.
pub fn cost<T: Real>(criteria: &CriteriaVector<T>, w: &CriterionWeights<T>) -> T {
    w.alpha1 * criteria.iae + w.alpha2 * criteria.iac + w.alpha3 * criteria.iacd + w.alpha4 * criteria.iadee
}

/// One classic Runge-Kutta step of `s' = f(t, s)`.
#[inline]
pub fn rk4_step<T: Real, const N: usize>(
    s: &[T; N],
    t: T,
    h: T,
    f: impl Fn(T, &[T; N]) -> Result<[T; N], SimError>,
) -> Result<[T; N], SimError> {
    let half = h * T::lit(0.5);
    let axpy = |a: &[T; N], k: &[T; N], c: T| {
        let mut o = *a;
        for i in 0..N {
            o[i] += c * k[i];
        }
        o
    };
    let k1 = f(t, s)?;
    let k2 = f(t + half, &axpy(s, &k1, half))?;
    let k3 = f(t + half, &axpy(s, &k2, half))?;
    let k4 = f(t + h, &axpy(s, &k3, h))?;
    let sixth = h / T::lit(6.0);
    let mut out = *s;
    for i in 0..N {
        out[i] += sixth * (k1[i] + T::lit(2.0) * (k2[i] + k3[i]) + k4[i]);
    }
    Ok(out)
}

/// Derivative of the joint plant + observer state for held `u` and `n`.
#[inline]
fn joint_derivative<T: Real>(
    spec: &PlantSpec<T>,
    gains: &ObserverGains<T>,
    g_hat: T,
    u: T,
    n: T,
    t: T,
    s: &[T; 5],
) -> Result<[T; 5], SimError> {
    let x = [s[0], s[1]];
    let accel = spec.drift(x, t) + spec.input_gain(x) * u + spec.external_disturbance(t)?;
    let z = ExtendedEstimate::new([s[2], s[3], s[4]]);
    let dz = eso_derivative(&z, s[0] + n, u, gains, g_hat);
    Ok([s[1], accel, dz[0], dz[1], dz[2]])
}

fn true_state_control<T: Real>(spec: &PlantSpec<T>, kg: &ControllerGains<T>, x: [T; 2], t: T) -> Result<T, SimError> {
    // g u = -k x - f - d*  cancels the whole disturbance exactly
    let g = spec.input_gain(x);
    Ok((-kg.k1 * x[0] - kg.k2 * x[1] - spec.drift(x, t) - spec.external_disturbance(t)?) / g)
}

/// Runs the closed loop, feeding every sample to `rec`.
pub fn simulate<T: Real, R: Recorder<T>>(
    spec: &PlantSpec<T>,
    gains: &ObserverGains<T>,
    cfg: &SimConfig<T>,
    rec: &mut R,
) -> Result<(), SimError> {
    cfg.validate()?;
    let kg = controller_gains(cfg.k)?;
    let g_hat = spec.g_hat();
    if g_hat == T::zero() {
        return Err(ControlError::ZeroInputGain.into());
    }
    let mut noise = spec.noise.source(cfg.seed)?;
    let n_steps = cfg.steps();
    let limit = T::lit(DIVERGENCE_LIMIT);

    let mut s = [cfg.x0[0], cfg.x0[1], T::zero(), T::zero(), T::zero()];
    for step in 0..n_steps {
        let t = T::from_usize_lossy(step) * cfg.dt;
        let n = noise.next_sample();
        let y = s[0] + n;
        if step == 0 {
            let z0 = cfg.zhat0.unwrap_or([y, T::zero(), T::zero()]);
            s[2..].copy_from_slice(&z0);
        }
        let x = [s[0], s[1]];
        let zhat = [s[2], s[3], s[4]];
        let u = match cfg.feedback {
            Feedback::Observer => control_law(&ExtendedEstimate::new(zhat), &kg, g_hat)?,
            Feedback::TrueState => true_state_control(spec, &kg, x, t)?,
        };
        let d = spec.total_disturbance(x, u, t)?;
        rec.record(
            step,
            &Sample {
                t,
                x,
                zhat,
                u,
                d,
                y,
            },
        );
        s = rk4_step(&s, t, cfg.dt, |tt, st| joint_derivative(spec, gains, g_hat, u, n, tt, st))?;
        if s.iter().any(|v| !v.is_finite() || v.abs() > limit) {
            return Err(SimError::Diverged {
                time: (T::from_usize_lossy(step + 1) * cfg.dt).to_f64_lossy(),
            });
        }
    }
    Ok(())
}

/// Full trajectory of one closed-loop run.
pub fn run_closed_loop<T: Real>(
    spec: &PlantSpec<T>,
    gains: &ObserverGains<T>,
    cfg: &SimConfig<T>,
) -> Result<Trajectory<T>, SimError> {
    let mut traj = Trajectory::with_capacity(cfg.steps());
    simulate(spec, gains, cfg, &mut traj)?;
    Ok(traj)
}

/// Criteria of one run without storing the trajectory. Divergence propagates.
pub fn run_criteria<T: Real>(
    spec: &PlantSpec<T>,
    gains: &ObserverGains<T>,
    cfg: &SimConfig<T>,
) -> Result<CriteriaVector<T>, SimError> {
    let mut acc = CriteriaAccumulator::new(cfg.dt);
    simulate(spec, gains, cfg, &mut acc)?;
    Ok(acc.finish())
}

/// Criteria of one run for labeling: divergence maps to the cap and large
/// values are clipped. Configuration errors still propagate.
pub fn labeled_criteria<T: Real>(
    spec: &PlantSpec<T>,
    gains: &ObserverGains<T>,
    cfg: &SimConfig<T>,
) -> Result<CriteriaVector<T>, SimError> {
    match run_criteria(spec, gains, cfg) {
        Ok(c) => Ok(c.saturated()),
        Err(SimError::Diverged { .. }) => Ok(CriteriaVector::diverged()),
        Err(e) => Err(e),
    }
}

/// Mean of [`labeled_criteria`] over the noise seeds `seeds`.
pub fn mean_criteria<T: Real>(
    spec: &PlantSpec<T>,
    gains: &ObserverGains<T>,
    cfg: &SimConfig<T>,
    seeds: &[u64],
) -> Result<CriteriaVector<T>, SimError> {
    let mut sum = [T::zero(); 4];
    for &seed in seeds {
        let c = labeled_criteria(spec, gains, &cfg.with_seed(seed))?.to_array();
        for i in 0..4 {
            sum[i] += c[i];
        }
    }
    let n = T::from_usize_lossy(seeds.len().max(1));
    Ok(CriteriaVector::from_array(sum.map(|v| v / n)))
}

/// Criteria of bandwidth-parametrized observers, one per `omega`.
pub fn sweep_bandwidth<T: Real>(
    spec: &PlantSpec<T>,
    cfg: &SimConfig<T>,
    omegas: &[T],
) -> Result<Vec<CriteriaVector<T>>, SimError> {
    omegas
        .iter()
        .map(|&w| {
            if !(w >= T::one() && w <= T::lit(80.0)) {
                return Err(SimError::InvalidConfig(format!(
                    "bandwidth {} outside [1, 80]",
                    w.to_f64_lossy()
                )));
            }
            run_criteria(spec, &gains_from_bandwidth(w)?, cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{gains_from_eigenvalues, EigenTriple};
    use crate::plant::{M1dParams, NoiseModel, NsParams};
    use approx::assert_relative_eq;

    fn m1d_example_spec(sigma: f64) -> PlantSpec<f64> {
        PlantSpec::m1d(
            M1dParams::new([-8.8255, -20.169, 0.25, 0.25, 2.0, 1.0, 1.0]),
            NoiseModel::new(sigma, 0),
        )
    }

    fn m1d_example_cfg() -> SimConfig<f64> {
        let mut c = SimConfig::new([1.0, 0.0], 0);
        c.zhat0 = Some([1.0, 0.0, 0.0]);
        c
    }

    fn quiet_ns() -> PlantSpec<f64> {
        PlantSpec::ns(NsParams::new([1.0, 0.0, 1.0, 1.0, 0.15, 1.0]), NoiseModel::new(0.0, 0))
    }

    #[test]
    fn m1d_example_operating_point_settles() {
        let traj = run_closed_loop(&m1d_example_spec(0.0059), &gains_from_bandwidth(25.0).unwrap(), &m1d_example_cfg()).unwrap();
        assert_eq!(traj.len(), 10_000);
        // steady tracking under the constant load, just before the sawtooth starts
        assert!(traj.x[4000..5000].iter().all(|x| x[0].abs() < 0.05));
        // the 1 Hz sine on the last segment keeps x1 moving by about 0.2
        let tail = traj.x[7600..].iter().map(|x| x[0].abs()).fold(0.0, f64::max);
        assert!(tail < 0.3, "{tail}");
    }

    #[test]
    fn equilibrium_is_invariant() {
        let cfg = SimConfig::new([0.0, 0.0], 3);
        let traj = run_closed_loop(&quiet_ns(), &gains_from_bandwidth(25.0).unwrap(), &cfg).unwrap();
        assert!(traj.x.iter().all(|x| *x == [0.0, 0.0]));
        assert!(traj.u.iter().all(|u| *u == 0.0));
        let m = PlantSpec::m1d(M1dParams::new([-8.0, -20.0, 0.0, 0.0, 0.0, 0.0, 0.0]), NoiseModel::new(0.0, 0));
        let traj = run_closed_loop(&m, &gains_from_bandwidth(10.0).unwrap(), &cfg).unwrap();
        assert!(traj.x.iter().all(|x| *x == [0.0, 0.0]));
    }

    #[test]
    fn runs_are_bit_identical_per_seed() {
        let spec = m1d_example_spec(0.01);
        let g = gains_from_bandwidth(30.0).unwrap();
        let a = run_closed_loop(&spec, &g, &m1d_example_cfg()).unwrap();
        let b = run_closed_loop(&spec, &g, &m1d_example_cfg()).unwrap();
        assert_eq!(a, b);
        let c = run_closed_loop(&spec, &g, &m1d_example_cfg().with_seed(1)).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn streaming_and_trajectory_criteria_agree_bitwise() {
        let spec = m1d_example_spec(0.01);
        let g = gains_from_eigenvalues(&EigenTriple::new(-10.0, -30.0, -55.0).unwrap()).unwrap();
        let traj = run_closed_loop(&spec, &g, &m1d_example_cfg()).unwrap();
        assert_eq!(compute_criteria(&traj), run_criteria(&spec, &g, &m1d_example_cfg()).unwrap());
    }

    #[test]
    fn criteria_examples() {
        let n = 10_000;
        let mut traj = Trajectory::<f64>::with_capacity(n);
        for i in 0..n {
            traj.record(
                i,
                &Sample {
                    t: i as f64 * 1e-3,
                    x: [0.0, 0.0],
                    zhat: [0.0; 3],
                    u: if i < 4000 { 0.0 } else { 1.0 },
                    d: 0.0,
                    y: 0.0,
                },
            );
        }
        let c = compute_criteria(&traj);
        assert_eq!(c.iae, 0.0);
        assert_eq!(c.iacd, 1.0);
        assert_relative_eq!(c.iac, 6.0, epsilon = 1e-9);
        for u in traj.u.iter_mut() {
            *u = 1.0;
        }
        let c = compute_criteria(&traj);
        assert_relative_eq!(c.iac, 10.0, epsilon = 1e-9);
        assert_eq!(c.iacd, 0.0);
    }

    #[test]
    fn cost_examples() {
        let c = CriteriaVector::from_array([0.5, 2.0, 100.0, 7.0]);
        assert_eq!(cost(&c, &CriterionWeights::new([10.0, 1.0, 0.0, 0.0]).unwrap()), 7.0);
        assert_eq!(cost(&c, &CriterionWeights::new([0.0, 0.0, 0.0, 1.0]).unwrap()), 7.0);
        assert!(CriterionWeights::new([0.0; 4]).is_err());
        assert!(CriterionWeights::new([1.0, -1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn saturation() {
        let c = CriteriaVector::from_array([1.0, 2e6, f64::NAN, f64::INFINITY]).saturated();
        assert_eq!(c.to_array(), [1.0, 1e6, 1e6, 1e6]);
        assert!(c.is_saturated());
    }

    #[test]
    fn divergence_is_reported_with_time() {
        // input gain of the wrong sign: the loop runs away
        let mut spec = m1d_example_spec(0.0);
        if let crate::plant::PlantParams::M1d(p) = &mut spec.params {
            p.g_hat = 20.0;
        }
        let err = run_closed_loop(&spec, &gains_from_bandwidth(40.0).unwrap(), &m1d_example_cfg()).unwrap_err();
        match err {
            SimError::Diverged { time } => assert!(time > 0.0 && time <= 10.0),
            other => panic!("unexpected {other:?}"),
        }
        let c = labeled_criteria(&spec, &gains_from_bandwidth(40.0).unwrap(), &m1d_example_cfg()).unwrap();
        assert_eq!(c, CriteriaVector::diverged());
    }

    #[test]
    fn config_validation() {
        let mut c = m1d_example_cfg();
        c.dt = 0.0;
        assert!(c.validate().is_err());
        let mut c = m1d_example_cfg();
        c.horizon = 12.0;
        assert!(c.validate().is_err());
        let mut c = m1d_example_cfg();
        c.record_hz = 300.0;
        assert!(c.validate().is_err());
        let mut c = m1d_example_cfg();
        c.k = -1.0;
        assert!(c.validate().is_err());
        assert_eq!(m1d_example_cfg().decimation(), 10);
    }

    #[test]
    fn rk4_has_fourth_order_on_the_joint_system() {
        // fixed control over a window without disturbance switches
        let spec = PlantSpec::m1d(M1dParams::new([-8.8255, -20.169, 0.25, 0.0, 0.0, 0.0, 0.0]), NoiseModel::new(0.0, 0));
        let g = gains_from_bandwidth(40.0).unwrap();
        let s0 = [1.0, -0.5, 0.8, 0.1, -3.0];
        let integrate = |h: f64| {
            let steps = (0.2 / h).round() as usize;
            let mut s = s0;
            for i in 0..steps {
                let t = 3.0 + i as f64 * h;
                s = rk4_step(&s, t, h, |tt, st| joint_derivative(&spec, &g, -20.0, 0.3, 0.0, tt, st)).unwrap();
            }
            s
        };
        let (a, b, c) = (integrate(4e-3), integrate(2e-3), integrate(1e-3));
        let diff = |p: [f64; 5], q: [f64; 5]| p.iter().zip(q).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let order = (diff(a, b) / diff(b, c)).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn rectangle_and_trapezoid_iae_agree() {
        let spec = m1d_example_spec(0.0);
        let traj = run_closed_loop(&spec, &gains_from_bandwidth(25.0).unwrap(), &m1d_example_cfg()).unwrap();
        let rect = compute_criteria(&traj).iae;
        let dt = traj.dt();
        let trap: f64 = traj.x.windows(2).map(|w| 0.5 * (w[0][0].abs() + w[1][0].abs()) * dt).sum();
        assert!((rect - trap).abs() / trap < 0.01);
    }

    #[test]
    fn record_rate_does_not_change_criteria() {
        let spec = m1d_example_spec(0.01);
        let g = gains_from_bandwidth(20.0).unwrap();
        let mut cfg = m1d_example_cfg();
        let a = run_criteria(&spec, &g, &cfg).unwrap();
        cfg.record_hz = 50.0;
        assert_eq!(a, run_criteria(&spec, &g, &cfg).unwrap());
        let mut rec = TransientRecorder::new(cfg.decimation());
        simulate(&spec, &g, &cfg, &mut rec).unwrap();
        assert_eq!(rec.rows.len(), 500);
    }

    #[test]
    fn estimation_error_decays_without_disturbance() {
        // b1 = 0 and b2 = g_hat make the total disturbance vanish identically
        let spec = PlantSpec::m1d(M1dParams::new([0.0, -20.0, 0.0, 0.0, 0.0, 0.0, 0.0]), NoiseModel::new(0.0, 0));
        let w: f64 = 20.0;
        let mut cfg = SimConfig::new([0.7, -0.4], 0);
        cfg.zhat0 = Some([0.7, 0.0, 0.0]);
        let traj = run_closed_loop(&spec, &gains_from_bandwidth(w).unwrap(), &cfg).unwrap();
        let norms: Vec<f64> = traj
            .estimation_error()
            .iter()
            .map(|e| (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt())
            .collect();
        let start = (10.0 / w / 1e-3) as usize;
        let floor = 1e-12;
        for win in norms[start..].windows(2) {
            assert!(win[1] <= win[0] + floor, "{} > {}", win[1], win[0]);
        }
    }

    #[test]
    fn sweep_lengths_and_range() {
        let spec = m1d_example_spec(0.0059);
        assert_eq!(sweep_bandwidth(&spec, &m1d_example_cfg(), &[25.0]).unwrap().len(), 1);
        assert!(sweep_bandwidth(&spec, &m1d_example_cfg(), &[0.5]).is_err());
    }

    #[test]
    fn trajectory_csv_header() {
        let spec = m1d_example_spec(0.0);
        let mut cfg = m1d_example_cfg();
        cfg.horizon = 0.01;
        let traj = run_closed_loop(&spec, &gains_from_bandwidth(25.0).unwrap(), &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2,zhat1,zhat2,zhat3,u,d,y");
        assert_eq!(lines.count(), 10);
    }
}

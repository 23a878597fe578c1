//! Benchmark plants: the nonlinear system (NS) and the DC-motor driven
//! one-degree-of-freedom manipulator (M1D).
//!
//! Both are second-order systems `x1' = x2`, `x2' = f(x, t) + g(x) u + d*(t)`
//! observed through `y = x1 + n`. The controller only knows the constant
//! input-gain estimate `g_hat`; everything else is lumped into the total
//! disturbance `d = f + (g - g_hat) u + d*`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Every experiment runs on `[0, HORIZON]` seconds.
pub const HORIZON: f64 = 10.0;

/// Instants where the M1D external disturbance switches segments.
pub const M1D_BREAKPOINTS: [f64; 3] = [2.5, 5.0, 7.5];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("time {0} s lies outside the simulation horizon [0, {HORIZON}]")]
    OutsideHorizon(f64),
    #[error("noise standard deviation must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("noise truncation must be positive, got {0}")]
    BadTruncation(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum PlantKind {
    #[serde(rename = "NS")]
    Ns,
    #[serde(rename = "M1D")]
    M1d,
}

impl PlantKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlantKind::Ns => "NS",
            PlantKind::M1d => "M1D",
        }
    }

    /// Fixed input-gain estimate used by the controller for this plant family.
    pub fn default_g_hat(self) -> f64 {
        match self {
            PlantKind::Ns => -1.0,
            PlantKind::M1d => -20.0,
        }
    }
}

impl std::fmt::Display for PlantKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PlantKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "NS" => Ok(PlantKind::Ns),
            "M1D" => Ok(PlantKind::M1d),
            other => Err(format!("unknown plant kind `{other}` (expected NS or M1D)")),
        }
    }
}

/// Parameters of the nonlinear benchmark.
///
/// `f = sin(a1 t) x1 + x2^2`, `g = -(a4 + a5 sin(a6 x2))`, `d* = a2 cos(a3 t)`.
/// The input gain carries the sign of `g_hat` so that `g / g_hat` stays in
/// `(0, 3)` for every parameter draw; with the opposite sign the observer-based
/// loop has no stable tuning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NsParams<T> {
    pub a1: T,
    pub a2: T,
    pub a3: T,
    pub a4: T,
    pub a5: T,
    pub a6: T,
    #[serde(default = "ns_g_hat")]
    pub g_hat: T,
}

impl<T: Real> NsParams<T> {
    pub fn new(a: [f64; 6]) -> Self {
        Self {
            a1: T::lit(a[0]),
            a2: T::lit(a[1]),
            a3: T::lit(a[2]),
            a4: T::lit(a[3]),
            a5: T::lit(a[4]),
            a6: T::lit(a[5]),
            g_hat: T::lit(PlantKind::Ns.default_g_hat()),
        }
    }
}

/// Parameters of the manipulator. `b1 = -(R Cb + Ke Ki)/(J R)`, `b2 = -Ki/(J R)`;
/// `b3..b7` shape the piecewise load disturbance, which is scaled by `b2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct M1dParams<T> {
    pub b1: T,
    pub b2: T,
    pub b3: T,
    pub b4: T,
    pub b5: T,
    pub b6: T,
    pub b7: T,
    #[serde(default = "m1d_g_hat")]
    pub g_hat: T,
}

impl<T: Real> M1dParams<T> {
    pub fn new(b: [f64; 7]) -> Self {
        Self {
            b1: T::lit(b[0]),
            b2: T::lit(b[1]),
            b3: T::lit(b[2]),
            b4: T::lit(b[3]),
            b5: T::lit(b[4]),
            b6: T::lit(b[5]),
            b7: T::lit(b[6]),
            g_hat: T::lit(PlantKind::M1d.default_g_hat()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", bound = "T: Real")]
pub enum PlantParams<T> {
    #[serde(rename = "NS")]
    Ns(NsParams<T>),
    #[serde(rename = "M1D")]
    M1d(M1dParams<T>),
}

fn ns_g_hat<T: Real>() -> T {
    T::lit(PlantKind::Ns.default_g_hat())
}

fn m1d_g_hat<T: Real>() -> T {
    T::lit(PlantKind::M1d.default_g_hat())
}

fn default_truncation<T: Real>() -> T {
    T::lit(3.0)
}

/// Zero-mean normal measurement noise truncated at `truncation_k * sigma_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NoiseModel<T> {
    pub sigma_n: T,
    #[serde(default = "default_truncation")]
    pub truncation_k: T,
    #[serde(default)]
    pub seed: u64,
}

impl<T: Real> NoiseModel<T> {
    pub fn new(sigma_n: T, seed: u64) -> Self {
        Self {
            sigma_n,
            truncation_k: default_truncation(),
            seed,
        }
    }

    /// Noise bound `n_bar = truncation_k * sigma_n`.
    pub fn bound(&self) -> T {
        self.truncation_k * self.sigma_n
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.sigma_n >= T::zero()) {
            return Err(PlantError::NegativeSigma(self.sigma_n.to_f64_lossy()));
        }
        if !(self.truncation_k > T::zero()) {
            return Err(PlantError::BadTruncation(self.truncation_k.to_f64_lossy()));
        }
        Ok(())
    }

    /// Streaming sampler over this model seeded with `seed`.
    pub fn source(&self, seed: u64) -> Result<NoiseSource<T>, PlantError> {
        self.validate()?;
        Ok(NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            sigma: self.sigma_n,
            k: self.truncation_k.to_f64_lossy(),
        })
    }
}

/// Deterministic truncated-normal stream.
#[derive(Clone, Debug)]
pub struct NoiseSource<T> {
    rng: ChaCha8Rng,
    sigma: T,
    k: f64,
}

impl<T: Real> NoiseSource<T> {
    #[inline]
    pub fn next_sample(&mut self) -> T {
        loop {
            let z: f64 = self.rng.sample(StandardNormal);
            if z.abs() <= self.k {
                return self.sigma * T::lit(z);
            }
        }
    }
}

/// Draws `count` i.i.d. samples using the model's own seed.
pub fn sample_noise<T: Real>(model: &NoiseModel<T>, count: usize) -> Result<Vec<T>, PlantError> {
    let mut src = model.source(model.seed)?;
    Ok((0..count).map(|_| src.next_sample()).collect())
}

/// Zero-mean sawtooth with period `2 pi` and range `[-1, 1)`.
#[inline]
pub fn sawtooth<T: Real>(theta: T) -> T {
    let cycles = theta / T::TAU();
    T::lit(2.0) * (cycles - (cycles + T::lit(0.5)).floor())
}

/// A benchmark plant together with its measurement noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PlantSpec<T> {
    #[serde(flatten)]
    pub params: PlantParams<T>,
    #[serde(flatten)]
    pub noise: NoiseModel<T>,
}

impl<T: Real> PlantSpec<T> {
    pub fn ns(params: NsParams<T>, noise: NoiseModel<T>) -> Self {
        Self {
            params: PlantParams::Ns(params),
            noise,
        }
    }

    pub fn m1d(params: M1dParams<T>, noise: NoiseModel<T>) -> Self {
        Self {
            params: PlantParams::M1d(params),
            noise,
        }
    }

    pub fn kind(&self) -> PlantKind {
        match self.params {
            PlantParams::Ns(_) => PlantKind::Ns,
            PlantParams::M1d(_) => PlantKind::M1d,
        }
    }

    pub fn g_hat(&self) -> T {
        match &self.params {
            PlantParams::Ns(p) => p.g_hat,
            PlantParams::M1d(p) => p.g_hat,
        }
    }

    /// Drift `f(x, t)`.
    #[inline]
    pub fn drift(&self, x: [T; 2], t: T) -> T {
        match &self.params {
            PlantParams::Ns(p) => (p.a1 * t).sin() * x[0] + x[1] * x[1],
            PlantParams::M1d(p) => p.b1 * x[1],
        }
    }

    /// Input gain `g(x)`.
    #[inline]
    pub fn input_gain(&self, x: [T; 2]) -> T {
        match &self.params {
            PlantParams::Ns(p) => -(p.a4 + p.a5 * (p.a6 * x[1]).sin()),
            PlantParams::M1d(p) => p.b2,
        }
    }

    /// External disturbance `d*(t)`, defined on `[0, HORIZON]`.
    #[inline]
    pub fn external_disturbance(&self, t: T) -> Result<T, PlantError> {
        if !(t >= T::zero() && t <= T::lit(HORIZON)) {
            return Err(PlantError::OutsideHorizon(t.to_f64_lossy()));
        }
        Ok(match &self.params {
            PlantParams::Ns(p) => p.a2 * (p.a3 * t).cos(),
            PlantParams::M1d(p) => {
                let [s1, s2, s3] = M1D_BREAKPOINTS.map(T::lit);
                let load = if t < s1 {
                    return Ok(T::zero());
                } else if t < s2 {
                    p.b3
                } else if t < s3 {
                    p.b3 + p.b4 * sawtooth(T::TAU() * p.b5 * (t - s2))
                } else {
                    p.b3 + p.b6 * (T::TAU() * p.b7 * (t - s3)).sin()
                };
                // -(Ki / J R) * load, with b2 = -Ki / (J R)
                p.b2 * load
            }
        })
    }

    /// Ground-truth total disturbance `d = f + (g - g_hat) u + d*`.
    #[inline]
    pub fn total_disturbance(&self, x: [T; 2], u: T, t: T) -> Result<T, PlantError> {
        Ok(self.drift(x, t)
            + (self.input_gain(x) - self.g_hat()) * u
            + self.external_disturbance(t)?)
    }

    /// Instants (inside the horizon) where `d*` is discontinuous.
    pub fn breakpoints(&self) -> Vec<T> {
        match self.kind() {
            PlantKind::Ns => Vec::new(),
            PlantKind::M1d => M1D_BREAKPOINTS.iter().map(|&b| T::lit(b)).collect(),
        }
    }

    /// Every instant in `(0, HORIZON)` where `d*` may jump: the segment
    /// switches plus the wraps of the sawtooth, ascending.
    pub fn discontinuities(&self) -> Vec<T> {
        let mut out = self.breakpoints();
        if let PlantParams::M1d(p) = &self.params {
            if p.b4 != T::zero() && p.b5 > T::zero() {
                // saw(2 pi b5 (t - 5)) wraps where b5 (t - 5) = m + 1/2
                let (s2, s3) = (T::lit(M1D_BREAKPOINTS[1]), T::lit(M1D_BREAKPOINTS[2]));
                let mut m = T::zero();
                loop {
                    let t = s2 + (m + T::lit(0.5)) / p.b5;
                    if t >= s3 {
                        break;
                    }
                    out.push(t);
                    m += T::one();
                }
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        out
    }
}

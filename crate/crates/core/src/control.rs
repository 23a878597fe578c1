//! Extended state observer gains, the state-feedback controller and the
//! disturbance-cancelling control law.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::SquareMatrix;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("observer eigenvalue {0} is not strictly negative")]
    NonNegativeEigenvalue(f64),
    #[error("observer bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("controller pole magnitude must be positive, got {0}")]
    NonPositivePole(f64),
    #[error("input gain estimate must be nonzero")]
    ZeroInputGain,
}

/// Real eigenvalues placed on the observer error dynamics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct EigenTriple<T> {
    pub lambda1: T,
    pub lambda2: T,
    pub lambda3: T,
}

impl<T: Real> EigenTriple<T> {
    pub fn new(lambda1: T, lambda2: T, lambda3: T) -> Result<Self, ControlError> {
        let t = Self {
            lambda1,
            lambda2,
            lambda3,
        };
        t.validate()?;
        Ok(t)
    }

    /// All three eigenvalues at `-omega_o`.
    pub fn repeated(omega_o: T) -> Result<Self, ControlError> {
        Self::new(-omega_o, -omega_o, -omega_o)
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        for v in self.as_array() {
            if !(v < T::zero()) || !v.is_finite() {
                return Err(ControlError::NonNegativeEigenvalue(v.to_f64_lossy()));
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [T; 3] {
        [self.lambda1, self.lambda2, self.lambda3]
    }

    /// Ascending order (most negative first).
    pub fn canonical(&self) -> Self {
        let mut a = self.as_array();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        Self {
            lambda1: a[0],
            lambda2: a[1],
            lambda3: a[2],
        }
    }

    pub fn sum(&self) -> T {
        let c = self.canonical();
        (c.lambda1 + c.lambda2) + c.lambda3
    }
}

/// Observer gain vector `l`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ObserverGains<T> {
    pub l1: T,
    pub l2: T,
    pub l3: T,
}

impl<T: Real> ObserverGains<T> {
    pub fn norm(&self) -> T {
        (self.l1 * self.l1 + self.l2 * self.l2 + self.l3 * self.l3).sqrt()
    }

    /// Estimation error matrix `H = A3 - l c3^T`.
    pub fn error_matrix(&self) -> SquareMatrix<T> {
        let (o, i) = (T::zero(), T::one());
        SquareMatrix::from_rows(&[[-self.l1, i, o], [-self.l2, o, i], [-self.l3, o, o]])
    }
}

/// Pole-placement gains for the observer error dynamics (Vieta's formulas on
/// the canonically ordered eigenvalues, so the result is bit-identical for
/// every permutation of the input).
pub fn gains_from_eigenvalues<T: Real>(lam: &EigenTriple<T>) -> Result<ObserverGains<T>, ControlError> {
    lam.validate()?;
    let c = lam.canonical();
    let (a, b, d) = (c.lambda1, c.lambda2, c.lambda3);
    Ok(ObserverGains {
        l1: -((a + b) + d),
        l2: (a * b + a * d) + b * d,
        l3: -((a * b) * d),
    })
}

/// Bandwidth parametrization `l = (3w, 3w^2, w^3)`.
///
/// Evaluated in the same operation order as [`gains_from_eigenvalues`] so that
/// `gains_from_bandwidth(w) == gains_from_eigenvalues(-w, -w, -w)` exactly.
pub fn gains_from_bandwidth<T: Real>(omega_o: T) -> Result<ObserverGains<T>, ControlError> {
    if !(omega_o > T::zero()) || !omega_o.is_finite() {
        return Err(ControlError::NonPositiveBandwidth(omega_o.to_f64_lossy()));
    }
    let w2 = omega_o * omega_o;
    Ok(ObserverGains {
        l1: (omega_o + omega_o) + omega_o,
        l2: (w2 + w2) + w2,
        l3: w2 * omega_o,
    })
}

/// State-feedback gains placing both closed-loop poles at `-k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ControllerGains<T> {
    pub k1: T,
    pub k2: T,
    pub k: T,
}

impl<T: Real> ControllerGains<T> {
    /// `A2 - b2 k`.
    pub fn feedback_matrix(&self) -> SquareMatrix<T> {
        SquareMatrix::from_rows(&[[T::zero(), T::one()], [-self.k1, -self.k2]])
    }
}

pub fn controller_gains<T: Real>(k: T) -> Result<ControllerGains<T>, ControlError> {
    if !(k > T::zero()) || !k.is_finite() {
        return Err(ControlError::NonPositivePole(k.to_f64_lossy()));
    }
    Ok(ControllerGains {
        k1: k * k,
        k2: T::lit(2.0) * k,
        k,
    })
}

/// Observer state `[x1_hat, x2_hat, d_hat]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ExtendedEstimate<T> {
    pub zhat: [T; 3],
}

impl<T: Real> ExtendedEstimate<T> {
    pub fn new(zhat: [T; 3]) -> Self {
        Self { zhat }
    }
}

/// `u = (-k1 x1_hat - k2 x2_hat - d_hat) / g_hat`.
#[inline]
pub fn control_law<T: Real>(
    zhat: &ExtendedEstimate<T>,
    kg: &ControllerGains<T>,
    g_hat: T,
) -> Result<T, ControlError> {
    if g_hat == T::zero() {
        return Err(ControlError::ZeroInputGain);
    }
    let [x1, x2, d] = zhat.zhat;
    Ok((-kg.k1 * x1 - kg.k2 * x2 - d) / g_hat)
}

/// Right-hand side of the Luenberger-type extended state observer.
#[inline]
pub fn eso_derivative<T: Real>(
    zhat: &ExtendedEstimate<T>,
    y: T,
    u: T,
    gains: &ObserverGains<T>,
    g_hat: T,
) -> [T; 3] {
    let [z1, z2, z3] = zhat.zhat;
    let e = y - z1;
    [z2 + gains.l1 * e, z3 + g_hat * u + gains.l2 * e, gains.l3 * e]
}

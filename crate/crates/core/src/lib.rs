//! Extended-state-observer tuning toolkit.
//!
//! Simulates ADRC loops on two benchmark plants, generates labeled performance
//! datasets, trains a neural performance estimator and selects observer
//! eigenvalues that minimize a weighted cost over four integral criteria.
//!
//! The numerical core is generic over [`scalar::Real`]; the aliases below fix
//! it to `f64`, which is what the dataset, estimator training and tuner use.

// `!(x > 0)` is the NaN-rejecting form; index loops mirror the matrix algebra
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod control;
pub mod dataset;
pub mod estimator;
pub mod linalg;
pub mod plant;
pub mod scalar;
pub mod sim;
pub mod tuner;

pub use control::{
    control_law, controller_gains, eso_derivative, gains_from_bandwidth, gains_from_eigenvalues,
    ControlError,
};
pub use plant::{PlantError, PlantKind};
pub use scalar::{Field, Real};
pub use sim::{compute_criteria, cost, run_closed_loop, sweep_bandwidth, SimError};

pub type PlantSpecF64 = plant::PlantSpec<f64>;
pub type NsParamsF64 = plant::NsParams<f64>;
pub type M1dParamsF64 = plant::M1dParams<f64>;
pub type NoiseModelF64 = plant::NoiseModel<f64>;
pub type EigenTripleF64 = control::EigenTriple<f64>;
pub type ObserverGainsF64 = control::ObserverGains<f64>;
pub type SimConfigF64 = sim::SimConfig<f64>;
pub type TrajectoryF64 = sim::Trajectory<f64>;
pub type CriteriaF64 = sim::CriteriaVector<f64>;
pub type WeightsF64 = sim::CriterionWeights<f64>;

pub type PlantSpecF32 = plant::PlantSpec<f32>;
pub type SimConfigF32 = sim::SimConfig<f32>;

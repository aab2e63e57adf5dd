//! Data-driven speed control for an autonomous underwater vehicle.
//!
//! The crate identifies a lifted linear (Koopman/EDMD) model of the nonlinear
//! AUV surge dynamics from input–output data and controls it with a
//! constrained model-predictive controller. The pipeline is:
//!
//! 1. [`plant`] — ground-truth surge simulator (propeller thrust law plus
//!    speed equation, integrated with fixed-step RK4 or forward Euler).
//! 2. [`lifting`] — dictionary of observables (identity state plus Gaussian
//!    radial basis functions) mapping the state into a higher-dimensional
//!    space.
//! 3. [`edmd`] — snapshot collection and the Tikhonov-regularized regression
//!    producing the lifted predictor `z⁺ = A z + B u`, `x̂ = C z`.
//! 4. [`mpc`] / [`qp`] — Δu-augmented condensed MPC with box constraints on
//!    input, input increment, and predicted output, solved by a dense dual
//!    active-set method.
//! 5. [`harness`] — end-to-end prediction and closed-loop tracking
//!    experiments with CSV trace output and summary metrics.
//!
//! With the default `parallel` feature, trajectory collection and the
//! regression assembly run on rayon worker threads. The sequential fallback
//! (`--no-default-features`) produces bit-identical results; partial sums are
//! always combined in a fixed chunk order.

pub mod edmd;
pub mod error;
pub mod harness;
pub mod lifting;
pub mod mpc;
pub mod plant;
pub mod qp;

pub use edmd::{CollectOptions, Dataset, LiftedModel};
pub use error::{Error, Result};
pub use harness::{ClosedLoopTrace, ReferenceSignal, TraceMetrics};
pub use lifting::Dictionary;
pub use mpc::{AugmentedModel, ControllerState, MpcConfig};
pub use plant::{IntegrationMethod, PlantParams};

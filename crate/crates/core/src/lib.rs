//! Channel estimation for an RIS-aided MISO uplink.
//!
//! A single-antenna user sends `tau_p` unit-modulus pilots while an
//! `N`-element reflecting surface cycles through an activation pattern. The
//! `M`-antenna base station estimates the composite channel (direct link plus
//! all `N` cascade columns) with
//!
//! * the least-squares / MVU estimator under the on-off pattern,
//! * the least-squares / MVU estimator under the DFT pattern,
//! * the MMSE estimator applied on top of the DFT-pattern LS output,
//!
//! and compares Monte Carlo NMSE against the closed-form predictions.
//!
//! Trials run on rayon when the `parallel` feature is on (the default) and on
//! a plain loop otherwise; both paths produce bit-identical results.

pub mod channel;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod patterns;
pub mod sim;

pub use error::{Error, Result};
pub use estimators::{ChannelGroup, EstimatorKind};
pub use linalg::{CMatrix, CVector, RngStream, C64};
pub use sim::{monte_carlo_sweep, Execution, NmseCurve, Simulation, SystemConfig};

//! Neural-network pricers for multidimensional American basket puts.
//!
//! Two solvers share one network architecture and one differentiation
//! engine:
//!
//! * [`solvers::tdgf_train`] steps forward in time to maturity, minimising a
//!   proximity-plus-energy functional at each step;
//! * [`solvers::dgm_train`] fits a single space-time network to the squared
//!   free-boundary residual.
//!
//! [`oracle`] holds independent references (least-squares Monte Carlo, a
//! binomial tree and the European closed form) used to check both.

pub mod autodiff;
pub mod error;
pub mod evaluation;
mod linalg;
pub mod models;
pub mod network;
pub mod oracle;
pub mod sampling;
pub mod solvers;

pub use error::{Error, Result};
pub use evaluation::{moneyness_grid, Problem, SurfaceRow};
pub use models::{BlackScholes, Domain, DriftCorrelationSum, Heston, Model};
pub use network::{Architecture, CheckpointMeta, NetParams};
pub use sampling::{BoxPlan, Payoff, SampleBatch};
pub use solvers::{AdamConfig, DgmOutput, DgmSolution, TdgfSolution, TimeGrid, TrainConfig};

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable");
    hex::encode(Sha256::digest(&json))
}

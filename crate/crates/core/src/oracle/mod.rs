//! Reference prices independent of the neural solvers.

mod lsm;
mod paths;
mod tree;

pub use lsm::{lsm_price, LsmBasis, LsmEstimate, LSM_ORDER};
pub use paths::{simulate_paths, simulate_paths_antithetic, PathSet};
pub use tree::{binomial_price_1d, european_call_closed_form, european_put_closed_form};

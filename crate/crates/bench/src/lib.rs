//! Fixtures shared by the benchmarks.

use ndarray::Array2;
use tdgf_core::sampling::{sample_uniform, stage_rng};
use tdgf_core::solvers::{dgm_sample, DgmBatch, TrainConfig};
use tdgf_core::{Architecture, BlackScholes, Model, NetParams, Problem};

/// Basket put on `d` correlated Black–Scholes assets.
pub fn bs_problem(d: usize) -> Problem {
    let model = Model::black_scholes(BlackScholes::uniform(d, 0.05, 0.5, 0.5)).expect("valid model");
    Problem::basket_put(model, 1.0).expect("valid problem")
}

pub fn net(input_width: usize, seed: u64) -> NetParams {
    NetParams::init(Architecture::new(input_width, 50, 3), seed).expect("valid architecture")
}

/// A uniform batch of `rows` states.
pub fn states(problem: &Problem, rows: usize) -> Array2<f64> {
    sample_uniform(&problem.domain, rows, &mut stage_rng(7, 0, 0)).points
}

/// A DGM batch with the default box plan.
pub fn dgm_batch(problem: &Problem) -> DgmBatch {
    let cfg = TrainConfig::for_model(&problem.model);
    dgm_sample(problem, 1.0, &cfg, &mut stage_rng(7, 0, 0)).expect("valid sample")
}

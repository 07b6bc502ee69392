//! Training loops: time-stepped gradient flow, the space-time residual
//! method and the optimizer they share.

mod adam;
mod dgm;
mod tdgf;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dgm::{
    dgm_loss, dgm_loss_grad, dgm_loss_with_coefficients, dgm_sample, dgm_train, dgm_train_with, DgmBatch, DgmSolution,
};
pub use tdgf::{
    energy_loss, tdgf_initial_fit, tdgf_step_grad, tdgf_step_loss, tdgf_train, tdgf_train_with, InitialFit,
    StepCoefficients, TdgfSolution,
};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;

/// `steps` equal intervals of `[0, maturity]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub maturity: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(maturity: f64, steps: usize) -> Result<Self> {
        let g = TimeGrid { maturity, steps };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.maturity > 0.0 && self.maturity.is_finite()) {
            return Err(Error::invalid("maturity", "must be positive and finite"));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps", "at least one time step required"));
        }
        Ok(())
    }

    pub fn step_size(&self) -> f64 {
        self.maturity / self.steps as f64
    }

    /// `t_k = k·h`, with `t_K` returned as the maturity itself.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.maturity
        } else {
            k as f64 * self.step_size()
        }
    }

    /// Index of the time step nearest to `tau`.
    pub fn nearest_step(&self, tau: f64) -> Result<usize> {
        if !(tau >= 0.0) || tau > self.maturity * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "tau",
                format!("{tau} outside [0, {}]", self.maturity),
            ));
        }
        Ok(((tau / self.step_size()).round() as usize).min(self.steps))
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            maturity: 1.0,
            steps: 100,
        }
    }
}

/// Unit roundoff of single precision: the price resolution at which a
/// float32 network would already read `f == Ψ`.
pub const MASK_REL_TOL: f64 = f32::EPSILON as f64 / 2.0;

/// How the space-time network's output becomes a price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgmOutput {
    /// `u = Ψ + softplus(head)`, the same construction as the time-stepped
    /// net. Sampled residuals cannot rule out `u ≡ Ψ` here (Ψ is piecewise
    /// linear), so training tends to collapse onto the payoff.
    PayoffSoftplus,
    /// `u = head`; the obstacle is enforced only through the loss.
    #[default]
    Direct,
}

impl DgmOutput {
    /// Price from the payoff and raw head values.
    pub fn price(self, psi: f64, head: f64) -> f64 {
        match self {
            DgmOutput::PayoffSoftplus => psi + crate::autodiff::softplus(head),
            DgmOutput::Direct => head,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_width: usize,
    pub layers: usize,
    /// Stages of the payoff fit preceding the first time step.
    pub initial_stages: usize,
    /// The payoff fit stops early once a stage's continuation RMSE falls to
    /// this level (0 runs every stage).
    pub initial_fit_rmse: f64,
    pub stages_per_step: usize,
    pub dgm_stages: usize,
    pub adam: AdamConfig,
    /// Restart the optimizer moments at every time step instead of
    /// carrying one optimizer through all steps.
    pub adam_reset_per_step: bool,
    /// Number of sampling boxes (box parameter `n = boxes + 1`).
    pub boxes: usize,
    pub samples_per_box_per_dim: usize,
    /// Uniform batch size during time steps; defaults to the box batch size.
    pub uniform_batch: Option<usize>,
    pub dgm_box_sampling: bool,
    /// A point is active in a time step when its continuation value
    /// exceeds `mask_rel_tol · Ψ`. Zero gives the plain `f > Ψ` test.
    pub mask_rel_tol: f64,
    pub dgm_output: DgmOutput,
    pub seed: u64,
    /// Consecutive empty-mask stages tolerated before aborting.
    pub max_skipped: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_width: 50,
            layers: 3,
            initial_stages: 2000,
            initial_fit_rmse: 0.0,
            stages_per_step: 2000,
            dgm_stages: 200_000,
            adam: AdamConfig::default(),
            adam_reset_per_step: true,
            boxes: 19,
            samples_per_box_per_dim: 30,
            uniform_batch: None,
            dgm_box_sampling: true,
            mask_rel_tol: MASK_REL_TOL,
            dgm_output: DgmOutput::Direct,
            seed: 0,
            max_skipped: 20,
        }
    }
}

impl TrainConfig {
    /// Defaults with the per-model sample count (60 per box per
    /// coordinate under Heston).
    pub fn for_model(model: &Model) -> Self {
        let mut c = TrainConfig::default();
        if matches!(model, Model::Heston(_)) {
            c.samples_per_box_per_dim = 60;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.hidden_width == 0 {
            return Err(Error::invalid("hidden_width", "must be positive"));
        }
        if self.layers == 0 {
            return Err(Error::invalid("layers", "must be positive"));
        }
        if self.boxes == 0 {
            return Err(Error::invalid("boxes", "at least one box required"));
        }
        if self.samples_per_box_per_dim == 0 {
            return Err(Error::invalid("samples_per_box_per_dim", "must be positive"));
        }
        if self.uniform_batch == Some(0) {
            return Err(Error::invalid("uniform_batch", "must be positive"));
        }
        if !(self.initial_fit_rmse >= 0.0 && self.initial_fit_rmse.is_finite()) {
            return Err(Error::invalid("initial_fit_rmse", "must be finite and non-negative"));
        }
        if !(self.mask_rel_tol >= 0.0 && self.mask_rel_tol < 1.0) {
            return Err(Error::invalid("mask_rel_tol", "must lie in [0, 1)"));
        }
        if self.max_skipped == 0 {
            return Err(Error::invalid("max_skipped", "must be positive"));
        }
        Ok(())
    }
}

/// One optimizer stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    /// Time step; 0 is the payoff fit (and every DGM stage).
    pub step: usize,
    pub stage: usize,
    /// `None` when the stage was skipped for an empty mask.
    pub loss: Option<f64>,
    pub active: usize,
    /// Seconds since the start of the step.
    pub elapsed: f64,
}

pub(crate) fn ensure_finite_grads(grads: &[Array2<f64>]) -> bool {
    grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
}

/// Per-point native coefficients for the state columns of `points`.
pub(crate) fn native_coefficients(model: &Model, points: &Array2<f64>, width: usize) -> (Vec<Array2<f64>>, Array2<f64>) {
    let n = model.state_dim();
    let rows = points.nrows();
    let mut a = Vec::with_capacity(rows);
    let mut beta = Array2::zeros((rows, n));
    for (i, r) in points.axis_iter(Axis(0)).enumerate() {
        let x: Vec<f64> = r.iter().take(width).copied().collect();
        let (ai, bi) = model.generator_unchecked(&x);
        a.push(ai);
        beta.row_mut(i).assign(&bi);
    }
    (a, beta)
}

/// Moving average over windows of `w` (`len − w + 1` values).
pub fn smoothed(values: &[f64], w: usize) -> Vec<f64> {
    if w == 0 || values.len() < w {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(values.len() - w + 1);
    let mut acc: f64 = values[..w].iter().sum();
    out.push(acc / w as f64);
    for i in w..values.len() {
        acc += values[i] - values[i - w];
        out.push(acc / w as f64);
    }
    out
}

//! Time-stepped gradient flow: each step minimises a proximity term plus
//! `h` times the Dirichlet-type energy of the divergence-form operator.

use std::time::Instant;

use ndarray::{Array2, Axis};

use super::adam::{adam_step, AdamState};
use super::{ensure_finite_grads, TelemetryRow, TimeGrid, TrainConfig};
use crate::autodiff::{grad_wrt_params, Jet, JetOrder, Tape, Var};
use crate::error::{Error, Result};
use crate::evaluation::{moneyness_grid, Problem};
use crate::models::Model;
use crate::network::{price_jet_batch, Architecture, NetParams};
use crate::sampling::{mask_above_payoff_rel, sample_boxes, sample_uniform, stage_rng, BoxPlan, SampleBatch};

/// Divergence-form coefficients at each point of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCoefficients {
    /// `A(x)` per point.
    pub diffusion: Vec<Array2<f64>>,
    /// `b(x)`, one row per point.
    pub convection: Array2<f64>,
    pub rate: f64,
}

impl StepCoefficients {
    pub fn from_model(model: &Model, points: &Array2<f64>) -> Result<Self> {
        let n = model.state_dim();
        if points.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: points.ncols(),
            });
        }
        let mut diffusion = Vec::with_capacity(points.nrows());
        let mut convection = Array2::zeros((points.nrows(), n));
        for (i, r) in points.axis_iter(Axis(0)).enumerate() {
            let x = r.to_vec();
            model.check_point(&x)?;
            diffusion.push(model.diffusion_unchecked(&x));
            convection.row_mut(i).assign(&model.convection_unchecked(&x));
        }
        Ok(StepCoefficients {
            diffusion,
            convection,
            rate: model.rate(),
        })
    }

    /// The degenerate operator `A = 0, b = 0, r = 0`.
    pub fn zero(rows: usize, n: usize) -> Self {
        StepCoefficients {
            diffusion: vec![Array2::zeros((n, n)); rows],
            convection: Array2::zeros((rows, n)),
            rate: 0.0,
        }
    }
}

fn column(v: impl Iterator<Item = f64>, rows: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, 1), v.collect()).expect("column length")
}

/// Discrete step loss on a batch of `M` active points:
///
/// `|Ω|/(2M) Σ (f − f_prev)² + h|Ω|/M Σ [½∇fᵀA∇f + ½rf² + (b·∇f_prev) f]`.
///
/// `f` must carry first derivatives along every state direction.
#[allow(clippy::too_many_arguments)]
pub fn energy_loss(
    tape: &mut Tape,
    f: &Jet,
    prev_values: &Array2<f64>,
    prev_grads: &Array2<f64>,
    coeffs: &StepCoefficients,
    h: f64,
    volume: f64,
) -> Var {
    let m = prev_values.nrows();
    let n = prev_grads.ncols();
    assert_eq!(f.order.first, n, "jet must carry the full state gradient");
    let mf = m as f64;

    let prev = tape.constant(prev_values.clone());
    let diff = tape.sub(f.value, prev);
    let sq = tape.square(diff);
    let prox = tape.sum(sq);
    let prox = tape.scale(prox, volume / (2.0 * mf));

    let mut terms = Vec::new();
    for i in 0..n {
        for j in i..n {
            let (Some(gi), Some(gj)) = (f.first[i], f.first[j]) else {
                continue;
            };
            let c = if i == j { 0.5 } else { 1.0 };
            let coef = column(coeffs.diffusion.iter().map(|a| c * a[[i, j]]), m);
            let prod = tape.mul(gi, gj);
            terms.push((prod, coef));
        }
    }
    let f2 = tape.square(f.value);
    terms.push((f2, Array2::from_elem((m, 1), 0.5 * coeffs.rate)));
    let drift = column(
        prev_grads
            .axis_iter(Axis(0))
            .zip(coeffs.convection.axis_iter(Axis(0)))
            .map(|(g, b)| g.dot(&b)),
        m,
    );
    terms.push((f.value, drift));
    let density = tape.lin_comb(terms);
    let energy = tape.sum(density);
    let energy = tape.scale(energy, h * volume / mf);
    tape.add(prox, energy)
}

fn prev_jet_values(prev: &NetParams, problem: &Problem, points: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = points.ncols();
    let (tape, jet) = price_jet_batch(prev, &problem.payoff, points, JetOrder::gradient(n));
    let values = jet.values(&tape).insert_axis(Axis(1));
    (values, jet.gradient_matrix(&tape))
}

/// Step loss of `theta` against `prev` on the active points of `batch`.
pub fn tdgf_step_loss(
    theta: &NetParams,
    prev: &NetParams,
    batch: &SampleBatch,
    problem: &Problem,
    h: f64,
) -> Result<f64> {
    let points = batch.active_points();
    if points.nrows() == 0 {
        return Err(Error::EmptyActiveSet { step: 0, stage: 0 });
    }
    let coeffs = StepCoefficients::from_model(&problem.model, &points)?;
    let (pv, pg) = prev_jet_values(prev, problem, &points);
    let mut tape = Tape::new();
    let vars = theta.register_constant(&mut tape);
    let input = Jet::input(&mut tape, &points, JetOrder::gradient(points.ncols()));
    let f = theta.price_jet(&mut tape, &vars, &input, &problem.payoff);
    let loss = energy_loss(&mut tape, &f, &pv, &pg, &coeffs, h, problem.domain.volume());
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "step loss".into(),
        });
    }
    Ok(value)
}

/// Step loss on `points` (already masked) and its parameter gradients.
pub fn tdgf_step_grad(
    theta: &NetParams,
    prev: &NetParams,
    points: &Array2<f64>,
    problem: &Problem,
    h: f64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let n = points.ncols();
    let coeffs = StepCoefficients::from_model(&problem.model, points)?;
    let (pv, pg) = prev_jet_values(prev, problem, points);
    let volume = problem.domain.volume();
    grad_wrt_params(theta.tensors(), |tape, vars| {
        let input = Jet::input(tape, points, JetOrder::gradient(n));
        let f = theta.price_jet(tape, vars, &input, &problem.payoff);
        Ok(energy_loss(tape, &f, &pv, &pg, &coeffs, h, volume))
    })
}

/// Result of the payoff fit.
#[derive(Debug, Clone)]
pub struct InitialFit {
    pub params: NetParams,
    pub telemetry: Vec<TelemetryRow>,
    /// Root-mean-square of `f⁰ − Ψ` on the 47-point moneyness grid.
    pub rmse: f64,
}

#[derive(Debug, Clone)]
pub struct TdgfSolution {
    /// `f⁰ … f^K`.
    pub checkpoints: Vec<NetParams>,
    pub model: Model,
    pub grid: TimeGrid,
    pub telemetry: Vec<TelemetryRow>,
    /// Wall-clock seconds per step; index 0 is the payoff fit.
    pub step_seconds: Vec<f64>,
    pub skipped: usize,
    pub initial_rmse: f64,
}

fn diverged(step: usize, stage: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { context } => Error::Diverged {
            step,
            stage,
            reason: format!("non-finite {context}"),
        },
        other => other,
    }
}

fn check_grads(grads: &[Array2<f64>], step: usize, stage: usize) -> Result<()> {
    if ensure_finite_grads(grads) {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            stage,
            reason: "non-finite gradient".into(),
        })
    }
}

/// Fit `f⁰ ≈ Ψ` on box-sampled batches.
pub fn tdgf_initial_fit(problem: &Problem, cfg: &TrainConfig) -> Result<InitialFit> {
    problem.validate()?;
    cfg.validate()?;
    let n = problem.model.state_dim();
    let arch = Architecture::new(n, cfg.hidden_width, cfg.layers);
    let mut params = NetParams::init(arch, cfg.seed)?;
    let plan = BoxPlan::for_model(&problem.model, &problem.domain, cfg.boxes, cfg.samples_per_box_per_dim);
    let assets = problem.model.assets();
    let mut adam = AdamState::new(params.tensors());
    let mut telemetry = Vec::with_capacity(cfg.initial_stages);
    let start = Instant::now();
    for stage in 0..cfg.initial_stages {
        let mut rng = stage_rng(cfg.seed, 0, stage);
        let batch = sample_boxes(&plan, &problem.domain, assets, &mut rng)?;
        let m = batch.len() as f64;
        let (loss, grads) = grad_wrt_params(params.tensors(), |tape, vars| {
            let input = Jet::input(tape, &batch.points, JetOrder::VALUE);
            // f⁰ − Ψ is exactly the continuation head
            let c = params.continuation_jet(tape, vars, &input);
            let sq = tape.square(c.value);
            let s = tape.sum(sq);
            Ok(tape.scale(s, 1.0 / m))
        })
        .map_err(diverged(0, stage))?;
        check_grads(&grads, 0, stage)?;
        if cfg.initial_fit_rmse > 0.0 && loss.sqrt() <= cfg.initial_fit_rmse {
            break;
        }
        adam_step(params.tensors_mut(), &grads, &mut adam, &cfg.adam);
        telemetry.push(TelemetryRow {
            step: 0,
            stage,
            loss: Some(loss),
            active: batch.len(),
            elapsed: start.elapsed().as_secs_f64(),
        });
    }
    let (_, grid) = moneyness_grid(&problem.model, &problem.domain, crate::evaluation::DEFAULT_VARIANCE_LEVEL);
    let c = params.continuation_batch(&grid)?;
    let rmse = (c.mapv(|v| v * v).mean().unwrap_or(0.0)).sqrt();
    Ok(InitialFit {
        params,
        telemetry,
        rmse,
    })
}

/// Initial fit followed by `K` warm-started steps.
pub fn tdgf_train(problem: &Problem, grid: &TimeGrid, cfg: &TrainConfig) -> Result<TdgfSolution> {
    tdgf_train_with(problem, grid, cfg, |_, _| Ok(()))
}

/// As [`tdgf_train`], calling `on_checkpoint(k, f^k)` as each checkpoint
/// is produced.
pub fn tdgf_train_with<F>(
    problem: &Problem,
    grid: &TimeGrid,
    cfg: &TrainConfig,
    mut on_checkpoint: F,
) -> Result<TdgfSolution>
where
    F: FnMut(usize, &NetParams) -> Result<()>,
{
    grid.validate()?;
    let t0 = Instant::now();
    let fit = tdgf_initial_fit(problem, cfg)?;
    let mut step_seconds = vec![t0.elapsed().as_secs_f64()];
    let mut telemetry = fit.telemetry;
    on_checkpoint(0, &fit.params)?;
    let mut checkpoints = vec![fit.params];

    let plan = BoxPlan::for_model(&problem.model, &problem.domain, cfg.boxes, cfg.samples_per_box_per_dim);
    let m = cfg.uniform_batch.unwrap_or_else(|| plan.batch_size());
    let h = grid.step_size();
    let mut skipped = 0;
    let mut adam = AdamState::new(checkpoints[0].tensors());

    for k in 1..=grid.steps {
        let start = Instant::now();
        let prev = checkpoints.last().expect("f⁰ present").clone();
        let mut theta = prev.clone();
        if cfg.adam_reset_per_step {
            adam = AdamState::new(theta.tensors());
        }
        let mut run = 0;
        for stage in 0..cfg.stages_per_step {
            let mut rng = stage_rng(cfg.seed, k, stage);
            let batch = sample_uniform(&problem.domain, m, &mut rng);
            let masked = mask_above_payoff_rel(&batch, &theta, &problem.payoff, cfg.mask_rel_tol).map_err(diverged(k, stage))?;
            let active = masked.active_count();
            if active == 0 {
                skipped += 1;
                run += 1;
                telemetry.push(TelemetryRow {
                    step: k,
                    stage,
                    loss: None,
                    active: 0,
                    elapsed: start.elapsed().as_secs_f64(),
                });
                if run >= cfg.max_skipped {
                    return Err(Error::EmptyActiveSet { step: k, stage });
                }
                continue;
            }
            run = 0;
            let points = masked.active_points();
            let (loss, grads) =
                tdgf_step_grad(&theta, &prev, &points, problem, h).map_err(diverged(k, stage))?;
            check_grads(&grads, k, stage)?;
            adam_step(theta.tensors_mut(), &grads, &mut adam, &cfg.adam);
            telemetry.push(TelemetryRow {
                step: k,
                stage,
                loss: Some(loss),
                active,
                elapsed: start.elapsed().as_secs_f64(),
            });
        }
        on_checkpoint(k, &theta)?;
        checkpoints.push(theta);
        step_seconds.push(start.elapsed().as_secs_f64());
    }

    Ok(TdgfSolution {
        checkpoints,
        model: problem.model.clone(),
        grid: *grid,
        telemetry,
        step_seconds,
        skipped,
        initial_rmse: fit.rmse,
    })
}

//! Space-time residual method: one network `u(x, t)` trained on the squared
//! free-boundary residual `max(−u_t − 𝒜u − ru, Ψ − u)` plus the initial
//! condition.

use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;

use super::adam::{adam_step, AdamState};
use super::{ensure_finite_grads, native_coefficients, DgmOutput, TelemetryRow, TrainConfig};
use crate::autodiff::{grad_wrt_params, Jet, JetOrder, Tape, Var};
use crate::error::{Error, Result};
use crate::evaluation::Problem;
use crate::network::{payoff_jet, Architecture, NetParams};
use crate::sampling::{sample_boxes, sample_uniform, stage_rng, BoxPlan};

/// Interior points `(x, t)` and initial points `(x, 0)`; time is the last
/// column of both.
#[derive(Debug, Clone, PartialEq)]
pub struct DgmBatch {
    pub interior: Array2<f64>,
    pub initial: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct DgmSolution {
    pub params: NetParams,
    pub output: DgmOutput,
    pub maturity: f64,
    pub telemetry: Vec<TelemetryRow>,
    pub seconds: f64,
}

fn column(v: impl Iterator<Item = f64>, rows: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, 1), v.collect()).expect("column length")
}

/// Residual loss on the tape given native coefficients `(a, β)` per
/// interior point.
#[allow(clippy::too_many_arguments)]
pub fn dgm_loss_with_coefficients(
    tape: &mut Tape,
    vars: &[Var],
    net: &NetParams,
    problem: &Problem,
    batch: &DgmBatch,
    a: &[Array2<f64>],
    beta: &Array2<f64>,
    rate: f64,
    output: DgmOutput,
) -> Var {
    let n = batch.interior.ncols() - 1;
    let rows = batch.interior.nrows();
    let order = JetOrder { first: n + 1, second: n };
    let input = Jet::input(tape, &batch.interior, order);
    let psi = payoff_jet(tape, &input, &problem.payoff);
    let u = match output {
        DgmOutput::PayoffSoftplus => {
            let cont = net.continuation_jet(tape, vars, &input);
            Jet::add(tape, &psi, &cont)
        }
        DgmOutput::Direct => net.head_jet(tape, vars, &input),
    };

    let mut terms = Vec::new();
    for (i, j) in order.pairs() {
        if let Some(hij) = u.second[order.pair_index(i, j)] {
            let c = if i == j { 1.0 } else { 2.0 };
            terms.push((hij, column(a.iter().map(|a| c * a[[i, j]]), rows)));
        }
    }
    for i in 0..n {
        if let Some(gi) = u.first[i] {
            terms.push((gi, column(beta.column(i).iter().map(|b| -b), rows)));
        }
    }
    if let Some(ut) = u.first[n] {
        terms.push((ut, Array2::from_elem((rows, 1), -1.0)));
    }
    terms.push((u.value, Array2::from_elem((rows, 1), -rate)));
    let pde = tape.lin_comb(terms);
    let obstacle = tape.sub(psi.value, u.value);
    let res = tape.max(pde, obstacle);
    let sq = tape.square(res);
    let interior = tape.sum(sq);
    let interior = tape.scale(interior, 1.0 / rows as f64);

    let init = Jet::input(tape, &batch.initial, JetOrder::VALUE);
    let gap = match output {
        // u(0, x) − Ψ(x) is the continuation head
        DgmOutput::PayoffSoftplus => net.continuation_jet(tape, vars, &init).value,
        DgmOutput::Direct => {
            let u0 = net.head_jet(tape, vars, &init);
            let psi0 = payoff_jet(tape, &init, &problem.payoff);
            tape.sub(u0.value, psi0.value)
        }
    };
    let sq0 = tape.square(gap);
    let ic = tape.sum(sq0);
    let ic = tape.scale(ic, 1.0 / batch.initial.nrows() as f64);
    tape.add(interior, ic)
}

fn check_batch(net: &NetParams, problem: &Problem, batch: &DgmBatch) -> Result<()> {
    let w = problem.model.state_dim() + 1;
    for m in [&batch.interior, &batch.initial] {
        if m.ncols() != w {
            return Err(Error::DimensionMismatch {
                expected: w,
                actual: m.ncols(),
            });
        }
    }
    if net.arch().input_width != w {
        return Err(Error::DimensionMismatch {
            expected: w,
            actual: net.arch().input_width,
        });
    }
    if batch.interior.nrows() == 0 || batch.initial.nrows() == 0 {
        return Err(Error::EmptyActiveSet { step: 0, stage: 0 });
    }
    for r in batch.interior.axis_iter(Axis(0)) {
        problem.model.check_point(&r.to_vec()[..w - 1])?;
    }
    Ok(())
}

/// Residual loss of `net` on `batch`.
pub fn dgm_loss(net: &NetParams, problem: &Problem, batch: &DgmBatch, output: DgmOutput) -> Result<f64> {
    check_batch(net, problem, batch)?;
    let n = problem.model.state_dim();
    let (a, beta) = native_coefficients(&problem.model, &batch.interior, n);
    let mut tape = Tape::new();
    let vars = net.register_constant(&mut tape);
    let loss = dgm_loss_with_coefficients(&mut tape, &vars, net, problem, batch, &a, &beta, problem.model.rate(), output);
    let v = tape.scalar(loss);
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "residual loss".into(),
        });
    }
    Ok(v)
}

fn with_time(x: &Array2<f64>, t: Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[x.view(), t.view()])
        .expect("row counts agree")
        .as_standard_layout()
        .into_owned()
}

/// Draw one training batch: states by box or uniform sampling, times
/// uniform on `[0, maturity]`.
pub fn dgm_sample<R: Rng + ?Sized>(
    problem: &Problem,
    maturity: f64,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<DgmBatch> {
    let plan = BoxPlan::for_model(&problem.model, &problem.domain, cfg.boxes, cfg.samples_per_box_per_dim);
    let draw = |rng: &mut R| -> Result<Array2<f64>> {
        if cfg.dgm_box_sampling {
            Ok(sample_boxes(&plan, &problem.domain, problem.model.assets(), rng)?.points)
        } else {
            let m = cfg.uniform_batch.unwrap_or_else(|| plan.batch_size());
            Ok(sample_uniform(&problem.domain, m, rng).points)
        }
    };
    let x = draw(rng)?;
    let t = Array2::from_shape_fn((x.nrows(), 1), |_| rng.random_range(0.0..=maturity));
    let interior = with_time(&x, t);
    let x0 = draw(rng)?;
    let initial = with_time(&x0, Array2::zeros((x0.nrows(), 1)));
    Ok(DgmBatch { interior, initial })
}

/// Loss and parameter gradients for one DGM stage.
pub fn dgm_loss_grad(
    net: &NetParams,
    problem: &Problem,
    batch: &DgmBatch,
    output: DgmOutput,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let n = problem.model.state_dim();
    let (a, beta) = native_coefficients(&problem.model, &batch.interior, n);
    let rate = problem.model.rate();
    grad_wrt_params(net.tensors(), |tape, vars| {
        Ok(dgm_loss_with_coefficients(tape, vars, net, problem, batch, &a, &beta, rate, output))
    })
}

pub fn dgm_train(problem: &Problem, maturity: f64, cfg: &TrainConfig) -> Result<DgmSolution> {
    dgm_train_with(problem, maturity, cfg, |_, _| Ok(()))
}

/// As [`dgm_train`], calling `on_stage(stage, params)` after each update.
pub fn dgm_train_with<F>(problem: &Problem, maturity: f64, cfg: &TrainConfig, mut on_stage: F) -> Result<DgmSolution>
where
    F: FnMut(usize, &NetParams) -> Result<()>,
{
    problem.validate()?;
    cfg.validate()?;
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(Error::invalid("maturity", "must be positive and finite"));
    }
    let n = problem.model.state_dim();
    let arch = Architecture::new(n + 1, cfg.hidden_width, cfg.layers);
    let mut params = NetParams::init(arch, cfg.seed)?;
    let mut adam = AdamState::new(params.tensors());
    let mut telemetry = Vec::with_capacity(cfg.dgm_stages);
    let start = Instant::now();
    for stage in 0..cfg.dgm_stages {
        let mut rng = stage_rng(cfg.seed, 0, stage);
        let batch = dgm_sample(problem, maturity, cfg, &mut rng)?;
        let (loss, grads) = dgm_loss_grad(&params, problem, &batch, cfg.dgm_output).map_err(|e| match e {
            Error::NonFinite { context } => Error::Diverged {
                step: 0,
                stage,
                reason: format!("non-finite {context}"),
            },
            other => other,
        })?;
        if !ensure_finite_grads(&grads) {
            return Err(Error::Diverged {
                step: 0,
                stage,
                reason: "non-finite gradient".into(),
            });
        }
        adam_step(params.tensors_mut(), &grads, &mut adam, &cfg.adam);
        telemetry.push(TelemetryRow {
            step: 0,
            stage,
            loss: Some(loss),
            active: batch.interior.nrows(),
            elapsed: start.elapsed().as_secs_f64(),
        });
        on_stage(stage, &params)?;
    }
    Ok(DgmSolution {
        params,
        output: cfg.dgm_output,
        maturity,
        telemetry,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{BlackScholes, Model};
    use crate::sampling::Payoff;
    use ndarray::array;

    fn problem() -> Problem {
        let model = Model::black_scholes(BlackScholes::uniform(1, 0.05, 0.5, 0.5)).unwrap();
        Problem::new(model.clone(), Payoff::basket_put(1, 1.0), model.default_domain()).unwrap()
    }

    fn zero_net() -> NetParams {
        NetParams::zeros(Architecture::new(2, 4, 1))
    }

    #[test]
    fn obstacle_branch_with_hand_residuals() {
        // zero weights: u = Ψ + ln 2 everywhere, derivatives of u are those
        // of Ψ. With a = 0, β = 0 the PDE branch is −r·u, the obstacle
        // branch −ln 2.
        let p = problem();
        let net = zero_net();
        let batch = DgmBatch {
            interior: array![[0.5, 0.3], [1.0, 0.7], [2.0, 0.1]],
            initial: array![[0.8, 0.0]],
        };
        let a = vec![Array2::zeros((1, 1)); 3];
        let beta = Array2::zeros((3, 1));
        let mut tape = Tape::new();
        let vars = net.register_constant(&mut tape);
        let r = 0.05;
        let loss = dgm_loss_with_coefficients(&mut tape, &vars, &net, &p, &batch, &a, &beta, r, DgmOutput::PayoffSoftplus);
        let ln2 = std::f64::consts::LN_2;
        let hand: f64 = [0.5 + ln2, ln2, ln2]
            .iter()
            .map(|u| (-r * u).max(-ln2).powi(2))
            .sum::<f64>()
            / 3.0
            + ln2 * ln2;
        assert!((tape.scalar(loss) - hand).abs() < 1e-15);
    }

    #[test]
    fn zero_time_width_is_rejected() {
        let p = problem();
        let batch = DgmBatch {
            interior: array![[0.5], [1.0]],
            initial: array![[0.5]],
        };
        assert!(dgm_loss(&zero_net(), &p, &batch, DgmOutput::PayoffSoftplus).is_err());
    }

    #[test]
    fn zero_stages_return_initialization() {
        let p = problem();
        let cfg = TrainConfig {
            hidden_width: 5,
            layers: 1,
            dgm_stages: 0,
            seed: 3,
            ..TrainConfig::default()
        };
        let sol = dgm_train(&p, 1.0, &cfg).unwrap();
        assert_eq!(sol.params, NetParams::init(Architecture::new(2, 5, 1), 3).unwrap());
    }

    #[test]
    fn sampled_times_in_range() {
        let p = problem();
        let cfg = TrainConfig {
            boxes: 4,
            samples_per_box_per_dim: 5,
            ..TrainConfig::default()
        };
        let b = dgm_sample(&p, 0.5, &cfg, &mut stage_rng(0, 0, 0)).unwrap();
        assert_eq!(b.interior.nrows(), 20);
        assert_eq!(b.initial.nrows(), 20);
        assert!(b.interior.column(1).iter().all(|t| (0.0..=0.5).contains(t)));
        assert!(b.initial.column(1).iter().all(|t| *t == 0.0));
    }
}

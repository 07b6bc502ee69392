//! Pricing problems and price surfaces on the moneyness grid.

use ndarray::{Array1, Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Domain, Model};
use crate::network::NetParams;
use crate::sampling::Payoff;
use crate::solvers::{DgmOutput, TimeGrid};

pub const GRID_POINTS: usize = 47;
/// Variance level shared by every asset on a Heston surface.
pub const DEFAULT_VARIANCE_LEVEL: f64 = 0.05;
pub const DEFAULT_TAUS: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
/// Evaluation times averaged over when timing a pricer.
pub const TIMING_POINTS: usize = 34;

/// Model, payoff and sampling domain of one pricing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub model: Model,
    pub payoff: Payoff,
    pub domain: Domain,
}

impl Problem {
    pub fn new(model: Model, payoff: Payoff, domain: Domain) -> Result<Self> {
        let p = Problem {
            model,
            payoff,
            domain,
        };
        p.validate()?;
        Ok(p)
    }

    /// The model on its default domain with an equal-weight basket.
    pub fn basket_put(model: Model, strike: f64) -> Result<Self> {
        let payoff = Payoff::basket_put(model.assets(), strike);
        let domain = model.default_domain();
        Problem::new(model, payoff, domain)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.payoff.validate()?;
        self.domain.validate_for(&self.model)?;
        if self.payoff.assets() != self.model.assets() {
            return Err(Error::DimensionMismatch {
                expected: self.model.assets(),
                actual: self.payoff.assets(),
            });
        }
        Ok(())
    }
}

/// The 47 equidistant moneyness levels over the stock range of `domain`
/// and the matching states: every stock at the level, every variance at
/// `variance`.
pub fn moneyness_grid(model: &Model, domain: &Domain, variance: f64) -> (Vec<f64>, Array2<f64>) {
    let (lo, hi) = (domain.lower[0], domain.upper[0]);
    let levels: Vec<f64> = (0..GRID_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let d = model.assets();
    let n = model.state_dim();
    let states = Array2::from_shape_fn((GRID_POINTS, n), |(i, k)| if k < d { levels[i] } else { variance });
    (levels, states)
}

/// `TIMING_POINTS` equally spaced times in `(0, maturity]`.
pub fn timing_taus(maturity: f64) -> Vec<f64> {
    (1..=TIMING_POINTS)
        .map(|i| maturity * i as f64 / TIMING_POINTS as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub tau: f64,
    pub moneyness: f64,
    pub price: f64,
    pub continuation: f64,
    pub method: String,
}

fn rows<'a>(
    tau: f64,
    levels: &'a [f64],
    price: &'a Array1<f64>,
    psi: &'a Array1<f64>,
    method: &str,
) -> impl Iterator<Item = SurfaceRow> + 'a {
    let method = method.to_string();
    levels.iter().enumerate().map(move |(i, &m)| SurfaceRow {
        tau,
        moneyness: m,
        price: price[i],
        continuation: price[i] - psi[i],
        method: method.clone(),
    })
}

/// Surface from time-step checkpoints; `τ` maps to the nearest step.
pub fn tdgf_surface(
    checkpoints: &[NetParams],
    grid: &TimeGrid,
    problem: &Problem,
    taus: &[f64],
    variance: f64,
) -> Result<Vec<SurfaceRow>> {
    if checkpoints.len() != grid.steps + 1 {
        return Err(Error::DimensionMismatch {
            expected: grid.steps + 1,
            actual: checkpoints.len(),
        });
    }
    let (levels, states) = moneyness_grid(&problem.model, &problem.domain, variance);
    let psi = problem.payoff.values(&states)?;
    let mut out = Vec::with_capacity(taus.len() * GRID_POINTS);
    for &tau in taus {
        let k = grid.nearest_step(tau)?;
        let cont = checkpoints[k].continuation_batch(&states)?;
        let price = &psi + &cont;
        out.extend(rows(tau, &levels, &price, &psi, "tdgf"));
    }
    Ok(out)
}

/// Surface from a space-time network, evaluated at `(x, τ)`.
pub fn dgm_surface(
    params: &NetParams,
    output: DgmOutput,
    maturity: f64,
    problem: &Problem,
    taus: &[f64],
    variance: f64,
) -> Result<Vec<SurfaceRow>> {
    let (levels, states) = moneyness_grid(&problem.model, &problem.domain, variance);
    let psi = problem.payoff.values(&states)?;
    let n = states.ncols();
    let mut out = Vec::with_capacity(taus.len() * GRID_POINTS);
    for &tau in taus {
        if !(tau >= 0.0) || tau > maturity * (1.0 + 1e-12) {
            return Err(Error::invalid("tau", format!("{tau} outside [0, {maturity}]")));
        }
        let x = Array2::from_shape_fn((GRID_POINTS, n + 1), |(i, k)| if k < n { states[[i, k]] } else { tau });
        let head = params.head_batch(&x)?;
        let price = Zip::from(&psi).and(&head).map_collect(|&p, &h| output.price(p, h));
        out.extend(rows(tau, &levels, &price, &psi, "dgm"));
    }
    Ok(out)
}

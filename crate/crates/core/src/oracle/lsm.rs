use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::paths::PathSet;
use crate::error::{Error, Result};
use crate::sampling::Payoff;

/// Regression basis for the continuation value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LsmBasis {
    /// `1, m, …, m⁴` in the weighted basket level `m`.
    Mean,
    /// Every monomial of total degree at most 4 in the stock prices
    /// (at most two assets).
    TotalDegree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsmEstimate {
    pub price: f64,
    pub std_error: f64,
    pub order: usize,
    pub paths: usize,
    pub steps: usize,
    /// Dates where the regression dropped to a lower order.
    pub fallbacks: usize,
}

pub const LSM_ORDER: usize = 4;

fn exponents(assets: usize, order: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    match assets {
        1 => {
            for a in 0..=order {
                out.push(vec![a]);
            }
        }
        _ => {
            for total in 0..=order {
                for a in (0..=total).rev() {
                    out.push(vec![a, total - a]);
                }
            }
        }
    }
    out
}

fn design(basis: LsmBasis, order: usize, rows: &[Vec<f64>], payoff: &Payoff) -> DMatrix<f64> {
    match basis {
        LsmBasis::Mean => DMatrix::from_fn(rows.len(), order + 1, |i, k| payoff.basket(&rows[i]).powi(k as i32)),
        LsmBasis::TotalDegree => {
            let ex = exponents(payoff.assets(), order);
            DMatrix::from_fn(rows.len(), ex.len(), |i, k| {
                ex[k]
                    .iter()
                    .zip(&rows[i])
                    .map(|(&e, s)| s.powi(e as i32))
                    .product()
            })
        }
    }
}

/// Least-squares fit; `None` when the design is rank deficient.
fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    if x.nrows() < x.ncols() {
        return None;
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= 1e-12 * smax {
        return None;
    }
    svd.solve(y, 0.0).ok()
}

/// Longstaff–Schwartz price with exercise at every path step.
pub fn lsm_price(paths: &PathSet, payoff: &Payoff, rate: f64, basis: LsmBasis) -> Result<LsmEstimate> {
    payoff.validate()?;
    if payoff.assets() != paths.assets {
        return Err(Error::DimensionMismatch {
            expected: paths.assets,
            actual: payoff.assets(),
        });
    }
    if basis == LsmBasis::TotalDegree && paths.assets > 2 {
        return Err(Error::invalid("basis", "total-degree basis supports at most two assets"));
    }
    let n = paths.paths();
    let steps = paths.steps();
    let disc = (-rate * paths.dt).exp();
    let intrinsic = |step: usize| -> Vec<(Vec<f64>, f64)> {
        paths
            .stocks_at(step)
            .rows()
            .into_iter()
            .map(|r| {
                let s = r.to_vec();
                let v = payoff.value(&s);
                (s, v)
            })
            .collect()
    };
    let mut cash: Vec<f64> = intrinsic(steps).into_iter().map(|(_, v)| v).collect();
    let mut fallbacks = 0;
    for step in (1..steps).rev() {
        for c in cash.iter_mut() {
            *c *= disc;
        }
        let now = intrinsic(step);
        let itm: Vec<usize> = (0..n).filter(|&p| now[p].1 > 0.0).collect();
        if itm.len() < 2 {
            continue;
        }
        let rows: Vec<Vec<f64>> = itm.iter().map(|&p| now[p].0.clone()).collect();
        let y = DVector::from_iterator(itm.len(), itm.iter().map(|&p| cash[p]));
        let mut fitted = None;
        for order in (0..=LSM_ORDER).rev() {
            let x = design(basis, order, &rows, payoff);
            if let Some(beta) = fit(&x, &y) {
                fitted = Some(x * beta);
                break;
            }
            fallbacks += 1;
        }
        let Some(cont) = fitted else { continue };
        for (k, &p) in itm.iter().enumerate() {
            if now[p].1 > cont[k] {
                cash[p] = now[p].1;
            }
        }
    }
    for c in cash.iter_mut() {
        *c *= disc;
    }
    let mean = cash.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        cash.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let s0 = paths.stocks_at(0).row(0).to_vec();
    Ok(LsmEstimate {
        price: mean.max(payoff.value(&s0)),
        std_error: (var / n as f64).sqrt(),
        order: LSM_ORDER,
        paths: n,
        steps,
        fallbacks,
    })
}

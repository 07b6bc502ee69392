use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

fn check(r: f64, sigma: f64, tau: f64, strike: f64, s0: f64) -> Result<()> {
    let ok = |v: f64| v.is_finite() && v >= 0.0;
    if !ok(r) {
        return Err(Error::invalid("rate", "must be non-negative and finite"));
    }
    if !ok(sigma) {
        return Err(Error::invalid("sigma", "must be non-negative and finite"));
    }
    if !ok(tau) {
        return Err(Error::invalid("tau", "must be non-negative and finite"));
    }
    if !ok(strike) {
        return Err(Error::invalid("strike", "must be non-negative and finite"));
    }
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(Error::invalid("s0", "must be positive and finite"));
    }
    Ok(())
}

/// Cox–Ross–Rubinstein American put with exercise at every node.
pub fn binomial_price_1d(r: f64, sigma: f64, tau: f64, strike: f64, s0: f64, steps: usize) -> Result<f64> {
    check(r, sigma, tau, strike, s0)?;
    if steps == 0 {
        return Err(Error::invalid("steps", "must be positive"));
    }
    let put = |s: f64| (strike - s).max(0.0);
    if tau == 0.0 {
        return Ok(put(s0));
    }
    let dt = tau / steps as f64;
    let disc = (-r * dt).exp();
    if sigma == 0.0 {
        // single deterministic path
        let mut v = put(s0 * (r * tau).exp());
        for i in (0..steps).rev() {
            v = put(s0 * (r * i as f64 * dt).exp()).max(disc * v);
        }
        return Ok(v);
    }
    let u = (sigma * dt.sqrt()).exp();
    let d = 1.0 / u;
    let p = (((r * dt).exp() - d) / (u - d)).clamp(0.0, 1.0);
    let mut v: Vec<f64> = (0..=steps)
        .map(|j| put(s0 * u.powi(j as i32) * d.powi((steps - j) as i32)))
        .collect();
    for i in (0..steps).rev() {
        for j in 0..=i {
            let cont = disc * (p * v[j + 1] + (1.0 - p) * v[j]);
            let s = s0 * u.powi(j as i32) * d.powi((i - j) as i32);
            v[j] = cont.max(put(s));
        }
    }
    Ok(v[0])
}

fn d12(r: f64, sigma: f64, tau: f64, strike: f64, s0: f64) -> (f64, f64) {
    let sd = sigma * tau.sqrt();
    let d1 = ((s0 / strike).ln() + (r + 0.5 * sigma * sigma) * tau) / sd;
    (d1, d1 - sd)
}

fn degenerate(sigma: f64, tau: f64, strike: f64) -> bool {
    tau == 0.0 || sigma == 0.0 || strike == 0.0
}

/// Black–Scholes European put.
pub fn european_put_closed_form(r: f64, sigma: f64, tau: f64, strike: f64, s0: f64) -> Result<f64> {
    check(r, sigma, tau, strike, s0)?;
    let df = (-r * tau).exp();
    if degenerate(sigma, tau, strike) {
        return Ok((strike * df - s0).max(0.0));
    }
    let n = Normal::standard();
    let (d1, d2) = d12(r, sigma, tau, strike, s0);
    Ok(strike * df * n.cdf(-d2) - s0 * n.cdf(-d1))
}

/// Black–Scholes European call.
pub fn european_call_closed_form(r: f64, sigma: f64, tau: f64, strike: f64, s0: f64) -> Result<f64> {
    check(r, sigma, tau, strike, s0)?;
    let df = (-r * tau).exp();
    if degenerate(sigma, tau, strike) {
        return Ok((s0 - strike * df).max(0.0));
    }
    let n = Normal::standard();
    let (d1, d2) = d12(r, sigma, tau, strike, s0);
    Ok(s0 * n.cdf(d1) - strike * df * n.cdf(d2))
}

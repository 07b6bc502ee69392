//! Market dynamics written as second-order operators.
//!
//! Each model exposes two views of its pricing generator:
//!
//! * the native (non-divergence) form `𝒜u = −Σ aᵢⱼ ∂ᵢⱼu + Σ βᵢ ∂ᵢu`, used by
//!   the space-time residual loss, and
//! * the divergence form `𝒜u = −∇·(A∇u) + b·∇u` with symmetric PSD `A`,
//!   which the energy loss needs.
//!
//! State vectors are stock levels `(S₁..S_d)` for Black–Scholes and
//! `(S₁..S_d, V₁..V_d)` for Heston.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::cholesky_psd;

/// Correlated geometric Brownian motions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackScholes {
    pub rate: f64,
    pub sigma: Vec<f64>,
    /// Correlation matrix of the driving Brownian motions, row-major.
    pub rho: Vec<Vec<f64>>,
}

/// Which terms enter the stock drift correlation sum `Σⱼ ρᵢⱼ √(VᵢVⱼ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftCorrelationSum {
    /// Sum over every `j`, including `j = i` with `ρᵢᵢ = 1`.
    #[default]
    IncludeDiagonal,
    /// Sum over `j ≠ i` only.
    ExcludeDiagonal,
}

/// Multi-asset Heston model with per-asset variance processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heston {
    pub rate: f64,
    /// Mean-reversion speeds.
    pub lambda: Vec<f64>,
    /// Long-run variances.
    pub kappa: Vec<f64>,
    /// Volatilities of variance.
    pub eta: Vec<f64>,
    /// Stock–stock correlations.
    pub rho_s: Vec<Vec<f64>>,
    /// Stock–own-variance correlations.
    pub rho_sv: Vec<f64>,
    #[serde(default)]
    pub drift_sum: DriftCorrelationSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    BlackScholes(BlackScholes),
    Heston(Heston),
}

/// Axis-aligned box of admissible training/evaluation states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

fn uniform_corr(d: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { rho }).collect())
        .collect()
}

fn to_matrix(rows: &[Vec<f64>], d: usize, field: &str) -> Result<Array2<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid(field, format!("expected a {d}×{d} matrix")));
    }
    Ok(Array2::from_shape_fn((d, d), |(i, j)| rows[i][j]))
}

fn check_correlation(m: &Array2<f64>, field: &str) -> Result<()> {
    for i in 0..m.nrows() {
        if m[[i, i]] != 1.0 {
            return Err(Error::invalid(field, "diagonal entries must be 1"));
        }
        for j in 0..m.ncols() {
            if !(-1.0..=1.0).contains(&m[[i, j]]) {
                return Err(Error::invalid(field, "entries must lie in [-1, 1]"));
            }
        }
    }
    cholesky_psd(m, field).map(|_| ())
}

fn check_positive(values: &[f64], d: usize, field: &str) -> Result<()> {
    if values.len() != d {
        return Err(Error::invalid(field, format!("expected {d} entries")));
    }
    if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(field, "entries must be positive and finite"));
    }
    Ok(())
}

fn check_rate(r: f64) -> Result<()> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::invalid("rate", "must be non-negative and finite"));
    }
    Ok(())
}

impl BlackScholes {
    /// `d` assets sharing one volatility and one pairwise correlation.
    pub fn uniform(d: usize, rate: f64, sigma: f64, rho: f64) -> Self {
        BlackScholes {
            rate,
            sigma: vec![sigma; d],
            rho: uniform_corr(d, rho),
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("sigma", "at least one asset required"));
        }
        check_rate(self.rate)?;
        check_positive(&self.sigma, d, "sigma")?;
        check_correlation(&to_matrix(&self.rho, d, "rho")?, "rho")
    }

    fn a(&self, s: &[f64], i: usize, j: usize) -> f64 {
        0.5 * self.sigma[i] * self.sigma[j] * s[i] * s[j] * self.rho[i][j]
    }
}

impl Heston {
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        d: usize,
        rate: f64,
        lambda: f64,
        kappa: f64,
        eta: f64,
        rho_s: f64,
        rho_sv: f64,
    ) -> Self {
        Heston {
            rate,
            lambda: vec![lambda; d],
            kappa: vec![kappa; d],
            eta: vec![eta; d],
            rho_s: uniform_corr(d, rho_s),
            rho_sv: vec![rho_sv; d],
            drift_sum: DriftCorrelationSum::IncludeDiagonal,
        }
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::invalid("lambda", "at least one asset required"));
        }
        check_rate(self.rate)?;
        check_positive(&self.lambda, d, "lambda")?;
        check_positive(&self.kappa, d, "kappa")?;
        check_positive(&self.eta, d, "eta")?;
        if self.rho_sv.len() != d || self.rho_sv.iter().any(|r| !(r.abs() <= 1.0)) {
            return Err(Error::invalid("rho_sv", format!("expected {d} entries in [-1, 1]")));
        }
        check_correlation(&to_matrix(&self.rho_s, d, "rho_s")?, "rho_s")?;
        cholesky_psd(&self.noise_correlation(), "rho_sv").map(|_| ())
    }

    /// Correlation of `(W₁..W_d, B₁..B_d)`, stock noises first.
    pub fn noise_correlation(&self) -> Array2<f64> {
        let d = self.dim();
        let mut m = Array2::zeros((2 * d, 2 * d));
        for i in 0..d {
            for j in 0..d {
                m[[i, j]] = self.rho_s[i][j];
            }
            m[[i, d + i]] = self.rho_sv[i];
            m[[d + i, i]] = self.rho_sv[i];
            m[[d + i, d + i]] = 1.0;
        }
        m
    }

    fn a_ss(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let d = self.dim();
        0.5 * self.rho_s[i][j] * (x[d + i] * x[d + j]).sqrt() * x[i] * x[j]
    }
}

impl Model {
    pub fn black_scholes(b: BlackScholes) -> Result<Self> {
        b.validate()?;
        Ok(Model::BlackScholes(b))
    }

    pub fn heston(h: Heston) -> Result<Self> {
        h.validate()?;
        Ok(Model::Heston(h))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Model::BlackScholes(b) => b.validate(),
            Model::Heston(h) => h.validate(),
        }
    }

    /// Number of assets `d`.
    pub fn assets(&self) -> usize {
        match self {
            Model::BlackScholes(b) => b.dim(),
            Model::Heston(h) => h.dim(),
        }
    }

    /// Length of a state vector: `d` or `2d`.
    pub fn state_dim(&self) -> usize {
        match self {
            Model::BlackScholes(b) => b.dim(),
            Model::Heston(h) => 2 * h.dim(),
        }
    }

    pub fn rate(&self) -> f64 {
        match self {
            Model::BlackScholes(b) => b.rate,
            Model::Heston(h) => h.rate,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Model::BlackScholes(_) => "black_scholes",
            Model::Heston(_) => "heston",
        }
    }

    /// Default training box: moneyness `[0.01, 3]` (Black–Scholes) or
    /// `[0.01, 2]` (Heston), variance `[0.001, 0.1]`.
    pub fn default_domain(&self) -> Domain {
        let d = self.assets();
        match self {
            Model::BlackScholes(_) => Domain {
                lower: vec![0.01; d],
                upper: vec![3.0; d],
            },
            Model::Heston(_) => Domain {
                lower: [vec![0.01; d], vec![0.001; d]].concat(),
                upper: [vec![2.0; d], vec![0.1; d]].concat(),
            },
        }
    }

    /// Stocks must be positive; Heston variances too.
    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim(),
                actual: x.len(),
            });
        }
        if let Some(v) = x.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::OutOfDomain(format!(
                "state coordinates must be positive and finite, got {v}"
            )));
        }
        Ok(())
    }

    /// Symmetric diffusion matrix `A(x)` of the divergence form.
    pub fn diffusion_matrix(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_point(x)?;
        Ok(self.diffusion_unchecked(x))
    }

    pub(crate) fn diffusion_unchecked(&self, x: &[f64]) -> Array2<f64> {
        match self {
            Model::BlackScholes(b) => {
                let d = b.dim();
                Array2::from_shape_fn((d, d), |(i, j)| b.a(x, i, j))
            }
            Model::Heston(h) => {
                let d = h.dim();
                let mut a = Array2::zeros((2 * d, 2 * d));
                for i in 0..d {
                    for j in 0..d {
                        a[[i, j]] = h.a_ss(x, i, j);
                    }
                    let sv = 0.5 * x[d + i] * x[i] * h.eta[i] * h.rho_sv[i];
                    a[[i, d + i]] = sv;
                    a[[d + i, i]] = sv;
                    a[[d + i, d + i]] = 0.5 * h.eta[i] * h.eta[i] * x[d + i];
                }
                a
            }
        }
    }

    /// Convection vector `b(x)` of the divergence form.
    pub fn convection_vector(&self, x: &[f64]) -> Result<Array1<f64>> {
        self.check_point(x)?;
        Ok(self.convection_unchecked(x))
    }

    pub(crate) fn convection_unchecked(&self, x: &[f64]) -> Array1<f64> {
        match self {
            Model::BlackScholes(b) => {
                let d = b.dim();
                Array1::from_shape_fn(d, |i| {
                    let cross: f64 = (0..d)
                        .filter(|&j| j != i)
                        .map(|j| b.sigma[i] * b.sigma[j] * b.rho[i][j])
                        .sum();
                    (b.sigma[i] * b.sigma[i] + 0.5 * cross - b.rate) * x[i]
                })
            }
            Model::Heston(h) => {
                let d = h.dim();
                let mut out = Array1::zeros(2 * d);
                for i in 0..d {
                    let vi = x[d + i];
                    let corr: f64 = (0..d)
                        .filter(|&j| match h.drift_sum {
                            DriftCorrelationSum::IncludeDiagonal => true,
                            DriftCorrelationSum::ExcludeDiagonal => j != i,
                        })
                        .map(|j| h.rho_s[i][j] * (vi * x[d + j]).sqrt())
                        .sum();
                    out[i] = (0.5 * (vi + corr + h.eta[i] * h.rho_sv[i]) - h.rate) * x[i];
                    out[d + i] = h.lambda[i] * (vi - h.kappa[i])
                        + 0.5 * vi * h.eta[i] * h.rho_sv[i]
                        + 0.5 * h.eta[i] * h.eta[i];
                }
                out
            }
        }
    }

    /// Column divergence `(∇·A)ⱼ = Σₖ ∂ₖAₖⱼ`, differentiated by hand.
    pub fn diffusion_divergence(&self, x: &[f64]) -> Result<Array1<f64>> {
        self.check_point(x)?;
        Ok(match self {
            Model::BlackScholes(b) => {
                let d = b.dim();
                Array1::from_shape_fn(d, |j| {
                    (0..d)
                        .map(|i| {
                            let k = 0.5 * b.sigma[i] * b.sigma[j] * b.rho[i][j] * x[j];
                            if i == j {
                                2.0 * k
                            } else {
                                k
                            }
                        })
                        .sum()
                })
            }
            Model::Heston(h) => {
                let d = h.dim();
                let mut out = Array1::zeros(2 * d);
                for j in 0..d {
                    let vj = x[d + j];
                    let ss: f64 = (0..d)
                        .map(|i| {
                            let k = 0.5 * h.rho_s[i][j] * (x[d + i] * vj).sqrt() * x[j];
                            if i == j {
                                2.0 * k
                            } else {
                                k
                            }
                        })
                        .sum();
                    out[j] = ss + 0.5 * x[j] * h.eta[j] * h.rho_sv[j];
                    out[d + j] = 0.5 * vj * h.eta[j] * h.rho_sv[j] + 0.5 * h.eta[j] * h.eta[j];
                }
                out
            }
        })
    }

    /// Native generator coefficients `(a, β)`.
    pub fn generator_coefficients(&self, x: &[f64]) -> Result<(Array2<f64>, Array1<f64>)> {
        self.check_point(x)?;
        Ok(self.generator_unchecked(x))
    }

    pub(crate) fn generator_unchecked(&self, x: &[f64]) -> (Array2<f64>, Array1<f64>) {
        match self {
            Model::BlackScholes(b) => {
                let d = b.dim();
                let a = Array2::from_shape_fn((d, d), |(i, j)| b.a(x, i, j));
                let beta = Array1::from_shape_fn(d, |i| -b.rate * x[i]);
                (a, beta)
            }
            Model::Heston(h) => {
                let d = h.dim();
                let mut a = Array2::zeros((2 * d, 2 * d));
                let mut beta = Array1::zeros(2 * d);
                for i in 0..d {
                    for j in 0..d {
                        a[[i, j]] = 0.5 * h.rho_s[i][j] * (x[d + i] * x[d + j]).sqrt() * x[i] * x[j];
                    }
                    let sv = 0.5 * x[d + i] * x[i] * h.eta[i] * h.rho_sv[i];
                    a[[i, d + i]] = sv;
                    a[[d + i, i]] = sv;
                    a[[d + i, d + i]] = 0.5 * h.eta[i] * h.eta[i] * x[d + i];
                    beta[i] = -h.rate * x[i];
                    beta[d + i] = -h.lambda[i] * (h.kappa[i] - x[d + i]);
                }
                (a, beta)
            }
        }
    }

    /// `𝒜u` at `x` from the gradient and Hessian of `u`.
    pub fn generator_apply(&self, x: &[f64], grad: &[f64], hess: &Array2<f64>) -> Result<f64> {
        let n = self.state_dim();
        if grad.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: grad.len(),
            });
        }
        if hess.dim() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: hess.len(),
            });
        }
        let (a, beta) = self.generator_coefficients(x)?;
        let second: f64 = a.iter().zip(hess.iter()).map(|(a, h)| a * h).sum();
        let first: f64 = beta.iter().zip(grad).map(|(b, g)| b * g).sum();
        Ok(-second + first)
    }
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = Domain { lower, upper };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::invalid("domain", "bounds must have equal, non-zero length"));
        }
        for (i, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(
                    "domain",
                    format!("coordinate {i}: need lower < upper, got [{lo}, {hi}]"),
                ));
            }
        }
        Ok(())
    }

    /// Dimension matches the model state and every bound is positive.
    pub fn validate_for(&self, model: &Model) -> Result<()> {
        self.validate()?;
        if self.dim() != model.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.state_dim(),
                actual: self.dim(),
            });
        }
        if self.lower.iter().any(|&lo| lo <= 0.0) {
            return Err(Error::invalid("domain", "lower bounds must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Product of side lengths, `|Ω|`.
    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

use ndarray::{Array1, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::cholesky_psd;
use crate::models::Model;

/// Simulated states: `states[[path, step, coordinate]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub states: Array3<f64>,
    /// Number of leading coordinates that are stock prices.
    pub assets: usize,
    pub dt: f64,
    pub seed: u64,
}

impl PathSet {
    pub fn paths(&self) -> usize {
        self.states.len_of(Axis(0))
    }

    pub fn steps(&self) -> usize {
        self.states.len_of(Axis(1)) - 1
    }

    /// Stock coordinates of every path at `step` (`paths × assets`).
    pub fn stocks_at(&self, step: usize) -> Array2<f64> {
        self.states
            .index_axis(Axis(1), step)
            .slice(ndarray::s![.., ..self.assets])
            .to_owned()
    }
}

fn check_inputs(model: &Model, s0: &[f64], tau: f64, paths: usize, steps: usize) -> Result<()> {
    model.validate()?;
    if s0.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.state_dim(),
            actual: s0.len(),
        });
    }
    model.check_point(s0)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid("tau", "horizon must be positive"));
    }
    if paths == 0 {
        return Err(Error::invalid("paths", "must be positive"));
    }
    if steps == 0 {
        return Err(Error::invalid("steps", "must be positive"));
    }
    Ok(())
}

/// Simulate `paths` trajectories of `steps` steps over `[0, tau]`.
///
/// Black–Scholes uses exact log increments; Heston uses full-truncation
/// Euler for the variance with log-Euler stocks, storing `V⁺`.
pub fn simulate_paths(model: &Model, s0: &[f64], tau: f64, paths: usize, steps: usize, seed: u64) -> Result<PathSet> {
    simulate(model, s0, tau, paths, steps, seed, false)
}

/// As [`simulate_paths`] with antithetic pairs: paths `2i` and `2i + 1`
/// are driven by opposite normals. `paths` must be even.
pub fn simulate_paths_antithetic(
    model: &Model,
    s0: &[f64],
    tau: f64,
    paths: usize,
    steps: usize,
    seed: u64,
) -> Result<PathSet> {
    if paths % 2 != 0 {
        return Err(Error::invalid("paths", "antithetic sampling needs an even count"));
    }
    simulate(model, s0, tau, paths, steps, seed, true)
}

fn simulate(
    model: &Model,
    s0: &[f64],
    tau: f64,
    paths: usize,
    steps: usize,
    seed: u64,
    antithetic: bool,
) -> Result<PathSet> {
    check_inputs(model, s0, tau, paths, steps)?;
    let n = model.state_dim();
    let d = model.assets();
    let dt = tau / steps as f64;
    let sq = dt.sqrt();
    let corr = match model {
        Model::BlackScholes(b) => Array2::from_shape_fn((d, d), |(i, j)| b.rho[i][j]),
        Model::Heston(h) => h.noise_correlation(),
    };
    let chol = cholesky_psd(&corr, "correlation")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Array3::zeros((paths, steps + 1, n));
    let mut eps = Array1::<f64>::zeros(n);
    for p in 0..paths {
        states.slice_mut(ndarray::s![p, 0, ..]).assign(&Array1::from(s0.to_vec()));
    }
    // raw (untruncated) variance carried between steps
    let mut raw = Array2::<f64>::zeros((paths, n - d));
    for p in 0..paths {
        for i in 0..n - d {
            raw[[p, i]] = s0[d + i];
        }
    }
    let mut z = Array1::<f64>::zeros(n);
    for step in 0..steps {
        for p in 0..paths {
            if antithetic && p % 2 == 1 {
                eps.mapv_inplace(|v| -v);
            } else {
                for e in eps.iter_mut() {
                    *e = StandardNormal.sample(&mut rng);
                }
            }
            z.assign(&chol.dot(&eps));
            match model {
                Model::BlackScholes(b) => {
                    for i in 0..d {
                        let s = states[[p, step, i]];
                        let sig = b.sigma[i];
                        states[[p, step + 1, i]] =
                            s * ((b.rate - 0.5 * sig * sig) * dt + sig * sq * z[i]).exp();
                    }
                }
                Model::Heston(h) => {
                    for i in 0..d {
                        let v = raw[[p, i]].max(0.0);
                        let s = states[[p, step, i]];
                        states[[p, step + 1, i]] = s * ((h.rate - 0.5 * v) * dt + (v * dt).sqrt() * z[i]).exp();
                        let next = raw[[p, i]] + h.lambda[i] * (h.kappa[i] - v) * dt + h.eta[i] * (v * dt).sqrt() * z[d + i];
                        raw[[p, i]] = next;
                        states[[p, step + 1, d + i]] = next.max(0.0);
                    }
                }
            }
        }
    }
    Ok(PathSet {
        states,
        assets: d,
        dt,
        seed,
    })
}

//! Payoff evaluation and training-point generation.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Domain, Model};
use crate::network::NetParams;

/// Weighted basket put `(strike − Σ wᵢSᵢ)⁺`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payoff {
    pub strike: f64,
    pub weights: Vec<f64>,
}

impl Payoff {
    /// Equal-weight basket over `d` assets.
    pub fn basket_put(d: usize, strike: f64) -> Self {
        Payoff {
            strike,
            weights: vec![1.0 / d as f64; d],
        }
    }

    pub fn assets(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::invalid("weights", "at least one asset required"));
        }
        if !(self.strike >= 0.0 && self.strike.is_finite()) {
            return Err(Error::invalid("strike", "must be non-negative and finite"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("weights", "must be non-negative and sum to 1"));
        }
        Ok(())
    }

    /// Weighted basket level of the stock coordinates of `x`.
    pub fn basket(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, s)| w * s).sum()
    }

    /// Payoff at one state; coordinates past the assets are ignored.
    pub fn value(&self, x: &[f64]) -> f64 {
        (self.strike - self.basket(x)).max(0.0)
    }

    /// Gradient with respect to the full state of width `width`. At the
    /// kink the in-the-money branch is taken.
    pub fn gradient(&self, x: &[f64], width: usize) -> Vec<f64> {
        let mut g = vec![0.0; width];
        if self.strike - self.basket(x) >= 0.0 {
            for (gi, w) in g.iter_mut().zip(&self.weights) {
                *gi = -w;
            }
        }
        g
    }

    /// Payoff of every row of `points`.
    pub fn values(&self, points: &Array2<f64>) -> Result<Array1<f64>> {
        if points.ncols() < self.assets() {
            return Err(Error::DimensionMismatch {
                expected: self.assets(),
                actual: points.ncols(),
            });
        }
        Ok(points
            .rows()
            .into_iter()
            .map(|r| self.value(&r.to_vec()))
            .collect())
    }
}

/// Training points plus the mask of points kept by the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Array2<f64>,
    pub active: Vec<bool>,
}

impl SampleBatch {
    pub fn new(points: Array2<f64>) -> Self {
        let n = points.nrows();
        SampleBatch {
            points,
            active: vec![true; n],
        }
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    /// Rows whose mask is set.
    pub fn active_points(&self) -> Array2<f64> {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| self.active[i]).collect();
        self.points.select(ndarray::Axis(0), &rows)
    }
}

/// Overlapping boxes `[(k−1)·S_high/n, (k+1)·S_high/n]`, `k = 1..n−1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPlan {
    pub n: usize,
    pub s_high: f64,
    pub samples_per_box: usize,
}

impl BoxPlan {
    /// `boxes` boxes (parameter `n = boxes + 1`) with `per_dim` samples per
    /// box per state coordinate.
    pub fn for_model(model: &Model, domain: &Domain, boxes: usize, per_dim: usize) -> Self {
        let s_high = domain.upper[..model.assets()]
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        BoxPlan {
            n: boxes + 1,
            s_high,
            samples_per_box: per_dim * model.state_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid("boxes", "box parameter n must be at least 2"));
        }
        if !(self.s_high > 0.0) {
            return Err(Error::invalid("s_high", "must be positive"));
        }
        if self.samples_per_box == 0 {
            return Err(Error::invalid("samples_per_box", "must be positive"));
        }
        Ok(())
    }

    pub fn boxes(&self) -> Vec<(f64, f64)> {
        let step = self.s_high / self.n as f64;
        (1..self.n)
            .map(|k| ((k - 1) as f64 * step, ((k + 1) as f64 * step).min(self.s_high)))
            .collect()
    }

    pub fn batch_size(&self) -> usize {
        (self.n - 1) * self.samples_per_box
    }
}

/// Generator for one sampling stage: pure in `(seed, step, stage)`.
pub fn stage_rng(seed: u64, step: usize, stage: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((step as u64) << 32) | stage as u64);
    rng
}

/// `m` i.i.d. points uniform on `domain`.
pub fn sample_uniform<R: Rng + ?Sized>(domain: &Domain, m: usize, rng: &mut R) -> SampleBatch {
    let n = domain.dim();
    let mut points = Array2::zeros((m, n));
    for mut row in points.rows_mut() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = rng.random_range(domain.lower[k]..=domain.upper[k]);
        }
    }
    SampleBatch::new(points)
}

/// Box-stratified batch: for each box, every stock coordinate of a point is
/// drawn from the box clipped to the domain; other coordinates are uniform
/// over the domain.
pub fn sample_boxes<R: Rng + ?Sized>(
    plan: &BoxPlan,
    domain: &Domain,
    assets: usize,
    rng: &mut R,
) -> Result<SampleBatch> {
    plan.validate()?;
    if assets > domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: assets,
            actual: domain.dim(),
        });
    }
    let n = domain.dim();
    let mut points = Array2::zeros((plan.batch_size(), n));
    let mut row_iter = points.rows_mut().into_iter();
    for (lo, hi) in plan.boxes() {
        for _ in 0..plan.samples_per_box {
            let mut row = row_iter.next().expect("sized by plan");
            for (k, v) in row.iter_mut().enumerate() {
                let (a, b) = if k < assets {
                    (lo.max(domain.lower[k]), hi.min(domain.upper[k]))
                } else {
                    (domain.lower[k], domain.upper[k])
                };
                if a > b {
                    return Err(Error::invalid("boxes", "box does not intersect the domain"));
                }
                *v = rng.random_range(a..=b);
            }
        }
    }
    Ok(SampleBatch::new(points))
}

/// Keep only points where the network strictly exceeds the payoff.
pub fn mask_above_payoff(batch: &SampleBatch, net: &NetParams, payoff: &Payoff) -> Result<SampleBatch> {
    let f = net.forward_batch(&batch.points, payoff)?;
    let psi = payoff.values(&batch.points)?;
    let active = f.iter().zip(psi.iter()).map(|(f, p)| f > p).collect();
    Ok(SampleBatch {
        points: batch.points.clone(),
        active,
    })
}

/// Keep points where the continuation value exceeds `rel_tol · Ψ`, i.e.
/// where the price is distinguishable from the payoff at that relative
/// resolution.
pub fn mask_above_payoff_rel(batch: &SampleBatch, net: &NetParams, payoff: &Payoff, rel_tol: f64) -> Result<SampleBatch> {
    let c = net.continuation_batch(&batch.points)?;
    let psi = payoff.values(&batch.points)?;
    let active = c.iter().zip(psi.iter()).map(|(c, p)| *c > rel_tol * p).collect();
    Ok(SampleBatch {
        points: batch.points.clone(),
        active,
    })
}

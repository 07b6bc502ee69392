//! Independent reference implementations used as oracles.
//!
//! Everything here works one point at a time on plain `f64`s with
//! second-order Taylor numbers, sharing no code with the batched tape.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdgf_core::autodiff::{JetFunction, Jet, Tape};
use tdgf_core::solvers::{DgmBatch, DgmOutput};
use tdgf_core::{Architecture, Model, NetParams, Payoff, Problem};

trait Softplus {
    fn softplus_value(self) -> f64;
}

impl Softplus for f64 {
    fn softplus_value(self) -> f64 {
        if self > 30.0 {
            self
        } else {
            self.exp().ln_1p()
        }
    }
}

/// Value, gradient and full Hessian of a scalar in `n` variables.
#[derive(Debug, Clone)]
pub struct T2 {
    pub v: f64,
    pub g: Vec<f64>,
    pub h: Vec<Vec<f64>>,
}

impl T2 {
    pub fn constant(v: f64, n: usize) -> Self {
        T2 { v, g: vec![0.0; n], h: vec![vec![0.0; n]; n] }
    }

    pub fn variable(v: f64, i: usize, n: usize) -> Self {
        let mut t = T2::constant(v, n);
        t.g[i] = 1.0;
        t
    }

    fn n(&self) -> usize {
        self.g.len()
    }

    pub fn add(&self, o: &T2) -> T2 {
        let n = self.n();
        T2 {
            v: self.v + o.v,
            g: (0..n).map(|i| self.g[i] + o.g[i]).collect(),
            h: (0..n).map(|i| (0..n).map(|j| self.h[i][j] + o.h[i][j]).collect()).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> T2 {
        T2 {
            v: c * self.v,
            g: self.g.iter().map(|g| c * g).collect(),
            h: self.h.iter().map(|r| r.iter().map(|h| c * h).collect()).collect(),
        }
    }

    pub fn mul(&self, o: &T2) -> T2 {
        let n = self.n();
        T2 {
            v: self.v * o.v,
            g: (0..n).map(|i| self.g[i] * o.v + self.v * o.g[i]).collect(),
            h: (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            self.h[i][j] * o.v + self.v * o.h[i][j] + self.g[i] * o.g[j] + self.g[j] * o.g[i]
                        })
                        .collect()
                })
                .collect(),
        }
    }

    fn unary(&self, f: f64, d1: f64, d2: f64) -> T2 {
        let n = self.n();
        T2 {
            v: f,
            g: self.g.iter().map(|g| d1 * g).collect(),
            h: (0..n)
                .map(|i| (0..n).map(|j| d1 * self.h[i][j] + d2 * self.g[i] * self.g[j]).collect())
                .collect(),
        }
    }

    pub fn tanh(&self) -> T2 {
        let t = self.v.tanh();
        let d1 = 1.0 - t * t;
        self.unary(t, d1, -2.0 * t * d1)
    }

    pub fn sqrt(&self) -> T2 {
        let r = self.v.sqrt();
        self.unary(r, 0.5 / r, -0.25 / (r * self.v))
    }

    pub fn softplus(&self) -> T2 {
        let s = 1.0 / (1.0 + (-self.v).exp());
        let f = if self.v > 30.0 { self.v } else { self.v.exp().ln_1p() };
        self.unary(f, s, s * (1.0 - s))
    }
}

fn dot_row(w: &Array2<f64>, row: usize, xs: &[T2]) -> T2 {
    let n = xs[0].n();
    let mut acc = T2::constant(0.0, n);
    for (k, x) in xs.iter().enumerate() {
        acc = acc.add(&x.scale(w[[row, k]]));
    }
    acc
}

/// Head `W X^{L+1} + b` of the highway network, written from the recursion.
pub fn reference_head(net: &NetParams, x: &[T2]) -> T2 {
    let t = net.tensors();
    let a = net.arch();
    let hw = a.hidden_width;
    let n = x[0].n();
    let bias = |b: &Array2<f64>, i: usize| T2::constant(b[[0, i]], n);
    let mut s: Vec<T2> = (0..hw).map(|i| dot_row(&t[0], i, x).add(&bias(&t[1], i)).tanh()).collect();
    for l in 0..a.layers {
        let gate = |name: char, state: &[T2]| -> Vec<T2> {
            let g = net.gate(l, name);
            (0..hw)
                .map(|i| {
                    dot_row(&t[g.u], i, x)
                        .add(&dot_row(&t[g.w], i, state))
                        .add(&bias(&t[g.b], i))
                        .tanh()
                })
                .collect()
        };
        let z = gate('z', &s);
        let g = gate('g', &s);
        let r = gate('r', &s);
        let sr: Vec<T2> = s.iter().zip(&r).map(|(a, b)| a.mul(b)).collect();
        let h = gate('h', &sr);
        s = (0..hw)
            .map(|i| {
                let keep = g[i].scale(-1.0).add(&T2::constant(1.0, n));
                keep.mul(&h[i]).add(&z[i].mul(&s[i]))
            })
            .collect();
    }
    dot_row(&t[net.output_weight_index()], 0, &s).add(&bias(&t[net.output_bias_index()], 0))
}

pub fn reference_continuation(net: &NetParams, x: &[T2]) -> T2 {
    reference_head(net, x).softplus()
}

/// Payoff as a Taylor number (its second derivative is zero off the kink).
pub fn reference_payoff(payoff: &Payoff, x: &[f64], n: usize) -> T2 {
    let basket: f64 = payoff.weights.iter().zip(x).map(|(w, s)| w * s).sum();
    let mut t = T2::constant((payoff.strike - basket).max(0.0), n);
    if basket <= payoff.strike {
        for (g, w) in t.g.iter_mut().zip(&payoff.weights) {
            *g = -w;
        }
    }
    t
}

pub fn variables(x: &[f64]) -> Vec<T2> {
    (0..x.len()).map(|i| T2::variable(x[i], i, x.len())).collect()
}

pub fn reference_price(net: &NetParams, payoff: &Payoff, x: &[f64]) -> T2 {
    let c = reference_continuation(net, &variables(x));
    reference_payoff(payoff, x, x.len()).add(&c)
}

/// TDGF step loss recomputed point by point from model coefficients.
pub fn reference_step_loss(theta: &NetParams, prev: &NetParams, points: &Array2<f64>, problem: &Problem, h: f64) -> f64 {
    let m = points.nrows() as f64;
    let vol = problem.domain.volume();
    let r = problem.model.rate();
    let (mut prox, mut energy) = (0.0, 0.0);
    for row in points.rows() {
        let x = row.to_vec();
        let f = reference_price(theta, &problem.payoff, &x);
        let fp = reference_price(prev, &problem.payoff, &x);
        let a = problem.model.diffusion_matrix(&x).unwrap();
        let b = problem.model.convection_vector(&x).unwrap();
        prox += (f.v - fp.v).powi(2);
        let n = x.len();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += f.g[i] * a[[i, j]] * f.g[j];
            }
        }
        let drift: f64 = (0..n).map(|i| b[i] * fp.g[i]).sum();
        energy += 0.5 * quad + 0.5 * r * f.v * f.v + drift * f.v;
    }
    vol / (2.0 * m) * prox + h * vol / m * energy
}

/// DGM residual loss recomputed point by point.
pub fn reference_dgm_loss(net: &NetParams, problem: &Problem, batch: &DgmBatch, output: DgmOutput) -> f64 {
    let n = batch.interior.ncols() - 1;
    let r = problem.model.rate();
    let mut interior = 0.0;
    for row in batch.interior.rows() {
        let xt = row.to_vec();
        let x = &xt[..n];
        let head = reference_head(net, &variables(&xt));
        let psi = reference_payoff(&problem.payoff, x, n + 1);
        let u = match output {
            DgmOutput::PayoffSoftplus => psi.add(&head.softplus()),
            DgmOutput::Direct => head,
        };
        let (a, beta) = problem.model.generator_coefficients(x).unwrap();
        let mut pde = -u.g[n] - r * u.v;
        for i in 0..n {
            pde -= beta[i] * u.g[i];
            for j in 0..n {
                pde += a[[i, j]] * u.h[i][j];
            }
        }
        let res = pde.max(psi.v - u.v);
        interior += res * res;
    }
    let mut initial = 0.0;
    for row in batch.initial.rows() {
        let x0 = row.to_vec();
        let head = reference_head(net, &variables(&x0)).v;
        let gap = match output {
            DgmOutput::PayoffSoftplus => head.softplus_value(),
            DgmOutput::Direct => head - reference_payoff(&problem.payoff, &x0[..n], n + 1).v,
        };
        initial += gap * gap;
    }
    interior / batch.interior.nrows() as f64 + initial / batch.initial.nrows() as f64
}

/// A network with every tensor (biases included) drawn uniformly.
pub fn random_net(input_width: usize, hidden: usize, layers: usize, scale: f64, seed: u64) -> NetParams {
    let arch = Architecture::new(input_width, hidden, layers);
    let base = NetParams::init(arch, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let tensors = base
        .tensors()
        .iter()
        .map(|t| t.mapv(|_| rng.random_range(-scale..scale)))
        .collect();
    NetParams::from_tensors(arch, tensors).unwrap()
}

/// The continuation head alone as a differentiable input function.
pub struct Continuation<'a>(pub &'a NetParams);

impl JetFunction for Continuation<'_> {
    fn input_width(&self) -> usize {
        self.0.arch().input_width
    }

    fn eval_jet(&self, tape: &mut Tape, input: &Jet) -> tdgf_core::Result<Jet> {
        let vars = self.0.register_constant(tape);
        Ok(self.0.continuation_jet(tape, &vars, input))
    }
}

/// A uniformly random point in the model's default domain, kept away from
/// the payoff kink so finite differences stay smooth.
pub fn interior_point(model: &Model, payoff: &Payoff, rng: &mut impl Rng) -> Vec<f64> {
    let dom = model.default_domain();
    loop {
        let x: Vec<f64> = dom.lower.iter().zip(&dom.upper).map(|(l, u)| rng.random_range(*l..*u)).collect();
        let basket: f64 = payoff.weights.iter().zip(&x).map(|(w, s)| w * s).sum();
        if (basket - payoff.strike).abs() > 0.05 {
            return x;
        }
    }
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Diffusion matrix transcribed entry by entry from the model's SDE, as
/// Taylor numbers in the state.
pub fn reference_diffusion(model: &Model, x: &[f64]) -> Vec<Vec<T2>> {
    let n = x.len();
    let v = variables(x);
    let c = |a: f64| T2::constant(a, n);
    match model {
        Model::BlackScholes(b) => (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| v[i].mul(&v[j]).scale(0.5 * b.sigma[i] * b.sigma[j] * b.rho[i][j]))
                    .collect()
            })
            .collect(),
        Model::Heston(h) => {
            let d = n / 2;
            let mut a = vec![vec![c(0.0); n]; n];
            for i in 0..d {
                for j in 0..d {
                    let vol = v[d + i].mul(&v[d + j]).sqrt();
                    a[i][j] = vol.mul(&v[i]).mul(&v[j]).scale(0.5 * h.rho_s[i][j]);
                }
                let sv = v[d + i].mul(&v[i]).scale(0.5 * h.eta[i] * h.rho_sv[i]);
                a[i][d + i] = sv.clone();
                a[d + i][i] = sv;
                a[d + i][d + i] = v[d + i].scale(0.5 * h.eta[i] * h.eta[i]);
            }
            a
        }
    }
}

/// Random polynomial of total degree ≤ 3 in `n` variables.
pub struct Poly {
    /// (coefficient, exponent per variable)
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl Poly {
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let count = rng.random_range(2..7);
        let terms = (0..count)
            .map(|_| {
                let mut e = vec![0u32; n];
                let deg = rng.random_range(0..4);
                for _ in 0..deg {
                    e[rng.random_range(0..n)] += 1;
                }
                (rng.random_range(-2.0..2.0), e)
            })
            .collect();
        Poly { terms }
    }

    pub fn eval(&self, x: &[f64]) -> T2 {
        let n = x.len();
        let v = variables(x);
        let mut acc = T2::constant(0.0, n);
        for (c, e) in &self.terms {
            let mut t = T2::constant(*c, n);
            for (i, &k) in e.iter().enumerate() {
                for _ in 0..k {
                    t = t.mul(&v[i]);
                }
            }
            acc = acc.add(&t);
        }
        acc
    }
}

/// `−∇·(A∇u) + b·∇u` with `A` from [`reference_diffusion`] and `b` from the
/// model's convection vector.
pub fn divergence_form(model: &Model, x: &[f64], u: &T2) -> f64 {
    let n = x.len();
    let a = reference_diffusion(model, x);
    let b = model.convection_vector(x).unwrap();
    let mut div = 0.0;
    for i in 0..n {
        for j in 0..n {
            // ∂ᵢ(aᵢⱼ ∂ⱼu)
            div += a[i][j].g[i] * u.g[j] + a[i][j].v * u.h[i][j];
        }
    }
    let drift: f64 = (0..n).map(|i| b[i] * u.g[i]).sum();
    -div + drift
}

/// `𝒜u` from the model's native generator.
pub fn native_form(model: &Model, x: &[f64], u: &T2) -> f64 {
    let n = x.len();
    let hess = Array2::from_shape_fn((n, n), |(i, j)| u.h[i][j]);
    model.generator_apply(x, &u.g, &hess).unwrap()
}

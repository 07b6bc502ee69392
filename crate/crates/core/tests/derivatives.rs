//! Network derivatives and both losses against independent oracles:
//! pointwise Taylor arithmetic and central finite differences.

mod common;

use common::*;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdgf_core::autodiff::{input_gradient, input_hessian};
use tdgf_core::sampling::{sample_uniform, stage_rng};
use tdgf_core::solvers::{
    dgm_loss, dgm_loss_grad, dgm_sample, tdgf_step_grad, tdgf_step_loss, DgmOutput, TrainConfig,
};
use tdgf_core::{BlackScholes, Model, Payoff, Problem, SampleBatch};
use tdgf_core::models::Heston;

fn bs(d: usize) -> Problem {
    Problem::basket_put(Model::black_scholes(BlackScholes::uniform(d, 0.05, 0.5, 0.5)).unwrap(), 1.0).unwrap()
}

fn heston(d: usize) -> Problem {
    let h = Heston::uniform(d, 0.05, 2.0, 0.01, 0.1, 0.5, -0.5);
    Problem::basket_put(Model::heston(h).unwrap(), 1.0).unwrap()
}

fn problems() -> Vec<Problem> {
    vec![bs(1), bs(2), bs(3), heston(1), heston(2)]
}

#[test]
fn forward_matches_pointwise_recursion() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in problems() {
        let n = p.model.state_dim();
        let net = random_net(n, 7, 3, 0.6, n as u64);
        for _ in 0..10 {
            let x = interior_point(&p.model, &p.payoff, &mut rng);
            let got = net.forward(&x, &p.payoff).unwrap();
            let want = reference_price(&net, &p.payoff, &x).v;
            assert!(rel_err(got, want) <= 1e-13, "{got} vs {want}");
        }
    }
}

#[test]
fn input_derivatives_match_taylor_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for p in problems() {
        let n = p.model.state_dim();
        let net = random_net(n, 6, 2, 0.8, 10 + n as u64);
        for _ in 0..10 {
            let x = interior_point(&p.model, &p.payoff, &mut rng);
            let (v, g, h) = input_hessian(&net.with_payoff(&p.payoff), &x).unwrap();
            let want = reference_price(&net, &p.payoff, &x);
            assert!(rel_err(v, want.v) <= 1e-12);
            for i in 0..n {
                assert!((g[i] - want.g[i]).abs() <= 1e-12 * (1.0 + want.g[i].abs()));
                for j in 0..n {
                    assert!((h[[i, j]] - want.h[i][j]).abs() <= 1e-11 * (1.0 + want.h[i][j].abs()));
                }
            }
        }
    }
}

#[test]
fn input_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in problems() {
        let n = p.model.state_dim();
        let net = random_net(n, 8, 3, 0.7, 20 + n as u64);
        let f = Continuation(&net);
        for _ in 0..5 {
            let x = interior_point(&p.model, &p.payoff, &mut rng);
            let (_, g, h) = input_hessian(&f, &x).unwrap();
            let eps = 1e-5;
            for i in 0..n {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[i] += eps;
                dn[i] -= eps;
                let (fu, gu) = input_gradient(&f, &up).unwrap();
                let (fd, gd) = input_gradient(&f, &dn).unwrap();
                let fd_g = (fu - fd) / (2.0 * eps);
                assert!((g[i] - fd_g).abs() <= 1e-7 * (1.0 + g[i].abs()), "grad {i}: {} vs {fd_g}", g[i]);
                for j in 0..n {
                    let fd_h = (gu[j] - gd[j]) / (2.0 * eps);
                    assert!((h[[i, j]] - fd_h).abs() <= 1e-6 * (1.0 + h[[i, j]].abs()), "hess {i}{j}");
                }
            }
        }
    }
}

#[test]
fn step_loss_matches_pointwise_oracle() {
    for (k, p) in problems().into_iter().enumerate() {
        let n = p.model.state_dim();
        let theta = random_net(n, 6, 2, 0.5, 30 + k as u64);
        let prev = random_net(n, 6, 2, 0.5, 40 + k as u64);
        let batch = sample_uniform(&p.domain, 64, &mut stage_rng(k as u64, 1, 0));
        let got = tdgf_step_loss(&theta, &prev, &batch, &p, 0.01).unwrap();
        let want = reference_step_loss(&theta, &prev, &batch.points, &p, 0.01);
        assert!(rel_err(got, want) <= 1e-12, "{got} vs {want}");
    }
}

#[test]
fn step_loss_uses_only_active_points() {
    let p = bs(1);
    let theta = random_net(1, 5, 2, 0.5, 1);
    let prev = random_net(1, 5, 2, 0.5, 2);
    let points = Array2::from_shape_vec((4, 1), vec![0.3, 0.9, 1.4, 2.2]).unwrap();
    let batch = SampleBatch {
        points: points.clone(),
        active: vec![true, false, true, false],
    };
    let active = Array2::from_shape_vec((2, 1), vec![0.3, 1.4]).unwrap();
    let got = tdgf_step_loss(&theta, &prev, &batch, &p, 0.05).unwrap();
    assert!(rel_err(got, reference_step_loss(&theta, &prev, &active, &p, 0.05)) <= 1e-12);
}

#[test]
fn dgm_loss_matches_pointwise_oracle() {
    for (k, p) in problems().into_iter().enumerate() {
        let n = p.model.state_dim();
        let net = random_net(n + 1, 6, 2, 0.5, 50 + k as u64);
        let cfg = TrainConfig {
            boxes: 4,
            samples_per_box_per_dim: 4,
            ..TrainConfig::default()
        };
        let batch = dgm_sample(&p, 1.0, &cfg, &mut stage_rng(k as u64, 0, 3)).unwrap();
        for output in [DgmOutput::PayoffSoftplus, DgmOutput::Direct] {
            let got = dgm_loss(&net, &p, &batch, output).unwrap();
            let want = reference_dgm_loss(&net, &p, &batch, output);
            assert!(rel_err(got, want) <= 1e-12, "{output:?}: {got} vs {want}");
        }
    }
}

fn perturbed(net: &tdgf_core::NetParams, t: usize, idx: (usize, usize), delta: f64) -> tdgf_core::NetParams {
    let mut q = net.clone();
    q.tensors_mut()[t][idx] += delta;
    q
}

/// Central differences on a random subset of parameters.
fn check_param_grad(
    net: &tdgf_core::NetParams,
    grads: &[Array2<f64>],
    loss: impl Fn(&tdgf_core::NetParams) -> f64,
    rng: &mut impl Rng,
) {
    let eps = 1e-6;
    for _ in 0..12 {
        let t = rng.random_range(0..grads.len());
        let (r, c) = grads[t].dim();
        let idx = (rng.random_range(0..r), rng.random_range(0..c));
        let fd = (loss(&perturbed(net, t, idx, eps)) - loss(&perturbed(net, t, idx, -eps))) / (2.0 * eps);
        let g = grads[t][idx];
        let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
        assert!(err <= 1e-4, "tensor {t} {idx:?}: {g} vs {fd}");
    }
}

#[test]
fn step_loss_parameter_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (k, p) in [bs(1), bs(2), heston(1)].into_iter().enumerate() {
        let n = p.model.state_dim();
        let theta = random_net(n, 6, 2, 0.5, 60 + k as u64);
        let prev = random_net(n, 6, 2, 0.5, 70 + k as u64);
        let batch = sample_uniform(&p.domain, 32, &mut stage_rng(k as u64, 2, 0));
        let (loss, grads) = tdgf_step_grad(&theta, &prev, &batch.points, &p, 0.02).unwrap();
        assert_eq!(loss, tdgf_step_loss(&theta, &prev, &batch, &p, 0.02).unwrap());
        check_param_grad(&theta, &grads, |q| tdgf_step_loss(q, &prev, &batch, &p, 0.02).unwrap(), &mut rng);
    }
}

#[test]
fn dgm_parameter_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (k, p) in [bs(1), bs(2), heston(1)].into_iter().enumerate() {
        let n = p.model.state_dim();
        let net = random_net(n + 1, 6, 2, 0.5, 80 + k as u64);
        let cfg = TrainConfig {
            boxes: 3,
            samples_per_box_per_dim: 4,
            ..TrainConfig::default()
        };
        let batch = dgm_sample(&p, 1.0, &cfg, &mut stage_rng(k as u64, 0, 9)).unwrap();
        for output in [DgmOutput::PayoffSoftplus, DgmOutput::Direct] {
            let (loss, grads) = dgm_loss_grad(&net, &p, &batch, output).unwrap();
            assert_eq!(loss, dgm_loss(&net, &p, &batch, output).unwrap());
            check_param_grad(&net, &grads, |q| dgm_loss(q, &p, &batch, output).unwrap(), &mut rng);
        }
    }
}

#[test]
fn payoff_oracle_agrees_with_payoff() {
    let p = Payoff::basket_put(3, 1.0);
    for x in [[0.2, 0.4, 0.9], [1.5, 1.2, 0.9]] {
        assert_eq!(reference_payoff(&p, &x, 3).v, p.value(&x));
    }
}

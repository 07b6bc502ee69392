//! Property-based checks of model, payoff, sampling, network and oracle
//! invariants.

mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tdgf_core::models::Heston;
use tdgf_core::network::{load_checkpoint, save_checkpoint};
use tdgf_core::oracle::{binomial_price_1d, european_put_closed_form};
use tdgf_core::sampling::{mask_above_payoff, sample_boxes, sample_uniform, stage_rng};
use tdgf_core::{BlackScholes, BoxPlan, CheckpointMeta, Model, Payoff};

fn bs_model() -> impl Strategy<Value = Model> {
    (1usize..4, 0.0..0.1f64, 0.1..0.8f64, 0.0..0.9f64)
        .prop_map(|(d, r, s, rho)| Model::black_scholes(BlackScholes::uniform(d, r, s, rho)).unwrap())
}

fn heston_model() -> impl Strategy<Value = Model> {
    (1usize..4, 0.0..0.1f64, 0.5..3.0f64, 0.005..0.1f64, 0.05..0.5f64, 0.0..0.9f64, -0.9..0.9f64)
        .prop_filter_map("joint correlation not PSD", |(d, r, l, k, e, rs, rv)| {
            Model::heston(Heston::uniform(d, r, l, k, e, rs, rv)).ok()
        })
}

fn any_model() -> impl Strategy<Value = Model> {
    prop_oneof![bs_model(), heston_model()]
}

fn point_in(model: &Model, seed: u64) -> Vec<f64> {
    let dom = model.default_domain();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_uniform(&dom, 1, &mut rng).points.row(0).to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diffusion_is_symmetric_psd(model in any_model(), seed in any::<u64>()) {
        let x = point_in(&model, seed);
        let a = model.diffusion_matrix(&x).unwrap();
        let n = x.len();
        let m = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
        prop_assert!((&m - m.transpose()).abs().max() <= 1e-15 * m.abs().max());
        let eig = m.symmetric_eigen().eigenvalues;
        let scale = eig.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        prop_assert!(eig.min() >= -1e-12 * scale.max(1e-300));
    }

    #[test]
    fn diffusion_matches_sde_transcription(model in any_model(), seed in any::<u64>()) {
        let x = point_in(&model, seed);
        let a = model.diffusion_matrix(&x).unwrap();
        let r = reference_diffusion(&model, &x);
        for i in 0..x.len() {
            for j in 0..x.len() {
                prop_assert!((a[[i, j]] - r[i][j].v).abs() <= 1e-14 * (1.0 + r[i][j].v.abs()));
            }
        }
    }

    #[test]
    fn divergence_form_reproduces_generator(model in any_model(), seed in any::<u64>()) {
        let x = point_in(&model, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let u = Poly::random(x.len(), &mut rng).eval(&x);
        let lhs = divergence_form(&model, &x, &u);
        let rhs = native_form(&model, &x, &u);
        prop_assert!(rel_err(lhs, rhs) <= 1e-8, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn payoff_is_convex_and_lipschitz(
        d in 1usize..6,
        k in 0.0..2.0f64,
        xs in prop::collection::vec(0.0..3.0f64, 10),
        lam in 0.0..1.0f64,
    ) {
        let p = Payoff::basket_put(d, k);
        let x = &xs[..d];
        let y = &xs[5..5 + d];
        let mid: Vec<f64> = x.iter().zip(y).map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
        prop_assert!(p.value(&mid) <= lam * p.value(x) + (1.0 - lam) * p.value(y) + 1e-12);
        let dist: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / d as f64;
        prop_assert!((p.value(x) - p.value(y)).abs() <= dist + 1e-12);
        prop_assert!(p.value(x) >= 0.0);
    }

    #[test]
    fn box_samples_stay_in_domain(model in any_model(), boxes in 1usize..20, per in 1usize..10, seed in any::<u64>()) {
        let dom = model.default_domain();
        let plan = BoxPlan::for_model(&model, &dom, boxes, per);
        let b = sample_boxes(&plan, &dom, model.assets(), &mut stage_rng(seed, 0, 0)).unwrap();
        prop_assert_eq!(b.len(), plan.batch_size());
        for r in b.points.rows() {
            prop_assert!(dom.contains(&r.to_vec()));
        }
    }

    #[test]
    fn price_strictly_above_payoff(d in 1usize..4, seed in any::<u64>()) {
        let net = random_net(d, 8, 2, 0.5, seed);
        let p = Payoff::basket_put(d, 1.0);
        let model = Model::black_scholes(BlackScholes::uniform(d, 0.05, 0.5, 0.5)).unwrap();
        let pts = sample_uniform(&model.default_domain(), 200, &mut stage_rng(seed, 0, 1)).points;
        let f = net.forward_batch(&pts, &p).unwrap();
        let psi = p.values(&pts).unwrap();
        for (a, b) in f.iter().zip(psi.iter()) {
            prop_assert!(a > b);
        }
    }

    #[test]
    fn mask_keeps_exactly_points_above_payoff(seed in any::<u64>(), shift in -3.0..1.0f64) {
        let mut net = random_net(1, 6, 2, 0.5, seed);
        let bias = net.output_bias_index();
        net.tensors_mut()[bias][[0, 0]] += shift * 300.0;
        let p = Payoff::basket_put(1, 1.0);
        let model = Model::black_scholes(BlackScholes::uniform(1, 0.05, 0.5, 0.5)).unwrap();
        let b = sample_uniform(&model.default_domain(), 100, &mut stage_rng(seed, 0, 2));
        let m = mask_above_payoff(&b, &net, &p).unwrap();
        let f = net.forward_batch(&b.points, &p).unwrap();
        let psi = p.values(&b.points).unwrap();
        for i in 0..b.len() {
            prop_assert_eq!(m.active[i], f[i] > psi[i]);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(n in 1usize..5, h in 1usize..9, l in 1usize..4, seed in any::<u64>()) {
        let net = random_net(n, h, l, 1.0, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        let meta = CheckpointMeta { step: 3, seed, model_hash: "x".into(), state_dim: n, method: "tdgf".into() };
        save_checkpoint(&net, &meta, &path).unwrap();
        let (back, m) = load_checkpoint(&path).unwrap();
        prop_assert_eq!(m, meta);
        for (a, b) in net.tensors().iter().zip(back.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn binomial_price_is_monotone_and_bounded(
        r in 0.0..0.1f64,
        sigma in 0.1..0.8f64,
        tau in 0.05..1.5f64,
        s in 0.3..2.0f64,
        ds in 0.01..0.3f64,
        dt in 0.01..0.5f64,
    ) {
        let p = |t: f64, s: f64| binomial_price_1d(r, sigma, t, 1.0, s, 400).unwrap();
        let base = p(tau, s);
        prop_assert!(base >= (1.0 - s).max(0.0) - 1e-12);
        prop_assert!(base >= european_put_closed_form(r, sigma, tau, 1.0, s).unwrap() - 2e-3);
        prop_assert!(p(tau, s + ds) <= base + 1e-12);
        prop_assert!(p(tau + dt, s) >= base - 1e-3);
        prop_assert!(binomial_price_1d(r, sigma + 0.05, tau, 1.0, s, 400).unwrap() >= base - 1e-3);
    }
}

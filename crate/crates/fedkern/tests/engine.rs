//! Engine-level checks: the federated loop against the centralized
//! reference, both against a test-local naive reimplementation of the
//! update recursion, plus accounting and edge-case behavior.

use fedkern::comm::{Recorder, WorkerId};
use fedkern::dataio::{sparse_dot, PartitionScheme, VerticalDataset};
use fedkern::engine::{
    omega_seed, sample_index, train_centralized, train_federated, EngineError, EvalOptions, Split,
    TrainConfig,
};
use fedkern::loss::{LossKind, LossSpec};
use fedkern::protocol::Protocol;
use fedkern::rff::{phi_from_scalar, sample_direction, KernelSpec};
use fedkern::synth;

fn circles_data(n: usize, q: usize, seed: u64) -> VerticalDataset {
    let samples = synth::circles(n, 8, seed);
    VerticalDataset::build(&samples, 0.75, seed, q, &PartitionScheme::Contiguous).unwrap()
}

fn base_cfg(q: usize, iterations: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        gamma: 0.05,
        lambda: 1e-4,
        iterations,
        loss: LossSpec::new(LossKind::Logistic),
        kernel: KernelSpec::gaussian(1.0),
        q,
        seed,
    }
}

/// Test-local naive trainer: explicit coefficient vector, eager rescaling,
/// direct evaluation of the coefficient sum. Independent of the engine's
/// shard/cache/lazy-scale machinery.
fn naive_dsg(data: &VerticalDataset, cfg: &TrainConfig) -> Vec<f64> {
    let protocol = Protocol::new(cfg.seed, cfg.q);
    let d = data.dim();
    let n = data.train.len();
    let mut alphas: Vec<f64> = Vec::new();
    let mut omegas: Vec<Vec<f64>> = Vec::new();
    let mut offsets: Vec<f64> = Vec::new();
    for t in 1..=cfg.iterations {
        let s = sample_index(cfg.seed, t, n);
        let x = &data.train[s].features;
        omegas.push(sample_direction(&cfg.kernel, omega_seed(cfg.seed, t), d).omega);
        offsets.push(protocol.surviving_mask(t, data.label_holder).unwrap());
        let f: f64 = alphas
            .iter()
            .enumerate()
            .map(|(k, &a)| a * phi_from_scalar(sparse_dot(x, &omegas[k]) + offsets[k]))
            .sum();
        let y = data.train[s].label;
        let u = sparse_dot(x, &omegas[t as usize - 1]) + offsets[t as usize - 1];
        let alpha = -cfg.gamma * cfg.loss.derivative(f, y) * phi_from_scalar(u);
        for a in &mut alphas {
            *a *= cfg.decay();
        }
        alphas.push(alpha);
    }
    alphas
}

#[test]
fn federated_centralized_and_naive_agree() {
    for q in [1usize, 2, 4, 8] {
        let data = circles_data(240, q, 42);
        let cfg = base_cfg(q, 150, 42);
        let mut rec = Recorder::counting();
        let (model, _) = train_federated(&data, &cfg, &EvalOptions::default(), &mut rec).unwrap();
        let (oracle, _) = train_centralized(&data, &cfg, &EvalOptions::default()).unwrap();
        let fed = model.coefficients();
        let cen = oracle.coefficients();
        let naive = naive_dsg(&data, &cfg);
        assert_eq!(fed.len(), 150);
        assert_eq!(cen.len(), 150);
        let mut max_fc: f64 = 0.0;
        let mut max_cn: f64 = 0.0;
        for k in 0..150 {
            assert_eq!(fed[k].0, cen[k].0);
            max_fc = max_fc.max((fed[k].1 - cen[k].1).abs());
            max_cn = max_cn.max((cen[k].1 - naive[k]).abs());
        }
        assert!(max_fc <= 1e-10, "q={q}: federated vs centralized {max_fc:e}");
        assert!(max_cn <= 1e-10, "q={q}: centralized vs naive {max_cn:e}");
        if q == 1 {
            // a single worker holds everything; the two code paths perform
            // identical arithmetic and must agree bitwise
            assert!(fed.iter().zip(&cen).all(|(a, b)| a.1 == b.1));
        }
    }
}

#[test]
fn federated_predictions_match_the_oracle() {
    let q = 4;
    let data = circles_data(400, q, 7);
    let cfg = base_cfg(q, 120, 7);
    let mut rec = Recorder::counting();
    let (mut model, _) = train_federated(&data, &cfg, &EvalOptions::default(), &mut rec).unwrap();
    let (mut oracle, _) = train_centralized(&data, &cfg, &EvalOptions::default()).unwrap();
    let mut scratch = Recorder::counting();
    for idx in 0..data.test.len() {
        let f_fed = model.predict(Split::Test, idx, &mut scratch).unwrap();
        let f_cen = oracle.evaluate(Split::Test, idx);
        assert!((f_fed - f_cen).abs() <= 1e-10, "test point {idx}");
    }
    let err_fed = model.evaluate_test_error(&mut scratch).unwrap();
    let err_cen = oracle.evaluate_test_error();
    assert_eq!(err_fed, err_cen);
}

#[test]
fn passive_workers_hold_no_coefficients_and_evaluate_to_zero() {
    let q = 4;
    let data = circles_data(160, q, 9);
    let cfg = base_cfg(q, 40, 9);
    let mut rec = Recorder::counting();
    let (mut model, _) = train_federated(&data, &cfg, &EvalOptions::default(), &mut rec).unwrap();
    let active = model.active_worker();
    let mut scratch = Recorder::counting();
    for w in 0..q {
        let worker = WorkerId(w);
        if worker == active {
            assert_eq!(model.shards()[w].len(), 40);
        } else {
            assert!(model.shards()[w].is_empty());
            let share = model.local_evaluate(worker, Split::Test, 0, &mut scratch).unwrap();
            assert_eq!(share, 0.0);
        }
    }
    // the shares sum to the oracle's evaluation
    let (mut oracle, _) = train_centralized(&data, &cfg, &EvalOptions::default()).unwrap();
    let total: f64 = (0..q)
        .map(|w| model.local_evaluate(WorkerId(w), Split::Test, 3, &mut scratch).unwrap())
        .sum();
    assert!((total - oracle.evaluate(Split::Test, 3)).abs() <= 1e-10);
}

#[test]
fn first_iteration_matches_the_zero_model_closed_form() {
    let q = 2;
    let data = circles_data(100, q, 11);
    let cfg = base_cfg(q, 1, 11);
    let mut rec = Recorder::counting();
    let (model, _) = train_federated(&data, &cfg, &EvalOptions::default(), &mut rec).unwrap();
    let coeffs = model.coefficients();
    assert_eq!(coeffs.len(), 1);

    let s = sample_index(cfg.seed, 1, data.train.len());
    let y = data.train[s].label;
    let omega = sample_direction(&cfg.kernel, omega_seed(cfg.seed, 1), data.dim()).omega;
    let protocol = Protocol::new(cfg.seed, cfg.q);
    let b = protocol.surviving_mask(1, data.label_holder).unwrap();
    let u = sparse_dot(&data.train[s].features, &omega) + b;
    // f_1 = 0, so alpha_1 = -gamma * L'(0, y) * phi(u)
    let expected = -cfg.gamma * cfg.loss.derivative(0.0, y) * phi_from_scalar(u);
    assert!((coeffs[0].1 - expected).abs() <= 1e-10);
}

#[test]
fn boundary_step_size_zeroes_all_but_the_newest_coefficient() {
    let q = 2;
    let data = circles_data(80, q, 13);
    let cfg = TrainConfig {
        gamma: 1.0,
        lambda: 1.0,
        iterations: 5,
        loss: LossSpec::new(LossKind::Square),
        ..base_cfg(q, 5, 13)
    };
    let (oracle, _) = train_centralized(&data, &cfg, &EvalOptions::default()).unwrap();
    let coeffs = oracle.coefficients();
    for &(i, a) in &coeffs[..4] {
        assert_eq!(a, 0.0, "iteration {i}");
    }
    assert_ne!(coeffs[4].1, 0.0);
}

#[test]
fn different_seeds_give_different_trajectories() {
    let q = 2;
    let data = circles_data(100, q, 17);
    let a = train_centralized(&data, &base_cfg(q, 30, 1), &EvalOptions::default())
        .unwrap()
        .0
        .coefficients();
    let b = train_centralized(&data, &base_cfg(q, 30, 2), &EvalOptions::default())
        .unwrap()
        .0
        .coefficients();
    assert!(a.iter().zip(&b).any(|(x, y)| x.1 != y.1));
}

#[test]
fn reruns_are_bitwise_identical() {
    let q = 4;
    let data = circles_data(150, q, 19);
    let cfg = base_cfg(q, 60, 19);
    let run = |once: &VerticalDataset| {
        let mut rec = Recorder::counting();
        let (model, _) = train_federated(once, &cfg, &EvalOptions::default(), &mut rec).unwrap();
        (model.coefficients(), rec.ledger.messages)
    };
    let (c1, m1) = run(&data);
    let (c2, m2) = run(&data);
    assert_eq!(c1, c2);
    assert_eq!(m1, m2);
}

#[test]
fn per_iteration_messages_follow_the_accounting_identity() {
    // Scalar messages in iteration t decompose as
    // fresh_calls * ((q-1) + (q-2)) + 3 * (q-1), and for t >= 2 the total
    // stays below 3*q*t.
    for q in [2usize, 4, 8] {
        let data = circles_data(200, q, 23);
        let cfg = base_cfg(q, 80, 23);
        let opts = EvalOptions { track_per_iteration_messages: true, ..Default::default() };
        let mut rec = Recorder::counting();
        let (_, metrics) = train_federated(&data, &cfg, &opts, &mut rec).unwrap();
        let per_iter = metrics.per_iteration_messages.unwrap();
        assert_eq!(per_iter.len(), 80);
        let fixed = 3 * (q as u64 - 1);
        let per_call = (q as u64 - 1) + (q as u64).saturating_sub(2);
        for (k, &msgs) in per_iter.iter().enumerate() {
            let t = k as u64 + 1;
            if q == 1 {
                assert_eq!(msgs, 0);
                continue;
            }
            assert!(msgs >= fixed, "t={t}");
            let var = msgs - fixed;
            assert_eq!(var % per_call, 0, "t={t} msgs={msgs}");
            let fresh = var / per_call;
            assert!(fresh >= 1 && fresh <= t, "t={t} fresh={fresh}");
            if t >= 2 {
                assert!(msgs <= 3 * q as u64 * t, "t={t} msgs={msgs}");
            }
        }
    }
}

#[test]
fn coefficient_magnitudes_respect_the_geometric_bound() {
    // For losses with |L'| <= M the coefficient magnitudes are bounded by
    // gamma*M*sqrt(2)*decay^k, so their absolute sum stays below
    // M*sqrt(2)/lambda.
    for kind in [LossKind::Logistic, LossKind::SmoothHinge] {
        let q = 2;
        let data = circles_data(120, q, 29);
        let cfg = TrainConfig {
            gamma: 0.1,
            lambda: 0.01,
            loss: LossSpec::new(kind),
            ..base_cfg(q, 400, 29)
        };
        let (oracle, _) = train_centralized(&data, &cfg, &EvalOptions::default()).unwrap();
        let m = cfg.loss.derivative_bound().unwrap();
        let abs_sum: f64 = oracle.coefficients().iter().map(|&(_, a)| a.abs()).sum();
        let bound = m * std::f64::consts::SQRT_2 / cfg.lambda;
        assert!(
            abs_sum <= bound * (1.0 + 1e-9),
            "{kind:?}: {abs_sum} > {bound}"
        );
    }
}

#[test]
fn metrics_rows_are_emitted_at_the_requested_cadence() {
    let q = 2;
    let data = circles_data(120, q, 31);
    let cfg = base_cfg(q, 50, 31);
    let opts = EvalOptions { eval_every: Some(10), ..Default::default() };
    let mut rec = Recorder::counting();
    let (_, metrics) = train_federated(&data, &cfg, &opts, &mut rec).unwrap();
    assert_eq!(metrics.rows.len(), 5);
    for (k, row) in metrics.rows.iter().enumerate() {
        assert_eq!(row.iteration, 10 * (k as u64 + 1));
        assert!(row.test_error.is_some());
        assert_eq!(row.bytes, row.messages * 8);
    }
    assert!(metrics.rows.windows(2).all(|w| w[0].messages < w[1].messages));
}

#[test]
fn invalid_configurations_are_rejected() {
    let data = circles_data(60, 2, 37);
    let bad_gamma = TrainConfig { gamma: 200.0, lambda: 0.01, ..base_cfg(2, 10, 37) };
    assert!(matches!(
        train_federated(&data, &bad_gamma, &EvalOptions::default(), &mut Recorder::counting()),
        Err(EngineError::Config(_))
    ));
    let bad_q = base_cfg(3, 10, 37);
    assert!(matches!(
        train_federated(&data, &bad_q, &EvalOptions::default(), &mut Recorder::counting()),
        Err(EngineError::Config(_))
    ));
    let zero_iters = TrainConfig { iterations: 0, ..base_cfg(2, 0, 37) };
    assert!(train_centralized(&data, &zero_iters, &EvalOptions::default()).is_err());
}

#[test]
fn probe_runs_track_the_plain_oracle() {
    let q = 2;
    let data = circles_data(150, q, 41);
    let cfg = base_cfg(q, 80, 41);
    let probes: Vec<Vec<(usize, f64)>> =
        data.test.iter().take(20).map(|s| s.features.clone()).collect();
    let run = fedkern::engine::train_centralized_with_probes(&data, &cfg, &probes, &[40, 80])
        .unwrap();
    assert_eq!(run.snapshots.len(), 2);
    assert_eq!(run.snapshots[0].0, 40);
    let (mut oracle, _) = train_centralized(&data, &cfg, &EvalOptions::default()).unwrap();
    // the incremental tracker agrees with the materialized oracle at the
    // final iteration to float accumulation error
    for (p, probe_pred) in run.snapshots[1].1.iter().enumerate() {
        let direct = oracle.evaluate(Split::Test, p);
        assert!((probe_pred - direct).abs() <= 1e-9, "probe {p}");
    }
}

mod common;

use adasgd::model::{self, Subset};
use adasgd::optimizers::{AdamState, Mode};
use adasgd::{run, synthetic_logistic, ModelState, OptimizerConfig, RunLog, SparseDataset, SparseRow, Variant};
use common::Dense;

/// Rows along the coordinate axes with distinct scales, so the Hessian is
/// diagonal.
fn diagonal_fixture() -> SparseDataset {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..40 {
        let axis = i % 4;
        let scale = 0.5 + axis as f64;
        rows.push(SparseRow::new(vec![axis], vec![scale * (1.0 + 0.1 * (i / 4) as f64)]));
        labels.push(if i % 5 == 0 { -1.0 } else { 1.0 });
    }
    SparseDataset::new(rows, labels, 4).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn quad(h: &[Vec<f64>], v: &[f64]) -> f64 {
    h.iter().zip(v).map(|(row, vi)| vi * dot(row, v)).sum()
}

/// Step rule written out from its definition.
fn oracle_step(rho: f64, delta: f64, eps: f64) -> f64 {
    assert!(rho > 0.0 && delta > 0.0);
    let de = delta / (1.0 - eps).sqrt();
    rho / ((rho + de) * de)
}

fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol * (1.0 + b.abs()), "{what}: {a} vs {b}");
}

#[test]
fn ada_adam_matches_transcribed_oracle() {
    let data = diagonal_fixture();
    let lambda = 0.05;
    let dense = Dense::new(&data, lambda);
    let (beta1, beta2, eps_prime, eps) = (0.9, 0.999, 1e-8, 0.01);
    let cfg = OptimizerConfig {
        variant: Variant::AdaAdam,
        full_batch: true,
        max_iters: 5,
        tolerance: 0.0,
        lambda: Some(lambda),
        eps,
        ..Default::default()
    };
    let log = run(&cfg, &data, None).unwrap();
    assert_eq!(log.iterations(), 5);

    let mut x = vec![0.0; 4];
    let mut m = [0.0; 4];
    let mut v = [0.0; 4];
    for k in 0..5 {
        let g = dense.gradient(&x);
        let mut d = vec![0.0; 4];
        for j in 0..4 {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / (1.0 - f64::powi(beta1, k + 1));
            let v_hat = v[j] / (1.0 - f64::powi(beta2, k + 1));
            d[j] = -m_hat / (v_hat.sqrt() + eps_prime);
        }
        let rho = -dot(&d, &g);
        let delta = quad(&dense.hessian(&x), &d).sqrt();
        let t = oracle_step(rho, delta, eps);
        let r = &log.records[k as usize];
        assert!(!r.step.fallback);
        assert_close(r.step.rho, rho, 1e-12, "rho");
        assert_close(r.step.delta_hat, delta, 1e-12, "delta");
        assert_close(r.step.t, t, 1e-12, "t");
        for j in 0..4 {
            x[j] += t * d[j];
        }
    }
    for (a, b) in log.final_state.x.iter().zip(&x) {
        assert_close(*a, *b, 1e-11, "x");
    }
}

#[test]
fn ada_momentum_matches_transcribed_oracle() {
    let data = diagonal_fixture();
    let lambda = 0.05;
    let dense = Dense::new(&data, lambda);
    let beta1 = 0.5;
    let cfg = OptimizerConfig {
        variant: Variant::AdaMomentum,
        full_batch: true,
        max_iters: 3,
        tolerance: 0.0,
        lambda: Some(lambda),
        beta1,
        ..Default::default()
    };
    let log = run(&cfg, &data, None).unwrap();

    let mut x = vec![0.0; 4];
    let mut vel = [0.0; 4];
    for k in 0..3 {
        let g = dense.gradient(&x);
        for j in 0..4 {
            vel[j] = beta1 * vel[j] + g[j];
        }
        let d: Vec<f64> = vel.iter().map(|v| -v).collect();
        let rho = -dot(&d, &g);
        let delta = quad(&dense.hessian(&x), &d).sqrt();
        let t = oracle_step(rho, delta, cfg.eps);
        assert_close(log.records[k].step.t, t, 1e-12, "t");
        for j in 0..4 {
            x[j] += t * d[j];
        }
    }
    for (a, b) in log.final_state.x.iter().zip(&x) {
        assert_close(*a, *b, 1e-11, "x");
    }
}

#[test]
fn adam_direction_is_scale_invariant() {
    let data = synthetic_logistic(200, 5, 1.0, 2).unwrap();
    let state = ModelState::new(vec![0.2, -0.1, 0.3, 0.0, 0.1], 0.0).unwrap();
    let g = model::grad(&state, &data, Subset::All).unwrap();
    let scaled: Vec<f64> = g.iter().map(|v| 10.0 * v).collect();
    let (mut a, mut b) = (AdamState::new(5), AdamState::new(5));
    for _ in 0..3 {
        let da = a.direction(&g, 0.9, 0.999, 1e-12);
        let db = b.direction(&scaled, 0.9, 0.999, 1e-12);
        for (x, y) in da.iter().zip(&db) {
            assert!((x - y).abs() <= 1e-6);
        }
    }
}

#[test]
fn momentum_starts_from_zero_velocity() {
    // with v_0 = 0 the first direction is exactly -g_0 for any beta1
    let data = synthetic_logistic(300, 4, 1.0, 8).unwrap();
    let base = OptimizerConfig {
        max_iters: 1,
        ..Default::default()
    };
    let sgd = run(&base, &data, None).unwrap();
    let mom = run(
        &OptimizerConfig {
            variant: Variant::AdaMomentum,
            beta1: 0.9,
            ..base
        },
        &data,
        None,
    )
    .unwrap();
    assert_eq!(sgd.records, mom.records);
    assert_eq!(sgd.final_state, mom.final_state);
}

#[test]
fn full_batch_loss_strictly_decreases() {
    let data = synthetic_logistic(500, 8, 1.5, 4).unwrap();
    let cfg = OptimizerConfig {
        full_batch: true,
        max_iters: 200,
        eval_every: 1,
        lambda: Some(0.01),
        ..Default::default()
    };
    let log = run(&cfg, &data, None).unwrap();
    let mut losses: Vec<f64> = log.records.iter().map(|r| r.loss.unwrap()).collect();
    losses.push(log.final_loss);
    let (_, f_star) = Dense::new(&data, 0.01).optimum();
    // strict above the round-off floor, flat to 1e-15 once there
    for w in losses.windows(2) {
        if w[0] - f_star > 1e-13 {
            assert!(w[1] < w[0], "{losses:?}");
        } else {
            assert!(w[1] <= w[0] + 1e-15, "{losses:?}");
        }
    }

    // per-step contraction of the gap never exceeds 1
    let gaps: Vec<f64> = losses.iter().map(|f| f - f_star).filter(|g| *g > 1e-13).collect();
    assert!(gaps.windows(2).all(|w| w[1] / w[0] <= 1.0));
}

fn step_invariants_hold(log: &RunLog, eps: f64) {
    for r in &log.records {
        let s = r.step;
        assert!(s.t > 0.0 && s.t.is_finite());
        if !s.fallback {
            assert!(s.rho > 0.0 && s.delta_hat > 0.0);
            assert_close(s.delta_hat_eps, s.delta_hat / (1.0 - eps).sqrt(), 1e-14, "delta_eps");
            assert!(s.t * s.delta_hat_eps < 1.0);
            assert_close(s.eta, s.rho / s.delta_hat, 1e-14, "eta");
        }
    }
}

#[test]
fn adaptive_variants_keep_step_invariants() {
    let data = synthetic_logistic(600, 6, 1.0, 5).unwrap();
    for variant in [Variant::AdaSgd, Variant::AdaAdam, Variant::AdaMomentum] {
        let cfg = OptimizerConfig {
            variant,
            max_iters: 150,
            seed: 2,
            ..Default::default()
        };
        let log = run(&cfg, &data, None).unwrap();
        step_invariants_hold(&log, cfg.eps);
        let sizes: Vec<usize> = log.records.iter().map(|r| r.batch_size()).collect();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]), "{variant}");
        let seen: Vec<u64> = log.records.iter().map(|r| r.samples_seen).collect();
        assert!(seen.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn runs_are_deterministic() {
    let data = synthetic_logistic(400, 5, 1.0, 1).unwrap();
    for variant in Variant::ALL {
        let cfg = OptimizerConfig {
            variant,
            fixed_lr: (!variant.is_adaptive()).then_some(0.5),
            max_iters: 60,
            seed: 17,
            ..Default::default()
        };
        let a = run(&cfg, &data, None).unwrap();
        let b = run(&cfg, &data, None).unwrap();
        let bits = |l: &RunLog| l.final_state.x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b), "{variant}");
        assert_eq!(a.iterations(), b.iterations());
    }
}

#[test]
fn baselines_follow_distinct_batch_trajectories() {
    let data = synthetic_logistic(2000, 6, 0.5, 12).unwrap();
    let trajectories: Vec<Vec<usize>> = [Variant::SgdFixed, Variant::SgdNorm, Variant::SgdInner, Variant::SgdAugmented]
        .into_iter()
        .map(|variant| {
            let cfg = OptimizerConfig {
                variant,
                fixed_lr: Some(0.5),
                theta: Some(0.5),
                max_iters: 60,
                seed: 3,
                ..Default::default()
            };
            run(&cfg, &data, None).unwrap().records.iter().map(|r| r.batch_size()).collect()
        })
        .collect();
    assert!(trajectories[0].iter().all(|&b| b == 16));
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(trajectories[i], trajectories[j], "baselines {i} and {j}");
        }
    }
    for t in &trajectories[1..] {
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn two_milestones_switch_rates_on_schedule() {
    let data = synthetic_logistic(500, 5, 1.0, 6).unwrap();
    let cfg = OptimizerConfig {
        mode: Mode::Milestone,
        milestones: vec![0, 20],
        probe_iters: 5,
        max_iters: 40,
        ..Default::default()
    };
    let log = run(&cfg, &data, None).unwrap();
    let t: Vec<f64> = log.records.iter().map(|r| r.step.t).collect();
    let probed = |r: std::ops::Range<usize>| {
        let mut v = t[r].to_vec();
        v.sort_by(f64::total_cmp);
        v[2]
    };
    let first = probed(0..5);
    let second = probed(20..25);
    assert!(log.records[..5].iter().all(|r| r.step.rho.is_finite()));
    assert!(t[5..20].iter().all(|&v| v == first));
    assert!(log.records[20..25].iter().all(|r| r.step.rho.is_finite()));
    assert!(t[25..].iter().all(|&v| v == second));
    assert_ne!(first, second);
}

#[test]
fn optimum_start_converges_immediately() {
    let data = synthetic_logistic(300, 4, 1.0, 3).unwrap();
    let lambda = 0.01;
    let (w_star, _) = Dense::new(&data, lambda).optimum();
    let cfg = OptimizerConfig {
        full_batch: true,
        lambda: Some(lambda),
        ..Default::default()
    };
    let log = run(&cfg, &data, Some(&w_star)).unwrap();
    assert_eq!(log.status, adasgd::RunStatus::Converged);
    assert_eq!(log.iterations(), 0);
}

#[test]
fn mismatched_initial_point_is_rejected() {
    let data = synthetic_logistic(50, 3, 1.0, 3).unwrap();
    assert!(run(&OptimizerConfig::default(), &data, Some(&[0.0; 4])).is_err());
}

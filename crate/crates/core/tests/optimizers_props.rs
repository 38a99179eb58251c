use std::sync::Arc;

use proptest::prelude::*;
use ridge_core::analysis::estimate_rate;
use ridge_core::optimizers::{run, step_best_response, step_fr_general, FrMode, Hyper, Precond, RuleKind, UpdateRule};
use ridge_core::problems::{
    make_g1, make_g2, make_g3, make_random_quadratic, make_stackelberg_quadratic, GeneralSumProblem, Problem,
    QuadraticSpec, ZeroSumAsGeneral, ZeroSumProblem,
};
use ridge_core::vecspace::{self, solve_dense, DenseMatrix, JointPoint};

fn hyper_for(kind: RuleKind, n: usize, m: usize) -> Hyper {
    let mut h = Hyper::uniform(0.05);
    match kind {
        RuleKind::FrMom => h.gamma = 0.5,
        RuleKind::Gda2ts => h.eta_y = 0.5,
        RuleKind::FrPrecond => {
            h.precond = Precond::Diagonal { p1: vec![0.5; n], p2: vec![2.0; m] };
        }
        _ => {}
    }
    h
}

fn zero_sum_stationary_cases() -> Vec<(Problem, JointPoint)> {
    let mut out = vec![
        (Problem::zero_sum(make_g1()), JointPoint::zeros(1, 1)),
        (Problem::zero_sum(make_g2()), JointPoint::zeros(1, 1)),
        (Problem::zero_sum(make_g3()), JointPoint::zeros(1, 1)),
    ];
    for seed in 0..10 {
        let q = make_random_quadratic(3, 2, seed, &QuadraticSpec::mixed()).unwrap();
        out.push((Problem::zero_sum(q), JointPoint::zeros(3, 2)));
    }
    out
}

#[test]
fn every_rule_fixes_stationary_points() {
    for (p, z) in zero_sum_stationary_cases() {
        for kind in RuleKind::ALL {
            let mut rule = UpdateRule::new(kind, hyper_for(kind, z.n(), z.m())).unwrap();
            let (next, _) = rule.step(&p, &z).unwrap();
            assert!(next.distance(&z) <= 1e-12, "{kind} on {}", p.id());
        }
    }
    for seed in 0..10 {
        let s = make_stackelberg_quadratic(3, 2, seed).unwrap();
        let z = s.equilibrium().clone();
        let p = Problem::general_sum(s);
        for kind in [RuleKind::FrGeneral, RuleKind::BestResponse] {
            let mut rule = UpdateRule::new(kind, Hyper::uniform(0.05)).unwrap();
            let (next, _) = rule.step(&p, &z).unwrap();
            assert!(next.distance(&z) <= 1e-12, "{kind}: {:e}", next.distance(&z));
        }
    }
}

#[test]
fn identity_preconditioner_is_plain_fr() {
    let p = Problem::zero_sum(make_random_quadratic(3, 3, 2, &QuadraticSpec::mixed()).unwrap());
    let z = JointPoint::new(vec![0.4, -1.0, 0.3], vec![1.0, 0.2, -0.7]);
    let mut fr = UpdateRule::from_id("fr", Hyper::uniform(0.1)).unwrap();
    let mut pre = UpdateRule::from_id("fr-precond", Hyper::uniform(0.1)).unwrap();
    assert_eq!(fr.step(&p, &z).unwrap().0, pre.step(&p, &z).unwrap().0);
    let dense = Hyper {
        precond: Precond::Dense { p1: DenseMatrix::identity(3), p2: DenseMatrix::identity(3) },
        ..Hyper::uniform(0.1)
    };
    let mut pre = UpdateRule::from_id("fr-precond", dense).unwrap();
    assert!(fr.step(&p, &z).unwrap().0.distance(&pre.step(&p, &z).unwrap().0) < 1e-15);
}

#[test]
fn zero_momentum_is_plain_fr() {
    let p = Problem::zero_sum(make_g1());
    let start = JointPoint::new(vec![1.0], vec![1.0]);
    let a = run(&mut UpdateRule::from_id("fr", Hyper::uniform(0.05)).unwrap(), &p, &start, 50, None).unwrap();
    let b = run(&mut UpdateRule::from_id("fr-mom", Hyper::uniform(0.05)).unwrap(), &p, &start, 50, None).unwrap();
    assert_eq!(a.points, b.points);
}

#[test]
fn general_fr_with_negated_cost_matches_zero_sum_fr_on_the_ridge() {
    for seed in 0..20 {
        let q = make_random_quadratic(2, 3, seed, &QuadraticSpec::mixed()).unwrap();
        let blocks = q.blocks();
        let x = vec![0.3 + seed as f64 * 0.01, -0.8];
        let y = vecspace::scaled(-1.0, &solve_dense(&blocks.yy, &blocks.yx.matvec(&x)).unwrap());
        let z = JointPoint::new(x, y);
        assert!(vecspace::norm(&q.grad(&z).y) < 1e-12);
        let h = Hyper::uniform(0.05);
        let general = step_fr_general(&ZeroSumAsGeneral(Arc::new(q.clone())), &z, &h).unwrap();
        let mut fr = UpdateRule::from_id("fr", h).unwrap();
        let zero_sum = fr.step(&Problem::zero_sum(q), &z).unwrap().0;
        assert!(general.distance(&zero_sum) < 1e-12, "seed {seed}");
    }
}

#[test]
fn best_response_differs_by_the_correction_term() {
    for seed in 0..20 {
        let s = make_stackelberg_quadratic(3, 2, seed).unwrap();
        let z = JointPoint::new(vec![0.5, -0.1, 0.2], vec![1.0, -1.0]);
        let h = Hyper::new(0.05, 0.1);
        let fr = step_fr_general(&s, &z, &h).unwrap();
        let br = step_best_response(&s, &z, &h).unwrap();
        assert_eq!(fr.x, br.x);
        let g = s.follower_hessian(&z);
        let dx = ridge_core::optimizers::total_derivative(&s, &z).unwrap();
        let corr = solve_dense(&g.yy, &g.yx.matvec(&vecspace::scaled(0.05, &dx))).unwrap();
        let diff = vecspace::sub(&fr.y, &br.y);
        assert!(vecspace::norm(&vecspace::sub(&diff, &corr)) < 1e-12);
    }
}

#[test]
fn gda_escapes_g1_for_every_step_size() {
    let p = Problem::zero_sum(make_g1());
    let start = JointPoint::new(vec![-4.0], vec![3.0]);
    for eta in [1e-3, 0.01, 0.05, 0.1, 0.2] {
        let t = run(&mut UpdateRule::from_id("gda", Hyper::uniform(eta)).unwrap(), &p, &start, 2000, None).unwrap();
        let d = t.distances_to(&JointPoint::zeros(1, 1));
        if t.diverged {
            continue;
        }
        let tail = &d[d.len() / 2..];
        assert!(tail.windows(2).all(|w| w[1] > w[0]), "eta {eta}");
        assert!(d.last().unwrap() > &d[0], "eta {eta}");
    }
}

#[test]
fn g2_separates_baselines_from_fr() {
    let p = Problem::zero_sum(make_g2());
    let start = JointPoint::new(vec![1.0], vec![-1.0]);
    let origin = JointPoint::zeros(1, 1);
    for id in ["gda", "ogda", "eg", "sga", "co"] {
        let t = run(&mut UpdateRule::from_id(id, Hyper::uniform(0.05)).unwrap(), &p, &start, 3000, None).unwrap();
        assert!(t.last().distance(&origin) < 1e-6, "{id}");
    }
    let t = run(&mut UpdateRule::from_id("fr", Hyper::uniform(0.05)).unwrap(), &p, &start, 3000, None).unwrap();
    assert!(t.diverged || t.last().distance(&origin) > start.distance(&origin));
}

#[test]
fn fr_contracts_on_g1_at_the_predicted_rate() {
    let p = Problem::zero_sum(make_g1());
    let origin = JointPoint::zeros(1, 1);
    let start = JointPoint::new(vec![1.0], vec![1.0]);
    let t = run(&mut UpdateRule::from_id("fr", Hyper::uniform(0.05)).unwrap(), &p, &start, 300, None).unwrap();
    let rate = estimate_rate(&t, &origin).unwrap();
    assert!((rate - 0.9).abs() <= 0.01, "{rate}");

    let t = run(&mut UpdateRule::from_id("fr", Hyper::uniform(0.05)).unwrap(), &p, &start, 2000, Some(1e-8)).unwrap();
    assert!(t.stopped_early);
    assert!(t.last().distance(&origin) < 1e-6);
}

#[test]
fn cg_mode_tracks_exact_mode_on_quadratics() {
    for seed in 0..10 {
        let q = make_random_quadratic(3, 3, seed, &QuadraticSpec::local_minimax()).unwrap();
        let p = Problem::zero_sum(q);
        let start = JointPoint::new(vec![1.0, -0.5, 0.25], vec![0.5, 1.0, -1.0]);
        let exact = run(&mut UpdateRule::from_id("fr", Hyper::uniform(0.05)).unwrap(), &p, &start, 100, None).unwrap();
        let mut h = Hyper::uniform(0.05);
        h.damping = ridge_core::solvers::DampingState::new(0.0).with_floor(0.0);
        h.fr_mode = FrMode::Cg;
        let cg = run(&mut UpdateRule::from_id("fr-cg", h).unwrap(), &p, &start, 100, None).unwrap();
        for (a, b) in exact.points.iter().zip(&cg.points) {
            assert!(a.distance(b) <= 1e-4, "seed {seed}: {:e}", a.distance(b));
        }
    }
}

#[test]
fn reset_clears_state() {
    let p = Problem::zero_sum(make_g1());
    let mut rule = UpdateRule::from_id("ogda", Hyper::uniform(0.05)).unwrap();
    let fresh = rule.clone();
    rule.step(&p, &JointPoint::new(vec![1.0], vec![1.0])).unwrap();
    assert_ne!(rule.state(), fresh.state());
    rule.reset();
    assert_eq!(rule.state(), fresh.state());
}

#[test]
fn gda_rotation_on_g1_type_draws_is_reported() {
    // report only: how many local-minimax draws give GDA a rotating Jacobian
    let mut rotating = 0;
    for seed in 0..50 {
        let q = make_random_quadratic(2, 2, seed, &QuadraticSpec::local_minimax()).unwrap();
        let p = Problem::zero_sum(q);
        let rule = UpdateRule::from_id("gda", Hyper::uniform(0.05)).unwrap();
        let j = ridge_core::diff::dynamics_jacobian(&rule, &p, &JointPoint::zeros(2, 2)).unwrap();
        if ridge_core::vecspace::general_eigenvalues(&j).unwrap().max_imag() > 0.1 * 0.05 {
            rotating += 1;
        }
    }
    println!("GDA Jacobians with complex eigenvalues: {rotating}/50");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectories_are_consistent(seed in 0u64..500, rule_idx in 0usize..10, iters in 1usize..60) {
        let kind = RuleKind::ALL[rule_idx];
        let q = make_random_quadratic(2, 2, seed, &QuadraticSpec::mixed()).unwrap();
        let p = Problem::zero_sum(q);
        let start = JointPoint::new(vec![1.0, -1.0], vec![0.5, 0.25]);
        let mut rule = UpdateRule::new(kind, hyper_for(kind, 2, 2)).unwrap();
        let t = run(&mut rule, &p, &start, iters, None).unwrap();
        prop_assert_eq!(t.points.len(), t.grad_norms.len());
        prop_assert_eq!(t.aux.len() + 1, t.points.len());
        prop_assert!(t.points.len() <= iters + 1);
        if !t.diverged && t.failure.is_none() {
            prop_assert_eq!(t.points.len(), iters + 1);
            prop_assert!(t.points.iter().all(|z| z.is_finite()));
        }
    }
}

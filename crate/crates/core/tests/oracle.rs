use metagrad::error::Error;
use metagrad::mdp::TabularMdp;
use metagrad::metarl::InnerBatch;
use metagrad::oracle::{fd_gradient, multiset_count, try_fd_gradient, Oracle};
use metagrad::rng::stream;
use metagrad::stats::MomentStats;
use nalgebra::DVector;
use rand::Rng;

fn random_theta(d: usize, seed: u64) -> DVector<f64> {
    let mut rng = stream(seed, 0);
    DVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5))
}

/// Backward induction over (time, state), independent of trajectory enumeration.
fn dp_value(mdp: &TabularMdp, theta: &DVector<f64>, g: usize) -> f64 {
    let shape = mdp.policy_shape();
    let mut next = vec![0.0; mdp.n_states()];
    for t in (0..mdp.horizon()).rev() {
        let last = t + 1 == mdp.horizon();
        next = (0..mdp.n_states())
            .map(|s| {
                let pi = shape.policy_probs(theta, s, g).unwrap();
                (0..mdp.n_actions())
                    .map(|a| {
                        let cont: f64 = if last {
                            0.0
                        } else {
                            mdp.transition_row(s, a).iter().zip(&next).map(|(p, v)| p * v).sum()
                        };
                        pi[a] * (mdp.reward(s, a, g) + mdp.gamma() * cont)
                    })
                    .sum()
            })
            .collect();
    }
    next[mdp.initial_state()]
}

#[test]
fn enumerated_probabilities_sum_to_one() {
    let oracle = Oracle::default();
    for (i, mdp) in [TabularMdp::chain2(), TabularMdp::constant_value(), TabularMdp::wide4()]
        .iter()
        .enumerate()
    {
        for g in 0..mdp.n_tasks() {
            let th = random_theta(mdp.param_dim(), 40 + i as u64);
            let ens = oracle.enumerate_trajectories(mdp, &th, g).unwrap();
            assert!((ens.total_probability() - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn value_matches_backward_induction() {
    let oracle = Oracle::default();
    for (i, mdp) in [TabularMdp::chain2(), TabularMdp::constant_value(), TabularMdp::wide4()]
        .iter()
        .enumerate()
    {
        for seed in 0..10 {
            let th = random_theta(mdp.param_dim(), 100 * i as u64 + seed);
            for g in 0..mdp.n_tasks() {
                let v = oracle.exact_value(mdp, &th, g).unwrap();
                assert!((v - dp_value(mdp, &th, g)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gradient_and_hessian_match_finite_differences() {
    let oracle = Oracle::default();
    let mdp = TabularMdp::chain2();
    for seed in 0..5 {
        let th = random_theta(8, 200 + seed);
        for g in 0..2 {
            let pg = oracle.exact_pg(&mdp, &th, g).unwrap();
            let fd = fd_gradient(|t| dp_value(&mdp, t, g), &th, 1e-5);
            assert!((&pg - fd).amax() < 1e-8);

            let h = oracle.exact_hessian(&mdp, &th, g).unwrap();
            assert!((&h - h.transpose()).amax() < 1e-12);
            for k in 0..8 {
                let col = fd_gradient(|t| oracle.exact_pg(&mdp, t, g).unwrap()[k], &th, 1e-5);
                assert!((h.row(k).transpose() - col).amax() < 1e-5);
            }
        }
    }
}

#[test]
fn constant_fixture_is_flat() {
    let oracle = Oracle::default();
    let mdp = TabularMdp::constant_value();
    let th = random_theta(mdp.param_dim(), 7);
    assert!((oracle.exact_value(&mdp, &th, 0).unwrap() - 1.9).abs() < 1e-12);
    assert!(oracle.exact_pg(&mdp, &th, 0).unwrap().amax() < 1e-12);
    assert!(oracle.exact_hessian(&mdp, &th, 0).unwrap().amax() < 1e-12);
    let terms = oracle.exact_j_n_terms(&mdp, &th, 0, 2, 0.5).unwrap();
    assert!(terms.explicit_term.amax() < 1e-12);
    assert!(terms.score_term.amax() < 1e-10);
}

#[test]
fn j_n_is_the_gradient_of_f_n() {
    let oracle = Oracle::default();
    let mdp = TabularMdp::chain2();
    for (n, eta) in [(1, 0.1), (2, 0.5), (3, 1.0)] {
        for g in 0..2 {
            let th = random_theta(8, 300 + n as u64);
            let j = oracle.exact_j_n(&mdp, &th, g, n, eta).unwrap();
            let fd = try_fd_gradient(|t| oracle.exact_f_n(&mdp, t, g, n, eta), &th, 1e-5).unwrap();
            assert!((j - fd).amax() < 1e-7, "n={n} g={g}");
        }
    }
}

#[test]
fn f_n_matches_monte_carlo_of_adapted_value() {
    let oracle = Oracle::default();
    let mdp = TabularMdp::chain2();
    let th = random_theta(8, 11);
    let (n, eta) = (3, 0.8);
    let exact = oracle.exact_f_n(&mdp, &th, 1, n, eta).unwrap();
    let mut rng = stream(12, 0);
    let mut m = MomentStats::new(1);
    for _ in 0..50_000 {
        let batch = InnerBatch::sample(&mdp, &th, 1, n, eta, &mut rng).unwrap();
        m.push_scalar(dp_value(&mdp, &batch.adapted, 1)).unwrap();
    }
    assert!((m.mean()[0] - exact).abs() < 4.0 * m.std_error()[0]);
}

#[test]
fn j_n_approaches_j_infty() {
    let oracle = Oracle::default();
    let mdp = TabularMdp::chain2();
    let th = random_theta(8, 13);
    let eta = 0.5;
    let inf = oracle.exact_j_infty(&mdp, &th, 0, eta).unwrap();
    let gaps: Vec<f64> = [1, 2, 4, 8]
        .iter()
        .map(|&n| (oracle.exact_j_n(&mdp, &th, 0, n, eta).unwrap() - &inf).norm())
        .collect();
    for w in gaps.windows(2) {
        assert!(w[1] < w[0], "{gaps:?}");
    }
    let f_gap = (oracle.exact_f_n(&mdp, &th, 0, 8, eta).unwrap() - oracle.exact_f_infty(&mdp, &th, 0, eta).unwrap()).abs();
    let f_gap1 = (oracle.exact_f_n(&mdp, &th, 0, 1, eta).unwrap() - oracle.exact_f_infty(&mdp, &th, 0, eta).unwrap()).abs();
    assert!(f_gap < f_gap1);
}

#[test]
fn zero_step_reduces_to_policy_gradient() {
    let oracle = Oracle::default();
    let mdp = TabularMdp::chain2();
    let th = random_theta(8, 14);
    let pg = oracle.exact_pg(&mdp, &th, 1).unwrap();
    for n in 1..=3 {
        let j = oracle.exact_j_n(&mdp, &th, 1, n, 0.0).unwrap();
        assert!((j - &pg).amax() < 1e-12);
    }
}

#[test]
fn caps_are_enforced() {
    let wide = TabularMdp::wide4();
    let th = DVector::zeros(wide.param_dim());
    let small = Oracle::with_caps(10, 1_000_000);
    match small.exact_value(&wide, &th, 0) {
        Err(Error::EnumerationTooLarge { cap, .. }) => assert_eq!(cap, 10),
        other => panic!("{other:?}"),
    }
    assert_eq!(multiset_count(64, 8), 10_639_125_640);
    match Oracle::default().exact_j_n(&wide, &th, 0, 8, 0.1) {
        Err(Error::TupleCapExceeded { count, .. }) => assert_eq!(count, 10_639_125_640),
        other => panic!("{other:?}"),
    }
    assert!(Oracle::default().exact_j_n(&wide, &th, 0, 2, 0.1).is_ok());
}

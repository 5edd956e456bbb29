use std::collections::HashMap;

use metagrad::mdp::{TabularMdp, Trajectory};
use metagrad::oracle::{fd_gradient, Oracle};
use metagrad::rng::stream;
use metagrad::stats::MomentStats;
use nalgebra::DVector;
use rand::Rng;

fn fixtures() -> Vec<(&'static str, TabularMdp)> {
    vec![
        ("chain2", TabularMdp::chain2()),
        ("constant", TabularMdp::constant_value()),
        ("wide4", TabularMdp::wide4()),
    ]
}

fn random_theta(d: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0))
}

#[test]
fn score_matches_finite_differences_of_log_prob() {
    let mut rng = stream(21, 0);
    for case in 0..100 {
        let (_, mdp) = &fixtures()[case % 3];
        let theta = random_theta(mdp.param_dim(), &mut rng);
        let g = case % mdp.n_tasks();
        let tau = mdp.sample_trajectory(&theta, g, &mut rng);
        let score = mdp.policy_shape().score(&theta, &tau).unwrap();
        let fd = fd_gradient(|t| mdp.log_prob(t, &tau), &theta, 1e-5);
        assert!((score - fd).amax() < 1e-6, "case {case}");
    }
}

#[test]
fn score_hessian_matches_finite_differences_of_score() {
    let mut rng = stream(22, 0);
    for case in 0..30 {
        let (_, mdp) = &fixtures()[case % 3];
        let shape = mdp.policy_shape();
        let theta = random_theta(mdp.param_dim(), &mut rng);
        let tau = mdp.sample_trajectory(&theta, case % mdp.n_tasks(), &mut rng);
        let h = shape.score_hessian(&theta, &tau).unwrap();
        assert_eq!(h, h.transpose());
        for k in 0..mdp.param_dim() {
            let col = fd_gradient(|t| shape.score(t, &tau).unwrap()[k], &theta, 1e-5);
            assert!((h.row(k).transpose() - col).amax() < 1e-5, "case {case} row {k}");
        }
    }
}

#[test]
fn per_step_score_norm_is_bounded() {
    let mut rng = stream(23, 0);
    for (_, mdp) in fixtures() {
        let shape = mdp.policy_shape();
        let bound = (mdp.n_actions() as f64).sqrt();
        for _ in 0..200 {
            let theta = random_theta(mdp.param_dim(), &mut rng) * 3.0;
            let tau = mdp.sample_trajectory(&theta, 0, &mut rng);
            for step in &tau.steps {
                let one = Trajectory {
                    task: 0,
                    steps: vec![*step],
                };
                let n = shape.score(&theta, &one).unwrap().norm();
                assert!(n <= bound, "{n}");
                assert!(n <= 2f64.sqrt() + 1e-12);
            }
        }
    }
}

#[test]
fn score_has_zero_mean() {
    let oracle = Oracle::default();
    let mut rng = stream(24, 0);
    for (name, mdp) in fixtures() {
        let shape = mdp.policy_shape();
        let theta = random_theta(mdp.param_dim(), &mut rng);
        let ens = oracle.enumerate_trajectories(&mdp, &theta, 0).unwrap();
        let mut exact = DVector::zeros(mdp.param_dim());
        for (tau, p) in &ens.entries {
            exact += shape.score(&theta, tau).unwrap() * *p;
        }
        assert!(exact.amax() < 1e-12, "{name}");

        let mut m = MomentStats::new(mdp.param_dim());
        for _ in 0..100_000 {
            let tau = mdp.sample_trajectory(&theta, 0, &mut rng);
            m.push(&shape.score(&theta, &tau).unwrap()).unwrap();
        }
        let se = m.std_error();
        for i in 0..mdp.param_dim() {
            assert!(m.mean()[i].abs() <= 4.0 * se[i] + 1e-12, "{name} component {i}");
        }
    }
}

#[test]
fn chain2_trajectories_are_uniform_at_zero_logits() {
    let mdp = TabularMdp::chain2();
    let theta = DVector::zeros(mdp.param_dim());
    let mut rng = stream(25, 0);
    let n = 100_000;
    let mut counts: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    for _ in 0..n {
        let tau = mdp.sample_trajectory(&theta, 0, &mut rng);
        *counts
            .entry(tau.steps.iter().map(|s| (s.state, s.action)).collect())
            .or_default() += 1;
    }
    assert_eq!(counts.len(), 4);
    let se = (0.25f64 * 0.75 / n as f64).sqrt();
    for c in counts.values() {
        assert!((*c as f64 / n as f64 - 0.25).abs() < 4.0 * se);
    }
}

#[test]
fn sampled_frequencies_match_enumeration_on_stochastic_fixture() {
    let mdp = TabularMdp::constant_value();
    let theta = DVector::from_fn(mdp.param_dim(), |i, _| 0.3 * i as f64 - 0.5);
    let ens = Oracle::default().enumerate_trajectories(&mdp, &theta, 0).unwrap();
    let mut rng = stream(26, 0);
    let n = 100_000;
    let mut counts: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    for _ in 0..n {
        let tau = mdp.sample_trajectory(&theta, 0, &mut rng);
        *counts
            .entry(tau.steps.iter().map(|s| (s.state, s.action)).collect())
            .or_default() += 1;
    }
    for (tau, p) in &ens.entries {
        let key: Vec<_> = tau.steps.iter().map(|s| (s.state, s.action)).collect();
        let freq = *counts.get(&key).unwrap_or(&0) as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se + 1e-9, "{key:?}: {freq} vs {p}");
    }
}

#[test]
fn log_prob_matches_enumerated_probability() {
    let oracle = Oracle::default();
    let mut rng = stream(27, 0);
    for (_, mdp) in fixtures() {
        let theta = random_theta(mdp.param_dim(), &mut rng);
        for (tau, p) in oracle.enumerate_trajectories(&mdp, &theta, 0).unwrap().entries {
            assert!((mdp.log_prob(&theta, &tau).exp() - p).abs() < 1e-12);
        }
    }
}

#[test]
fn document_round_trip() {
    for (name, mdp) in fixtures() {
        let json = serde_json::to_string(&mdp.to_document()).unwrap();
        let back = TabularMdp::from_json_str(&json).unwrap();
        assert_eq!(back, mdp, "{name}");
    }
}

#[test]
fn unknown_document_fields_are_rejected() {
    let mut v: serde_json::Value = serde_json::to_value(TabularMdp::chain2().to_document()).unwrap();
    v["horizn"] = serde_json::json!(3);
    assert!(TabularMdp::from_json_str(&v.to_string()).is_err());
}

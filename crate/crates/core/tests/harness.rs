use metagrad::harness::{
    run_metarl_training, run_metarl_validation, run_mse_sweep, run_toy_optimization, run_toy_optimization_grid, to_csv_string,
    MetaTrainingConfig, MetaValidationConfig, MseSweepConfig, ReferenceMode, ToyOptimizeConfig,
};
use metagrad::mdp::TabularMdp;
use metagrad::metarl::MetaRlConfig;
use metagrad::objective::EstimatorKind;
use metagrad::toy::GaussianToy;

fn rows_for(rows: &[metagrad::harness::SweepRow], kind: EstimatorKind) -> Vec<&metagrad::harness::SweepRow> {
    rows.iter().filter(|r| r.estimator == kind).collect()
}

#[test]
fn sweep_rows_satisfy_the_mse_decomposition() {
    let cfg = MseSweepConfig::new(GaussianToy::quadratic(), vec![1, 4, 16], 5000, 1);
    let rows = run_mse_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 9);
    for r in &rows {
        let n = r.trials as f64;
        let gap = (r.mse - (r.bias_sq + r.variance * (n - 1.0) / n)).abs();
        assert!(gap <= 3.0 * r.mse_se + 1e-12, "{r:?}");
    }
    let keys: Vec<_> = rows.iter().map(|r| (r.estimator, r.n)).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
}

#[test]
fn sweep_is_deterministic_under_a_seed() {
    let cfg = MseSweepConfig::new(GaussianToy::identity(), vec![2, 8], 3000, 5);
    let a = to_csv_string(&run_mse_sweep(&cfg).unwrap()).unwrap();
    let b = to_csv_string(&run_mse_sweep(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = MseSweepConfig { seed: 6, ..cfg };
    assert_ne!(a, to_csv_string(&run_mse_sweep(&other).unwrap()).unwrap());
}

#[test]
fn pathwise_is_exact_on_the_identity_toy() {
    let mut cfg = MseSweepConfig::new(GaussianToy::identity(), vec![1, 7], 500, 2);
    cfg.estimators = vec![EstimatorKind::Pw];
    for r in run_mse_sweep(&cfg).unwrap() {
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.variance, 0.0);
        assert_eq!(r.mean, 1.0);
    }
}

#[test]
fn lsf_error_falls_with_batch_size() {
    let mut cfg = MseSweepConfig::new(GaussianToy::quadratic(), vec![1, 4, 16, 64], 20_000, 3);
    cfg.estimators = vec![EstimatorKind::Lsf];
    let rows = run_mse_sweep(&cfg).unwrap();
    let lsf = rows_for(&rows, EstimatorKind::Lsf);
    for w in lsf.windows(2) {
        assert!(w[1].mse + 4.0 * w[1].mse_se < w[0].mse - 4.0 * w[0].mse_se, "{:?}", w);
    }
}

#[test]
fn pw_proxy_reference_tracks_the_analytic_gradient() {
    let mut cfg = MseSweepConfig::new(GaussianToy::quadratic(), vec![4], 2000, 4);
    cfg.theta0 = 0.5;
    cfg.estimators = vec![EstimatorKind::Sf];
    let analytic = run_mse_sweep(&cfg).unwrap();
    cfg.reference = ReferenceMode::PwProxy { samples: 100_000 };
    let proxy = run_mse_sweep(&cfg).unwrap();
    assert!((analytic[0].reference - 1.0).abs() < 1e-12);
    assert!((proxy[0].reference - analytic[0].reference).abs() < 0.02);
    assert_eq!(proxy[0].mean, analytic[0].mean);
}

#[test]
fn too_few_trials_are_rejected() {
    let cfg = MseSweepConfig::new(GaussianToy::quadratic(), vec![1], 99, 0);
    assert!(run_mse_sweep(&cfg).is_err());
    let cfg = MseSweepConfig::new(GaussianToy::quadratic(), vec![], 1000, 0);
    assert!(run_mse_sweep(&cfg).is_err());
}

#[test]
fn pathwise_ascent_reaches_the_optimum_at_large_batches() {
    let toy = GaussianToy::quadratic();
    let cfg = ToyOptimizeConfig::new(toy, vec![16, 64], 7);
    for n in [16, 64] {
        let s = run_toy_optimization(&toy, EstimatorKind::Pw, n, &cfg).unwrap();
        let best = toy.objective(1.0, n);
        assert!((s.rows[0].final_objective_mean - best).abs() < 1e-3, "{:?}", s.rows[0]);
        assert_eq!(s.curves.len(), cfg.iterations + 1);
        assert_eq!(s.finals[0].len(), cfg.repeats);
    }
}

#[test]
fn lsf_ascent_improves_with_batch_size() {
    let toy = GaussianToy::quadratic();
    let cfg = ToyOptimizeConfig::new(toy, vec![1, 64], 8);
    let small = run_toy_optimization(&toy, EstimatorKind::Lsf, 1, &cfg).unwrap();
    let large = run_toy_optimization(&toy, EstimatorKind::Lsf, 64, &cfg).unwrap();
    assert!((large.rows[0].final_theta_mean - 1.0).abs() < (small.rows[0].final_theta_mean - 1.0).abs());
    // The LSF fixed point is N / (N + 1).
    assert!((small.rows[0].final_theta_mean - 0.5).abs() < 0.05);
}

#[test]
fn optimization_grid_is_sorted_and_reproducible() {
    let mut cfg = ToyOptimizeConfig::new(GaussianToy::quadratic(), vec![4, 1], 9);
    cfg.repeats = 10;
    cfg.iterations = 20;
    let a = run_toy_optimization_grid(&cfg).unwrap();
    let b = run_toy_optimization_grid(&cfg).unwrap();
    assert_eq!(a, b);
    let keys: Vec<_> = a.rows.iter().map(|r| (r.estimator, r.n)).collect();
    assert_eq!(keys.len(), 6);
    assert!(keys.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(a.curves.len(), 6 * 21);
    cfg.lr = 0.0;
    assert!(run_toy_optimization_grid(&cfg).is_err());
}

#[test]
fn validation_rows_behave_as_expected() {
    let mdp = TabularMdp::chain2();
    let cfg = MetaValidationConfig::new(vec![1, 2, 4], 20_000, 10);
    let rows = run_metarl_validation(&mdp, &cfg).unwrap();
    assert_eq!(rows.len(), 9);
    let get = |k: EstimatorKind, n: usize| rows.iter().find(|r| r.estimator == k && r.n == n).unwrap();
    for n in [1, 2, 4] {
        let sf = get(EstimatorKind::GenSf, n);
        assert!(sf.max_abs_z <= 4.0, "{sf:?}");
        assert!(sf.exact_bias_norm < 1e-12);
        let lsf = get(EstimatorKind::GenLsf, n);
        assert!(lsf.max_abs_z_exact_mean <= 4.0, "{lsf:?}");
        assert!(lsf.total_variance < sf.total_variance);
        let em = get(EstimatorKind::EMamlScaled, n);
        assert!(em.max_abs_z_exact_mean <= 4.0, "{em:?}");
        if let Some(z) = sf.hessian_max_abs_z {
            assert!(z <= 4.0);
        }
    }
    let lsf_bias: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|&n| get(EstimatorKind::GenLsf, n).exact_bias_norm)
        .collect();
    assert!(lsf_bias.windows(2).all(|w| w[1] < w[0]), "{lsf_bias:?}");
}

#[test]
fn validation_reports_cap_errors() {
    let mdp = TabularMdp::wide4();
    let cfg = MetaValidationConfig::new(vec![8], 200, 11);
    let err = run_metarl_validation(&mdp, &cfg).unwrap_err();
    assert!(err.to_string().contains("tuple cap"), "{err}");
}

#[test]
fn training_with_zero_learning_rate_is_flat() {
    let mdp = TabularMdp::chain2();
    let meta = MetaRlConfig {
        batch: 2,
        n: 2,
        m: 2,
        alpha: 0.0,
        iterations: 6,
        ..MetaRlConfig::default()
    };
    let report = run_metarl_training(&mdp, &MetaTrainingConfig::new(meta, 3, 12)).unwrap();
    assert_eq!(report.rows.len(), 7);
    let first = report.rows[0].oracle_norm_mean;
    assert!(report
        .rows
        .iter()
        .all(|r| (r.oracle_norm_mean - first).abs() < 1e-12 && r.oracle_norm_ci < 1e-12));
    let last = report.rows.last().unwrap();
    assert!(last.grad_norm_mean.is_none() && last.adapted_value_mean.is_none());
    assert!(report.rows[..6].iter().all(|r| r.grad_norm_mean.is_some()));
    assert_eq!(report.logs[0].1.len(), 3);
}

#[test]
fn csv_headers_are_stable() {
    let cfg = MseSweepConfig::new(GaussianToy::identity(), vec![1], 100, 0);
    let csv = to_csv_string(&run_mse_sweep(&cfg).unwrap()).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "experiment,toy,estimator,n,trials,theta0,reference,mean,bias_sq,variance,mse,mse_se"
    );

    let mut cfg = ToyOptimizeConfig::new(GaussianToy::identity(), vec![1], 0);
    cfg.repeats = 2;
    cfg.iterations = 1;
    let s = run_toy_optimization_grid(&cfg).unwrap();
    assert_eq!(
        to_csv_string(&s.rows).unwrap().lines().next().unwrap(),
        "experiment,toy,estimator,n,repeats,iterations,final_objective_mean,final_objective_std,final_objective_se,final_theta_mean"
    );
    assert_eq!(
        to_csv_string(&s.curves).unwrap().lines().next().unwrap(),
        "estimator,n,iteration,objective_mean,objective_std"
    );

    let mdp = TabularMdp::chain2();
    let v = run_metarl_validation(&mdp, &MetaValidationConfig::new(vec![1], 100, 0)).unwrap();
    assert_eq!(
        to_csv_string(&v).unwrap().lines().next().unwrap(),
        "experiment,estimator,n,task,trials,oracle_norm,bias_norm,bias_se,exact_bias_norm,max_abs_z,max_abs_z_exact_mean,total_variance,hessian_max_abs_z"
    );

    let meta = MetaRlConfig {
        iterations: 1,
        ..MetaRlConfig::default()
    };
    let t = run_metarl_training(&mdp, &MetaTrainingConfig::new(meta, 2, 0)).unwrap();
    assert_eq!(
        to_csv_string(&t.rows).unwrap().lines().next().unwrap(),
        "experiment,estimator,iteration,repeats,oracle_norm_mean,oracle_norm_ci,min_so_far_mean,min_so_far_ci,grad_norm_mean,adapted_value_mean"
    );
}

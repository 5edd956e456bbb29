use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorRegistry;
use crate::objective::EstimatorKind;
use crate::rng::{stream, stream_id};
use crate::stats::{AdamState, MomentStats};
use crate::toy::GaussianToy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyOptimizeConfig {
    pub toy: GaussianToy,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    pub n_grid: Vec<usize>,
    /// Estimates averaged per step (`B`).
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Adam steps (`T`).
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub theta0: f64,
    pub seed: u64,
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Sf, EstimatorKind::Lsf, EstimatorKind::Pw]
}
fn default_batch() -> usize {
    16
}
fn default_iterations() -> usize {
    100
}
fn default_repeats() -> usize {
    100
}
fn default_lr() -> f64 {
    0.1
}

impl ToyOptimizeConfig {
    pub fn new(toy: GaussianToy, n_grid: Vec<usize>, seed: u64) -> Self {
        ToyOptimizeConfig {
            toy,
            estimators: default_estimators(),
            n_grid,
            batch: default_batch(),
            iterations: default_iterations(),
            repeats: default_repeats(),
            lr: default_lr(),
            theta0: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.toy.validate()?;
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::InvalidArgument("n_grid must be non-empty with entries >= 1".into()));
        }
        if self.batch == 0 || self.repeats == 0 {
            return Err(Error::InvalidArgument("batch and repeats must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("at least one estimator is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeRow {
    pub experiment: &'static str,
    pub toy: &'static str,
    pub estimator: EstimatorKind,
    pub n: usize,
    pub repeats: usize,
    pub iterations: usize,
    pub final_objective_mean: f64,
    pub final_objective_std: f64,
    pub final_objective_se: f64,
    pub final_theta_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub estimator: EstimatorKind,
    pub n: usize,
    pub iteration: usize,
    pub objective_mean: f64,
    pub objective_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeSummary {
    pub rows: Vec<OptimizeRow>,
    pub curves: Vec<CurvePoint>,
    /// Final objective of every repeat, per row.
    pub finals: Vec<Vec<f64>>,
}

/// One `(estimator, N)` cell: `repeats` independent Adam ascents of `T`
/// steps, each step averaging `B` one-sample estimates.
pub fn run_toy_optimization(
    toy: &GaussianToy,
    estimator: EstimatorKind,
    n: usize,
    cfg: &ToyOptimizeConfig,
) -> Result<OptimizeSummary> {
    cfg.validate()?;
    let registry = EstimatorRegistry::<GaussianToy>::standard();
    let est = registry.get(estimator.name())?;
    let t_len = cfg.iterations + 1;

    let trajectories = (0..cfg.repeats)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>> {
            let mut rng = stream(cfg.seed, stream_id(&[estimator as u64, n as u64, rep as u64]));
            let mut theta = DVector::from_element(1, cfg.theta0);
            let mut adam = AdamState::new(1, cfg.lr);
            let mut curve = Vec::with_capacity(t_len);
            curve.push(toy.objective(theta[0], n));
            for _ in 0..cfg.iterations {
                let mut g = DVector::zeros(1);
                for _ in 0..cfg.batch {
                    g += est.estimate(toy, &theta, n, &mut rng)?.grad;
                }
                g /= cfg.batch as f64;
                theta += adam.step(&g);
                curve.push(toy.objective(theta[0], n));
            }
            curve.push(theta[0]);
            Ok(curve)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut curves = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut m = MomentStats::new(1);
        for c in &trajectories {
            m.push_scalar(c[t])?;
        }
        curves.push(CurvePoint {
            estimator,
            n,
            iteration: t,
            objective_mean: m.mean()[0],
            objective_std: m.variance()[0].sqrt(),
        });
    }
    let finals: Vec<f64> = trajectories.iter().map(|c| c[cfg.iterations]).collect();
    let mut fm = MomentStats::new(1);
    let mut th = MomentStats::new(1);
    for c in &trajectories {
        fm.push_scalar(c[cfg.iterations])?;
        th.push_scalar(c[t_len])?;
    }
    let row = OptimizeRow {
        experiment: "toy-optimize",
        toy: toy.name(),
        estimator,
        n,
        repeats: cfg.repeats,
        iterations: cfg.iterations,
        final_objective_mean: fm.mean()[0],
        final_objective_std: fm.variance()[0].sqrt(),
        final_objective_se: fm.std_error()[0],
        final_theta_mean: th.mean()[0],
    };
    Ok(OptimizeSummary {
        rows: vec![row],
        curves,
        finals: vec![finals],
    })
}

/// All `(estimator, N)` cells of the configuration, sorted by key.
pub fn run_toy_optimization_grid(cfg: &ToyOptimizeConfig) -> Result<OptimizeSummary> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &e in &cfg.estimators {
        for &n in &cfg.n_grid {
            cells.push((e, n));
        }
    }
    cells.sort();
    cells.dedup();
    let mut out = OptimizeSummary {
        rows: Vec::new(),
        curves: Vec::new(),
        finals: Vec::new(),
    };
    for (e, n) in cells {
        let s = run_toy_optimization(&cfg.toy, e, n, cfg)?;
        out.rows.extend(s.rows);
        out.curves.extend(s.curves);
        out.finals.extend(s.finals);
    }
    Ok(out)
}

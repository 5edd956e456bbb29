use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TRIAL_CHUNK;
use crate::error::{Error, Result};
use crate::estimators::EstimatorRegistry;
use crate::objective::EstimatorKind;
use crate::rng::{stream, stream_id};
use crate::stats::{MomentStats, MseAccumulator};
use crate::toy::GaussianToy;

/// How the reference gradient of an MSE cell is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// Closed-form toy gradient.
    #[default]
    Analytic,
    /// Average of `samples` path-wise estimates at the same `θ` and `N`.
    PwProxy { samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSweepConfig {
    pub toy: GaussianToy,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub theta0: f64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub reference: ReferenceMode,
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Sf, EstimatorKind::Lsf, EstimatorKind::Pw]
}

pub const MIN_TRIALS: usize = 100;

impl MseSweepConfig {
    pub fn new(toy: GaussianToy, n_grid: Vec<usize>, trials: usize, seed: u64) -> Self {
        MseSweepConfig {
            toy,
            n_grid,
            trials,
            seed,
            theta0: 0.0,
            estimators: default_estimators(),
            reference: ReferenceMode::Analytic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.toy.validate()?;
        if self.trials < MIN_TRIALS {
            return Err(Error::InvalidArgument(format!(
                "trials must be >= {MIN_TRIALS}, got {}",
                self.trials
            )));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::InvalidArgument("n_grid must be non-empty with entries >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("at least one estimator is required".into()));
        }
        if let ReferenceMode::PwProxy { samples: 0 } = self.reference {
            return Err(Error::InvalidArgument("pw-proxy reference needs samples >= 1".into()));
        }
        if !self.theta0.is_finite() {
            return Err(Error::InvalidArgument("theta0 must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub experiment: &'static str,
    pub toy: &'static str,
    pub estimator: EstimatorKind,
    pub n: usize,
    pub trials: usize,
    pub theta0: f64,
    pub reference: f64,
    pub mean: f64,
    pub bias_sq: f64,
    pub variance: f64,
    pub mse: f64,
    pub mse_se: f64,
    /// Excluded from CSV so reruns are byte-identical.
    #[serde(skip)]
    pub wall_time: Duration,
}

fn reference_gradient(cfg: &MseSweepConfig, n: usize, registry: &EstimatorRegistry<GaussianToy>) -> Result<f64> {
    match cfg.reference {
        ReferenceMode::Analytic => Ok(cfg.toy.exact_gradient(cfg.theta0, n)),
        ReferenceMode::PwProxy { samples } => {
            let pw = registry.get(EstimatorKind::Pw.name())?;
            let theta = DVector::from_element(1, cfg.theta0);
            let mut rng = stream(cfg.seed, stream_id(&[u64::MAX, n as u64]));
            let mut acc = MomentStats::new(1);
            for _ in 0..samples {
                acc.push(&pw.estimate(&cfg.toy, &theta, n, &mut rng)?.grad)?;
            }
            Ok(acc.mean()[0])
        }
    }
}

/// For every `(estimator, N)` cell, draws `trials` estimates at `θ₀` and
/// reports bias², total variance and MSE against the reference gradient.
pub fn run_mse_sweep(cfg: &MseSweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let registry = EstimatorRegistry::<GaussianToy>::standard();
    let theta = DVector::from_element(1, cfg.theta0);

    let mut cells = Vec::new();
    for &kind in &cfg.estimators {
        for &n in &cfg.n_grid {
            cells.push((kind, n));
        }
    }
    cells.sort();
    cells.dedup();

    let mut rows = cells
        .par_iter()
        .map(|&(kind, n)| -> Result<SweepRow> {
            let start = Instant::now();
            let est = registry.get(kind.name())?;
            let reference = reference_gradient(cfg, n, &registry)?;
            let chunks = cfg.trials.div_ceil(TRIAL_CHUNK);
            let mut acc = MseAccumulator::new(DVector::from_element(1, reference));
            for c in 0..chunks {
                let mut rng = stream(cfg.seed, stream_id(&[kind as u64, n as u64, c as u64]));
                let todo = TRIAL_CHUNK.min(cfg.trials - c * TRIAL_CHUNK);
                for _ in 0..todo {
                    acc.push(&est.estimate(&cfg.toy, &theta, n, &mut rng)?.grad)?;
                }
            }
            let rep = acc.report()?;
            Ok(SweepRow {
                experiment: "toy-mse",
                toy: cfg.toy.name(),
                estimator: kind,
                n,
                trials: cfg.trials,
                theta0: cfg.theta0,
                reference,
                mean: acc.moments().mean()[0],
                bias_sq: rep.bias_sq,
                variance: rep.variance,
                mse: rep.mse,
                mse_se: rep.mse_se,
                wall_time: start.elapsed(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| (r.estimator, r.n));
    Ok(rows)
}

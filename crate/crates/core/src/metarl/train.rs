use nalgebra::DVector;
use rand::RngCore;

use super::{MetaEstimatorRegistry, MetaRlConfig};
use crate::error::Result;
use crate::mdp::TabularMdp;
use crate::oracle::Oracle;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    /// `‖Ĵ‖₂` of the task-averaged estimate used for the update.
    pub grad_norm: f64,
    /// `‖J_N(θ_t)‖₂` from the enumeration oracle, when attached.
    pub oracle_grad_norm: Option<f64>,
    /// Mean outer-rollout return across the sampled tasks.
    pub mean_adapted_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Running minimum of the oracle gradient norm.
    pub fn min_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.records
            .iter()
            .filter_map(|r| r.oracle_grad_norm)
            .map(|x| {
                best = best.min(x);
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: DVector<f64>,
    pub log: TrainLog,
}

/// Outer loop: each iteration samples `B` tasks with replacement, averages
/// the configured meta-gradient estimate over them and takes an ascent step
/// of size `α`. The oracle norm is logged at `θ_t` before the update.
pub fn metarl_train(
    mdp: &TabularMdp,
    theta0: &DVector<f64>,
    cfg: &MetaRlConfig,
    rng: &mut dyn RngCore,
    oracle: Option<&Oracle>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let registry = MetaEstimatorRegistry::standard();
    let estimator = registry.for_kind(cfg.estimator)?;
    let mut theta = theta0.clone();
    let mut log = TrainLog::default();
    for t in 0..cfg.iterations {
        let oracle_grad_norm = match oracle {
            Some(o) => Some(o.exact_j_n_task_average(mdp, &theta, cfg.n, cfg.eta)?.norm()),
            None => None,
        };
        let mut grad = DVector::zeros(theta.len());
        let mut value = 0.0;
        for _ in 0..cfg.batch {
            let g = mdp.sample_task(rng);
            let draw = estimator.draw(mdp, &theta, g, cfg, rng)?;
            grad += draw.sample.grad;
            value += draw.adapted_value;
        }
        grad /= cfg.batch as f64;
        log.records.push(TrainRecord {
            iteration: t,
            grad_norm: grad.norm(),
            oracle_grad_norm,
            mean_adapted_value: value / cfg.batch as f64,
        });
        theta.axpy(cfg.alpha, &grad, 1.0);
    }
    Ok(TrainOutcome { theta, log })
}

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TRIAL_CHUNK;
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::metarl::{metarl_train, InnerBatch, MetaEstimatorRegistry, MetaRlConfig, OuterPgMode, TrainLog};
use crate::objective::EstimatorKind;
use crate::oracle::{Oracle, DEFAULT_TRAJECTORY_CAP, DEFAULT_TUPLE_CAP};
use crate::rng::{stream, stream_id};
use crate::stats::{MomentStats, CI_SE_MULTIPLIER};

fn default_meta_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::GenSf, EstimatorKind::GenLsf, EstimatorKind::EMamlScaled]
}
fn default_trajectory_cap() -> u64 {
    DEFAULT_TRAJECTORY_CAP as u64
}
fn default_tuple_cap() -> u64 {
    DEFAULT_TUPLE_CAP as u64
}
fn default_m() -> usize {
    8
}
fn default_eta() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

fn initial_theta(mdp: &TabularMdp, theta: &Option<Vec<f64>>) -> Result<DVector<f64>> {
    let d = mdp.param_dim();
    match theta {
        None => Ok(DVector::zeros(d)),
        Some(v) if v.len() == d => Ok(DVector::from_column_slice(v)),
        Some(v) => Err(Error::DimensionMismatch {
            expected: d,
            got: v.len(),
        }),
    }
}

/// Componentwise `|mean − reference| / SE`, maximized. A component with zero
/// spread counts as `0` when it matches exactly and `∞` otherwise.
fn max_abs_z(stats: &MomentStats, reference: &DVector<f64>) -> f64 {
    let se = stats.std_error();
    let mut worst: f64 = 0.0;
    for i in 0..reference.len() {
        let d = (stats.mean()[i] - reference[i]).abs();
        let z = if se[i] > 0.0 {
            d / se[i]
        } else if d <= 1e-12 * (1.0 + reference[i].abs()) {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaValidationConfig {
    #[serde(default = "default_meta_estimators")]
    pub estimators: Vec<EstimatorKind>,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub outer_pg_mode: OuterPgMode,
    pub trials: usize,
    #[serde(default)]
    pub task: usize,
    /// Evaluation point; zeros when absent.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub hessian_check: bool,
    #[serde(default = "default_trajectory_cap")]
    pub trajectory_cap: u64,
    #[serde(default = "default_tuple_cap")]
    pub tuple_cap: u64,
}

impl MetaValidationConfig {
    pub fn new(n_grid: Vec<usize>, trials: usize, seed: u64) -> Self {
        MetaValidationConfig {
            estimators: default_meta_estimators(),
            n_grid,
            m: default_m(),
            eta: default_eta(),
            outer_pg_mode: OuterPgMode::Trajectory,
            trials,
            task: 0,
            theta: None,
            seed,
            hessian_check: true,
            trajectory_cap: default_trajectory_cap(),
            tuple_cap: default_tuple_cap(),
        }
    }

    pub fn oracle(&self) -> Oracle {
        Oracle::with_caps(self.trajectory_cap as u128, self.tuple_cap as u128)
    }

    fn meta_config(&self, estimator: EstimatorKind, n: usize) -> MetaRlConfig {
        MetaRlConfig {
            batch: 1,
            n,
            m: self.m,
            eta: self.eta,
            alpha: 0.0,
            iterations: 0,
            outer_pg_mode: self.outer_pg_mode,
            estimator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 2 {
            return Err(Error::InvalidArgument(format!("trials must be >= 2, got {}", self.trials)));
        }
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::InvalidArgument("n_grid must be non-empty with entries >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("at least one estimator is required".into()));
        }
        for &e in &self.estimators {
            self.meta_config(e, 1).validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub experiment: &'static str,
    pub estimator: EstimatorKind,
    pub n: usize,
    pub task: usize,
    pub trials: usize,
    /// `‖J_N‖₂` at the evaluation point.
    pub oracle_norm: f64,
    /// `‖mean − J_N‖₂`.
    pub bias_norm: f64,
    /// `‖SE‖₂` of the mean; the noise floor of `bias_norm`.
    pub bias_se: f64,
    /// `‖E[estimate] − J_N‖₂` computed by enumeration.
    pub exact_bias_norm: f64,
    pub max_abs_z: f64,
    /// Max z against the exact mean (zero bias for gen-sf).
    pub max_abs_z_exact_mean: f64,
    pub total_variance: f64,
    /// Max z of `Ĥ_N` against `∇²V`; empty when the check is off.
    pub hessian_max_abs_z: Option<f64>,
}

/// Bias and variance of the meta-gradient estimators against the exact
/// `J_N` at one `(θ, g)`. Trial `t` at a given `N` uses the same random
/// stream for every estimator, so inner batches are shared across them.
pub fn run_metarl_validation(mdp: &TabularMdp, cfg: &MetaValidationConfig) -> Result<Vec<ValidationRow>> {
    cfg.validate()?;
    let theta = initial_theta(mdp, &cfg.theta)?;
    if cfg.task >= mdp.n_tasks() {
        return Err(Error::IndexOutOfRange {
            what: "task",
            index: cfg.task,
            size: mdp.n_tasks(),
        });
    }
    let oracle = cfg.oracle();
    let registry = MetaEstimatorRegistry::standard();
    let mut kinds = cfg.estimators.clone();
    kinds.sort();
    kinds.dedup();
    let mut n_grid = cfg.n_grid.clone();
    n_grid.sort();
    n_grid.dedup();
    let d = mdp.param_dim();
    let g = cfg.task;
    let shape = mdp.policy_shape();
    let exact_hessian = oracle.exact_hessian(mdp, &theta, g)?;

    let mut rows = Vec::new();
    for &n in &n_grid {
        let terms = oracle.exact_j_n_terms(mdp, &theta, g, n, cfg.eta)?;
        let j_n = terms.total();
        let lsf_mean = if kinds.contains(&EstimatorKind::GenLsf) {
            Some(oracle.exact_lsf_mean(mdp, &theta, g, n, cfg.eta)?)
        } else {
            None
        };
        let chunks = cfg.trials.div_ceil(TRIAL_CHUNK);
        let partials = (0..chunks)
            .into_par_iter()
            .map(|c| -> Result<(Vec<MomentStats>, MomentStats)> {
                let mut per_kind = vec![MomentStats::new(d); kinds.len()];
                let mut hess = MomentStats::new(d * d);
                let lo = c * TRIAL_CHUNK;
                let hi = cfg.trials.min(lo + TRIAL_CHUNK);
                for t in lo..hi {
                    let id = stream_id(&[n as u64, t as u64]);
                    for (k, &kind) in kinds.iter().enumerate() {
                        let est = registry.for_kind(kind)?;
                        let mut rng = stream(cfg.seed, id);
                        per_kind[k].push(&est.estimate(mdp, &theta, g, &cfg.meta_config(kind, n), &mut rng)?.grad)?;
                    }
                    if cfg.hessian_check {
                        let mut rng = stream(cfg.seed, id);
                        let batch = InnerBatch::sample(mdp, &theta, g, n, cfg.eta, &mut rng)?;
                        let h = batch.hessian_estimate(&shape, &theta);
                        hess.push(&DVector::from_column_slice(h.as_slice()))?;
                    }
                }
                Ok((per_kind, hess))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut per_kind = vec![MomentStats::new(d); kinds.len()];
        let mut hess = MomentStats::new(d * d);
        for (pk, h) in &partials {
            for (acc, p) in per_kind.iter_mut().zip(pk) {
                acc.merge(p)?;
            }
            hess.merge(h)?;
        }
        let hessian_max_abs_z = cfg
            .hessian_check
            .then(|| max_abs_z(&hess, &DVector::from_column_slice(exact_hessian.as_slice())));

        for (k, &kind) in kinds.iter().enumerate() {
            let stats = &per_kind[k];
            let exact_mean = match kind {
                EstimatorKind::GenLsf => lsf_mean.clone().expect("computed when gen-lsf is requested"),
                EstimatorKind::EMamlScaled => &terms.score_term / n as f64 + &terms.explicit_term,
                _ => j_n.clone(),
            };
            rows.push(ValidationRow {
                experiment: "metarl-validate",
                estimator: kind,
                n,
                task: g,
                trials: cfg.trials,
                oracle_norm: j_n.norm(),
                bias_norm: (stats.mean() - &j_n).norm(),
                bias_se: stats.std_error().norm(),
                exact_bias_norm: (&exact_mean - &j_n).norm(),
                max_abs_z: max_abs_z(stats, &j_n),
                max_abs_z_exact_mean: max_abs_z(stats, &exact_mean),
                total_variance: stats.total_variance(),
                hessian_max_abs_z,
            });
        }
    }
    rows.sort_by_key(|r| (r.estimator, r.n));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTrainingConfig {
    #[serde(flatten)]
    pub meta: MetaRlConfig,
    /// Estimators to train with; `meta.estimator` alone when absent.
    #[serde(default)]
    pub estimators: Option<Vec<EstimatorKind>>,
    pub repeats: usize,
    pub seed: u64,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default = "default_trajectory_cap")]
    pub trajectory_cap: u64,
    #[serde(default = "default_tuple_cap")]
    pub tuple_cap: u64,
}

impl MetaTrainingConfig {
    pub fn new(meta: MetaRlConfig, repeats: usize, seed: u64) -> Self {
        MetaTrainingConfig {
            meta,
            estimators: None,
            repeats,
            seed,
            theta0: None,
            trajectory_cap: default_trajectory_cap(),
            tuple_cap: default_tuple_cap(),
        }
    }

    pub fn kinds(&self) -> Vec<EstimatorKind> {
        let mut k = self.estimators.clone().unwrap_or_else(|| vec![self.meta.estimator]);
        k.sort();
        k.dedup();
        k
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidArgument("repeats must be >= 1".into()));
        }
        for kind in self.kinds() {
            MetaRlConfig {
                estimator: kind,
                ..self.meta.clone()
            }
            .validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingRow {
    pub experiment: &'static str,
    pub estimator: EstimatorKind,
    pub iteration: usize,
    pub repeats: usize,
    /// Mean over repeats of `‖J_N(θ_t)‖₂` (task-averaged).
    pub oracle_norm_mean: f64,
    pub oracle_norm_ci: f64,
    pub min_so_far_mean: f64,
    pub min_so_far_ci: f64,
    /// Empty on the final row, which is evaluated after the last update.
    pub grad_norm_mean: Option<f64>,
    pub adapted_value_mean: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub rows: Vec<TrainingRow>,
    /// `(estimator, repeat logs)`; each log has `T + 1` oracle norms, the
    /// last one at the final parameter.
    pub logs: Vec<(EstimatorKind, Vec<TrainLog>)>,
}

/// Independent training runs with the oracle norm logged at every iterate.
pub fn run_metarl_training(mdp: &TabularMdp, cfg: &MetaTrainingConfig) -> Result<TrainingReport> {
    cfg.validate()?;
    let theta0 = initial_theta(mdp, &cfg.theta0)?;
    let oracle = Oracle::with_caps(cfg.trajectory_cap as u128, cfg.tuple_cap as u128);
    oracle.exact_j_n_task_average(mdp, &theta0, cfg.meta.n, cfg.meta.eta)?;
    let t_len = cfg.meta.iterations + 1;
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for kind in cfg.kinds() {
        let meta = MetaRlConfig {
            estimator: kind,
            ..cfg.meta.clone()
        };
        let runs = (0..cfg.repeats)
            .into_par_iter()
            .map(|r| -> Result<TrainLog> {
                let mut rng = stream(cfg.seed, stream_id(&[kind as u64, r as u64]));
                let out = metarl_train(mdp, &theta0, &meta, &mut rng, Some(&oracle))?;
                let mut log = out.log;
                let last = oracle.exact_j_n_task_average(mdp, &out.theta, meta.n, meta.eta)?.norm();
                log.records.push(crate::metarl::TrainRecord {
                    iteration: meta.iterations,
                    grad_norm: f64::NAN,
                    oracle_grad_norm: Some(last),
                    mean_adapted_value: f64::NAN,
                });
                Ok(log)
            })
            .collect::<Result<Vec<_>>>()?;
        let mins: Vec<Vec<f64>> = runs.iter().map(|l| l.min_so_far()).collect();
        for t in 0..t_len {
            let mut norm = MomentStats::new(1);
            let mut best = MomentStats::new(1);
            let mut grad = 0.0;
            let mut value = 0.0;
            for (log, m) in runs.iter().zip(&mins) {
                let rec = &log.records[t];
                norm.push_scalar(rec.oracle_grad_norm.expect("oracle attached"))?;
                best.push_scalar(m[t])?;
                grad += rec.grad_norm;
                value += rec.mean_adapted_value;
            }
            let reps = cfg.repeats as f64;
            let last = t == meta.iterations;
            rows.push(TrainingRow {
                experiment: "metarl-train",
                estimator: kind,
                iteration: t,
                repeats: cfg.repeats,
                oracle_norm_mean: norm.mean()[0],
                oracle_norm_ci: CI_SE_MULTIPLIER * norm.std_error()[0],
                min_so_far_mean: best.mean()[0],
                min_so_far_ci: CI_SE_MULTIPLIER * best.std_error()[0],
                grad_norm_mean: (!last).then_some(grad / reps),
                adapted_value_mean: (!last).then_some(value / reps),
            });
        }
        logs.push((kind, runs));
    }
    Ok(TrainingReport { rows, logs })
}

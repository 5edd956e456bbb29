//! N-sample meta-RL on tabular MDPs.
//!
//! One inner adaptation step `θ'_N = θ + η (1/N) Σ R(τ_i) u_i` followed by an
//! outer gradient estimate at `θ'_N`. The meta-gradient estimators
//! (generalized SF, generalized LSF, and the `1/N`-scaled E-MAML variant) live
//! behind [`MetaGradientEstimator`] and are looked up by name in a
//! [`MetaEstimatorRegistry`].

mod estimators;
mod objective;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{PolicyShape, TabularMdp, Trajectory};
use crate::objective::EstimatorKind;

pub use estimators::{
    jn_emaml_scaled_estimate, jn_lsf_estimate, jn_sf_estimate, EMamlScaled, GeneralizedLsf, GeneralizedSf, MetaDraw,
    MetaEstimatorRegistry, MetaGradientEstimator,
};
pub use objective::MetaRlObjective;
pub use train::{metarl_train, TrainLog, TrainOutcome, TrainRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterPgMode {
    /// `(1/M) Σ_k R(τ'_k) u(τ'_k)`.
    #[default]
    Trajectory,
    /// `(1/M) Σ_k Σ_t γ^t Q̂_t ∇log π(a_t|s_t, g)` with reward-to-go `Q̂_t`.
    Stepwise,
}

/// Hyper-parameters of the meta-RL loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRlConfig {
    /// Tasks per outer iteration (`B`).
    pub batch: usize,
    /// Inner-loop trajectories (`N`).
    pub n: usize,
    /// Outer-loop trajectories (`M`).
    pub m: usize,
    /// Inner step size.
    pub eta: f64,
    /// Outer learning rate.
    pub alpha: f64,
    /// Outer iterations (`T`).
    pub iterations: usize,
    #[serde(default)]
    pub outer_pg_mode: OuterPgMode,
    pub estimator: EstimatorKind,
}

impl Default for MetaRlConfig {
    fn default() -> Self {
        MetaRlConfig {
            batch: 8,
            n: 8,
            m: 8,
            eta: 0.1,
            alpha: 0.05,
            iterations: 300,
            outer_pg_mode: OuterPgMode::Trajectory,
            estimator: EstimatorKind::GenLsf,
        }
    }
}

impl MetaRlConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("batch", self.batch), ("n", self.n), ("m", self.m)];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [("eta", self.eta), ("alpha", self.alpha)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !matches!(
            self.estimator,
            EstimatorKind::GenSf | EstimatorKind::GenLsf | EstimatorKind::EMamlScaled
        ) {
            return Err(Error::InvalidArgument(format!(
                "estimator `{}` is not a meta-RL estimator (expected gen-sf, gen-lsf or emaml-scaled)",
                self.estimator
            )));
        }
        Ok(())
    }
}

/// The `N` inner-loop trajectories drawn at `θ` and the adapted parameter.
#[derive(Debug, Clone)]
pub struct InnerBatch {
    pub task: usize,
    pub trajectories: Vec<Trajectory>,
    pub returns: Vec<f64>,
    pub scores: Vec<DVector<f64>>,
    pub adapted: DVector<f64>,
}

impl InnerBatch {
    /// Draws `n` trajectories under `(θ, g)` and applies the inner update.
    pub fn sample(mdp: &TabularMdp, theta: &DVector<f64>, g: usize, n: usize, eta: f64, rng: &mut dyn RngCore) -> Result<Self> {
        check_theta_task(mdp, theta, g)?;
        let trajectories: Vec<Trajectory> = (0..n).map(|_| mdp.sample_trajectory(theta, g, rng)).collect();
        Self::from_trajectories(mdp, theta, g, trajectories, eta)
    }

    pub fn from_trajectories(
        mdp: &TabularMdp,
        theta: &DVector<f64>,
        g: usize,
        trajectories: Vec<Trajectory>,
        eta: f64,
    ) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::InvalidArgument("inner update needs at least one trajectory".into()));
        }
        let shape = mdp.policy_shape();
        let mut scores = Vec::with_capacity(trajectories.len());
        for tau in &trajectories {
            if tau.task != g {
                return Err(Error::InvalidArgument(format!(
                    "trajectory drawn for task {} used in an update for task {g}",
                    tau.task
                )));
            }
            scores.push(shape.score(theta, tau)?);
        }
        let returns: Vec<f64> = trajectories.iter().map(|t| t.discounted_return(mdp.gamma())).collect();
        let n = trajectories.len() as f64;
        let mut step = DVector::zeros(theta.len());
        for (r, u) in returns.iter().zip(&scores) {
            step.axpy(*r, u, 1.0);
        }
        let adapted = theta + step * (eta / n);
        Ok(InnerBatch {
            task: g,
            trajectories,
            returns,
            scores,
            adapted,
        })
    }

    pub fn n(&self) -> usize {
        self.trajectories.len()
    }

    /// `Σ_i u_i`.
    pub fn score_sum(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.adapted.len());
        for u in &self.scores {
            s += u;
        }
        s
    }

    /// `(I + η (1/N) Σ_i R_i [∇² log p(τ_i) + u_i u_iᵀ]) v`; the outer-product
    /// part is included only when `with_outer` is set.
    pub fn apply_curvature(
        &self,
        shape: &PolicyShape,
        theta: &DVector<f64>,
        v: &DVector<f64>,
        eta: f64,
        with_outer: bool,
    ) -> DVector<f64> {
        let mut acc = DVector::zeros(v.len());
        for ((tau, r), u) in self.trajectories.iter().zip(&self.returns).zip(&self.scores) {
            if *r == 0.0 {
                continue;
            }
            log_hessian_times(shape, theta, tau, v, *r, &mut acc);
            if with_outer {
                acc.axpy(r * u.dot(v), u, 1.0);
            }
        }
        v + acc * (eta / self.n() as f64)
    }

    /// `Ĥ_N(θ) = (1/N) Σ_i R_i (u_i u_iᵀ + ∇² log p(τ_i))`.
    pub fn hessian_estimate(&self, shape: &PolicyShape, theta: &DVector<f64>) -> DMatrix<f64> {
        let d = theta.len();
        let mut h = DMatrix::zeros(d, d);
        for ((tau, r), u) in self.trajectories.iter().zip(&self.returns).zip(&self.scores) {
            if *r == 0.0 {
                continue;
            }
            shape.add_score_hessian(theta, tau, *r, &mut h);
            h += u * u.transpose() * *r;
        }
        h / self.n() as f64
    }
}

/// `out += weight · ∇² log p(τ) v` without forming the matrix.
fn log_hessian_times(
    shape: &PolicyShape,
    theta: &DVector<f64>,
    tau: &Trajectory,
    v: &DVector<f64>,
    weight: f64,
    out: &mut DVector<f64>,
) {
    for step in &tau.steps {
        let p = shape.probs_unchecked(theta, step.state, tau.task);
        let base = shape.index(step.state, 0, tau.task);
        let pv: f64 = p.iter().enumerate().map(|(a, pa)| pa * v[base + a]).sum();
        for (a, pa) in p.iter().enumerate() {
            out[base + a] += weight * (pa * pv - pa * v[base + a]);
        }
    }
}

fn check_theta_task(mdp: &TabularMdp, theta: &DVector<f64>, g: usize) -> Result<()> {
    if theta.len() != mdp.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: mdp.param_dim(),
            got: theta.len(),
        });
    }
    if g >= mdp.n_tasks() {
        return Err(Error::IndexOutOfRange {
            what: "task",
            index: g,
            size: mdp.n_tasks(),
        });
    }
    Ok(())
}

/// `θ + η (1/N) Σ_i R(τ_i, g) u_i`.
pub fn inner_update(
    mdp: &TabularMdp,
    theta: &DVector<f64>,
    g: usize,
    trajectories: &[Trajectory],
    eta: f64,
) -> Result<DVector<f64>> {
    check_theta_task(mdp, theta, g)?;
    Ok(InnerBatch::from_trajectories(mdp, theta, g, trajectories.to_vec(), eta)?.adapted)
}

/// Outer policy-gradient estimate at `θ'` together with the mean return of
/// the same rollouts.
pub(crate) fn outer_pg_with_value(
    mdp: &TabularMdp,
    theta: &DVector<f64>,
    g: usize,
    m: usize,
    mode: OuterPgMode,
    rng: &mut dyn RngCore,
) -> (DVector<f64>, f64) {
    let shape = mdp.policy_shape();
    let gamma = mdp.gamma();
    let mut grad = DVector::zeros(theta.len());
    let mut ret_sum = 0.0;
    for _ in 0..m {
        let tau = mdp.sample_trajectory(theta, g, rng);
        let ret = tau.discounted_return(gamma);
        ret_sum += ret;
        match mode {
            OuterPgMode::Trajectory => {
                if ret != 0.0 {
                    for step in &tau.steps {
                        shape.add_step_score(theta, g, step.state, step.action, ret, &mut grad);
                    }
                }
            }
            OuterPgMode::Stepwise => {
                let q = tau.rewards_to_go(gamma);
                let mut discount = 1.0;
                for (step, q_t) in tau.steps.iter().zip(q) {
                    let w = discount * q_t;
                    if w != 0.0 {
                        shape.add_step_score(theta, g, step.state, step.action, w, &mut grad);
                    }
                    discount *= gamma;
                }
            }
        }
    }
    (grad / m as f64, ret_sum / m as f64)
}

pub fn outer_pg_estimate(
    mdp: &TabularMdp,
    theta: &DVector<f64>,
    g: usize,
    m: usize,
    mode: OuterPgMode,
    rng: &mut dyn RngCore,
) -> Result<DVector<f64>> {
    check_theta_task(mdp, theta, g)?;
    if m == 0 {
        return Err(Error::InvalidArgument("M must be >= 1".into()));
    }
    Ok(outer_pg_with_value(mdp, theta, g, m, mode, rng).0)
}

/// `(1/M) Σ_k R(τ'_k, g)` over fresh rollouts at `θ'`.
pub fn value_estimate(mdp: &TabularMdp, theta: &DVector<f64>, g: usize, m: usize, rng: &mut dyn RngCore) -> Result<f64> {
    check_theta_task(mdp, theta, g)?;
    if m == 0 {
        return Err(Error::InvalidArgument("M must be >= 1".into()));
    }
    let gamma = mdp.gamma();
    let total: f64 = (0..m)
        .map(|_| mdp.sample_trajectory(theta, g, rng).discounted_return(gamma))
        .sum();
    Ok(total / m as f64)
}

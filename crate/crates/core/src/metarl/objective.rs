use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::Result;
use crate::mdp::{TabularMdp, Trajectory};
use crate::objective::AdditiveMcObjective;
use crate::oracle::Oracle;

/// `F_N(θ, g)` written as a generalized additive objective:
/// `X = τ`, `φ(τ, θ) = R(τ, g) ∇log p_{θ,g}(τ)`, `f(φ̄, θ) = V_g(θ + η φ̄)`.
///
/// `f` and its derivatives are evaluated exactly by enumeration, so the
/// generic estimators applied to this objective give the meta-RL estimators
/// with the outer value and gradient replaced by their exact counterparts.
pub struct MetaRlObjective<'a> {
    mdp: &'a TabularMdp,
    task: usize,
    eta: f64,
    oracle: Oracle,
}

impl<'a> MetaRlObjective<'a> {
    /// Fails when the MDP is too large to enumerate.
    pub fn new(mdp: &'a TabularMdp, task: usize, eta: f64, oracle: Oracle) -> Result<Self> {
        oracle.exact_value(mdp, &DVector::zeros(mdp.param_dim()), task)?;
        Ok(MetaRlObjective { mdp, task, eta, oracle })
    }

    fn adapted(&self, feature_mean: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        theta + feature_mean * self.eta
    }

    fn value_and_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let vd = self
            .oracle
            .value_derivatives(self.mdp, theta, self.task)
            .expect("enumeration feasibility checked at construction");
        (vd.value, vd.grad)
    }
}

impl AdditiveMcObjective for MetaRlObjective<'_> {
    type Sample = Trajectory;

    fn param_dim(&self) -> usize {
        self.mdp.param_dim()
    }

    fn feature_dim(&self) -> usize {
        self.mdp.param_dim()
    }

    fn sample(&self, theta: &DVector<f64>, rng: &mut dyn RngCore) -> Trajectory {
        self.mdp.sample_trajectory(theta, self.task, rng)
    }

    fn score(&self, theta: &DVector<f64>, x: &Trajectory) -> DVector<f64> {
        self.mdp.policy_shape().score_unchecked(theta, x)
    }

    fn feature(&self, theta: &DVector<f64>, x: &Trajectory) -> DVector<f64> {
        self.score(theta, x) * x.discounted_return(self.mdp.gamma())
    }

    fn feature_jacobian(&self, theta: &DVector<f64>, x: &Trajectory) -> DMatrix<f64> {
        let d = self.param_dim();
        let mut h = DMatrix::zeros(d, d);
        let r = x.discounted_return(self.mdp.gamma());
        if r != 0.0 {
            self.mdp.policy_shape().add_score_hessian(theta, x, r, &mut h);
        }
        h
    }

    fn f_value(&self, feature_mean: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        self.value_and_grad(&self.adapted(feature_mean, theta)).0
    }

    fn f_grad_feature(&self, feature_mean: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        self.value_and_grad(&self.adapted(feature_mean, theta)).1 * self.eta
    }

    fn f_grad_param(&self, feature_mean: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        self.value_and_grad(&self.adapted(feature_mean, theta)).1
    }

    fn is_param_free(&self) -> bool {
        false
    }
}

//! The N-sample additive Monte-Carlo objective
//!
//! ```text
//! G(θ) = E[ f( (1/N) Σ φ(X_i, θ), θ ) ],   X_i ~ p_θ i.i.d.
//! ```
//!
//! A concrete objective supplies the sampler, the score `∇_θ log p_θ(X)`, the
//! feature map `φ`, the outer function `f` and their partial derivatives. When
//! `φ` and `f` do not depend on `θ` through their explicit argument the
//! generalized objective reduces to the plain additive objective `L(θ)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Capabilities of an N-sample additive Monte-Carlo objective.
///
/// Shapes: `θ ∈ R^D`, `φ(X, θ) ∈ R^h`.
pub trait AdditiveMcObjective: Send + Sync {
    type Sample: Clone;

    /// `D`, the dimension of `θ`.
    fn param_dim(&self) -> usize;

    /// `h`, the dimension of the feature `φ`.
    fn feature_dim(&self) -> usize;

    fn sample(&self, theta: &DVector<f64>, rng: &mut dyn RngCore) -> Self::Sample;

    /// `∇_θ log p_θ(x)`, length `D`.
    fn score(&self, theta: &DVector<f64>, x: &Self::Sample) -> DVector<f64>;

    /// `φ(x, θ)`, length `h`.
    fn feature(&self, theta: &DVector<f64>, x: &Self::Sample) -> DVector<f64>;

    /// `∇_θ φ(x, θ)` as a `D × h` matrix; entry `(d, k)` is `∂φ_k/∂θ_d`.
    fn feature_jacobian(&self, _theta: &DVector<f64>, _x: &Self::Sample) -> DMatrix<f64> {
        DMatrix::zeros(self.param_dim(), self.feature_dim())
    }

    fn f_value(&self, feature_mean: &DVector<f64>, theta: &DVector<f64>) -> f64;

    /// `∇_{φ̄} f(φ̄, θ)`, length `h`.
    fn f_grad_feature(&self, feature_mean: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64>;

    /// Partial `∇_θ f(φ̄, θ)` holding `φ̄` fixed, length `D`.
    fn f_grad_param(&self, _feature_mean: &DVector<f64>, _theta: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.param_dim())
    }

    /// True when `φ` and `f` are free of `θ` in their explicit argument, so the
    /// plain SF and LSF estimators apply.
    fn is_param_free(&self) -> bool {
        true
    }

    /// Reparameterization `X = T_θ(ζ)`, when available.
    fn reparam(&self) -> Option<&dyn Reparam<Self::Sample>> {
        None
    }
}

/// Path-wise capability of an objective: `X = T_θ(ζ)` with `ζ` from a fixed
/// base distribution.
pub trait Reparam<X>: Send + Sync {
    /// Draws `ζ`.
    fn draw_base(&self, rng: &mut dyn RngCore) -> DVector<f64>;

    fn transform(&self, theta: &DVector<f64>, base: &DVector<f64>) -> X;

    /// `∇_θ T_θ(ζ)` as a `D × dim(X)` matrix.
    fn transform_jacobian(&self, theta: &DVector<f64>, base: &DVector<f64>) -> DMatrix<f64>;

    /// `∂φ/∂X` at `x`, a `dim(X) × h` matrix.
    fn feature_grad_sample(&self, theta: &DVector<f64>, x: &X) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "sf")]
    Sf,
    #[serde(rename = "pw")]
    Pw,
    #[serde(rename = "lsf")]
    Lsf,
    #[serde(rename = "gen-sf")]
    GenSf,
    #[serde(rename = "gen-lsf")]
    GenLsf,
    /// Generalized SF with its score term scaled by `1/N`.
    #[serde(rename = "emaml-scaled")]
    EMamlScaled,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Sf,
        EstimatorKind::Pw,
        EstimatorKind::Lsf,
        EstimatorKind::GenSf,
        EstimatorKind::GenLsf,
        EstimatorKind::EMamlScaled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Sf => "sf",
            EstimatorKind::Pw => "pw",
            EstimatorKind::Lsf => "lsf",
            EstimatorKind::GenSf => "gen-sf",
            EstimatorKind::GenLsf => "gen-lsf",
            EstimatorKind::EMamlScaled => "emaml-scaled",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One draw of a gradient estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub grad: DVector<f64>,
    pub estimator: EstimatorKind,
    pub n_inner: usize,
}

impl GradSample {
    pub fn new(grad: DVector<f64>, estimator: EstimatorKind, n_inner: usize) -> Self {
        debug_assert!(grad.iter().all(|g| g.is_finite()));
        GradSample {
            grad,
            estimator,
            n_inner,
        }
    }
}

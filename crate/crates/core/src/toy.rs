//! One-dimensional Gaussian objectives with `X ~ N(θ, σ²)` and `φ(x) = x`.
//!
//! * `Identity`: `f(y) = y`, so `L(θ) = θ`.
//! * `ConstantF`: `f ≡ V₀`, the constant-value meta-RL toy.
//! * `Quadratic`: `f(y) = −(y − c)²`, so `L(θ) = −((θ − c)² + σ²/N)`.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::{AdditiveMcObjective, Reparam};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ToyKind {
    Identity,
    ConstantF {
        v0: f64,
    },
    Quadratic {
        #[serde(default = "default_target")]
        target: f64,
    },
}

fn default_target() -> f64 {
    1.0
}

fn default_sigma() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianToy {
    #[serde(flatten)]
    pub kind: ToyKind,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

impl GaussianToy {
    pub fn new(kind: ToyKind, sigma: f64) -> Result<Self> {
        let toy = GaussianToy { kind, sigma };
        toy.validate()?;
        Ok(toy)
    }

    pub fn identity() -> Self {
        GaussianToy {
            kind: ToyKind::Identity,
            sigma: 1.0,
        }
    }

    pub fn constant(v0: f64) -> Self {
        GaussianToy {
            kind: ToyKind::ConstantF { v0 },
            sigma: 1.0,
        }
    }

    pub fn quadratic() -> Self {
        GaussianToy {
            kind: ToyKind::Quadratic { target: 1.0 },
            sigma: 1.0,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ToyKind::Identity => "identity",
            ToyKind::ConstantF { .. } => "constant-f",
            ToyKind::Quadratic { .. } => "quadratic",
        }
    }

    fn f(&self, y: f64) -> f64 {
        match self.kind {
            ToyKind::Identity => y,
            ToyKind::ConstantF { v0 } => v0,
            ToyKind::Quadratic { target } => -(y - target).powi(2),
        }
    }

    fn f_prime(&self, y: f64) -> f64 {
        match self.kind {
            ToyKind::Identity => 1.0,
            ToyKind::ConstantF { .. } => 0.0,
            ToyKind::Quadratic { target } => -2.0 * (y - target),
        }
    }

    /// Closed-form `L(θ)` for `N` inner samples.
    pub fn objective(&self, theta: f64, n: usize) -> f64 {
        match self.kind {
            ToyKind::Identity => theta,
            ToyKind::ConstantF { v0 } => v0,
            ToyKind::Quadratic { target } => -((theta - target).powi(2) + self.sigma.powi(2) / n as f64),
        }
    }

    /// Closed-form `dL/dθ`; independent of `N` for all three kinds.
    pub fn exact_gradient(&self, theta: f64, _n: usize) -> f64 {
        match self.kind {
            ToyKind::Identity => 1.0,
            ToyKind::ConstantF { .. } => 0.0,
            ToyKind::Quadratic { target } => -2.0 * (theta - target),
        }
    }
}

/// Free-function form of [`GaussianToy::exact_gradient`].
pub fn toy_exact_gradient(toy: &GaussianToy, theta: f64, n: usize) -> f64 {
    toy.exact_gradient(theta, n)
}

impl AdditiveMcObjective for GaussianToy {
    type Sample = f64;

    fn param_dim(&self) -> usize {
        1
    }

    fn feature_dim(&self) -> usize {
        1
    }

    fn sample(&self, theta: &DVector<f64>, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        theta[0] + self.sigma * z
    }

    fn score(&self, theta: &DVector<f64>, x: &f64) -> DVector<f64> {
        DVector::from_element(1, (x - theta[0]) / (self.sigma * self.sigma))
    }

    fn feature(&self, _theta: &DVector<f64>, x: &f64) -> DVector<f64> {
        DVector::from_element(1, *x)
    }

    fn f_value(&self, feature_mean: &DVector<f64>, _theta: &DVector<f64>) -> f64 {
        self.f(feature_mean[0])
    }

    fn f_grad_feature(&self, feature_mean: &DVector<f64>, _theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, self.f_prime(feature_mean[0]))
    }

    fn reparam(&self) -> Option<&dyn Reparam<f64>> {
        Some(self)
    }
}

impl Reparam<f64> for GaussianToy {
    fn draw_base(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        let z: f64 = StandardNormal.sample(rng);
        DVector::from_element(1, z)
    }

    fn transform(&self, theta: &DVector<f64>, base: &DVector<f64>) -> f64 {
        theta[0] + self.sigma * base[0]
    }

    fn transform_jacobian(&self, _theta: &DVector<f64>, _base: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }

    fn feature_grad_sample(&self, _theta: &DVector<f64>, _x: &f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 1.0)
    }
}

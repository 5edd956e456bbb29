//! Gradient estimators for [`AdditiveMcObjective`]s.
//!
//! Each estimator is a unit struct implementing [`GradientEstimator`]; the
//! [`EstimatorRegistry`] maps names (`"sf"`, `"lsf"`, ...) to boxed
//! estimators so that experiments can pick them at runtime.
//!
//! All estimators draw their `N` samples first, in order, from the supplied
//! stream. Two estimators called with identically seeded streams therefore
//! see the same `X_1..X_N`, which the reduction tests rely on.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::objective::{AdditiveMcObjective, EstimatorKind, GradSample};

pub trait GradientEstimator<O: AdditiveMcObjective + ?Sized>: Send + Sync {
    fn kind(&self) -> EstimatorKind;

    fn estimate(&self, obj: &O, theta: &DVector<f64>, n: usize, rng: &mut dyn RngCore) -> Result<GradSample>;
}

pub struct ScoreFunction;
pub struct Pathwise;
pub struct LinearizedScore;
pub struct GeneralizedScore;
pub struct GeneralizedLinearizedScore;

/// Samples and per-draw quantities shared by the score-based estimators.
struct Draws<X> {
    samples: Vec<X>,
    scores: Vec<DVector<f64>>,
    features: Vec<DVector<f64>>,
    feature_mean: DVector<f64>,
}

fn check_vec(v: &DVector<f64>, kind: EstimatorKind, quantity: &'static str, draw: Option<usize>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            estimator: kind,
            quantity,
            draw,
        })
    }
}

fn check_scalar(v: f64, kind: EstimatorKind, quantity: &'static str, draw: Option<usize>) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            estimator: kind,
            quantity,
            draw,
        })
    }
}

fn check_inputs<O: AdditiveMcObjective + ?Sized>(obj: &O, theta: &DVector<f64>, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("inner sample count N must be >= 1".into()));
    }
    if theta.len() != obj.param_dim() {
        return Err(Error::DimensionMismatch {
            expected: obj.param_dim(),
            got: theta.len(),
        });
    }
    Ok(())
}

fn draw<O: AdditiveMcObjective + ?Sized>(
    obj: &O,
    theta: &DVector<f64>,
    n: usize,
    kind: EstimatorKind,
    rng: &mut dyn RngCore,
) -> Result<Draws<O::Sample>> {
    let samples: Vec<O::Sample> = (0..n).map(|_| obj.sample(theta, rng)).collect();
    let mut scores = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n);
    let mut feature_mean = DVector::zeros(obj.feature_dim());
    for (i, x) in samples.iter().enumerate() {
        let s = obj.score(theta, x);
        check_vec(&s, kind, "score", Some(i))?;
        let phi = obj.feature(theta, x);
        check_vec(&phi, kind, "feature", Some(i))?;
        feature_mean += &phi;
        scores.push(s);
        features.push(phi);
    }
    feature_mean /= n as f64;
    Ok(Draws {
        samples,
        scores,
        features,
        feature_mean,
    })
}

fn require_param_free<O: AdditiveMcObjective + ?Sized>(obj: &O, kind: EstimatorKind) -> Result<()> {
    if obj.is_param_free() {
        Ok(())
    } else {
        Err(Error::Unsupported {
            estimator: kind,
            reason: "f or φ depends on θ explicitly; use the generalized estimator",
        })
    }
}

/// `f(φ̄_N, θ) Σ_i ∇log p(X_i)`.
fn sf_term<X>(f: f64, d: &Draws<X>, dim: usize) -> DVector<f64> {
    let mut sum = DVector::zeros(dim);
    for s in &d.scores {
        sum += s;
    }
    sum * f
}

/// `(1/N) Σ_i ⟨∇f(φ̄_N), φ(X_i)⟩ ∇log p(X_i)`.
fn lsf_term<X>(grad_f: &DVector<f64>, d: &Draws<X>, dim: usize) -> DVector<f64> {
    let mut acc = DVector::zeros(dim);
    for (phi, s) in d.features.iter().zip(&d.scores) {
        acc.axpy(grad_f.dot(phi), s, 1.0);
    }
    acc / d.scores.len() as f64
}

/// Term (ii) of the generalized estimators:
/// `∇_θ f(φ̄_N, θ) + [(1/N) Σ_i ∇_θ φ(X_i, θ)] ∇_{φ̄} f(φ̄_N, θ)`.
pub fn explicit_param_term<O: AdditiveMcObjective + ?Sized>(
    obj: &O,
    theta: &DVector<f64>,
    samples: &[O::Sample],
    feature_mean: &DVector<f64>,
    grad_f: &DVector<f64>,
) -> DVector<f64> {
    let mut jac = DMatrix::zeros(obj.param_dim(), obj.feature_dim());
    for x in samples {
        jac += obj.feature_jacobian(theta, x);
    }
    jac /= samples.len() as f64;
    obj.f_grad_param(feature_mean, theta) + jac * grad_f
}

impl<O: AdditiveMcObjective + ?Sized> GradientEstimator<O> for ScoreFunction {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Sf
    }

    fn estimate(&self, obj: &O, theta: &DVector<f64>, n: usize, rng: &mut dyn RngCore) -> Result<GradSample> {
        let kind = GradientEstimator::<O>::kind(self);
        check_inputs(obj, theta, n)?;
        require_param_free(obj, kind)?;
        let d = draw(obj, theta, n, kind, rng)?;
        let f = obj.f_value(&d.feature_mean, theta);
        check_scalar(f, kind, "f(φ̄_N)", None)?;
        let grad = sf_term(f, &d, obj.param_dim());
        check_vec(&grad, kind, "gradient", None)?;
        Ok(GradSample::new(grad, kind, n))
    }
}

impl<O: AdditiveMcObjective + ?Sized> GradientEstimator<O> for LinearizedScore {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Lsf
    }

    fn estimate(&self, obj: &O, theta: &DVector<f64>, n: usize, rng: &mut dyn RngCore) -> Result<GradSample> {
        let kind = GradientEstimator::<O>::kind(self);
        check_inputs(obj, theta, n)?;
        require_param_free(obj, kind)?;
        let d = draw(obj, theta, n, kind, rng)?;
        let grad_f = obj.f_grad_feature(&d.feature_mean, theta);
        check_vec(&grad_f, kind, "∇f(φ̄_N)", None)?;
        let grad = lsf_term(&grad_f, &d, obj.param_dim());
        check_vec(&grad, kind, "gradient", None)?;
        Ok(GradSample::new(grad, kind, n))
    }
}

impl<O: AdditiveMcObjective + ?Sized> GradientEstimator<O> for GeneralizedScore {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::GenSf
    }

    fn estimate(&self, obj: &O, theta: &DVector<f64>, n: usize, rng: &mut dyn RngCore) -> Result<GradSample> {
        let kind = GradientEstimator::<O>::kind(self);
        check_inputs(obj, theta, n)?;
        let d = draw(obj, theta, n, kind, rng)?;
        let f = obj.f_value(&d.feature_mean, theta);
        check_scalar(f, kind, "f(φ̄_N, θ)", None)?;
        let grad_f = obj.f_grad_feature(&d.feature_mean, theta);
        check_vec(&grad_f, kind, "∇f(φ̄_N, θ)", None)?;
        let grad = sf_term(f, &d, obj.param_dim()) + explicit_param_term(obj, theta, &d.samples, &d.feature_mean, &grad_f);
        check_vec(&grad, kind, "gradient", None)?;
        Ok(GradSample::new(grad, kind, n))
    }
}

impl<O: AdditiveMcObjective + ?Sized> GradientEstimator<O> for GeneralizedLinearizedScore {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::GenLsf
    }

    fn estimate(&self, obj: &O, theta: &DVector<f64>, n: usize, rng: &mut dyn RngCore) -> Result<GradSample> {
        let kind = GradientEstimator::<O>::kind(self);
        check_inputs(obj, theta, n)?;
        let d = draw(obj, theta, n, kind, rng)?;
        let grad_f = obj.f_grad_feature(&d.feature_mean, theta);
        check_vec(&grad_f, kind, "∇f(φ̄_N, θ)", None)?;
        let grad = lsf_term(&grad_f, &d, obj.param_dim()) + explicit_param_term(obj, theta, &d.samples, &d.feature_mean, &grad_f);
        check_vec(&grad, kind, "gradient", None)?;
        Ok(GradSample::new(grad, kind, n))
    }
}

impl<O: AdditiveMcObjective + ?Sized> GradientEstimator<O> for Pathwise {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Pw
    }

    /// Total derivative of `f(φ̄_N(T_θ(ζ), θ), θ)` along fixed base draws.
    fn estimate(&self, obj: &O, theta: &DVector<f64>, n: usize, rng: &mut dyn RngCore) -> Result<GradSample> {
        let kind = GradientEstimator::<O>::kind(self);
        check_inputs(obj, theta, n)?;
        let rp = obj.reparam().ok_or(Error::Unsupported {
            estimator: kind,
            reason: "objective has no reparameterization",
        })?;
        let bases: Vec<DVector<f64>> = (0..n).map(|_| rp.draw_base(rng)).collect();
        let samples: Vec<O::Sample> = bases.iter().map(|z| rp.transform(theta, z)).collect();

        let mut feature_mean = DVector::zeros(obj.feature_dim());
        // ∂φ̄_N/∂θ through the samples, D × h.
        let mut chain = DMatrix::zeros(obj.param_dim(), obj.feature_dim());
        for (i, (z, x)) in bases.iter().zip(&samples).enumerate() {
            let phi = obj.feature(theta, x);
            check_vec(&phi, kind, "feature", Some(i))?;
            feature_mean += phi;
            chain += rp.transform_jacobian(theta, z) * rp.feature_grad_sample(theta, x);
        }
        feature_mean /= n as f64;
        chain /= n as f64;

        let grad_f = obj.f_grad_feature(&feature_mean, theta);
        check_vec(&grad_f, kind, "∇f(φ̄_N)", None)?;
        let grad = chain * &grad_f + explicit_param_term(obj, theta, &samples, &feature_mean, &grad_f);
        check_vec(&grad, kind, "gradient", None)?;
        Ok(GradSample::new(grad, kind, n))
    }
}

/// Name-keyed collection of estimators for objectives of type `O`.
pub struct EstimatorRegistry<O: AdditiveMcObjective + ?Sized> {
    entries: BTreeMap<&'static str, Box<dyn GradientEstimator<O>>>,
}

impl<O: AdditiveMcObjective + ?Sized> Default for EstimatorRegistry<O> {
    fn default() -> Self {
        Self::new()
    }
}

impl<O: AdditiveMcObjective + ?Sized> EstimatorRegistry<O> {
    pub fn new() -> Self {
        EstimatorRegistry {
            entries: BTreeMap::new(),
        }
    }

    /// All five built-in estimators.
    pub fn standard() -> Self {
        let mut r = Self::new();
        r.register(ScoreFunction);
        r.register(Pathwise);
        r.register(LinearizedScore);
        r.register(GeneralizedScore);
        r.register(GeneralizedLinearizedScore);
        r
    }

    pub fn register<E: GradientEstimator<O> + 'static>(&mut self, e: E) {
        self.entries.insert(e.kind().name(), Box::new(e));
    }

    pub fn get(&self, name: &str) -> Result<&dyn GradientEstimator<O>> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownEstimator(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

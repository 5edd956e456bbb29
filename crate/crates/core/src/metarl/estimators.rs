use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::RngCore;

use super::{outer_pg_with_value, InnerBatch, MetaRlConfig};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::objective::{EstimatorKind, GradSample};

/// One meta-gradient draw plus the mean return of the outer rollouts at the
/// adapted parameter.
#[derive(Debug, Clone)]
pub struct MetaDraw {
    pub sample: GradSample,
    pub adapted_value: f64,
}

pub trait MetaGradientEstimator: Send + Sync {
    fn kind(&self) -> EstimatorKind;

    fn draw(
        &self,
        mdp: &TabularMdp,
        theta: &DVector<f64>,
        g: usize,
        cfg: &MetaRlConfig,
        rng: &mut dyn RngCore,
    ) -> Result<MetaDraw>;

    fn estimate(
        &self,
        mdp: &TabularMdp,
        theta: &DVector<f64>,
        g: usize,
        cfg: &MetaRlConfig,
        rng: &mut dyn RngCore,
    ) -> Result<GradSample> {
        Ok(self.draw(mdp, theta, g, cfg, rng)?.sample)
    }
}

/// Unbiased estimate: `V̂(θ'_N) Σ u_i + (I + η (1/N) Σ R_i ∇² log p(τ_i)) ∇V̂(θ'_N)`,
/// with `V̂` and `∇V̂` from independent rollout batches.
pub struct GeneralizedSf;

/// `(I + η Ĥ_N(θ)) ∇V̂(θ'_N)`.
pub struct GeneralizedLsf;

/// [`GeneralizedSf`] with the score term scaled by `1/N`.
pub struct EMamlScaled;

fn finite(grad: DVector<f64>, kind: EstimatorKind, n: usize) -> Result<GradSample> {
    if grad.iter().all(|x| x.is_finite()) {
        Ok(GradSample::new(grad, kind, n))
    } else {
        Err(Error::NonFinite {
            estimator: kind,
            quantity: "meta-gradient",
            draw: None,
        })
    }
}

fn sf_family(
    kind: EstimatorKind,
    score_scale: f64,
    mdp: &TabularMdp,
    theta: &DVector<f64>,
    g: usize,
    cfg: &MetaRlConfig,
    rng: &mut dyn RngCore,
) -> Result<MetaDraw> {
    let batch = InnerBatch::sample(mdp, theta, g, cfg.n, cfg.eta, rng)?;
    let (_, v_hat) = outer_pg_with_value(mdp, &batch.adapted, g, cfg.m, cfg.outer_pg_mode, rng);
    let (grad_v, adapted_value) = outer_pg_with_value(mdp, &batch.adapted, g, cfg.m, cfg.outer_pg_mode, rng);
    let shape = mdp.policy_shape();
    let score_term = batch.score_sum() * (v_hat * score_scale);
    let explicit = batch.apply_curvature(&shape, theta, &grad_v, cfg.eta, false);
    Ok(MetaDraw {
        sample: finite(score_term + explicit, kind, cfg.n)?,
        adapted_value,
    })
}

impl MetaGradientEstimator for GeneralizedSf {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::GenSf
    }

    fn draw(
        &self,
        mdp: &TabularMdp,
        theta: &DVector<f64>,
        g: usize,
        cfg: &MetaRlConfig,
        rng: &mut dyn RngCore,
    ) -> Result<MetaDraw> {
        sf_family(self.kind(), 1.0, mdp, theta, g, cfg, rng)
    }
}

impl MetaGradientEstimator for EMamlScaled {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::EMamlScaled
    }

    fn draw(
        &self,
        mdp: &TabularMdp,
        theta: &DVector<f64>,
        g: usize,
        cfg: &MetaRlConfig,
        rng: &mut dyn RngCore,
    ) -> Result<MetaDraw> {
        sf_family(self.kind(), 1.0 / cfg.n as f64, mdp, theta, g, cfg, rng)
    }
}

impl MetaGradientEstimator for GeneralizedLsf {
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::GenLsf
    }

    fn draw(
        &self,
        mdp: &TabularMdp,
        theta: &DVector<f64>,
        g: usize,
        cfg: &MetaRlConfig,
        rng: &mut dyn RngCore,
    ) -> Result<MetaDraw> {
        let batch = InnerBatch::sample(mdp, theta, g, cfg.n, cfg.eta, rng)?;
        let (grad_v, adapted_value) = outer_pg_with_value(mdp, &batch.adapted, g, cfg.m, cfg.outer_pg_mode, rng);
        let grad = batch.apply_curvature(&mdp.policy_shape(), theta, &grad_v, cfg.eta, true);
        Ok(MetaDraw {
            sample: finite(grad, self.kind(), cfg.n)?,
            adapted_value,
        })
    }
}

pub fn jn_sf_estimate(
    mdp: &TabularMdp,
    theta: &DVector<f64>,
    g: usize,
    cfg: &MetaRlConfig,
    rng: &mut dyn RngCore,
) -> Result<GradSample> {
    GeneralizedSf.estimate(mdp, theta, g, cfg, rng)
}

pub fn jn_lsf_estimate(
    mdp: &TabularMdp,
    theta: &DVector<f64>,
    g: usize,
    cfg: &MetaRlConfig,
    rng: &mut dyn RngCore,
) -> Result<GradSample> {
    GeneralizedLsf.estimate(mdp, theta, g, cfg, rng)
}

pub fn jn_emaml_scaled_estimate(
    mdp: &TabularMdp,
    theta: &DVector<f64>,
    g: usize,
    cfg: &MetaRlConfig,
    rng: &mut dyn RngCore,
) -> Result<GradSample> {
    EMamlScaled.estimate(mdp, theta, g, cfg, rng)
}

pub struct MetaEstimatorRegistry {
    entries: BTreeMap<&'static str, Box<dyn MetaGradientEstimator>>,
}

impl Default for MetaEstimatorRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl MetaEstimatorRegistry {
    pub fn empty() -> Self {
        MetaEstimatorRegistry {
            entries: BTreeMap::new(),
        }
    }

    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(GeneralizedSf);
        r.register(GeneralizedLsf);
        r.register(EMamlScaled);
        r
    }

    pub fn register<E: MetaGradientEstimator + 'static>(&mut self, e: E) {
        self.entries.insert(e.kind().name(), Box::new(e));
    }

    pub fn get(&self, name: &str) -> Result<&dyn MetaGradientEstimator> {
        self.entries
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::UnknownEstimator(name.to_string()))
    }

    pub fn for_kind(&self, kind: EstimatorKind) -> Result<&dyn MetaGradientEstimator> {
        self.get(kind.name())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn zero_reward_chain2() -> TabularMdp {
        let mut doc = TabularMdp::chain2().to_document();
        for s in doc.reward.iter_mut() {
            for a in s.iter_mut() {
                a.iter_mut().for_each(|r| *r = 0.0);
            }
        }
        TabularMdp::from_document(doc).unwrap()
    }

    #[test]
    fn zero_rewards_give_zero_meta_gradients() {
        let mdp = zero_reward_chain2();
        let th = DVector::from_element(8, -0.2);
        let cfg = MetaRlConfig {
            n: 3,
            m: 2,
            ..MetaRlConfig::default()
        };
        let reg = MetaEstimatorRegistry::standard();
        for name in reg.names() {
            let s = reg
                .get(name)
                .unwrap()
                .estimate(&mdp, &th, 0, &cfg, &mut stream(2, 0))
                .unwrap();
            assert_eq!(s.grad, DVector::zeros(8), "{name}");
        }
    }

    #[test]
    fn lsf_at_zero_step_is_the_outer_gradient() {
        let mdp = TabularMdp::chain2();
        let th = DVector::from_fn(8, |i, _| 0.1 * i as f64);
        let cfg = MetaRlConfig {
            eta: 0.0,
            n: 4,
            m: 3,
            ..MetaRlConfig::default()
        };
        for seed in 0..10 {
            let lsf = jn_lsf_estimate(&mdp, &th, 1, &cfg, &mut stream(seed, 0)).unwrap();
            let mut rng = stream(seed, 0);
            // Same consumption order: N inner rollouts, then M outer rollouts.
            for _ in 0..cfg.n {
                mdp.sample_trajectory(&th, 1, &mut rng);
            }
            let pg = super::super::outer_pg_estimate(&mdp, &th, 1, cfg.m, cfg.outer_pg_mode, &mut rng).unwrap();
            assert_eq!(lsf.grad, pg);
        }
    }

    #[test]
    fn emaml_scaled_equals_sf_at_one_sample() {
        let mdp = TabularMdp::chain2();
        let th = DVector::from_fn(8, |i, _| 0.3 - 0.1 * i as f64);
        let cfg = MetaRlConfig {
            n: 1,
            m: 4,
            ..MetaRlConfig::default()
        };
        for seed in 0..10 {
            let a = jn_sf_estimate(&mdp, &th, 0, &cfg, &mut stream(seed, 3)).unwrap();
            let b = jn_emaml_scaled_estimate(&mdp, &th, 0, &cfg, &mut stream(seed, 3)).unwrap();
            assert_eq!(a.grad, b.grad);
        }
    }

    #[test]
    fn registry_lookup() {
        let reg = MetaEstimatorRegistry::standard();
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["emaml-scaled", "gen-lsf", "gen-sf"]);
        assert!(matches!(reg.get("pw"), Err(Error::UnknownEstimator(_))));
        assert_eq!(reg.for_kind(EstimatorKind::GenLsf).unwrap().kind(), EstimatorKind::GenLsf);
    }
}

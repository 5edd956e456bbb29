//! Streaming moments, MSE decomposition and the Adam optimizer.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Welford accumulator over vector samples. Total variance is the sum of the
/// componentwise (unbiased) variances.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStats {
    count: u64,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl MomentStats {
    pub fn new(dim: usize) -> Self {
        MomentStats {
            count: 0,
            mean: DVector::zeros(dim),
            m2: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn push(&mut self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
        Ok(())
    }

    pub fn push_scalar(&mut self, x: f64) -> Result<()> {
        self.push(&DVector::from_element(1, x))
    }

    /// Chan et al. pairwise merge.
    pub fn merge(&mut self, other: &MomentStats) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.mean += &delta * (nb / n);
        self.m2 += &other.m2 + delta.component_mul(&delta) * (na * nb / n);
        self.count += other.count;
        Ok(())
    }

    /// Unbiased per-component variance; zeros when fewer than two samples.
    pub fn variance(&self) -> DVector<f64> {
        if self.count < 2 {
            return DVector::zeros(self.dim());
        }
        &self.m2 / (self.count - 1) as f64
    }

    pub fn total_variance(&self) -> f64 {
        self.variance().sum()
    }

    /// Per-component standard error of the mean.
    pub fn std_error(&self) -> DVector<f64> {
        if self.count == 0 {
            return DVector::zeros(self.dim());
        }
        let n = self.count as f64;
        self.variance().map(|v| (v / n).sqrt())
    }
}

/// Returns the updated accumulator.
pub fn moment_update(mut stats: MomentStats, sample: &DVector<f64>) -> Result<MomentStats> {
    stats.push(sample)?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MseReport {
    /// `‖mean − reference‖²`.
    pub bias_sq: f64,
    /// Total (unbiased) variance of the samples.
    pub variance: f64,
    /// `(1/n) Σ ‖x_i − reference‖²`.
    pub mse: f64,
    /// Standard error of `mse` as a sample mean.
    pub mse_se: f64,
    pub se_mean: DVector<f64>,
    pub n: u64,
}

impl MseReport {
    /// `mse − (bias_sq + variance·(n−1)/n)`, zero up to rounding.
    pub fn decomposition_residual(&self) -> f64 {
        let n = self.n as f64;
        self.mse - (self.bias_sq + self.variance * (n - 1.0) / n)
    }
}

/// Streaming builder for [`MseReport`].
#[derive(Debug, Clone)]
pub struct MseAccumulator {
    reference: DVector<f64>,
    moments: MomentStats,
    sq_err: MomentStats,
}

impl MseAccumulator {
    pub fn new(reference: DVector<f64>) -> Self {
        let d = reference.len();
        MseAccumulator {
            reference,
            moments: MomentStats::new(d),
            sq_err: MomentStats::new(1),
        }
    }

    pub fn push(&mut self, x: &DVector<f64>) -> Result<()> {
        self.moments.push(x)?;
        self.sq_err.push_scalar((x - &self.reference).norm_squared())
    }

    pub fn moments(&self) -> &MomentStats {
        &self.moments
    }

    pub fn report(&self) -> Result<MseReport> {
        let n = self.moments.count();
        if n < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: n as usize,
            });
        }
        Ok(MseReport {
            bias_sq: (self.moments.mean() - &self.reference).norm_squared(),
            variance: self.moments.total_variance(),
            mse: self.sq_err.mean()[0],
            mse_se: self.sq_err.std_error()[0],
            se_mean: self.moments.std_error(),
            n,
        })
    }
}

pub fn mse_report<'a>(samples: impl IntoIterator<Item = &'a DVector<f64>>, reference: &DVector<f64>) -> Result<MseReport> {
    let mut acc = MseAccumulator::new(reference.clone());
    for s in samples {
        acc.push(s)?;
    }
    acc.report()
}

/// Half-width multiplier of the normal-approximation confidence bands used
/// throughout the harness and acceptance checks.
pub const CI_SE_MULTIPLIER: f64 = 4.0;

/// Adam in ascent form: the returned update is added to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: DVector<f64>,
    pub v: DVector<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Self {
        AdamState {
            m: DVector::zeros(dim),
            v: DVector::zeros(dim),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Advances the moments with `grad` and returns the ascent update.
    pub fn step(&mut self, grad: &DVector<f64>) -> DVector<f64> {
        self.t += 1;
        let t = self.t as i32;
        self.m = &self.m * self.beta1 + grad * (1.0 - self.beta1);
        self.v = &self.v * self.beta2 + grad.component_mul(grad) * (1.0 - self.beta2);
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        DVector::from_fn(grad.len(), |i, _| {
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            self.lr * m_hat / (v_hat.sqrt() + self.eps)
        })
    }
}

pub fn adam_step(mut state: AdamState, grad: &DVector<f64>) -> (AdamState, DVector<f64>) {
    let update = state.step(grad);
    (state, update)
}

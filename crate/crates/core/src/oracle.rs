//! Brute-force exact quantities for small tabular MDPs.
//!
//! Everything here is computed by enumerating trajectories (and unordered
//! N-tuples of trajectories) with their exact probabilities. These routines
//! are the references against which the stochastic estimators are tested, so
//! they share no code with the estimator paths beyond the softmax score and
//! log-policy Hessian of [`PolicyShape`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{PolicyShape, Step, TabularMdp, Trajectory};

pub const DEFAULT_TRAJECTORY_CAP: u128 = 10_000;
pub const DEFAULT_TUPLE_CAP: u128 = 1_000_000;
/// Trajectories below this probability are dropped from enumerations.
pub const PRUNE_BELOW: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct EnumeratedEnsemble {
    pub entries: Vec<(Trajectory, f64)>,
    pub task: usize,
}

impl EnumeratedEnsemble {
    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Exact value, policy gradient and Hessian of `V_g` at one `θ`.
#[derive(Debug, Clone)]
pub struct ValueDerivatives {
    pub value: f64,
    pub grad: DVector<f64>,
}

/// Both terms of `J_N(θ, g)`.
#[derive(Debug, Clone)]
pub struct JnTerms {
    pub score_term: DVector<f64>,
    pub explicit_term: DVector<f64>,
}

impl JnTerms {
    pub fn total(&self) -> DVector<f64> {
        &self.score_term + &self.explicit_term
    }
}

/// Enumeration oracle with configurable caps.
#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub trajectory_cap: u128,
    pub tuple_cap: u128,
}

impl Default for Oracle {
    fn default() -> Self {
        Oracle {
            trajectory_cap: DEFAULT_TRAJECTORY_CAP,
            tuple_cap: DEFAULT_TUPLE_CAP,
        }
    }
}

/// Per-trajectory quantities needed by the tuple sums.
struct Atom {
    prob: f64,
    ret: f64,
    score: DVector<f64>,
    log_hessian: DMatrix<f64>,
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// Number of unordered `n`-tuples drawn with replacement from `k` items.
pub fn multiset_count(k: usize, n: usize) -> u128 {
    if k == 0 {
        return 0;
    }
    binomial((k + n - 1) as u128, n as u128)
}

impl Oracle {
    pub fn with_caps(trajectory_cap: u128, tuple_cap: u128) -> Self {
        Oracle {
            trajectory_cap,
            tuple_cap,
        }
    }

    fn check_trajectory_cap(&self, mdp: &TabularMdp) -> Result<()> {
        let per_step = (mdp.n_actions() * mdp.max_branching()) as u128;
        let count = (0..mdp.horizon())
            .try_fold(1u128, |acc, _| acc.checked_mul(per_step))
            .unwrap_or(u128::MAX);
        if count > self.trajectory_cap {
            return Err(Error::EnumerationTooLarge {
                count,
                cap: self.trajectory_cap,
            });
        }
        Ok(())
    }

    /// Depth-first walk over every trajectory with probability above
    /// [`PRUNE_BELOW`]; `visit(path, prob)` is called at each leaf.
    fn walk(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize, mut visit: impl FnMut(&[Step], f64)) -> Result<()> {
        self.check_trajectory_cap(mdp)?;
        let shape = mdp.policy_shape();
        if theta.len() != shape.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: shape.param_dim(),
                got: theta.len(),
            });
        }
        if g >= shape.tasks {
            return Err(Error::IndexOutOfRange {
                what: "task",
                index: g,
                size: shape.tasks,
            });
        }
        let mut path = Vec::with_capacity(mdp.horizon());
        walk_from(mdp, &shape, theta, g, mdp.initial_state(), 1.0, &mut path, &mut visit);
        Ok(())
    }

    pub fn enumerate_trajectories(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize) -> Result<EnumeratedEnsemble> {
        let mut entries = Vec::new();
        self.walk(mdp, theta, g, |path, p| {
            entries.push((
                Trajectory {
                    task: g,
                    steps: path.to_vec(),
                },
                p,
            ))
        })?;
        Ok(EnumeratedEnsemble { entries, task: g })
    }

    pub fn exact_value(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize) -> Result<f64> {
        let gamma = mdp.gamma();
        let mut v = 0.0;
        self.walk(mdp, theta, g, |path, p| v += p * path_return(path, gamma))?;
        Ok(v)
    }

    pub fn value_derivatives(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize) -> Result<ValueDerivatives> {
        let shape = mdp.policy_shape();
        let gamma = mdp.gamma();
        let mut value = 0.0;
        let mut grad = DVector::zeros(shape.param_dim());
        self.walk(mdp, theta, g, |path, p| {
            let r = path_return(path, gamma);
            value += p * r;
            if r != 0.0 {
                add_path_score(&shape, theta, g, path, p * r, &mut grad);
            }
        })?;
        Ok(ValueDerivatives { value, grad })
    }

    /// `∇V_g(θ) = Σ_τ p(τ) R(τ) u(τ)`.
    pub fn exact_pg(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize) -> Result<DVector<f64>> {
        Ok(self.value_derivatives(mdp, theta, g)?.grad)
    }

    /// `∇²V_g(θ) = Σ_τ p(τ) R(τ) (u uᵀ + ∇² log p(τ))`.
    pub fn exact_hessian(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize) -> Result<DMatrix<f64>> {
        let atoms = self.atoms(mdp, theta, g)?;
        let d = mdp.param_dim();
        let mut h = DMatrix::zeros(d, d);
        for a in &atoms {
            let w = a.prob * a.ret;
            if w != 0.0 {
                h += (&a.score * a.score.transpose() + &a.log_hessian) * w;
            }
        }
        Ok(h)
    }

    fn atoms(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize) -> Result<Vec<Atom>> {
        let shape = mdp.policy_shape();
        let ens = self.enumerate_trajectories(mdp, theta, g)?;
        Ok(ens
            .entries
            .into_iter()
            .map(|(tau, prob)| {
                let mut log_hessian = DMatrix::zeros(shape.param_dim(), shape.param_dim());
                shape.add_score_hessian(theta, &tau, 1.0, &mut log_hessian);
                Atom {
                    prob,
                    ret: tau.discounted_return(mdp.gamma()),
                    score: shape.score_unchecked(theta, &tau),
                    log_hessian,
                }
            })
            .collect())
    }

    /// Calls `visit(weight, counts)` for every unordered `n`-tuple of atoms,
    /// where `weight` is the multinomial probability of the tuple.
    fn for_each_tuple(&self, atoms: &[Atom], n: usize, mut visit: impl FnMut(f64, &[usize]) -> Result<()>) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidArgument("N must be >= 1".into()));
        }
        let count = multiset_count(atoms.len(), n);
        if count > self.tuple_cap {
            return Err(Error::TupleCapExceeded {
                count,
                cap: self.tuple_cap,
            });
        }
        let log_fact: Vec<f64> = (0..=n)
            .scan(0.0, |acc, i| {
                if i > 0 {
                    *acc += (i as f64).ln();
                }
                Some(*acc)
            })
            .collect();
        let mut counts = vec![0usize; atoms.len()];
        // c == 0 skips ln(p) so zero-probability atoms contribute weight 1.
        fn extend(log_w: f64, c: usize, p: f64, log_fact: &[f64]) -> f64 {
            if c == 0 {
                log_w
            } else {
                log_w + c as f64 * p.ln() - log_fact[c]
            }
        }
        fn rec(
            k: usize,
            remaining: usize,
            log_w: f64,
            atoms: &[Atom],
            counts: &mut [usize],
            log_fact: &[f64],
            visit: &mut dyn FnMut(f64, &[usize]) -> Result<()>,
        ) -> Result<()> {
            if k + 1 == atoms.len() {
                counts[k] = remaining;
                visit(extend(log_w, remaining, atoms[k].prob, log_fact).exp(), counts)?;
                counts[k] = 0;
                return Ok(());
            }
            for c in 0..=remaining {
                counts[k] = c;
                let lw = extend(log_w, c, atoms[k].prob, log_fact);
                rec(k + 1, remaining - c, lw, atoms, counts, log_fact, visit)?;
            }
            counts[k] = 0;
            Ok(())
        }
        rec(0, n, log_fact[n], atoms, &mut counts, &log_fact, &mut visit)
    }

    fn updated_theta(theta: &DVector<f64>, atoms: &[Atom], counts: &[usize], n: usize, eta: f64) -> DVector<f64> {
        let mut phi_bar = DVector::zeros(theta.len());
        for (a, &c) in atoms.iter().zip(counts) {
            if c > 0 && a.ret != 0.0 {
                phi_bar.axpy(c as f64 * a.ret, &a.score, 1.0);
            }
        }
        theta + phi_bar * (eta / n as f64)
    }

    /// `(1/N) Σ_i R_i ∇² log p(τ_i)` for the tuple, optionally plus the
    /// `(1/N) Σ_i R_i u_i u_iᵀ` part that turns it into `Ĥ_N`.
    fn tuple_hessian(atoms: &[Atom], counts: &[usize], n: usize, with_outer: bool) -> DMatrix<f64> {
        let d = atoms[0].score.len();
        let mut h = DMatrix::zeros(d, d);
        for (a, &c) in atoms.iter().zip(counts) {
            if c == 0 || a.ret == 0.0 {
                continue;
            }
            let w = c as f64 * a.ret / n as f64;
            h += &a.log_hessian * w;
            if with_outer {
                h += &a.score * a.score.transpose() * w;
            }
        }
        h
    }

    /// `F_N(θ, g) = E[V_g(θ + η (1/N) Σ R(τ_i) u_i)]`.
    pub fn exact_f_n(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize, n: usize, eta: f64) -> Result<f64> {
        let atoms = self.atoms(mdp, theta, g)?;
        let mut total = 0.0;
        self.for_each_tuple(&atoms, n, |w, counts| {
            let th = Self::updated_theta(theta, &atoms, counts, n, eta);
            total += w * self.exact_value(mdp, &th, g)?;
            Ok(())
        })?;
        Ok(total)
    }

    /// Both terms of `J_N(θ, g) = ∇_θ F_N(θ, g)` by tuple enumeration.
    pub fn exact_j_n_terms(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize, n: usize, eta: f64) -> Result<JnTerms> {
        let atoms = self.atoms(mdp, theta, g)?;
        let d = theta.len();
        let mut score_term = DVector::zeros(d);
        let mut explicit_term = DVector::zeros(d);
        self.for_each_tuple(&atoms, n, |w, counts| {
            let th = Self::updated_theta(theta, &atoms, counts, n, eta);
            let vd = self.value_derivatives(mdp, &th, g)?;
            let mut sum_u = DVector::zeros(d);
            for (a, &c) in atoms.iter().zip(counts) {
                if c > 0 {
                    sum_u.axpy(c as f64, &a.score, 1.0);
                }
            }
            score_term.axpy(w * vd.value, &sum_u, 1.0);
            let h = Self::tuple_hessian(&atoms, counts, n, false);
            let explicit = &vd.grad + (h * &vd.grad) * eta;
            explicit_term.axpy(w, &explicit, 1.0);
            Ok(())
        })?;
        Ok(JnTerms {
            score_term,
            explicit_term,
        })
    }

    pub fn exact_j_n(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize, n: usize, eta: f64) -> Result<DVector<f64>> {
        Ok(self.exact_j_n_terms(mdp, theta, g, n, eta)?.total())
    }

    /// `E[(I + η Ĥ_N(θ)) ∇V_g(θ'_N)]`, the exact mean of the LSF meta-gradient
    /// estimate (outer gradient estimates only need to be conditionally
    /// unbiased).
    pub fn exact_lsf_mean(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize, n: usize, eta: f64) -> Result<DVector<f64>> {
        let atoms = self.atoms(mdp, theta, g)?;
        let mut out = DVector::zeros(theta.len());
        self.for_each_tuple(&atoms, n, |w, counts| {
            let th = Self::updated_theta(theta, &atoms, counts, n, eta);
            let grad = self.exact_pg(mdp, &th, g)?;
            let h = Self::tuple_hessian(&atoms, counts, n, true);
            out.axpy(w, &(&grad + (h * &grad) * eta), 1.0);
            Ok(())
        })?;
        Ok(out)
    }

    /// `F_∞(θ, g) = V_g(θ + η ∇V_g(θ))`.
    pub fn exact_f_infty(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize, eta: f64) -> Result<f64> {
        let pg = self.exact_pg(mdp, theta, g)?;
        self.exact_value(mdp, &(theta + pg * eta), g)
    }

    /// `J_∞(θ, g) = (I + η ∇²V_g(θ)) ∇V_g(θ')` with `θ' = θ + η ∇V_g(θ)`.
    pub fn exact_j_infty(&self, mdp: &TabularMdp, theta: &DVector<f64>, g: usize, eta: f64) -> Result<DVector<f64>> {
        let pg = self.exact_pg(mdp, theta, g)?;
        let adapted = theta + &pg * eta;
        let pg_adapted = self.exact_pg(mdp, &adapted, g)?;
        let hess = self.exact_hessian(mdp, theta, g)?;
        Ok(&pg_adapted + (hess * &pg_adapted) * eta)
    }

    /// `J_N(θ) = Σ_g p(g) J_N(θ, g)`.
    pub fn exact_j_n_task_average(&self, mdp: &TabularMdp, theta: &DVector<f64>, n: usize, eta: f64) -> Result<DVector<f64>> {
        task_average(mdp, |g| self.exact_j_n(mdp, theta, g, n, eta))
    }

    pub fn exact_f_n_task_average(&self, mdp: &TabularMdp, theta: &DVector<f64>, n: usize, eta: f64) -> Result<f64> {
        let mut total = 0.0;
        for (g, t) in mdp.tasks().iter().enumerate() {
            if t.weight > 0.0 {
                total += t.weight * self.exact_f_n(mdp, theta, g, n, eta)?;
            }
        }
        Ok(total)
    }
}

fn task_average(mdp: &TabularMdp, mut per_task: impl FnMut(usize) -> Result<DVector<f64>>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(mdp.param_dim());
    for (g, t) in mdp.tasks().iter().enumerate() {
        if t.weight > 0.0 {
            out.axpy(t.weight, &per_task(g)?, 1.0);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn walk_from(
    mdp: &TabularMdp,
    shape: &PolicyShape,
    theta: &DVector<f64>,
    g: usize,
    s: usize,
    prob: f64,
    path: &mut Vec<Step>,
    visit: &mut impl FnMut(&[Step], f64),
) {
    let pi = shape.probs_unchecked(theta, s, g);
    let last = path.len() + 1 == mdp.horizon();
    for (a, pa) in pi.iter().enumerate() {
        let p_sa = prob * pa;
        if p_sa < PRUNE_BELOW {
            continue;
        }
        path.push(Step {
            state: s,
            action: a,
            reward: mdp.reward(s, a, g),
        });
        if last {
            visit(path, p_sa);
        } else {
            for (next, pn) in mdp.transition_row(s, a).iter().enumerate() {
                let p_next = p_sa * pn;
                if p_next >= PRUNE_BELOW {
                    walk_from(mdp, shape, theta, g, next, p_next, path, visit);
                }
            }
        }
        path.pop();
    }
}

fn path_return(path: &[Step], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut total = 0.0;
    for step in path {
        total += discount * step.reward;
        discount *= gamma;
    }
    total
}

fn add_path_score(shape: &PolicyShape, theta: &DVector<f64>, g: usize, path: &[Step], weight: f64, out: &mut DVector<f64>) {
    for step in path {
        shape.add_step_score(theta, g, step.state, step.action, weight, out);
    }
}

pub fn enumerate_trajectories(mdp: &TabularMdp, theta: &DVector<f64>, g: usize) -> Result<EnumeratedEnsemble> {
    Oracle::default().enumerate_trajectories(mdp, theta, g)
}

pub fn exact_value(mdp: &TabularMdp, theta: &DVector<f64>, g: usize) -> Result<f64> {
    Oracle::default().exact_value(mdp, theta, g)
}

pub fn exact_pg(mdp: &TabularMdp, theta: &DVector<f64>, g: usize) -> Result<DVector<f64>> {
    Oracle::default().exact_pg(mdp, theta, g)
}

pub fn exact_hessian(mdp: &TabularMdp, theta: &DVector<f64>, g: usize) -> Result<DMatrix<f64>> {
    Oracle::default().exact_hessian(mdp, theta, g)
}

pub fn exact_f_n(mdp: &TabularMdp, theta: &DVector<f64>, g: usize, n: usize, eta: f64) -> Result<f64> {
    Oracle::default().exact_f_n(mdp, theta, g, n, eta)
}

pub fn exact_j_n(mdp: &TabularMdp, theta: &DVector<f64>, g: usize, n: usize, eta: f64) -> Result<DVector<f64>> {
    Oracle::default().exact_j_n(mdp, theta, g, n, eta)
}

pub fn exact_j_infty(mdp: &TabularMdp, theta: &DVector<f64>, g: usize, eta: f64) -> Result<DVector<f64>> {
    Oracle::default().exact_j_infty(mdp, theta, g, eta)
}

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, theta: &DVector<f64>, h: f64) -> DVector<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut probe = theta.clone();
    DVector::from_fn(theta.len(), |d, _| {
        let orig = probe[d];
        probe[d] = orig + h;
        let up = f(&probe);
        probe[d] = orig - h;
        let down = f(&probe);
        probe[d] = orig;
        (up - down) / (2.0 * h)
    })
}

/// Fallible variant of [`fd_gradient`].
pub fn try_fd_gradient(f: impl Fn(&DVector<f64>) -> Result<f64>, theta: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let mut probe = theta.clone();
    let mut out = DVector::zeros(theta.len());
    for d in 0..theta.len() {
        let orig = probe[d];
        probe[d] = orig + h;
        let up = f(&probe)?;
        probe[d] = orig - h;
        let down = f(&probe)?;
        probe[d] = orig;
        out[d] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero(mdp: &TabularMdp) -> DVector<f64> {
        DVector::zeros(mdp.param_dim())
    }

    #[test]
    fn chain2_uniform_enumeration() {
        let mdp = TabularMdp::chain2();
        let ens = enumerate_trajectories(&mdp, &zero(&mdp), 0).unwrap();
        assert_eq!(ens.len(), 4);
        for (_, p) in &ens.entries {
            assert_eq!(*p, 0.25);
        }
        let mut returns: Vec<f64> = ens.entries.iter().map(|(t, _)| t.discounted_return(1.0)).collect();
        returns.sort_by(f64::total_cmp);
        assert_eq!(returns, vec![0.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn degenerate_policy_prunes_to_one_trajectory() {
        let mdp = TabularMdp::chain2();
        let shape = mdp.policy_shape();
        let mut th = zero(&mdp);
        th[shape.index(0, 0, 0)] = 1000.0;
        let ens = enumerate_trajectories(&mdp, &th, 0).unwrap();
        assert_eq!(ens.len(), 1);
        assert!((ens.entries[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn horizon_one_three_actions() {
        let mut doc = TabularMdp::wide4().to_document();
        doc.horizon = 1;
        doc.actions = 3;
        for row in doc.transition.iter_mut() {
            row.truncate(3);
        }
        for row in doc.reward.iter_mut() {
            row.truncate(3);
        }
        let mdp = TabularMdp::from_document(doc).unwrap();
        let ens = enumerate_trajectories(&mdp, &zero(&mdp), 0).unwrap();
        assert_eq!(ens.len(), 3);
        assert!((ens.total_probability() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_cap_names_the_count() {
        let mdp = TabularMdp::wide4();
        let err = Oracle::with_caps(63, 10)
            .enumerate_trajectories(&mdp, &zero(&mdp), 0)
            .unwrap_err();
        match err {
            Error::EnumerationTooLarge { count, cap } => {
                assert_eq!(count, 64);
                assert_eq!(cap, 63);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tuple_cap_is_enforced() {
        let mdp = TabularMdp::wide4();
        let err = exact_f_n(&mdp, &zero(&mdp), 0, 8, 0.1).unwrap_err();
        assert!(matches!(
            err,
            Error::TupleCapExceeded {
                cap: DEFAULT_TUPLE_CAP,
                ..
            }
        ));
        assert!(err.is_enumeration_cap());
    }

    #[test]
    fn multiset_counts() {
        assert_eq!(multiset_count(4, 2), 10);
        assert_eq!(multiset_count(4, 6), 84);
        assert_eq!(multiset_count(4, 16), 969);
        assert_eq!(multiset_count(1, 5), 1);
    }

    #[test]
    fn chain2_value_and_gradient() {
        let mdp = TabularMdp::chain2();
        let shape = mdp.policy_shape();
        let th = zero(&mdp);
        assert!((exact_value(&mdp, &th, 0).unwrap() - 1.0).abs() < 1e-15);
        let pg = exact_pg(&mdp, &th, 0).unwrap();
        assert!((pg[shape.index(0, 0, 0)] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn f_n_reductions() {
        let mdp = TabularMdp::chain2();
        let th = DVector::from_fn(8, |i, _| 0.1 * i as f64 - 0.3);
        let v = exact_value(&mdp, &th, 1).unwrap();
        for n in 1..4 {
            assert!((exact_f_n(&mdp, &th, 1, n, 0.0).unwrap() - v).abs() < 1e-12);
        }

        // N = 1 on chain2 at uniform θ: four equally likely single-trajectory updates.
        let z = zero(&mdp);
        let shape = mdp.policy_shape();
        let ens = enumerate_trajectories(&mdp, &z, 0).unwrap();
        let direct: f64 = ens
            .entries
            .iter()
            .map(|(tau, p)| {
                let u = shape.score(&z, tau).unwrap();
                let adapted = &z + u * (0.1 * tau.discounted_return(1.0));
                p * exact_value(&mdp, &adapted, 0).unwrap()
            })
            .sum();
        assert!((exact_f_n(&mdp, &z, 0, 1, 0.1).unwrap() - direct).abs() < 1e-14);

        let flat = TabularMdp::constant_value();
        let c = exact_value(&flat, &zero(&flat), 0).unwrap();
        assert!((c - 1.9).abs() < 1e-12);
        for (n, eta) in [(1, 0.5), (3, 2.0)] {
            assert!((exact_f_n(&flat, &DVector::from_element(4, 0.3), 0, n, eta).unwrap() - c).abs() < 1e-12);
        }
    }

    #[test]
    fn j_infty_reductions() {
        let mdp = TabularMdp::chain2();
        let th = DVector::from_fn(8, |i, _| 0.05 * i as f64);
        let a = exact_j_infty(&mdp, &th, 0, 0.0).unwrap();
        let b = exact_pg(&mdp, &th, 0).unwrap();
        assert!((a - b).amax() < 1e-15);

        let flat = TabularMdp::constant_value();
        let j = exact_j_infty(&flat, &DVector::from_element(4, 0.2), 0, 0.7).unwrap();
        assert!(j.amax() < 1e-12);
    }

    #[test]
    fn hessian_is_symmetric() {
        let mdp = TabularMdp::chain2();
        let th = DVector::from_fn(8, |i, _| (i as f64).cos());
        let h = exact_hessian(&mdp, &th, 1).unwrap();
        assert!((&h - h.transpose()).amax() <= 1e-12);
    }

    #[test]
    fn fd_gradient_examples() {
        let c = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let th = DVector::from_vec(vec![0.3, 0.7, -1.1]);
        let g = fd_gradient(|x| c.dot(x), &th, 1e-5);
        assert!((g - &c).amax() < 1e-9);
        let g = fd_gradient(|x| c.dot(x), &th, 1.0);
        assert!((g - &c).amax() < 1e-12);
        let g = fd_gradient(|x| x.norm_squared() / 2.0, &th, 1e-5);
        assert!((g - &th).amax() < 1e-8);
    }
}

//! Finite-horizon tabular MDPs with a task variable and a per-task softmax
//! policy `π_θ(a|s,g) ∝ exp θ(s,a,g)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;
const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskLabel,
    pub weight: f64,
}

/// Task identifiers may be written as strings or integers in fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskLabel {
    Index(u64),
    Name(String),
}

/// On-disk MDP layout: `transition[s][a][s']`, `reward[s][a][g]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub states: usize,
    pub actions: usize,
    pub tasks: Vec<Task>,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub horizon: usize,
    pub gamma: f64,
    pub initial_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    tasks: Vec<Task>,
    /// Flattened `[s][a][s']`.
    transition: Vec<f64>,
    /// Flattened `[s][a][g]`.
    reward: Vec<f64>,
    horizon: usize,
    gamma: f64,
    initial_state: usize,
}

/// Index layout of the logit table `θ(s, a, g)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyShape {
    pub states: usize,
    pub actions: usize,
    pub tasks: usize,
}

impl PolicyShape {
    pub fn param_dim(&self) -> usize {
        self.states * self.actions * self.tasks
    }

    /// Flat index of `θ(s, a, g)`; actions of one `(s, g)` block are contiguous.
    pub fn index(&self, s: usize, a: usize, g: usize) -> usize {
        (g * self.states + s) * self.actions + a
    }

    fn block(&self, s: usize, g: usize) -> usize {
        self.index(s, 0, g)
    }

    fn check(&self, s: usize, g: usize) -> Result<()> {
        if s >= self.states {
            return Err(Error::IndexOutOfRange {
                what: "state",
                index: s,
                size: self.states,
            });
        }
        if g >= self.tasks {
            return Err(Error::IndexOutOfRange {
                what: "task",
                index: g,
                size: self.tasks,
            });
        }
        Ok(())
    }

    fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    /// Softmax over the `(s, g)` logit block with max subtraction.
    pub fn policy_probs(&self, theta: &DVector<f64>, s: usize, g: usize) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check(s, g)?;
        Ok(self.probs_unchecked(theta, s, g))
    }

    pub(crate) fn probs_unchecked(&self, theta: &DVector<f64>, s: usize, g: usize) -> Vec<f64> {
        let base = self.block(s, g);
        let logits = &theta.as_slice()[base..base + self.actions];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        p
    }

    fn check_trajectory(&self, theta: &DVector<f64>, tau: &Trajectory) -> Result<()> {
        self.check_theta(theta)?;
        if tau.task >= self.tasks {
            return Err(Error::IndexOutOfRange {
                what: "task",
                index: tau.task,
                size: self.tasks,
            });
        }
        for step in &tau.steps {
            self.check(step.state, tau.task)?;
            if step.action >= self.actions {
                return Err(Error::IndexOutOfRange {
                    what: "action",
                    index: step.action,
                    size: self.actions,
                });
            }
        }
        Ok(())
    }

    /// `∇_θ log p_{θ,g}(τ)`: per-step softmax scores summed over the trajectory.
    pub fn score(&self, theta: &DVector<f64>, tau: &Trajectory) -> Result<DVector<f64>> {
        self.check_trajectory(theta, tau)?;
        Ok(self.score_unchecked(theta, tau))
    }

    pub(crate) fn score_unchecked(&self, theta: &DVector<f64>, tau: &Trajectory) -> DVector<f64> {
        let mut u = DVector::zeros(self.param_dim());
        for step in &tau.steps {
            self.add_step_score(theta, tau.task, step.state, step.action, 1.0, &mut u);
        }
        u
    }

    /// `out += weight · ∇_θ log π_θ(a|s,g)`.
    pub(crate) fn add_step_score(&self, theta: &DVector<f64>, g: usize, s: usize, a: usize, weight: f64, out: &mut DVector<f64>) {
        let p = self.probs_unchecked(theta, s, g);
        let base = self.block(s, g);
        for (b, pb) in p.iter().enumerate() {
            let ind = if b == a { 1.0 } else { 0.0 };
            out[base + b] += weight * (ind - pb);
        }
    }

    /// `∇²_θ log p_{θ,g}(τ)`: for each step, block `(s_t, g)` receives
    /// `π πᵀ − diag(π)`.
    pub fn score_hessian(&self, theta: &DVector<f64>, tau: &Trajectory) -> Result<DMatrix<f64>> {
        self.check_trajectory(theta, tau)?;
        let mut h = DMatrix::zeros(self.param_dim(), self.param_dim());
        self.add_score_hessian(theta, tau, 1.0, &mut h);
        Ok(h)
    }

    /// `out += weight · ∇²_θ log p_{θ,g}(τ)`.
    pub(crate) fn add_score_hessian(&self, theta: &DVector<f64>, tau: &Trajectory, weight: f64, out: &mut DMatrix<f64>) {
        for step in &tau.steps {
            let p = self.probs_unchecked(theta, step.state, tau.task);
            let base = self.block(step.state, tau.task);
            for (i, pi) in p.iter().enumerate() {
                for (j, pj) in p.iter().enumerate() {
                    let diag = if i == j { *pi } else { 0.0 };
                    out[(base + i, base + j)] += weight * (pi * pj - diag);
                }
            }
        }
    }
}

/// Logit table `θ(s, a, g)` together with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicyParams {
    pub shape: PolicyShape,
    pub logits: DVector<f64>,
}

impl SoftmaxPolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        SoftmaxPolicyParams {
            shape,
            logits: DVector::zeros(shape.param_dim()),
        }
    }

    pub fn from_vector(shape: PolicyShape, logits: DVector<f64>) -> Result<Self> {
        shape.check_theta(&logits)?;
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("policy logits must be finite".into()));
        }
        Ok(SoftmaxPolicyParams { shape, logits })
    }

    pub fn get(&self, s: usize, a: usize, g: usize) -> f64 {
        self.logits[self.shape.index(s, a, g)]
    }

    pub fn set(&mut self, s: usize, a: usize, g: usize, value: f64) {
        let i = self.shape.index(s, a, g);
        self.logits[i] = value;
    }

    pub fn probs(&self, s: usize, g: usize) -> Result<Vec<f64>> {
        self.shape.policy_probs(&self.logits, s, g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub task: usize,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `R(τ, g) = Σ_t γ^t r_t`.
    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut discount = 1.0;
        let mut total = 0.0;
        for step in &self.steps {
            total += discount * step.reward;
            discount *= gamma;
        }
        total
    }

    /// Reward-to-go `Q̂_t = Σ_{t' ≥ t} γ^{t'−t} r_{t'}` for every step.
    pub fn rewards_to_go(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.steps.len()];
        let mut acc = 0.0;
        for (t, step) in self.steps.iter().enumerate().rev() {
            acc = step.reward + gamma * acc;
            out[t] = acc;
        }
        out
    }
}

pub fn trajectory_return(tau: &Trajectory, gamma: f64) -> f64 {
    tau.discounted_return(gamma)
}

/// Inverse-CDF draw from a finite distribution.
pub(crate) fn categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

impl TabularMdp {
    pub fn from_document(doc: MdpDocument) -> Result<Self> {
        let MdpDocument {
            states,
            actions,
            tasks,
            transition,
            reward,
            horizon,
            gamma,
            initial_state,
        } = doc;
        if states == 0 || actions == 0 || tasks.is_empty() {
            return Err(Error::InvalidMdp("states, actions and tasks must be non-empty".into()));
        }
        let n_tasks = tasks.len();
        let flat_t = flatten3(&transition, states, actions, states, "transition")?;
        let flat_r = flatten3(&reward, states, actions, n_tasks, "reward")?;
        let mdp = TabularMdp {
            n_states: states,
            n_actions: actions,
            tasks,
            transition: flat_t,
            reward: flat_r,
            horizon,
            gamma,
            initial_state,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(s)?;
        Self::from_document(doc)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_document(&self) -> MdpDocument {
        let (s_n, a_n, g_n) = (self.n_states, self.n_actions, self.tasks.len());
        MdpDocument {
            states: s_n,
            actions: a_n,
            tasks: self.tasks.clone(),
            transition: (0..s_n)
                .map(|s| (0..a_n).map(|a| self.transition_row(s, a).to_vec()).collect())
                .collect(),
            reward: (0..s_n)
                .map(|s| (0..a_n).map(|a| (0..g_n).map(|g| self.reward(s, a, g)).collect()).collect())
                .collect(),
            horizon: self.horizon,
            gamma: self.gamma,
            initial_state: self.initial_state,
        }
    }

    /// Two states, two actions, two tasks, horizon 2. Action `a_k` moves to
    /// `s_k`; task `g_k` pays 1 for action `a_k` in any state.
    pub fn chain2() -> Self {
        Self::from_json_str(include_str!("../fixtures/chain2.json")).expect("chain2 fixture is valid")
    }

    /// Single task whose every step pays 1, so `V_g(θ)` is constant.
    pub fn constant_value() -> Self {
        Self::from_json_str(include_str!("../fixtures/constant.json")).expect("constant fixture is valid")
    }

    /// Four actions over horizon 3 (64 trajectories); too wide for tuple
    /// enumeration at moderate `N`.
    pub fn wide4() -> Self {
        Self::from_json_str(include_str!("../fixtures/wide4.json")).expect("wide4 fixture is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidMdp("horizon must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidMdp(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.initial_state >= self.n_states {
            return Err(Error::InvalidMdp(format!(
                "initial_state {} out of range for {} states",
                self.initial_state, self.n_states
            )));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.transition_row(s, a);
                if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(Error::InvalidMdp(format!("transition row ({s}, {a}) has invalid entries")));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::InvalidMdp(format!("transition row ({s}, {a}) sums to {sum}")));
                }
            }
        }
        if self.reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("rewards must be finite".into()));
        }
        if self.tasks.iter().any(|t| !(t.weight.is_finite() && t.weight >= 0.0)) {
            return Err(Error::InvalidMdp("task weights must be non-negative".into()));
        }
        let wsum: f64 = self.tasks.iter().map(|t| t.weight).sum();
        if (wsum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMdp(format!("task weights sum to {wsum}")));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn policy_shape(&self) -> PolicyShape {
        PolicyShape {
            states: self.n_states,
            actions: self.n_actions,
            tasks: self.tasks.len(),
        }
    }

    pub fn param_dim(&self) -> usize {
        self.policy_shape().param_dim()
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize, g: usize) -> f64 {
        self.reward[(s * self.n_actions + a) * self.tasks.len() + g]
    }

    /// Reward bound `R = max |r(s, a, g)|`.
    pub fn reward_bound(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// Largest number of successor states with positive probability.
    pub fn max_branching(&self) -> usize {
        (0..self.n_states)
            .flat_map(|s| (0..self.n_actions).map(move |a| (s, a)))
            .map(|(s, a)| self.transition_row(s, a).iter().filter(|p| **p > 0.0).count())
            .max()
            .unwrap_or(1)
    }

    pub fn task_weights(&self) -> Vec<f64> {
        self.tasks.iter().map(|t| t.weight).collect()
    }

    pub fn sample_task(&self, rng: &mut dyn RngCore) -> usize {
        let w = self.task_weights();
        categorical(&w, rng.random::<f64>())
    }

    /// Rolls out `H` steps from the initial state under `π_θ(·|·, g)`.
    pub fn sample_trajectory(&self, theta: &DVector<f64>, g: usize, rng: &mut dyn RngCore) -> Trajectory {
        let shape = self.policy_shape();
        let mut steps = Vec::with_capacity(self.horizon);
        let mut s = self.initial_state;
        for t in 0..self.horizon {
            let p = shape.probs_unchecked(theta, s, g);
            let a = categorical(&p, rng.random::<f64>());
            steps.push(Step {
                state: s,
                action: a,
                reward: self.reward(s, a, g),
            });
            if t + 1 < self.horizon {
                s = categorical(self.transition_row(s, a), rng.random::<f64>());
            }
        }
        Trajectory { task: g, steps }
    }

    /// `log p_{θ,g}(τ)` including transition terms; `-inf` for impossible
    /// trajectories.
    pub fn log_prob(&self, theta: &DVector<f64>, tau: &Trajectory) -> f64 {
        let shape = self.policy_shape();
        let mut lp = 0.0;
        for (t, step) in tau.steps.iter().enumerate() {
            let p = shape.probs_unchecked(theta, step.state, tau.task);
            lp += p[step.action].ln();
            if let Some(next) = tau.steps.get(t + 1) {
                lp += self.transition_row(step.state, step.action)[next.state].ln();
            }
        }
        lp
    }
}

fn flatten3(v: &[Vec<Vec<f64>>], d0: usize, d1: usize, d2: usize, what: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidMdp(format!("{what} tensor must have shape {d0}×{d1}×{d2}"));
    if v.len() != d0 {
        return Err(bad());
    }
    let mut out = Vec::with_capacity(d0 * d1 * d2);
    for row in v {
        if row.len() != d1 {
            return Err(bad());
        }
        for inner in row {
            if inner.len() != d2 {
                return Err(bad());
            }
            out.extend_from_slice(inner);
        }
    }
    Ok(out)
}

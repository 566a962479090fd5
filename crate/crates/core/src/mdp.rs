//! Finite discounted MDPs and exact tabular policy evaluation.
//!
//! Values, advantages and visitation distributions are computed by dense LU
//! solves, so they serve as ground truth for both the tabular and the neural
//! algorithms.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-12;

/// Finite MDP with transition tensor `P[s][a][s']` and rewards `R[s][a]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    mu: Vec<f64>,
    /// Row-major `[s][a]`.
    reward: Vec<f64>,
    /// Row-major `[s][a][s']`.
    transition: Vec<f64>,
    r_max: f64,
}

/// On-disk layout of an MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub mu: Vec<f64>,
    pub reward: Vec<Vec<f64>>,
    pub transition: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
}

impl Mdp {
    /// Builds and validates an MDP. `r_max` defaults to `max(1, max R)`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        mu: Vec<f64>,
        reward: Vec<f64>,
        transition: Vec<f64>,
        r_max: Option<f64>,
    ) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::invalid("n_states", "must be positive"));
        }
        if n_actions == 0 {
            return Err(Error::invalid("n_actions", "must be positive"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::invalid("gamma", format!("{gamma} not in (0, 1)")));
        }
        if mu.len() != n_states {
            return Err(Error::invalid(
                "mu",
                format!("length {} != n_states {}", mu.len(), n_states),
            ));
        }
        check_distribution("mu", None, &mu)?;
        if reward.len() != n_states * n_actions {
            return Err(Error::invalid("reward", "shape does not match n_states x n_actions"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::invalid(
                "transition",
                "shape does not match n_states x n_actions x n_states",
            ));
        }
        let observed_max = reward.iter().cloned().fold(0.0_f64, f64::max);
        let r_max = r_max.unwrap_or(observed_max.max(1.0));
        for s in 0..n_states {
            for a in 0..n_actions {
                let r = reward[s * n_actions + a];
                if !(r.is_finite() && (0.0..=r_max).contains(&r)) {
                    return Err(Error::invalid_at(
                        "reward",
                        format!("{s}][{a}"),
                        format!("{r} outside [0, r_max = {r_max}]"),
                    ));
                }
                let off = (s * n_actions + a) * n_states;
                check_distribution(
                    "transition",
                    Some(format!("{s}][{a}")),
                    &transition[off..off + n_states],
                )?;
            }
        }
        Ok(Mdp {
            n_states,
            n_actions,
            gamma,
            mu,
            reward,
            transition,
            r_max,
        })
    }

    pub fn from_file(file: MdpFile) -> Result<Self> {
        if file.reward.len() != file.n_states {
            return Err(Error::invalid(
                "reward",
                format!("{} rows, expected n_states = {}", file.reward.len(), file.n_states),
            ));
        }
        if file.transition.len() != file.n_states {
            return Err(Error::invalid(
                "transition",
                format!(
                    "{} rows, expected n_states = {}",
                    file.transition.len(),
                    file.n_states
                ),
            ));
        }
        let mut reward = Vec::with_capacity(file.n_states * file.n_actions);
        for (s, row) in file.reward.iter().enumerate() {
            if row.len() != file.n_actions {
                return Err(Error::invalid_at(
                    "reward",
                    s.to_string(),
                    format!("{} entries, expected n_actions = {}", row.len(), file.n_actions),
                ));
            }
            reward.extend_from_slice(row);
        }
        let mut transition = Vec::with_capacity(file.n_states * file.n_actions * file.n_states);
        for (s, per_action) in file.transition.iter().enumerate() {
            if per_action.len() != file.n_actions {
                return Err(Error::invalid_at(
                    "transition",
                    s.to_string(),
                    format!(
                        "{} entries, expected n_actions = {}",
                        per_action.len(),
                        file.n_actions
                    ),
                ));
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != file.n_states {
                    return Err(Error::invalid_at(
                        "transition",
                        format!("{s}][{a}"),
                        format!("{} entries, expected n_states = {}", row.len(), file.n_states),
                    ));
                }
                transition.extend_from_slice(row);
            }
        }
        Mdp::new(
            file.n_states,
            file.n_actions,
            file.gamma,
            file.mu,
            reward,
            transition,
            file.r_max,
        )
    }

    pub fn to_file(&self) -> MdpFile {
        let (ns, na) = (self.n_states, self.n_actions);
        MdpFile {
            n_states: ns,
            n_actions: na,
            gamma: self.gamma,
            mu: self.mu.clone(),
            reward: (0..ns)
                .map(|s| self.reward[s * na..(s + 1) * na].to_vec())
                .collect(),
            transition: (0..ns)
                .map(|s| (0..na).map(|a| self.next_state_dist(s, a).to_vec()).collect())
                .collect(),
            r_max: Some(self.r_max),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Mdp::from_file(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("MDP serializes")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// `P(. | s, a)`.
    pub fn next_state_dist(&self, s: usize, a: usize) -> &[f64] {
        let off = (s * self.n_actions + a) * self.n_states;
        &self.transition[off..off + self.n_states]
    }

    /// Upper bound on `|V|`.
    pub fn value_bound(&self) -> f64 {
        self.r_max / (1.0 - self.gamma)
    }
}

fn check_distribution(key: &str, index: Option<String>, p: &[f64]) -> Result<()> {
    let err = |msg: String| match &index {
        Some(i) => Error::invalid_at(key, i.clone(), msg),
        None => Error::invalid(key, msg),
    };
    if let Some(x) = p.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(err(format!("entry {x} is not a nonnegative probability")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(err(format!("sums to {sum}, not 1")));
    }
    Ok(())
}

/// Row-stochastic policy `pi[s][a]`.
///
/// Stored as log-probabilities: EMDA drives probabilities of bad actions far
/// below the smallest positive `f64`, while their logarithms stay finite.
/// Strict positivity therefore means "every log-probability is finite".
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    log_probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            n_states,
            n_actions,
            log_probs: vec![-(n_actions as f64).ln(); n_states * n_actions],
        }
    }

    /// From a flat `[s][a]` probability table; rows must sum to one.
    pub fn from_probs(n_states: usize, n_actions: usize, probs: &[f64]) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::invalid("policy", "shape does not match n_states x n_actions"));
        }
        for s in 0..n_states {
            check_distribution(
                "policy",
                Some(s.to_string()),
                &probs[s * n_actions..(s + 1) * n_actions],
            )?;
        }
        Ok(TabularPolicy {
            n_states,
            n_actions,
            log_probs: probs.iter().map(|p| p.ln()).collect(),
        })
    }

    /// Softmax of arbitrary per-state logits (energies).
    pub fn from_logits(n_states: usize, n_actions: usize, logits: &[f64]) -> Self {
        assert_eq!(logits.len(), n_states * n_actions);
        let mut log_probs = logits.to_vec();
        for row in log_probs.chunks_mut(n_actions) {
            normalize_log_row(row);
        }
        TabularPolicy {
            n_states,
            n_actions,
            log_probs,
        }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let n_states = actions.len();
        let mut log_probs = vec![f64::NEG_INFINITY; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            log_probs[s * n_actions + a] = 0.0;
        }
        TabularPolicy {
            n_states,
            n_actions,
            log_probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.log_probs[s * self.n_actions + a].exp()
    }

    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        self.log_probs[s * self.n_actions + a]
    }

    pub fn log_row(&self, s: usize) -> &[f64] {
        &self.log_probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn row(&self, s: usize) -> Vec<f64> {
        self.log_row(s).iter().map(|l| l.exp()).collect()
    }

    /// Flat `[s][a]` probability table.
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Replaces row `s` by the given (already normalized) log-probabilities.
    pub fn set_log_row(&mut self, s: usize, row: &[f64]) {
        self.log_probs[s * self.n_actions..(s + 1) * self.n_actions].copy_from_slice(row);
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.log_probs.iter().all(|l| l.is_finite())
    }

    pub fn require_strictly_positive(&self) -> Result<()> {
        match self.log_probs.iter().position(|l| !l.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Domain(format!(
                "policy entry ({}, {}) is not strictly positive",
                i / self.n_actions,
                i % self.n_actions
            ))),
        }
    }

    /// `(1 - delta) pi + delta * uniform`.
    pub fn mix_uniform(&self, delta: f64) -> Self {
        let u = 1.0 / self.n_actions as f64;
        let probs: Vec<f64> = self
            .probs()
            .iter()
            .map(|p| (1.0 - delta) * p + delta * u)
            .collect();
        TabularPolicy {
            n_states: self.n_states,
            n_actions: self.n_actions,
            log_probs: probs.iter().map(|p| p.ln()).collect(),
        }
    }

    /// Greedy action per state, lowest index on ties.
    pub fn argmax_actions(&self) -> Vec<usize> {
        (0..self.n_states)
            .map(|s| argmax_first(self.log_row(s)))
            .collect()
    }

    /// Shannon entropy of `pi(.|s)` in nats.
    pub fn entropy(&self, s: usize) -> f64 {
        self.log_row(s)
            .iter()
            .filter(|l| l.is_finite())
            .map(|&l| -l.exp() * l)
            .sum()
    }

    /// Mean entropy over states.
    pub fn mean_entropy(&self) -> f64 {
        (0..self.n_states).map(|s| self.entropy(s)).sum::<f64>() / self.n_states as f64
    }

    /// Maximum deviation of a row sum from one.
    pub fn max_row_error(&self) -> f64 {
        (0..self.n_states)
            .map(|s| (self.row(s).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// In-place `row -= logsumexp(row)`.
pub(crate) fn normalize_log_row(row: &mut [f64]) {
    // Shift by the max first: `m + ln(sum)` would round to the ulp of a large
    // `m` and push every entry off by the same amount.
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return;
    }
    let log_sum = row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    for x in row.iter_mut() {
        *x = (*x - m) - log_sum;
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `V^pi`, `Q^pi` and `A^pi = Q^pi - V^pi`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueTables {
    pub n_actions: usize,
    pub v: Vec<f64>,
    /// Row-major `[s][a]`.
    pub q: Vec<f64>,
    /// Row-major `[s][a]`.
    pub adv: Vec<f64>,
}

impl ValueTables {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn adv(&self, s: usize, a: usize) -> f64 {
        self.adv[s * self.n_actions + a]
    }
}

/// Discounted state visitation `nu`, `sigma = nu * pi` and the uniform-action
/// variant `sigma_uniform = nu / |A|`.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitationDist {
    pub n_actions: usize,
    pub nu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_uniform: Vec<f64>,
}

fn policy_matrix(mdp: &Mdp, pi: &TabularPolicy) -> (DMatrix<f64>, DVector<f64>) {
    let ns = mdp.n_states;
    let mut p = DMatrix::zeros(ns, ns);
    let mut r = DVector::zeros(ns);
    for s in 0..ns {
        for a in 0..mdp.n_actions {
            let w = pi.prob(s, a);
            if w == 0.0 {
                continue;
            }
            r[s] += w * mdp.reward(s, a);
            for (s2, &pr) in mdp.next_state_dist(s, a).iter().enumerate() {
                p[(s, s2)] += w * pr;
            }
        }
    }
    (p, r)
}

fn check_shapes(mdp: &Mdp, pi: &TabularPolicy) -> Result<()> {
    if pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions {
        return Err(Error::invalid("policy", "shape does not match the MDP"));
    }
    Ok(())
}

/// Solves `V = (I - gamma P_pi)^{-1} r_pi`, then `Q = R + gamma P V`,
/// `A = Q - V`. Fails if the Bellman residual exceeds `1e-10` (scaled by the
/// value bound when that exceeds one).
pub fn evaluate_policy_exact(mdp: &Mdp, pi: &TabularPolicy) -> Result<ValueTables> {
    check_shapes(mdp, pi)?;
    let ns = mdp.n_states;
    let na = mdp.n_actions;
    let (p, r) = policy_matrix(mdp, pi);
    let system = DMatrix::identity(ns, ns) - p.scale(mdp.gamma);
    let v = system
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Solve("singular (I - gamma P_pi)".into()))?;
    let v: Vec<f64> = v.iter().cloned().collect();

    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let ev: f64 = mdp
                .next_state_dist(s, a)
                .iter()
                .zip(&v)
                .map(|(pr, vv)| pr * vv)
                .sum();
            q[s * na + a] = mdp.reward(s, a) + mdp.gamma * ev;
        }
    }
    let adv: Vec<f64> = (0..ns * na).map(|i| q[i] - v[i / na]).collect();

    let tables = ValueTables {
        n_actions: na,
        v,
        q,
        adv,
    };
    let residual = bellman_residual(pi, &tables);
    let tol = 1e-10 * mdp.value_bound().max(1.0);
    if residual > tol {
        return Err(Error::Solve(format!("Bellman residual {residual:e} exceeds {tol:e}")));
    }
    Ok(tables)
}

/// `max_s |V(s) - sum_a pi(a|s) Q(s,a)|`, where `Q` is already one backup of `V`.
pub fn bellman_residual(pi: &TabularPolicy, tables: &ValueTables) -> f64 {
    let na = tables.n_actions;
    (0..tables.v.len())
        .map(|s| {
            let backed: f64 = (0..na).map(|a| pi.prob(s, a) * tables.q[s * na + a]).sum();
            (tables.v[s] - backed).abs()
        })
        .fold(0.0, f64::max)
}

/// Solves `nu = (1 - gamma) mu^T (I - gamma P_pi)^{-1}`.
pub fn visitation(mdp: &Mdp, pi: &TabularPolicy) -> Result<VisitationDist> {
    check_shapes(mdp, pi)?;
    let ns = mdp.n_states;
    let na = mdp.n_actions;
    let (p, _) = policy_matrix(mdp, pi);
    let system = DMatrix::identity(ns, ns) - p.transpose().scale(mdp.gamma);
    let rhs = DVector::from_iterator(ns, mdp.mu.iter().map(|m| (1.0 - mdp.gamma) * m));
    let nu = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solve("singular (I - gamma P_pi^T)".into()))?;
    // Clamp roundoff below zero; the solve is exact up to a few ulps.
    let nu: Vec<f64> = nu.iter().map(|x| x.max(0.0)).collect();
    let mut sigma = vec![0.0; ns * na];
    let mut sigma_uniform = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            sigma[s * na + a] = nu[s] * pi.prob(s, a);
            sigma_uniform[s * na + a] = nu[s] / na as f64;
        }
    }
    Ok(VisitationDist {
        n_actions: na,
        nu,
        sigma,
        sigma_uniform,
    })
}

/// `L(pi) = E_{s ~ nu*}[V^pi(s)]`.
pub fn performance(mdp: &Mdp, pi: &TabularPolicy, nu_star: &VisitationDist) -> Result<f64> {
    let tables = evaluate_policy_exact(mdp, pi)?;
    Ok(expected_value(&nu_star.nu, &tables.v))
}

pub(crate) fn expected_value(dist: &[f64], v: &[f64]) -> f64 {
    dist.iter().zip(v).map(|(d, x)| d * x).sum()
}

/// Optimal deterministic policy and its exact value tables.
///
/// Runs value iteration until the sup-norm Bellman residual is at most `tol`,
/// then polishes the greedy policy with exact policy iteration so the returned
/// tables are exact. Ties go to the lowest action index.
pub fn value_iteration(mdp: &Mdp, tol: f64) -> Result<(TabularPolicy, ValueTables)> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let ns = mdp.n_states;
    let na = mdp.n_actions;
    let max_iters = 100_000;
    let mut v = vec![0.0; ns];
    let backup = |v: &[f64], s: usize, a: usize| -> f64 {
        mdp.reward(s, a)
            + mdp.gamma
                * mdp
                    .next_state_dist(s, a)
                    .iter()
                    .zip(v)
                    .map(|(p, x)| p * x)
                    .sum::<f64>()
    };
    let mut converged = false;
    for _ in 0..max_iters {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| backup(&v, s, a))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let residual = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if residual <= tol * (1.0 - mdp.gamma) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(max_iters));
    }

    let tie = 1e-12 * mdp.value_bound().max(1.0);
    let greedy = |q: &dyn Fn(usize, usize) -> f64, s: usize| -> usize {
        let best = (0..na).map(|a| q(s, a)).fold(f64::NEG_INFINITY, f64::max);
        (0..na).find(|&a| q(s, a) >= best - tie).unwrap_or(0)
    };
    let mut actions: Vec<usize> = (0..ns).map(|s| greedy(&|s, a| backup(&v, s, a), s)).collect();
    for _ in 0..(ns * na + 10) {
        let pi = TabularPolicy::deterministic(na, &actions);
        let tables = evaluate_policy_exact(mdp, &pi)?;
        let mut changed = false;
        for s in 0..ns {
            let cand = greedy(&|s, a| tables.q(s, a), s);
            if cand != actions[s] && tables.q(s, cand) > tables.q(s, actions[s]) + tie {
                actions[s] = cand;
                changed = true;
            }
        }
        if !changed {
            // Canonical tie-break among exactly optimal actions.
            let canonical: Vec<usize> = (0..ns).map(|s| greedy(&|s, a| tables.q(s, a), s)).collect();
            let pi = TabularPolicy::deterministic(na, &canonical);
            let tables = evaluate_policy_exact(mdp, &pi)?;
            return Ok((pi, tables));
        }
    }
    Err(Error::NonConvergence(max_iters))
}

/// Both sides of the performance-difference identity
///
/// `E_mu[V^{pi*} - V^pi] = (1 - gamma)^{-1} E_{s ~ nu*}[<A^pi(s,.), pi*(.|s) - pi(.|s)>]`
///
/// with `nu*` the discounted visitation of `pi*` from `mu`. Returns
/// `(lhs, rhs)`.
pub fn performance_difference_sides(
    mdp: &Mdp,
    pi: &TabularPolicy,
    pi_star: &TabularPolicy,
    nu_star: &VisitationDist,
) -> Result<(f64, f64)> {
    let star = evaluate_policy_exact(mdp, pi_star)?;
    let this = evaluate_policy_exact(mdp, pi)?;
    let lhs: f64 = mdp
        .mu
        .iter()
        .enumerate()
        .map(|(s, m)| m * (star.v[s] - this.v[s]))
        .sum();
    let na = mdp.n_actions;
    let mut inner = 0.0;
    for s in 0..mdp.n_states {
        let mut dot = 0.0;
        for a in 0..na {
            dot += this.adv(s, a) * (pi_star.prob(s, a) - pi.prob(s, a));
        }
        inner += nu_star.nu[s] * dot;
    }
    Ok((lhs, inner / (1.0 - mdp.gamma)))
}

/// `|lhs - rhs|` of [`performance_difference_sides`].
pub fn performance_difference_check(
    mdp: &Mdp,
    pi: &TabularPolicy,
    pi_star: &TabularPolicy,
    nu_star: &VisitationDist,
) -> Result<f64> {
    let (lhs, rhs) = performance_difference_sides(mdp, pi, pi_star, nu_star)?;
    Ok((lhs - rhs).abs())
}

/// Random MDP with Dirichlet(1, ..., 1) transition rows, Uniform[0, 1] rewards
/// and uniform `mu`.
pub fn random_mdp<R: rand::Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<Mdp> {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        // Dirichlet(1, ..., 1) via normalized unit exponentials.
        let raw: Vec<f64> = (0..n_states)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        transition.extend(raw.iter().map(|x| x / total));
    }
    let reward: Vec<f64> = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    let mu = vec![1.0 / n_states as f64; n_states];
    Mdp::new(n_states, n_actions, gamma, mu, reward, transition, Some(1.0))
}

/// Random strictly positive policy with Dirichlet(1, ..., 1) rows.
pub fn random_policy<R: rand::Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    rng: &mut R,
) -> TabularPolicy {
    let mut logits = Vec::with_capacity(n_states * n_actions);
    for _ in 0..n_states * n_actions {
        let e: f64 = -(1.0 - rng.random::<f64>()).ln();
        logits.push(e.max(1e-300).ln());
    }
    TabularPolicy::from_logits(n_states, n_actions, &logits)
}

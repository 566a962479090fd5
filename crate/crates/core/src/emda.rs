//! Entropic mirror descent (exponentiated gradient) policy search.
//!
//! For every batch state the row `theta~(s, .)` starts at `pi_t(.|s)` and is
//! updated `K` times by `theta <- (w o theta) / <w, theta>` with
//! `w = exp(-eta g)`. The effective step per pair is accumulated in
//! `C_t(s, a) = -sum_k eta g_k / A(s, a)`, so that
//! `log pi_hat(a|s) = log pi_t(a|s) + C_t(s,a) A(s,a) - const(s)`.
//!
//! Rows are updated in log space; the arithmetic is the same normalized
//! Hadamard product, but probabilities far below `f64::MIN_POSITIVE` stay
//! representable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hinge::{pair_subgradient, Batch, HingeLossSpec};
use crate::mdp::{log_sum_exp, normalize_log_row, TabularPolicy};

/// Gradients are clamped to this magnitude before exponentiation.
pub const GRAD_CLAMP: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmdaConfig {
    pub eta: f64,
    pub k_max: usize,
}

impl EmdaConfig {
    pub fn new(eta: f64, k_max: usize) -> Result<Self> {
        let cfg = EmdaConfig { eta, k_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("emda_step", format!("{} must be positive", self.eta)));
        }
        if self.k_max == 0 {
            return Err(Error::invalid("emda_iters", "must be at least 1"));
        }
        Ok(())
    }
}

/// One logged inner-iteration gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradRecord {
    pub k: usize,
    pub state: usize,
    pub action: usize,
    pub g: f64,
    pub active: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmdaResult {
    /// `pi_hat`: batch rows updated, all other rows copied from `pi_t`.
    pub target: TabularPolicy,
    /// `C_t(s, a)`, flat `[s][a]`, zero outside the batch.
    pub c_table: Vec<f64>,
    pub grad_log: Vec<GradRecord>,
    /// Number of gradients that hit [`GRAD_CLAMP`].
    pub clamp_count: usize,
    /// Share of batch pairs whose indicator was off at the last inner step.
    pub clip_fraction: f64,
}

impl EmdaResult {
    pub fn c(&self, s: usize, a: usize) -> f64 {
        self.c_table[s * self.target.n_actions() + a]
    }
}

fn clamp_grad(g: f64, clamps: &mut usize) -> f64 {
    if g.abs() > GRAD_CLAMP {
        *clamps += 1;
        GRAD_CLAMP.copysign(g)
    } else {
        g
    }
}

/// `(w o theta) / <w, theta>` with `w_a = exp(-eta g_a)` on a probability
/// vector. Returns the new vector and the number of clamped gradients.
pub fn emda_step(theta: &[f64], g: &[f64], eta: f64) -> (Vec<f64>, usize) {
    let log_theta: Vec<f64> = theta.iter().map(|p| p.ln()).collect();
    let (next, clamps) = emda_step_log(&log_theta, g, eta);
    (next.iter().map(|l| l.exp()).collect(), clamps)
}

/// [`emda_step`] on log-probabilities.
pub fn emda_step_log(log_theta: &[f64], g: &[f64], eta: f64) -> (Vec<f64>, usize) {
    assert_eq!(log_theta.len(), g.len());
    let mut clamps = 0;
    let mut next: Vec<f64> = log_theta
        .iter()
        .zip(g)
        .map(|(l, &gi)| l - eta * clamp_grad(gi, &mut clamps))
        .collect();
    normalize_log_row(&mut next);
    (next, clamps)
}

/// Runs `K` EMDA iterations on every batch state.
///
/// Actions of a batch state that are not themselves in the batch get `g = 0`
/// and move only through normalization. Pairs may share a state, but the same
/// pair may not appear twice.
pub fn run_emda(
    pi_t: &TabularPolicy,
    batch: &Batch,
    spec: &HingeLossSpec,
    cfg: &EmdaConfig,
) -> Result<EmdaResult> {
    cfg.validate()?;
    spec.validate()?;
    let na = pi_t.n_actions();
    let ns = pi_t.n_states();
    let mut seen = vec![false; ns * na];
    for p in &batch.pairs {
        if p.state >= ns || p.action >= na {
            return Err(Error::invalid("batch", format!("pair ({}, {}) out of range", p.state, p.action)));
        }
        let idx = p.state * na + p.action;
        if seen[idx] {
            return Err(Error::invalid("batch", format!("duplicate pair ({}, {})", p.state, p.action)));
        }
        seen[idx] = true;
    }

    let mut target = pi_t.clone();
    let mut c_table = vec![0.0; ns * na];
    let mut grad_log = Vec::new();
    let mut clamp_count = 0;
    let mut inactive_last = 0usize;

    for s in batch.states() {
        let pairs: Vec<_> = batch.pairs.iter().filter(|p| p.state == s).collect();
        let mut row = pi_t.log_row(s).to_vec();
        for k in 0..cfg.k_max {
            let mut g = vec![0.0; na];
            for p in &pairs {
                let (raw, active) =
                    pair_subgradient(row[p.action], pi_t.log_prob(s, p.action), p.adv, spec)?;
                let gk = clamp_grad(raw, &mut clamp_count);
                g[p.action] = gk;
                grad_log.push(GradRecord {
                    k,
                    state: s,
                    action: p.action,
                    g: gk,
                    active,
                });
                if k + 1 == cfg.k_max && !active {
                    inactive_last += 1;
                }
                if p.adv != 0.0 {
                    c_table[s * na + p.action] -= cfg.eta * gk / p.adv;
                }
            }
            let (next, _) = emda_step_log(&row, &g, cfg.eta);
            row = next;
        }
        target.set_log_row(s, &row);
    }

    let clip_fraction = if batch.is_empty() {
        0.0
    } else {
        inactive_last as f64 / batch.len() as f64
    };
    Ok(EmdaResult {
        target,
        c_table,
        grad_log,
        clamp_count,
        clip_fraction,
    })
}

/// Largest deviation between `log pi_hat` and the softmax-normalized
/// `C_t o A + tau^{-1} f` over all actions of every batch state.
///
/// `tau_inv_f` is the flat `[s][a]` energy table of the policy EMDA started
/// from; in the tabular case pass `log pi_t`.
pub fn closed_form_residual(result: &EmdaResult, batch: &Batch, tau_inv_f: &[f64]) -> f64 {
    let na = result.target.n_actions();
    let mut worst: f64 = 0.0;
    for s in batch.states() {
        let mut z: Vec<f64> = tau_inv_f[s * na..(s + 1) * na].to_vec();
        for p in batch.pairs.iter().filter(|p| p.state == s) {
            z[p.action] += result.c(s, p.action) * p.adv;
        }
        let lse = log_sum_exp(&z);
        for a in 0..na {
            worst = worst.max((result.target.log_prob(s, a) - (z[a] - lse)).abs());
        }
    }
    worst
}

/// `sum_a pi_hat(a|s) A(s, a)` for every state; `adv` is flat `[s][a]`.
pub fn improvement_condition(pi_hat: &TabularPolicy, adv: &[f64]) -> Vec<f64> {
    let na = pi_hat.n_actions();
    (0..pi_hat.n_states())
        .map(|s| (0..na).map(|a| pi_hat.prob(s, a) * adv[s * na + a]).sum())
        .collect()
}

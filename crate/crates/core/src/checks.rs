//! Numerical checks of the identities and inequalities behind the method.
//!
//! Every check draws its instances from `(seed, trial)` sub-streams, so a
//! report is reproducible bit for bit from its seed.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::Serialize;
use serde_json::{json, Value};

use crate::emda::{closed_form_residual, run_emda, EmdaConfig};
use crate::error::{Error, Result};
use crate::hinge::{
    batch_hinge_loss, clipped_objective, clipped_objective_grad, gradient_equivalence,
    hinge_loss_grad, kink_distance, Batch, ClassifierKind, HingeLossSpec, Pair, WeightScheme,
    KINK_TOL,
};
use crate::mdp::{
    evaluate_policy_exact, performance_difference_check, random_mdp, random_policy,
    value_iteration, visitation, Mdp, TabularPolicy,
};
use crate::rng::{stream, substream_rng, Rng};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub context: Value,
}

impl CheckReport {
    fn new(name: &str, residual: f64, tolerance: f64, context: Value) -> Self {
        CheckReport {
            name: name.to_string(),
            residual,
            tolerance,
            passed: residual <= tolerance,
            context,
        }
    }
}

/// Which checks to run from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    GradEquiv,
    ClosedForm,
    PerfDiff,
    Kl,
    Concentrability,
    All,
}

pub const GRAD_EQUIV_TOL: f64 = 1e-9;
pub const GRAD_FD_TOL: f64 = 1e-5;
pub const CLOSED_FORM_TOL: f64 = 1e-10;
pub const PERF_DIFF_TOL: f64 = 1e-9;
pub const KL_SLACK: f64 = 1e-9;

fn trial_rng(seed: u64, trial: usize) -> Rng {
    substream_rng(seed, stream::CHECKS, trial as u64)
}

/// Random batch with distinct states and nonzero advantages of either sign.
fn random_batch(n_states: usize, n_actions: usize, rng: &mut Rng) -> Batch {
    let k = rng.random_range(1..=n_states);
    let mut states = sample(rng, n_states, k).into_vec();
    states.sort_unstable();
    Batch::new(
        states
            .into_iter()
            .map(|s| {
                let mag = rng.random_range(0.01..2.0);
                Pair {
                    state: s,
                    action: rng.random_range(0..n_actions),
                    adv: if rng.random_bool(0.5) { mag } else { -mag },
                }
            })
            .collect(),
    )
}

/// An instance for the clipped-surrogate comparison: current policy, a
/// probability table `theta`, a batch and a margin.
fn grad_instance(rng: &mut Rng) -> (TabularPolicy, Vec<f64>, Batch, f64) {
    let ns = rng.random_range(1..=5);
    let na = rng.random_range(2..=4);
    let pi = random_policy(ns, na, rng);
    let batch = random_batch(ns, na, rng);
    let eps = rng.random_range(0.05..0.5);
    // Perturb pi so ratios land on both sides of the clip range.
    let logits: Vec<f64> = pi
        .log_probs()
        .iter()
        .map(|l| l + rng.random_range(-0.6..0.6))
        .collect();
    let theta = TabularPolicy::from_logits(ns, na, &logits).probs();
    (pi, theta, batch, eps)
}

fn dense(grad: &[(usize, f64)], idx: usize) -> f64 {
    grad.iter().find(|(i, _)| *i == idx).map(|e| e.1).unwrap_or(0.0)
}

/// Analytic gradients of the clipped surrogate and the ratio hinge loss
/// with `|A|` weights cancel away from the clip boundaries.
///
/// Returns the analytic report and a central-difference report over
/// `n_trials` interior instances. Draws within the kink tolerance are skipped,
/// counted and replaced by fresh ones.
pub fn check_gradient_equivalence(n_trials: usize, seed: u64) -> Result<(CheckReport, CheckReport)> {
    let mut worst: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    let mut skipped = 0usize;
    let mut clipped_pairs = 0usize;
    let mut total_pairs = 0usize;
    let mut evaluated = 0usize;
    for trial in 0.. {
        if evaluated == n_trials {
            break;
        }
        if skipped > 100 * n_trials.max(1) {
            return Err(Error::invalid("grad-equiv", "almost every draw lands on a kink"));
        }
        let mut rng = trial_rng(seed, trial);
        let (pi, theta, batch, eps) = grad_instance(&mut rng);
        let res = match gradient_equivalence(&theta, &pi, &batch, eps) {
            Ok(r) => r,
            Err(Error::NearKink(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        worst = worst.max(res);
        evaluated += 1;

        let spec = HingeLossSpec::new(ClassifierKind::Ratio, eps, WeightScheme::AbsAdv)?;
        let g_clip = clipped_objective_grad(&theta, &pi, &batch, eps)?;
        let g_hinge = hinge_loss_grad(&theta, &pi, &batch, &spec)?;
        let na = pi.n_actions();
        total_pairs += batch.len();
        clipped_pairs += g_clip.iter().filter(|(_, g)| *g == 0.0).count();
        // Keep the difference stencil inside the current linear piece.
        let kink = kink_distance(&theta, &pi, &batch, eps);
        for p in &batch.pairs {
            let idx = p.state * na + p.action;
            let pi_sa = pi.prob(p.state, p.action);
            let h = 1e-6_f64.min(0.5 * kink * pi_sa).min(0.5 * theta[idx]);
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[idx] += h;
            down[idx] -= h;
            let fd_clip = (clipped_objective(&up, &pi, &batch, eps)?
                - clipped_objective(&down, &pi, &batch, eps)?)
                / (2.0 * h);
            let fd_hinge = (batch_hinge_loss(&up, &pi, &batch, &spec)?
                - batch_hinge_loss(&down, &pi, &batch, &spec)?)
                / (2.0 * h);
            worst_fd = worst_fd
                .max((fd_clip + fd_hinge).abs())
                .max((fd_clip - dense(&g_clip, idx)).abs())
                .max((fd_hinge - dense(&g_hinge, idx)).abs());
        }
    }
    let ctx = json!({
        "seed": seed,
        "trials": evaluated,
        "skipped_near_kink": skipped,
        "kink_tol": KINK_TOL,
        "clipped_pairs": clipped_pairs,
        "total_pairs": total_pairs,
    });
    Ok((
        CheckReport::new("grad-equiv", worst, GRAD_EQUIV_TOL, ctx.clone()),
        CheckReport::new("grad-equiv-fd", worst_fd, GRAD_FD_TOL, ctx),
    ))
}

/// EMDA output against the softmax of `C_t o A + log pi_t`, over random
/// policies, batches, classifiers, weights, margins, step sizes and `K <= 5`.
pub fn check_closed_form(n_trials: usize, seed: u64) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    let mut clamps = 0usize;
    for trial in 0..n_trials {
        let mut rng = trial_rng(seed, trial);
        let ns = rng.random_range(1..=5);
        let na = rng.random_range(2..=5);
        let pi = random_policy(ns, na, &mut rng);
        // Some states carry several actions.
        let mut pairs = random_batch(ns, na, &mut rng).pairs;
        let extra: Vec<Pair> = pairs
            .iter()
            .filter(|_| rng.random_bool(0.3))
            .map(|p| Pair {
                state: p.state,
                action: (p.action + 1) % na,
                adv: -p.adv * 0.7,
            })
            .collect();
        pairs.extend(extra);
        let batch = Batch::new(pairs);
        let classifier = ClassifierKind::ALL[trial % 4];
        let weights = [WeightScheme::Unit, WeightScheme::AbsAdv, WeightScheme::PolicyWeighted]
            [rng.random_range(0..3)];
        let spec = HingeLossSpec::new(classifier, rng.random_range(0.05..0.5), weights)?;
        let cfg = EmdaConfig::new(rng.random_range(0.01..0.5), rng.random_range(1..=5))?;
        let res = run_emda(&pi, &batch, &spec, &cfg)?;
        clamps += res.clamp_count;
        worst = worst.max(closed_form_residual(&res, &batch, pi.log_probs()));
    }
    Ok(CheckReport::new(
        "closed-form",
        worst,
        CLOSED_FORM_TOL,
        json!({ "seed": seed, "trials": n_trials, "clamped_gradients": clamps }),
    ))
}

/// Both sides of the performance-difference identity on random MDPs and
/// policies.
pub fn check_performance_difference(n_trials: usize, seed: u64) -> Result<CheckReport> {
    let mut worst: f64 = 0.0;
    for trial in 0..n_trials {
        let mut rng = trial_rng(seed, trial);
        let ns = rng.random_range(1..=6);
        let na = rng.random_range(1..=4);
        let gamma = rng.random_range(0.5..0.99);
        let mdp = random_mdp(ns, na, gamma, &mut rng)?;
        let pi = random_policy(ns, na, &mut rng);
        let (pi_star, _) = value_iteration(&mdp, 1e-12)?;
        let nu_star = visitation(&mdp, &pi_star)?;
        worst = worst.max(performance_difference_check(&mdp, &pi, &pi_star, &nu_star)?);
    }
    Ok(CheckReport::new(
        "perf-diff",
        worst,
        PERF_DIFF_TOL,
        json!({ "seed": seed, "trials": n_trials }),
    ))
}

/// `KL(p || q)` with `0 log 0 = 0`.
fn kl(p: &[f64], log_q: &[f64]) -> f64 {
    p.iter()
        .zip(log_q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, lq)| pi * (pi.ln() - lq))
        .sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Left and right sides of the stepwise KL inequality for one state.
///
/// `next` is the policy actually adopted, `target` the EMDA output, and
/// `c_adv` the row `C_t(s, .) o A(s, .)`.
pub fn kl_step_sides(
    star: &[f64],
    cur_log: &[f64],
    next_log: &[f64],
    target_log: &[f64],
    c_adv: &[f64],
) -> (f64, f64) {
    let cur: Vec<f64> = cur_log.iter().map(|l| l.exp()).collect();
    let next: Vec<f64> = next_log.iter().map(|l| l.exp()).collect();
    let lhs = kl(star, next_log) - kl(star, cur_log);
    let l1: f64 = next.iter().zip(&cur).map(|(a, b)| (a - b).abs()).sum();
    let rhs = dot(&sub(next_log, target_log), &sub(&cur, star)) - dot(c_adv, &sub(star, &cur))
        - 0.5 * l1 * l1
        - dot(&sub(next_log, cur_log), &sub(&cur, &next));
    (lhs, rhs)
}

/// Idealized run: energies are updated exactly by `C_t o A^{pi_t}` with exact
/// advantages, so the adopted policy equals the EMDA target. The stepwise
/// KL inequality is evaluated at every state and iteration.
pub fn check_kl_potential(n_mdps: usize, n_iters: usize, seed: u64) -> Result<CheckReport> {
    let mut worst = f64::NEG_INFINITY;
    let mut min_margin = f64::INFINITY;
    let mut checked = 0usize;
    let spec = HingeLossSpec::with_bounded_steps(ClassifierKind::Ratio, 0.2)?;
    let cfg = EmdaConfig::new(1.0 / (n_iters as f64).sqrt(), 5)?;
    for trial in 0..n_mdps {
        let mut rng = trial_rng(seed, trial);
        let na = rng.random_range(2..=3);
        let mdp = random_mdp(4, na, 0.9, &mut rng)?;
        let (pi_star, _) = value_iteration(&mdp, 1e-12)?;
        let mut energy = vec![0.0; 4 * na];
        let mut pi = TabularPolicy::uniform(4, na);
        for _ in 0..n_iters {
            let (w, m, n) = idealized_step(&mdp, &pi_star, &spec, &cfg, &mut energy, &mut pi)?;
            worst = worst.max(w);
            min_margin = min_margin.min(m);
            checked += n;
        }
    }
    Ok(CheckReport::new(
        "kl",
        worst.max(0.0),
        KL_SLACK,
        json!({
            "seed": seed,
            "mdps": n_mdps,
            "iterations": n_iters,
            "checked": checked,
            "min_margin": min_margin,
        }),
    ))
}

/// One exact update. Returns `(max lhs - rhs, min rhs - lhs, states checked)`.
fn idealized_step(
    mdp: &Mdp,
    pi_star: &TabularPolicy,
    spec: &HingeLossSpec,
    cfg: &EmdaConfig,
    energy: &mut [f64],
    pi: &mut TabularPolicy,
) -> Result<(f64, f64, usize)> {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let tables = evaluate_policy_exact(mdp, pi)?;
    let batch = Batch::new(
        (0..ns)
            .flat_map(|s| (0..na).map(move |a| (s, a)))
            .filter(|&(s, a)| tables.adv(s, a).abs() > 1e-12)
            .map(|(s, a)| Pair {
                state: s,
                action: a,
                adv: tables.adv(s, a),
            })
            .collect(),
    );
    let res = run_emda(pi, &batch, spec, cfg)?;
    let c_adv: Vec<f64> = (0..ns * na).map(|i| res.c_table[i] * tables.adv[i]).collect();
    for (e, d) in energy.iter_mut().zip(&c_adv) {
        *e += d;
    }
    let next = TabularPolicy::from_logits(ns, na, energy);
    let mut worst = f64::NEG_INFINITY;
    let mut margin = f64::INFINITY;
    for s in 0..ns {
        let (lhs, rhs) = kl_step_sides(
            &pi_star.row(s),
            pi.log_row(s),
            next.log_row(s),
            res.target.log_row(s),
            &c_adv[s * na..(s + 1) * na],
        );
        worst = worst.max(lhs - rhs);
        margin = margin.min(rhs - lhs);
    }
    *pi = next;
    Ok((worst, margin, ns))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConcentrabilityReport {
    pub phi_star: f64,
    pub psi_star: f64,
    /// `max_s nu*(s) / nu_t(s)`; infinite when `nu_t` misses a state `nu*` visits.
    pub c_infinity: f64,
}

/// Exact density-ratio quantities between `pi_star` and `pi_t`, with `pi_0`
/// the uniform policy.
pub fn concentrability(mdp: &Mdp, pi_star: &TabularPolicy, pi_t: &TabularPolicy) -> Result<ConcentrabilityReport> {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let nu_star = visitation(mdp, pi_star)?;
    let nu_t = visitation(mdp, pi_t)?;
    let mut phi = 0.0;
    let mut psi = 0.0;
    let mut c_inf: f64 = 0.0;
    for s in 0..ns {
        let state_ratio = if nu_t.nu[s] > 0.0 {
            nu_star.nu[s] / nu_t.nu[s]
        } else if nu_star.nu[s] > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        c_inf = c_inf.max(state_ratio);
        for a in 0..na {
            let i = s * na + a;
            let d = na as f64 * (pi_star.prob(s, a) - pi_t.prob(s, a));
            phi += nu_t.sigma_uniform[i] * d * d;
            if nu_t.sigma[i] > 0.0 {
                let pair_ratio = nu_star.sigma[i] / nu_t.sigma[i];
                psi += nu_t.sigma[i] * (pair_ratio - state_ratio).powi(2);
            }
        }
    }
    Ok(ConcentrabilityReport {
        phi_star: phi.sqrt(),
        psi_star: psi.sqrt(),
        c_infinity: c_inf,
    })
}

/// Concentrability along a short tabular run on random MDPs; the residual is
/// the worst violation of nonnegativity and `C_inf >= 1`.
pub fn check_concentrability(n_mdps: usize, seed: u64) -> Result<CheckReport> {
    let mut violation: f64 = 0.0;
    let mut rows = Vec::new();
    for trial in 0..n_mdps {
        let mut rng = trial_rng(seed, trial);
        let mdp = random_mdp(4, 2, 0.9, &mut rng)?;
        let (pi_star, _) = value_iteration(&mdp, 1e-12)?;
        for pi in [
            TabularPolicy::uniform(4, 2),
            random_policy(4, 2, &mut rng),
            pi_star.mix_uniform(0.1),
        ] {
            let rep = concentrability(&mdp, &pi_star, &pi)?;
            violation = violation
                .max(-rep.phi_star)
                .max(-rep.psi_star)
                .max(1.0 - rep.c_infinity);
            rows.push(rep);
        }
    }
    Ok(CheckReport::new(
        "concentrability",
        violation,
        1e-12,
        json!({ "seed": seed, "mdps": n_mdps, "reports": rows }),
    ))
}

/// Runs `suite` with the default trial counts.
pub fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::GradEquiv {
        let (a, b) = check_gradient_equivalence(1000, seed)?;
        out.push(a);
        out.push(b);
    }
    if all || suite == Suite::ClosedForm {
        out.push(check_closed_form(500, seed)?);
    }
    if all || suite == Suite::PerfDiff {
        out.push(check_performance_difference(100, seed)?);
    }
    if all || suite == Suite::Kl {
        out.push(check_kl_potential(5, 10, seed)?);
    }
    if all || suite == Suite::Concentrability {
        out.push(check_concentrability(5, seed)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_clipped_has_zero_residual() {
        let pi = TabularPolicy::from_probs(1, 2, &[0.5, 0.5]).unwrap();
        // Ratios 1.5 and 0.5 sit past both clip edges.
        let theta = [0.75, 0.25];
        let batch = Batch::new(vec![Pair { state: 0, action: 0, adv: 1.0 }]);
        assert_eq!(gradient_equivalence(&theta, &pi, &batch, 0.2).unwrap(), 0.0);
        let neg = Batch::new(vec![Pair { state: 0, action: 1, adv: -1.0 }]);
        assert_eq!(gradient_equivalence(&theta, &pi, &neg, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn kl_sides_vanish_without_movement() {
        let star = [1.0, 0.0, 0.0];
        let cur = [0.2_f64.ln(), 0.5_f64.ln(), 0.3_f64.ln()];
        let (lhs, rhs) = kl_step_sides(&star, &cur, &cur, &cur, &[0.0; 3]);
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);
    }

    #[test]
    fn concentrability_trivial_cases() {
        let mdp = random_mdp(3, 2, 0.8, &mut trial_rng(5, 0)).unwrap();
        let (pi_star, _) = value_iteration(&mdp, 1e-12).unwrap();
        let rep = concentrability(&mdp, &pi_star, &pi_star).unwrap();
        assert_eq!(rep.psi_star, 0.0);
        assert!((rep.c_infinity - 1.0).abs() < 1e-12);
        assert_eq!(rep.phi_star, 0.0);

        let bandit = Mdp::new(1, 3, 0.5, vec![1.0], vec![0.1, 0.9, 0.3], vec![1.0; 3], None).unwrap();
        let (b_star, _) = value_iteration(&bandit, 1e-12).unwrap();
        let rep = concentrability(&bandit, &b_star, &TabularPolicy::uniform(1, 3)).unwrap();
        assert_eq!(rep.c_infinity, 1.0);
        // Ratios against uniform are (0, 3, 0) - (1, 1, 1), each weighted 1/3.
        assert!((rep.phi_star - 2.0_f64.sqrt()).abs() < 1e-12);
    }
}

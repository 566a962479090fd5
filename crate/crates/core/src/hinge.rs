//! The generalized PPO-Clip objective as a weighted hinge loss.
//!
//! Each batch pair `(s, a)` is a training example whose label is the sign of
//! its advantage and whose prediction is a classifier `h` of the new and old
//! action probabilities. With the ratio classifier and `|A|` weights the loss
//! is, up to a constant, the negative of the usual clipped surrogate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularPolicy;

/// Distance from a clip boundary below which gradients are not compared.
pub const KINK_TOL: f64 = 1e-6;

/// The classifier `h` whose agreement with `sgn(A)` the hinge loss scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    /// `theta / pi_t - 1`.
    Ratio,
    /// `theta - pi_t`.
    Sub,
    /// `sqrt(theta / pi_t) - 1`.
    Root,
    /// `log theta - log pi_t`.
    Log,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::Ratio,
        ClassifierKind::Sub,
        ClassifierKind::Root,
        ClassifierKind::Log,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Ratio => "ratio",
            ClassifierKind::Sub => "sub",
            ClassifierKind::Root => "root",
            ClassifierKind::Log => "log",
        }
    }

    fn check_domain(self, log_theta: f64, log_pi: f64) -> Result<()> {
        let pi_ok = log_pi.is_finite();
        let theta_ok = log_theta.is_finite();
        let ok = match self {
            ClassifierKind::Ratio => pi_ok,
            ClassifierKind::Sub => true,
            ClassifierKind::Root | ClassifierKind::Log => pi_ok && theta_ok,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "{} classifier needs positive probabilities (theta = {:e}, pi_t = {:e})",
                self.name(),
                log_theta.exp(),
                log_pi.exp()
            )))
        }
    }

    /// `h(theta)` from log-probabilities.
    pub fn value(self, log_theta: f64, log_pi: f64) -> Result<f64> {
        self.check_domain(log_theta, log_pi)?;
        Ok(match self {
            ClassifierKind::Ratio => (log_theta - log_pi).exp() - 1.0,
            ClassifierKind::Sub => log_theta.exp() - log_pi.exp(),
            ClassifierKind::Root => (0.5 * (log_theta - log_pi)).exp() - 1.0,
            ClassifierKind::Log => log_theta - log_pi,
        })
    }

    /// `dh/dtheta` from log-probabilities.
    pub fn derivative(self, log_theta: f64, log_pi: f64) -> Result<f64> {
        self.check_domain(log_theta, log_pi)?;
        Ok(match self {
            ClassifierKind::Ratio => (-log_pi).exp(),
            ClassifierKind::Sub => 1.0,
            ClassifierKind::Root => 0.5 * (-0.5 * (log_theta + log_pi)).exp(),
            ClassifierKind::Log => (-log_theta).exp(),
        })
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(ClassifierKind::Ratio),
            "sub" => Ok(ClassifierKind::Sub),
            "root" => Ok(ClassifierKind::Root),
            "log" => Ok(ClassifierKind::Log),
            other => Err(Error::invalid(
                "classifier",
                format!("unknown classifier `{other}` (expected ratio|sub|root|log)"),
            )),
        }
    }
}

/// Per-pair weight `W(s, a)` of the generalized objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// `W = 1`.
    Unit,
    /// `W = |A(s,a)|`, which recovers the clipped surrogate.
    AbsAdv,
    /// `W = pi_t(a|s) |A(s,a)|`.
    PolicyWeighted,
}

impl WeightScheme {
    pub fn name(self) -> &'static str {
        match self {
            WeightScheme::Unit => "unit",
            WeightScheme::AbsAdv => "abs-adv",
            WeightScheme::PolicyWeighted => "policy-weighted",
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(WeightScheme::Unit),
            "abs-adv" => Ok(WeightScheme::AbsAdv),
            "policy-weighted" => Ok(WeightScheme::PolicyWeighted),
            other => Err(Error::invalid(
                "weights",
                format!("unknown weight scheme `{other}` (expected unit|abs-adv|policy-weighted)"),
            )),
        }
    }
}

/// Classifier, margin and weighting that together pick one member of the
/// generalized PPO-Clip family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HingeLossSpec {
    pub classifier: ClassifierKind,
    pub margin: f64,
    pub weight_scheme: WeightScheme,
    pub w_max: f64,
}

impl HingeLossSpec {
    pub fn new(classifier: ClassifierKind, margin: f64, weight_scheme: WeightScheme) -> Result<Self> {
        let spec = HingeLossSpec {
            classifier,
            margin,
            weight_scheme,
            w_max: 1e6,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `pi_t |A|` weights for the ratio classifier, `|A|` for the others. For
    /// ratio and sub this makes every subgradient `-sgn(A) |A|`, so each
    /// updated pair's accumulated EMDA step lies in `[eta, K eta]`.
    pub fn with_bounded_steps(classifier: ClassifierKind, margin: f64) -> Result<Self> {
        let scheme = match classifier {
            ClassifierKind::Ratio => WeightScheme::PolicyWeighted,
            _ => WeightScheme::AbsAdv,
        };
        HingeLossSpec::new(classifier, margin, scheme)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::invalid("margin", format!("{} must be positive", self.margin)));
        }
        if !(self.w_max > 0.0) {
            return Err(Error::invalid("w_max", "must be positive"));
        }
        Ok(())
    }

    /// `W(s, a)` clamped to `w_max`.
    pub fn weight(&self, adv: f64, log_pi: f64) -> f64 {
        let w = match self.weight_scheme {
            WeightScheme::Unit => 1.0,
            WeightScheme::AbsAdv => adv.abs(),
            WeightScheme::PolicyWeighted => log_pi.exp() * adv.abs(),
        };
        w.min(self.w_max)
    }
}

/// A state-action pair with its advantage estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    pub state: usize,
    pub action: usize,
    pub adv: f64,
}

/// Batch of pairs entering the sample loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub pairs: Vec<Pair>,
}

impl Batch {
    pub fn new(pairs: Vec<Pair>) -> Self {
        Batch { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// States in first-appearance order, without repeats.
    pub fn states(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for p in &self.pairs {
            if !out.contains(&p.state) {
                out.push(p.state);
            }
        }
        out
    }

    pub fn has_distinct_states(&self) -> bool {
        self.states().len() == self.pairs.len()
    }

    /// Drops pairs with `|A| <= zero_tol`.
    pub fn without_zero_advantage(&self, zero_tol: f64) -> Batch {
        Batch {
            pairs: self
                .pairs
                .iter()
                .copied()
                .filter(|p| p.adv.abs() > zero_tol)
                .collect(),
        }
    }
}

/// `max(0, eps - y f)`.
pub fn hinge(y: f64, f: f64, eps: f64) -> f64 {
    (eps - y * f).max(0.0)
}

/// `sgn(A)` with `sgn(0) = 0`.
pub fn sign(adv: f64) -> f64 {
    if adv > 0.0 {
        1.0
    } else if adv < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn ln_checked(p: f64, what: &str) -> Result<f64> {
    if !(p.is_finite() && p >= 0.0) {
        return Err(Error::Domain(format!("{what} = {p} is not a probability")));
    }
    Ok(p.ln())
}

fn check_theta_shape(theta: &[f64], pi_t: &TabularPolicy) -> Result<()> {
    if theta.len() != pi_t.n_states() * pi_t.n_actions() {
        return Err(Error::invalid("theta", "shape does not match the policy"));
    }
    Ok(())
}

/// Sample loss `(1/|D|) sum W(s,a) hinge(sgn A, h(theta_{s,a}), eps)` with
/// `theta` a flat `[s][a]` table of probabilities.
pub fn batch_hinge_loss(
    theta: &[f64],
    pi_t: &TabularPolicy,
    batch: &Batch,
    spec: &HingeLossSpec,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "must be nonempty"));
    }
    check_theta_shape(theta, pi_t)?;
    let na = pi_t.n_actions();
    let mut total = 0.0;
    for p in &batch.pairs {
        let log_theta = ln_checked(theta[p.state * na + p.action], "theta")?;
        let log_pi = pi_t.log_prob(p.state, p.action);
        let h = spec.classifier.value(log_theta, log_pi)?;
        total += spec.weight(p.adv, log_pi) * hinge(sign(p.adv), h, spec.margin);
    }
    Ok(total / batch.len() as f64)
}

/// Subgradient of one pair's weighted hinge term with respect to its own
/// probability, evaluated from log-probabilities.
///
/// Returns `(g, active)` with
/// `g = -W sgn(A) h'(theta) 1{h(theta) sgn(A) < eps}`. On the boundary
/// itself the indicator is off.
pub fn pair_subgradient(
    log_theta: f64,
    log_pi: f64,
    adv: f64,
    spec: &HingeLossSpec,
) -> Result<(f64, bool)> {
    let h = spec.classifier.value(log_theta, log_pi)?;
    let y = sign(adv);
    if y == 0.0 {
        return Ok((0.0, false));
    }
    let active = h * y < spec.margin;
    if !active {
        return Ok((0.0, false));
    }
    let dh = spec.classifier.derivative(log_theta, log_pi)?;
    Ok((-spec.weight(adv, log_pi) * y * dh, true))
}

/// [`pair_subgradient`] for pair `(s, a)` given the state's current
/// probability vector `theta_tilde`.
pub fn subgradient(
    theta_tilde: &[f64],
    s: usize,
    a: usize,
    pi_t: &TabularPolicy,
    adv: f64,
    spec: &HingeLossSpec,
) -> Result<f64> {
    let log_theta = ln_checked(theta_tilde[a], "theta")?;
    Ok(pair_subgradient(log_theta, pi_t.log_prob(s, a), adv, spec)?.0)
}

/// `clip(x, lo, hi)`.
fn clip(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

/// Sample-average clipped surrogate
/// `(1/|D|) sum min(rho A, clip(rho, 1 - eps, 1 + eps) A)`.
pub fn clipped_objective(
    theta: &[f64],
    pi_t: &TabularPolicy,
    batch: &Batch,
    eps: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "must be nonempty"));
    }
    check_theta_shape(theta, pi_t)?;
    let na = pi_t.n_actions();
    let mut total = 0.0;
    for p in &batch.pairs {
        let pi = pi_t.prob(p.state, p.action);
        if !(pi > 0.0) {
            return Err(Error::Domain("ratio undefined for pi_t = 0".into()));
        }
        let rho = theta[p.state * na + p.action] / pi;
        total += (rho * p.adv).min(clip(rho, 1.0 - eps, 1.0 + eps) * p.adv);
    }
    Ok(total / batch.len() as f64)
}

/// Sparse gradient: `(flat index s * |A| + a, partial derivative)`.
pub type SparseGrad = Vec<(usize, f64)>;

fn accumulate(grad: &mut SparseGrad, idx: usize, g: f64) {
    match grad.iter_mut().find(|(i, _)| *i == idx) {
        Some(entry) => entry.1 += g,
        None => grad.push((idx, g)),
    }
}

/// Analytic gradient of [`clipped_objective`] by case analysis on which
/// branch of `min(rho A, clip(rho) A)` is attained.
pub fn clipped_objective_grad(
    theta: &[f64],
    pi_t: &TabularPolicy,
    batch: &Batch,
    eps: f64,
) -> Result<SparseGrad> {
    check_theta_shape(theta, pi_t)?;
    let na = pi_t.n_actions();
    let scale = 1.0 / batch.len() as f64;
    let mut grad = SparseGrad::new();
    for p in &batch.pairs {
        let idx = p.state * na + p.action;
        let pi = pi_t.prob(p.state, p.action);
        let rho = theta[idx] / pi;
        let unclipped = if p.adv > 0.0 {
            rho < 1.0 + eps
        } else if p.adv < 0.0 {
            rho > 1.0 - eps
        } else {
            false
        };
        let g = if unclipped { p.adv / pi } else { 0.0 };
        accumulate(&mut grad, idx, scale * g);
    }
    Ok(grad)
}

/// Gradient of [`batch_hinge_loss`] assembled from [`pair_subgradient`].
pub fn hinge_loss_grad(
    theta: &[f64],
    pi_t: &TabularPolicy,
    batch: &Batch,
    spec: &HingeLossSpec,
) -> Result<SparseGrad> {
    check_theta_shape(theta, pi_t)?;
    let na = pi_t.n_actions();
    let scale = 1.0 / batch.len() as f64;
    let mut grad = SparseGrad::new();
    for p in &batch.pairs {
        let idx = p.state * na + p.action;
        let log_theta = ln_checked(theta[idx], "theta")?;
        let (g, _) = pair_subgradient(log_theta, pi_t.log_prob(p.state, p.action), p.adv, spec)?;
        accumulate(&mut grad, idx, scale * g);
    }
    Ok(grad)
}

/// Smallest `|h(theta) sgn(A) - eps|` over the batch for the ratio classifier.
pub fn kink_distance(theta: &[f64], pi_t: &TabularPolicy, batch: &Batch, eps: f64) -> f64 {
    let na = pi_t.n_actions();
    batch
        .pairs
        .iter()
        .map(|p| {
            let rho = theta[p.state * na + p.action] / pi_t.prob(p.state, p.action);
            ((rho - 1.0) * sign(p.adv) - eps).abs()
        })
        .fold(f64::INFINITY, f64::min)
}

/// `max_i |d/dtheta_i L^clip + d/dtheta_i L_hinge|` for the ratio classifier
/// with `|A|` weights, whose sum vanishes away from clip boundaries.
///
/// Rejects `theta` within [`KINK_TOL`] of a boundary.
pub fn gradient_equivalence(
    theta: &[f64],
    pi_t: &TabularPolicy,
    batch: &Batch,
    eps: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "must be nonempty"));
    }
    if kink_distance(theta, pi_t, batch, eps) <= KINK_TOL {
        return Err(Error::NearKink(KINK_TOL));
    }
    let spec = HingeLossSpec::new(ClassifierKind::Ratio, eps, WeightScheme::AbsAdv)?;
    let clip_grad = clipped_objective_grad(theta, pi_t, batch, eps)?;
    let hinge_grad = hinge_loss_grad(theta, pi_t, batch, &spec)?;
    Ok(max_sum_residual(&clip_grad, &hinge_grad))
}

/// `max_i |a_i + b_i|` over the union of the two supports.
pub fn max_sum_residual(a: &SparseGrad, b: &SparseGrad) -> f64 {
    let mut worst: f64 = 0.0;
    for &(i, ga) in a {
        let gb = b.iter().find(|(j, _)| *j == i).map(|e| e.1).unwrap_or(0.0);
        worst = worst.max((ga + gb).abs());
    }
    for &(i, gb) in b {
        if !a.iter().any(|(j, _)| *j == i) {
            worst = worst.max(gb.abs());
        }
    }
    worst
}

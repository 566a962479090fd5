//! Neural PPO-Clip with energy-based policies.
//!
//! Every outer iteration fits a critic by projected TD, turns it into
//! advantages, runs EMDA on the softmax table of the current policy, and
//! regresses the energy network onto the EMDA target by projected SGD.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::emda::{run_emda, EmdaConfig, EmdaResult};
use crate::error::{Error, Result};
use crate::hinge::{Batch, ClassifierKind, HingeLossSpec, Pair, WeightScheme};
use crate::mdp::{evaluate_policy_exact, performance, value_iteration, visitation, Mdp, TabularPolicy};
use crate::nn::{FeatureEncoding, InitScheme, TwoLayerNet};
use crate::rng::{stream, stream_rng, Rng};

/// Learned advantages at or below this magnitude are left out of the EMDA batch.
pub const NEURAL_ZERO_ADV_TOL: f64 = 1e-12;

/// `pi(a|s) ∝ exp(f(s,a) / tau)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyPolicy {
    pub net: TwoLayerNet,
    pub tau: f64,
}

impl EnergyPolicy {
    pub fn table(&self, enc: &FeatureEncoding) -> TabularPolicy {
        let logits: Vec<f64> = enc.evaluate(&self.net).iter().map(|f| f / self.tau).collect();
        TabularPolicy::from_logits(enc.n_states, enc.n_actions, &logits)
    }
}

/// `tau_t = sqrt(T) / (K t)` for `t >= 1`.
pub fn temperature(n_iters: usize, k_max: usize, t: usize) -> f64 {
    assert!(t >= 1, "temperature is undefined at t = 0");
    (n_iters as f64).sqrt() / (k_max as f64 * t as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralRunConfig {
    pub n_iters: usize,
    pub emda: EmdaConfig,
    pub spec: HingeLossSpec,
    pub t_upd: usize,
    pub width_f: usize,
    pub width_q: usize,
    pub radius_f: f64,
    pub radius_q: f64,
    /// Use `eta = 1/sqrt(T)` in place of `emda.eta`.
    pub paper_schedule: bool,
    pub init: InitScheme,
    /// Start each TD and SGD solve from the previous solution instead of
    /// from the initial weights.
    pub warm_start: bool,
    pub seed: u64,
}

impl NeuralRunConfig {
    /// Width 256, radius 10, ratio classifier with policy-weighted advantages,
    /// margin 0.2, K = 5, step size `1/sqrt(T)`.
    pub fn defaults(n_iters: usize, t_upd: usize, seed: u64) -> Self {
        NeuralRunConfig {
            n_iters,
            emda: EmdaConfig { eta: 0.01, k_max: 5 },
            spec: HingeLossSpec::new(ClassifierKind::Ratio, 0.2, WeightScheme::PolicyWeighted)
                .expect("valid default spec"),
            t_upd,
            width_f: 256,
            width_q: 256,
            radius_f: 10.0,
            radius_q: 10.0,
            paper_schedule: true,
            init: InitScheme::Symmetric,
            warm_start: true,
            seed,
        }
    }

    pub fn eta(&self) -> f64 {
        if self.paper_schedule {
            1.0 / (self.n_iters as f64).sqrt()
        } else {
            self.emda.eta
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iters == 0 {
            return Err(Error::invalid("T", "must be at least 1"));
        }
        if self.t_upd == 0 {
            return Err(Error::invalid("t_upd", "must be at least 1"));
        }
        for (key, w) in [("width_f", self.width_f), ("width_q", self.width_q)] {
            if w == 0 || (self.init == InitScheme::Symmetric && w % 2 != 0) {
                return Err(Error::invalid(key, format!("{w} is not a usable width for {:?} init", self.init)));
            }
        }
        for (key, r) in [("radius_f", self.radius_f), ("radius_q", self.radius_q)] {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::invalid(key, format!("must be positive and finite, got {r}")));
            }
        }
        self.spec.validate()?;
        EmdaConfig {
            eta: self.eta(),
            k_max: self.emda.k_max,
        }
        .validate()
    }
}

/// `(s, a, a0, s', a')` with `(s, a) ~ sigma_t`, `a0 ~ uniform`,
/// `s' ~ P(.|s,a)`, `a' ~ pi_t(.|s')`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleTuple {
    pub s: usize,
    pub a: usize,
    pub a0: usize,
    pub s_next: usize,
    pub a_next: usize,
}

/// Cached samplers for one policy on one MDP.
struct Sampler {
    mu: WeightedIndex<f64>,
    policy: Vec<WeightedIndex<f64>>,
    transition: Vec<WeightedIndex<f64>>,
    gamma: f64,
    n_actions: usize,
}

impl Sampler {
    fn new(mdp: &Mdp, pi: &TabularPolicy) -> Self {
        let weighted = |w: Vec<f64>| WeightedIndex::new(w).expect("probability rows are valid weights");
        Sampler {
            mu: weighted(mdp.mu().to_vec()),
            policy: (0..mdp.n_states()).map(|s| weighted(pi.row(s))).collect(),
            transition: (0..mdp.n_states())
                .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
                .map(|(s, a)| weighted(mdp.next_state_dist(s, a).to_vec()))
                .collect(),
            gamma: mdp.gamma(),
            n_actions: mdp.n_actions(),
        }
    }

    fn step(&self, s: usize, a: usize, rng: &mut Rng) -> usize {
        self.transition[s * self.n_actions + a].sample(rng)
    }

    /// A state from the discounted visitation: roll forward from `mu`,
    /// stopping with probability `1 - gamma` before each step.
    fn visit(&self, rng: &mut Rng) -> usize {
        let mut s = self.mu.sample(rng);
        while rng.random::<f64>() < self.gamma {
            let a = self.policy[s].sample(rng);
            s = self.step(s, a, rng);
        }
        s
    }

    fn tuple(&self, rng: &mut Rng) -> SampleTuple {
        let s = self.visit(rng);
        let a = self.policy[s].sample(rng);
        let a0 = rng.random_range(0..self.n_actions);
        let s_next = self.step(s, a, rng);
        let a_next = self.policy[s_next].sample(rng);
        SampleTuple { s, a, a0, s_next, a_next }
    }
}

pub fn sample_tuples(mdp: &Mdp, pi: &TabularPolicy, n: usize, rng: &mut Rng) -> Vec<SampleTuple> {
    let sampler = Sampler::new(mdp, pi);
    (0..n).map(|_| sampler.tuple(rng)).collect()
}

/// Running mean of the weight path.
struct PathAverage {
    sum: Vec<f64>,
    count: usize,
}

impl PathAverage {
    fn new(len: usize) -> Self {
        PathAverage { sum: vec![0.0; len], count: 0 }
    }

    fn add(&mut self, w: &[f64]) {
        for (s, v) in self.sum.iter_mut().zip(w) {
            *s += v;
        }
        self.count += 1;
    }

    fn into_net(self, mut net: TwoLayerNet) -> TwoLayerNet {
        let k = 1.0 / self.count as f64;
        let avg: Vec<f64> = self.sum.iter().map(|s| s * k).collect();
        net.set_alpha(&avg);
        net
    }
}

/// Projected TD(0) starting from the current weights of `q_net`, step
/// `t_upd^{-1/2}`, one tuple per step. Returns the average of
/// `omega(0), ..., omega(t_upd - 1)`. The ball stays centred at init.
pub fn td_policy_eval(mdp: &Mdp, q_net: &TwoLayerNet, tuples: &[SampleTuple]) -> TwoLayerNet {
    let enc = FeatureEncoding::new(mdp.n_states(), mdp.n_actions());
    let feats = enc.table();
    let na = mdp.n_actions();
    let step = 1.0 / (tuples.len() as f64).sqrt();
    let mut net = q_net.clone();
    let mut avg = PathAverage::new(net.alpha().len());
    for tup in tuples {
        avg.add(net.alpha());
        let x = &feats[tup.s * na + tup.a];
        let target = mdp.reward(tup.s, tup.a) + mdp.gamma() * net.forward(&feats[tup.s_next * na + tup.a_next]);
        let delta = net.forward(x) - target;
        net.descend(x, step * delta);
        net.project_ball();
    }
    avg.into_net(net)
}

/// Projected SGD on `(f(s, a0) - target(s, a0))^2 / 2` from the current
/// weights of `f_net`, averaged like [`td_policy_eval`]. `target` is indexed
/// `s * n_actions + a`.
pub fn sgd_policy_improve(
    enc: &FeatureEncoding,
    f_net: &TwoLayerNet,
    target: &[f64],
    tuples: &[SampleTuple],
) -> TwoLayerNet {
    let feats = enc.table();
    let na = enc.n_actions;
    let step = 1.0 / (tuples.len() as f64).sqrt();
    let mut net = f_net.clone();
    let mut avg = PathAverage::new(net.alpha().len());
    for tup in tuples {
        avg.add(net.alpha());
        let i = tup.s * na + tup.a0;
        let delta = net.forward(&feats[i]) - target[i];
        net.descend(&feats[i], step * delta);
        net.project_ball();
    }
    avg.into_net(net)
}

/// `A(s,a) = Q(s,a) - sum_b pi(b|s) Q(s,b)`.
pub fn advantage_from_q(q: &[f64], pi: &TabularPolicy) -> Vec<f64> {
    let na = pi.n_actions();
    let mut adv = vec![0.0; q.len()];
    for s in 0..pi.n_states() {
        let row = &q[s * na..(s + 1) * na];
        let v: f64 = row.iter().enumerate().map(|(a, qa)| pi.prob(s, a) * qa).sum();
        for a in 0..na {
            adv[s * na + a] = row[a] - v;
        }
    }
    adv
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralIteration {
    pub iter: usize,
    /// `tau_{t+1}`, the temperature of the policy produced by this iteration.
    pub tau: f64,
    /// `L(pi*) - L(pi_t)`.
    pub gap: f64,
    pub min_gap: f64,
    /// Critic error against the exact `Q^{pi_t}`, weighted by `sigma_t`.
    pub td_mse: f64,
    /// Regression error against the EMDA target, weighted by the
    /// visitation times the uniform policy.
    pub sgd_mse: f64,
    pub clip_fraction: f64,
    pub c_range: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralRunRecord {
    pub iterations: Vec<NeuralIteration>,
    pub eta: f64,
    pub k_max: usize,
    pub final_policy: TabularPolicy,
    pub final_gap: f64,
    pub energy: EnergyPolicy,
    pub critic: TwoLayerNet,
}

impl NeuralRunRecord {
    /// Smallest gap over `pi_0, ..., pi_T`.
    pub fn best_gap(&self) -> f64 {
        self.iterations
            .iter()
            .map(|it| it.gap)
            .fold(self.final_gap, f64::min)
    }

    /// CSV with header `iter,tau,gap,min_gap,td_mse,sgd_mse,clip_fraction,c_min,c_max`.
    /// The C columns are empty when no pair was updated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,tau,gap,min_gap,td_mse,sgd_mse,clip_fraction,c_min,c_max\n");
        for it in &self.iterations {
            let (lo, hi) = match it.c_range {
                Some((lo, hi)) => (lo.to_string(), hi.to_string()),
                None => (String::new(), String::new()),
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                it.iter, it.tau, it.gap, it.min_gap, it.td_mse, it.sgd_mse, it.clip_fraction, lo, hi
            )
            .unwrap();
        }
        out
    }
}

/// `(min C_t, max C_t)` over every updated pair of every iteration.
pub fn c_bound_report(run: &NeuralRunRecord) -> Option<(f64, f64)> {
    run.iterations
        .iter()
        .filter_map(|it| it.c_range)
        .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
}

fn check_finite(values: &[f64], iteration: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(iteration))
    }
}

pub fn run_neural(mdp: &Mdp, cfg: &NeuralRunConfig) -> Result<NeuralRunRecord> {
    run_neural_observed(mdp, cfg, &mut |_, _| {})
}

/// [`run_neural`], handing every outer iteration's EMDA result to `observe`.
pub fn run_neural_observed(
    mdp: &Mdp,
    cfg: &NeuralRunConfig,
    observe: &mut dyn FnMut(usize, &EmdaResult),
) -> Result<NeuralRunRecord> {
    cfg.validate()?;
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let enc = FeatureEncoding::new(ns, na);
    let emda = EmdaConfig {
        eta: cfg.eta(),
        k_max: cfg.emda.k_max,
    };

    let (pi_star, _) = value_iteration(mdp, 1e-12)?;
    let nu_star = visitation(mdp, &pi_star)?;
    let l_star = performance(mdp, &pi_star, &nu_star)?;

    let f_init = TwoLayerNet::init(
        cfg.width_f,
        enc.dim(),
        cfg.radius_f,
        cfg.init,
        &mut stream_rng(cfg.seed, stream::ENERGY_NET),
    )?;
    let q_init = TwoLayerNet::init(
        cfg.width_q,
        enc.dim(),
        cfg.radius_q,
        cfg.init,
        &mut stream_rng(cfg.seed, stream::CRITIC_NET),
    )?;
    let mut tuple_rng = stream_rng(cfg.seed, stream::TUPLES);

    let mut pi = TabularPolicy::uniform(ns, na);
    // tau_t^{-1} f_t on every pair; zero for the uniform start.
    let mut energy = vec![0.0; ns * na];
    let mut f_net = f_init;
    let mut tau = f64::INFINITY;
    let mut critic = q_init;
    let mut min_gap = f64::INFINITY;
    let mut iterations = Vec::with_capacity(cfg.n_iters);

    for t in 0..cfg.n_iters {
        let tau_next = temperature(cfg.n_iters, cfg.emda.k_max, t + 1);
        let exact = evaluate_policy_exact(mdp, &pi)?;
        let nu = visitation(mdp, &pi)?;
        let gap = l_star - performance(mdp, &pi, &nu_star)?;
        min_gap = min_gap.min(gap);

        let tuples = sample_tuples(mdp, &pi, cfg.t_upd, &mut tuple_rng);
        if !cfg.warm_start {
            critic.reset();
        }
        critic = td_policy_eval(mdp, &critic, &tuples);
        let q = enc.evaluate(&critic);
        check_finite(&q, t)?;
        let adv = advantage_from_q(&q, &pi);
        let td_mse: f64 = (0..ns * na)
            .map(|i| nu.sigma[i] * (q[i] - exact.q[i]).powi(2))
            .sum();

        let mut states: Vec<usize> = Vec::new();
        for tup in &tuples {
            if !states.contains(&tup.s) {
                states.push(tup.s);
            }
        }
        let batch = Batch::new(
            states
                .iter()
                .flat_map(|&s| (0..na).map(move |a| (s, a)))
                .filter(|&(s, a)| adv[s * na + a].abs() > NEURAL_ZERO_ADV_TOL)
                .map(|(s, a)| Pair {
                    state: s,
                    action: a,
                    adv: adv[s * na + a],
                })
                .collect(),
        );
        let res = run_emda(&pi, &batch, &cfg.spec, &emda)?;
        observe(t, &res);
        let c_range = batch
            .pairs
            .iter()
            .map(|p| res.c(p.state, p.action))
            .fold(None, |acc: Option<(f64, f64)>, c| match acc {
                None => Some((c, c)),
                Some((lo, hi)) => Some((lo.min(c), hi.max(c))),
            });

        let target: Vec<f64> = (0..ns * na)
            .map(|i| tau_next * (res.c_table[i] * adv[i] + energy[i]))
            .collect();
        check_finite(&target, t)?;
        if !cfg.warm_start {
            f_net.reset();
        }
        f_net = sgd_policy_improve(&enc, &f_net, &target, &tuples);
        let f = enc.evaluate(&f_net);
        check_finite(&f, t)?;
        let sgd_mse: f64 = (0..ns * na)
            .map(|i| nu.sigma_uniform[i] * (f[i] - target[i]).powi(2))
            .sum();

        energy = f.iter().map(|v| v / tau_next).collect();
        pi = TabularPolicy::from_logits(ns, na, &energy);
        check_finite(pi.log_probs(), t)?;
        pi.require_strictly_positive()?;
        tau = tau_next;

        iterations.push(NeuralIteration {
            iter: t,
            tau: tau_next,
            gap,
            min_gap,
            td_mse,
            sgd_mse,
            clip_fraction: res.clip_fraction,
            c_range,
        });
    }

    let final_gap = l_star - performance(mdp, &pi, &nu_star)?;
    Ok(NeuralRunRecord {
        iterations,
        eta: emda.eta,
        k_max: emda.k_max,
        final_policy: pi,
        final_gap,
        energy: EnergyPolicy { net: f_net, tau },
        critic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temperature_schedule() {
        assert_eq!(temperature(16, 4, 1), 1.0);
        assert_eq!(temperature(16, 4, 2), 0.5);
        assert!((temperature(100, 5, 3) - 10.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn advantage_arithmetic() {
        let pi = TabularPolicy::uniform(1, 2);
        assert_eq!(advantage_from_q(&[1.0, 0.0], &pi), vec![0.5, -0.5]);
        assert_eq!(advantage_from_q(&[3.0, 3.0], &pi), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_energy_is_uniform() {
        let net = TwoLayerNet::init(8, 5, 1.0, InitScheme::Symmetric, &mut stream_rng(0, 0)).unwrap();
        let pol = EnergyPolicy { net, tau: 0.3 };
        assert_eq!(pol.table(&FeatureEncoding::new(3, 2)), TabularPolicy::uniform(3, 2));
    }

    #[test]
    fn one_state_tuples_stay_put() {
        let mdp = Mdp::new(1, 3, 0.7, vec![1.0], vec![0.0; 3], vec![1.0; 3], None).unwrap();
        let tuples = sample_tuples(&mdp, &TabularPolicy::uniform(1, 3), 200, &mut stream_rng(0, 0));
        assert!(tuples.iter().all(|t| t.s == 0 && t.s_next == 0));
    }

    #[test]
    fn zero_reward_fixed_point() {
        let mdp = Mdp::new(2, 2, 0.9, vec![0.5, 0.5], vec![0.0; 4], vec![0.5; 8], None).unwrap();
        let q = TwoLayerNet::init(16, 4, 10.0, InitScheme::Symmetric, &mut stream_rng(1, 0)).unwrap();
        let tuples = sample_tuples(&mdp, &TabularPolicy::uniform(2, 2), 64, &mut stream_rng(2, 0));
        let fitted = td_policy_eval(&mdp, &q, &tuples);
        let drift = fitted
            .alpha()
            .iter()
            .zip(q.alpha0())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-14, "{drift}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = NeuralRunConfig::defaults(4, 8, 0);
        assert!(cfg.validate().is_ok());
        cfg.width_f = 7;
        assert!(cfg.validate().is_err());
        cfg.width_f = 8;
        cfg.t_upd = 0;
        assert!(cfg.validate().is_err());
    }
}

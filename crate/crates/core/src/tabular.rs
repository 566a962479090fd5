//! Tabular PPO-Clip with direct parameterization and exact advantages.
//!
//! Each iteration draws a batch of state-action pairs with distinct states,
//! evaluates the current policy exactly, drops zero-advantage pairs, and
//! replaces the policy by the EMDA target. State-wise improvement is checked
//! after every update.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::emda::{run_emda, EmdaConfig, EmdaResult};
use crate::error::{Error, Result};
use crate::hinge::{Batch, HingeLossSpec, Pair};
use crate::mdp::{evaluate_policy_exact, value_iteration, Mdp, TabularPolicy};
use crate::rng::{stream, stream_rng, Rng};

/// Slack allowed when checking `V^{t+1}(s) >= V^t(s)`.
pub const IMPROVEMENT_TOL: f64 = 1e-12;
/// Advantages at or below this magnitude are treated as zero.
pub const ZERO_ADV_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    /// Round-robin over pairs in action-major order
    /// `(0,0), (1,0), ..., (S-1,0), (0,1), ...`.
    CyclicSweep,
    /// I.i.d. uniform pairs; later draws of an already-used state are dropped.
    UniformRandom,
}

impl FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclic" | "cyclic-sweep" => Ok(BatchMode::CyclicSweep),
            "random" | "uniform-random" => Ok(BatchMode::UniformRandom),
            other => Err(Error::invalid("schedule", format!("unknown schedule `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSchedule {
    pub mode: BatchMode,
    pub batch_size: usize,
}

/// Pairs for `iteration`. Cyclic batches are a pure function of the
/// iteration index; random batches consume `rng`.
pub fn next_batch(
    schedule: &BatchSchedule,
    n_states: usize,
    n_actions: usize,
    iteration: usize,
    rng: &mut Rng,
) -> Result<Vec<(usize, usize)>> {
    if schedule.batch_size == 0 || schedule.batch_size > n_states {
        return Err(Error::invalid(
            "batch_size",
            format!("{} not in [1, n_states = {n_states}]", schedule.batch_size),
        ));
    }
    let b = schedule.batch_size;
    match schedule.mode {
        BatchMode::CyclicSweep => {
            let total = n_states * n_actions;
            let start = (iteration % total) * b;
            Ok((0..b)
                .map(|i| {
                    let j = (start + i) % total;
                    (j % n_states, j / n_states)
                })
                .collect())
        }
        BatchMode::UniformRandom => {
            let mut out: Vec<(usize, usize)> = Vec::with_capacity(b);
            for _ in 0..b {
                let s = rng.random_range(0..n_states);
                let a = rng.random_range(0..n_actions);
                if !out.iter().any(|(s2, _)| *s2 == s) {
                    out.push((s, a));
                }
            }
            Ok(out)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularRunConfig {
    pub spec: HingeLossSpec,
    pub emda: EmdaConfig,
    pub schedule: BatchSchedule,
    pub n_iters: usize,
    pub seed: u64,
    /// Stop once the gap stays below this for 10 consecutive iterations.
    pub early_stop_tol: Option<f64>,
}

impl TabularRunConfig {
    /// Clipping range 0.3, EMDA step 0.01 and 5 EMDA iterations, unit weights,
    /// full-width cyclic batches.
    pub fn defaults(spec: HingeLossSpec, n_states: usize, n_iters: usize, seed: u64) -> Self {
        TabularRunConfig {
            spec,
            emda: EmdaConfig { eta: 0.01, k_max: 5 },
            schedule: BatchSchedule {
                mode: BatchMode::CyclicSweep,
                batch_size: n_states,
            },
            n_iters,
            seed,
            early_stop_tol: None,
        }
    }
}

/// Metrics for one iteration `t`, describing the update `pi^t -> pi^{t+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularIteration {
    pub iter: usize,
    /// `V^t`.
    pub v: Vec<f64>,
    /// `max_s (V*(s) - V^t(s))`.
    pub gap: f64,
    /// `V^{t+1}(s) - V^t(s)` per state.
    pub improvement: Vec<f64>,
    pub clip_fraction: f64,
    /// Mean entropy of `pi^t` over states.
    pub entropy: f64,
    /// Range of `C_t` over updated pairs; `None` when nothing was updated.
    pub c_range: Option<(f64, f64)>,
}

impl TabularIteration {
    pub fn min_improvement(&self) -> f64 {
        self.improvement.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Sign sets of the final advantage for one state, with the mass the final
/// policy puts on negative-advantage actions.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSigns {
    pub positive: Vec<usize>,
    pub zero: Vec<usize>,
    pub negative: Vec<usize>,
    pub negative_mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularRunRecord {
    pub iterations: Vec<TabularIteration>,
    pub v_star: Vec<f64>,
    pub final_policy: TabularPolicy,
    pub final_v: Vec<f64>,
    pub final_gap: f64,
    pub final_signs: Vec<StateSigns>,
    /// Smallest `pi^t(a|s)` seen over the run, in log space.
    pub min_log_prob: f64,
    pub clamp_count: usize,
}

impl TabularRunRecord {
    /// Overall `(min C_t, max C_t)` over updated pairs of every iteration.
    pub fn c_range(&self) -> Option<(f64, f64)> {
        self.iterations
            .iter()
            .filter_map(|it| it.c_range)
            .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }

    /// CSV with header `iter,gap,min_improvement,clip_fraction,entropy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,gap,min_improvement,clip_fraction,entropy\n");
        for it in &self.iterations {
            writeln!(
                out,
                "{},{},{},{},{}",
                it.iter,
                it.gap,
                it.min_improvement(),
                it.clip_fraction,
                it.entropy
            )
            .unwrap();
        }
        out
    }
}

fn sup_gap(v_star: &[f64], v: &[f64]) -> f64 {
    v_star
        .iter()
        .zip(v)
        .map(|(a, b)| a - b)
        .fold(0.0, f64::max)
}

/// Runs tabular PPO-Clip from the uniform policy.
pub fn run_tabular(mdp: &Mdp, cfg: &TabularRunConfig) -> Result<TabularRunRecord> {
    run_tabular_observed(mdp, cfg, &mut |_, _| {})
}

/// [`run_tabular`], handing every iteration's EMDA result to `observe`.
pub fn run_tabular_observed(
    mdp: &Mdp,
    cfg: &TabularRunConfig,
    observe: &mut dyn FnMut(usize, &EmdaResult),
) -> Result<TabularRunRecord> {
    cfg.spec.validate()?;
    cfg.emda.validate()?;
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let (_, star) = value_iteration(mdp, 1e-12)?;
    let mut rng = stream_rng(cfg.seed, stream::BATCH);

    let mut pi = TabularPolicy::uniform(ns, na);
    let mut tables = evaluate_policy_exact(mdp, &pi)?;
    let mut iterations = Vec::with_capacity(cfg.n_iters);
    let mut min_log_prob = pi.log_probs().iter().cloned().fold(f64::INFINITY, f64::min);
    let mut clamp_count = 0;
    let mut below_tol = 0usize;

    for t in 0..cfg.n_iters {
        let gap = sup_gap(&star.v, &tables.v);
        let drawn = next_batch(&cfg.schedule, ns, na, t, &mut rng)?;
        let batch = Batch::new(
            drawn
                .iter()
                .map(|&(s, a)| Pair {
                    state: s,
                    action: a,
                    adv: tables.adv(s, a),
                })
                .collect(),
        )
        .without_zero_advantage(ZERO_ADV_TOL);

        let res = run_emda(&pi, &batch, &cfg.spec, &cfg.emda)?;
        observe(t, &res);
        clamp_count += res.clamp_count;
        let c_range = batch
            .pairs
            .iter()
            .map(|p| res.c(p.state, p.action))
            .fold(None, |acc: Option<(f64, f64)>, c| match acc {
                None => Some((c, c)),
                Some((lo, hi)) => Some((lo.min(c), hi.max(c))),
            });

        let next_pi = res.target;
        let next_tables = evaluate_policy_exact(mdp, &next_pi)?;
        let improvement: Vec<f64> = next_tables
            .v
            .iter()
            .zip(&tables.v)
            .map(|(a, b)| a - b)
            .collect();
        if let Some((s, &d)) = improvement
            .iter()
            .enumerate()
            .find(|(_, d)| **d < -IMPROVEMENT_TOL)
        {
            return Err(Error::ImprovementViolation {
                iteration: t,
                state: s,
                delta: d,
            });
        }
        if !next_pi.is_strictly_positive() {
            next_pi.require_strictly_positive()?;
        }
        iterations.push(TabularIteration {
            iter: t,
            v: tables.v.clone(),
            gap,
            improvement,
            clip_fraction: res.clip_fraction,
            entropy: pi.mean_entropy(),
            c_range,
        });
        pi = next_pi;
        tables = next_tables;
        min_log_prob = pi
            .log_probs()
            .iter()
            .cloned()
            .fold(min_log_prob, f64::min);

        if let Some(tol) = cfg.early_stop_tol {
            if sup_gap(&star.v, &tables.v) < tol {
                below_tol += 1;
                if below_tol >= 10 {
                    break;
                }
            } else {
                below_tol = 0;
            }
        }
    }

    let final_signs = (0..ns)
        .map(|s| {
            let mut signs = StateSigns {
                positive: vec![],
                zero: vec![],
                negative: vec![],
                negative_mass: 0.0,
            };
            for a in 0..na {
                let adv = tables.adv(s, a);
                if adv > ZERO_ADV_TOL {
                    signs.positive.push(a);
                } else if adv < -ZERO_ADV_TOL {
                    signs.negative.push(a);
                    signs.negative_mass += pi.prob(s, a);
                } else {
                    signs.zero.push(a);
                }
            }
            signs
        })
        .collect();

    Ok(TabularRunRecord {
        iterations,
        final_gap: sup_gap(&star.v, &tables.v),
        v_star: star.v,
        final_v: tables.v,
        final_policy: pi,
        final_signs,
        min_log_prob,
        clamp_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hinge::{ClassifierKind, WeightScheme};

    #[test]
    fn cyclic_enumeration_order() {
        let sched = BatchSchedule {
            mode: BatchMode::CyclicSweep,
            batch_size: 2,
        };
        let mut rng = stream_rng(0, 0);
        assert_eq!(next_batch(&sched, 2, 2, 0, &mut rng).unwrap(), vec![(0, 0), (1, 0)]);
        assert_eq!(next_batch(&sched, 2, 2, 1, &mut rng).unwrap(), vec![(0, 1), (1, 1)]);
        let too_big = BatchSchedule {
            mode: BatchMode::CyclicSweep,
            batch_size: 3,
        };
        assert!(next_batch(&too_big, 2, 2, 0, &mut rng).is_err());
    }

    #[test]
    fn cyclic_batches_have_distinct_states_and_cover_pairs() {
        for (ns, na, b) in [(3, 2, 2), (5, 3, 5), (4, 4, 3), (7, 2, 1)] {
            let sched = BatchSchedule {
                mode: BatchMode::CyclicSweep,
                batch_size: b,
            };
            let mut rng = stream_rng(0, 0);
            let mut counts = vec![0usize; ns * na];
            for t in 0..4 * ns * na {
                let pairs = next_batch(&sched, ns, na, t, &mut rng).unwrap();
                let mut states: Vec<_> = pairs.iter().map(|p| p.0).collect();
                states.dedup();
                states.sort();
                states.dedup();
                assert_eq!(states.len(), pairs.len());
                for (s, a) in pairs {
                    counts[s * na + a] += 1;
                }
            }
            assert!(counts.iter().all(|&c| c >= 4), "{counts:?}");
        }
    }

    #[test]
    fn random_batches_drop_duplicate_states() {
        let sched = BatchSchedule {
            mode: BatchMode::UniformRandom,
            batch_size: 3,
        };
        let mut rng = stream_rng(1, 0);
        let mut saw_short = false;
        for t in 0..200 {
            let pairs = next_batch(&sched, 3, 2, t, &mut rng).unwrap();
            let mut states: Vec<_> = pairs.iter().map(|p| p.0).collect();
            states.sort();
            states.dedup();
            assert_eq!(states.len(), pairs.len());
            saw_short |= pairs.len() < 3;
        }
        assert!(saw_short);
    }

    #[test]
    fn uniform_optimal_mdp_never_moves() {
        let mdp = Mdp::new(
            2,
            3,
            0.9,
            vec![0.5, 0.5],
            vec![0.4; 6],
            vec![0.3, 0.7, 0.3, 0.7, 0.3, 0.7, 0.6, 0.4, 0.6, 0.4, 0.6, 0.4],
            None,
        )
        .unwrap();
        let spec = HingeLossSpec::new(ClassifierKind::Ratio, 0.3, WeightScheme::Unit).unwrap();
        let cfg = TabularRunConfig::defaults(spec, 2, 50, 0);
        let rec = run_tabular(&mdp, &cfg).unwrap();
        assert_eq!(rec.final_policy, TabularPolicy::uniform(2, 3));
        assert!(rec.iterations.iter().all(|it| it.gap == 0.0));
    }

    #[test]
    fn bandit_converges_monotonically() {
        let mdp = Mdp::new(1, 2, 0.5, vec![1.0], vec![1.0, 0.0], vec![1.0, 1.0], None).unwrap();
        let spec = HingeLossSpec::new(ClassifierKind::Ratio, 0.3, WeightScheme::Unit).unwrap();
        let cfg = TabularRunConfig::defaults(spec, 1, 400, 0);
        let rec = run_tabular(&mdp, &cfg).unwrap();
        assert!((rec.v_star[0] - 2.0).abs() < 1e-12);
        assert!(rec.final_gap < 1e-6, "gap {}", rec.final_gap);
        let probs: Vec<f64> = rec
            .iterations
            .iter()
            .map(|it| (it.v[0] - 1.0) / 1.0)
            .collect();
        assert!(probs.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn csv_header_and_rows() {
        let mdp = Mdp::new(1, 2, 0.5, vec![1.0], vec![1.0, 0.0], vec![1.0, 1.0], None).unwrap();
        let spec = HingeLossSpec::new(ClassifierKind::Sub, 0.3, WeightScheme::Unit).unwrap();
        let rec = run_tabular(&mdp, &TabularRunConfig::defaults(spec, 1, 3, 0)).unwrap();
        let csv = rec.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "iter,gap,min_improvement,clip_fraction,entropy");
        assert_eq!(lines.len(), 4);
    }
}

//! Command-line front end: MDP generation, single runs, classifier sweeps,
//! checks and manifest replay.
//!
//! Every run writes a `manifest.json` holding the fully resolved job and the
//! MDP inline, so `hingepo replay` can regenerate the outputs byte for byte.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::checks::{run_suite, Suite};
use crate::emda::{EmdaConfig, EmdaResult};
use crate::error::{Error, Result};
use crate::hinge::{ClassifierKind, HingeLossSpec, WeightScheme};
use crate::mdp::{random_mdp, Mdp, MdpFile};
use crate::neural::{run_neural, run_neural_observed, NeuralRunConfig, NeuralRunRecord};
use crate::nn::InitScheme;
use crate::rng::{stream, stream_rng};
use crate::tabular::{run_tabular, run_tabular_observed, BatchMode, BatchSchedule, TabularRunConfig, TabularRunRecord};

/// `git describe` of the build, or `unknown` outside a checkout.
pub const GIT_DESCRIBE: &str = env!("HINGEPO_GIT_DESCRIBE");

#[derive(Parser, Debug)]
#[command(name = "hingepo", version, about = "PPO-Clip as hinge-loss policy optimization")]
pub struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for outputs.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON file whose keys mirror the flags; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write an MDP as JSON.
    GenMdp(GenArgs),
    /// Tabular PPO-Clip with exact advantages.
    RunTabular(RunArgs),
    /// Neural PPO-Clip.
    RunNeural(RunArgs),
    /// One run per (classifier, seed) with a summary.
    Sweep(RunArgs),
    /// Numerical checks; prints a JSON array of reports.
    Check(CheckArgs),
    /// Re-run the job recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MdpKind {
    Chain,
    Gridworld,
    Random,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenArgs {
    #[arg(long)]
    pub kind: Option<MdpKind>,
    /// States of a chain or random MDP.
    #[arg(long)]
    pub n_states: Option<usize>,
    /// Actions of a random MDP.
    #[arg(long)]
    pub n_actions: Option<usize>,
    /// Gridworld columns.
    #[arg(long)]
    pub width: Option<usize>,
    /// Gridworld rows.
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Output file; defaults to `<out-dir>/mdp.json`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Flags shared by `run-tabular`, `run-neural` and `sweep`. Each command
/// rejects the flags that do not apply to it.
#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunArgs {
    /// MDP JSON file.
    #[arg(long)]
    pub mdp: Option<PathBuf>,
    /// `ratio`, `sub`, `root` or `log`.
    #[arg(long)]
    pub classifier: Option<ClassifierKind>,
    /// Margin of the hinge loss, i.e. the clipping range.
    #[arg(long)]
    pub margin: Option<f64>,
    /// `unit`, `abs-adv` or `policy-weighted`.
    #[arg(long)]
    pub weights: Option<WeightScheme>,
    /// Upper clamp on the per-pair weight.
    #[arg(long)]
    pub w_max: Option<f64>,
    /// EMDA step size.
    #[arg(long, visible_alias = "eta")]
    #[serde(alias = "eta")]
    pub emda_step: Option<f64>,
    /// EMDA iterations per outer iteration.
    #[arg(long, visible_alias = "k")]
    #[serde(alias = "k")]
    pub emda_iters: Option<usize>,
    /// Use `eta = 1/sqrt(iterations)`.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub paper_schedule: Option<bool>,

    /// Tabular iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// States updated per iteration; defaults to all of them.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// `cyclic` or `random`.
    #[arg(long)]
    pub schedule: Option<BatchMode>,
    /// Stop after the gap stays below this for 10 iterations.
    #[arg(long)]
    pub early_stop: Option<f64>,

    /// Neural outer iterations.
    #[arg(long = "T")]
    #[serde(rename = "T")]
    pub outer_iters: Option<usize>,
    /// TD and SGD steps per outer iteration.
    #[arg(long)]
    pub t_upd: Option<usize>,
    /// Hidden width of the energy network.
    #[arg(long)]
    pub width_f: Option<usize>,
    /// Hidden width of the critic.
    #[arg(long)]
    pub width_q: Option<usize>,
    #[arg(long)]
    pub radius_f: Option<f64>,
    #[arg(long)]
    pub radius_q: Option<f64>,
    #[arg(long)]
    pub init: Option<InitScheme>,
    /// Restart TD and SGD from the initial weights every outer iteration.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cold_start: Option<bool>,

    /// Extra copy of the metrics CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dump every EMDA gradient as JSON lines.
    #[arg(long)]
    pub trace_emda: Option<PathBuf>,

    /// Sweep mode.
    #[arg(long)]
    pub mode: Option<SweepMode>,
    /// Comma-separated classifiers for a sweep.
    #[arg(long, value_delimiter = ',')]
    pub classifiers: Option<Vec<ClassifierKind>>,
    /// Comma-separated seeds for a sweep; defaults to the master seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    Tabular,
    Neural,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CheckArgs {
    #[arg(long)]
    pub suite: Option<Suite>,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Compare the regenerated outputs with the files next to the manifest.
    #[arg(long)]
    pub check: bool,
}

const COMMON_KEYS: &[&str] = &["mdp", "margin", "weights", "w-max", "emda-step", "emda-iters", "paper-schedule"];
const SINGLE_RUN_KEYS: &[&str] = &["classifier", "out", "trace-emda"];
const TABULAR_KEYS: &[&str] = &["iters", "batch-size", "schedule", "early-stop"];
const NEURAL_KEYS: &[&str] = &["T", "t-upd", "width-f", "width-q", "radius-f", "radius-q", "init", "cold-start"];

/// A fully resolved job. Replaying it needs nothing but the MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    RunTabular {
        config: TabularRunConfig,
    },
    RunNeural {
        config: NeuralRunConfig,
    },
    Sweep {
        mode: SweepMode,
        classifiers: Vec<ClassifierKind>,
        seeds: Vec<u64>,
        tabular: Option<TabularRunConfig>,
        neural: Option<NeuralRunConfig>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub job: Job,
    pub mdp: MdpFile,
    pub seeds: Vec<u64>,
    /// File names relative to `out_dir`.
    pub outputs: Vec<String>,
    pub out_dir: String,
    pub git_describe: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Either the inputs were unusable or the run itself failed.
#[derive(Debug)]
pub enum Failure {
    Config(Error),
    Run(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "invalid configuration: {e}"),
            Failure::Run(e) => write!(f, "run failed: {e}"),
        }
    }
}

/// Chain of `n` states with actions left (0) and right (1); moves are
/// deterministic and clamped at the ends, and landing on the right end pays 1.
pub fn chain(n: usize, gamma: f64) -> Result<Mdp> {
    if n == 0 {
        return Err(Error::invalid("n_states", "must be at least 1"));
    }
    let mut reward = vec![0.0; n * 2];
    let mut transition = vec![0.0; n * 2 * n];
    for s in 0..n {
        for (a, next) in [s.saturating_sub(1), (s + 1).min(n - 1)].into_iter().enumerate() {
            transition[(s * 2 + a) * n + next] = 1.0;
            if next == n - 1 {
                reward[s * 2 + a] = 1.0;
            }
        }
    }
    Mdp::new(n, 2, gamma, vec![1.0 / n as f64; n], reward, transition, None)
}

/// `width x height` grid, states row-major, actions up/right/down/left with
/// deterministic moves clamped at the walls. Landing on the bottom-right cell
/// pays 1; every other step pays 0.
pub fn gridworld(width: usize, height: usize, gamma: f64) -> Result<Mdp> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("gridworld", format!("size {width}x{height} must be at least 1x1")));
    }
    let n = width * height;
    let goal = n - 1;
    let mut reward = vec![0.0; n * 4];
    let mut transition = vec![0.0; n * 4 * n];
    for s in 0..n {
        let (r, c) = (s / width, s % width);
        let moves = [
            (r.saturating_sub(1), c),
            (r, (c + 1).min(width - 1)),
            ((r + 1).min(height - 1), c),
            (r, c.saturating_sub(1)),
        ];
        for (a, (nr, nc)) in moves.into_iter().enumerate() {
            let next = nr * width + nc;
            transition[(s * 4 + a) * n + next] = 1.0;
            if next == goal {
                reward[s * 4 + a] = 1.0;
            }
        }
    }
    Mdp::new(n, 4, gamma, vec![1.0 / n as f64; n], reward, transition, None)
}

pub fn generate_mdp(args: &GenArgs, seed: u64) -> Result<Mdp> {
    let gamma = args.gamma.unwrap_or(0.9);
    let kind = args
        .kind
        .ok_or_else(|| Error::invalid("kind", "required (chain|gridworld|random)"))?;
    match kind {
        MdpKind::Chain => chain(args.n_states.unwrap_or(5), gamma),
        MdpKind::Gridworld => gridworld(args.width.unwrap_or(3), args.height.unwrap_or(3), gamma),
        MdpKind::Random => {
            let ns = args.n_states.unwrap_or(5);
            let na = args.n_actions.unwrap_or(3);
            if ns == 0 || na == 0 {
                return Err(Error::invalid("size", "random MDPs need at least one state and one action"));
            }
            random_mdp(ns, na, gamma, &mut stream_rng(seed, stream::MDP))
        }
    }
}

/// Overlays command-line flags on the config file. `null` flags leave the
/// file's value in place.
fn merge<T: Serialize + DeserializeOwned>(flags: &T, file: &Map<String, Value>) -> Result<T> {
    let mut merged = file.clone();
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged))
        .map_err(|e| Error::invalid("config", e.to_string()))
}

fn reject_keys(args: &RunArgs, allowed: &[&str], command: &str) -> Result<()> {
    if let Value::Object(map) = serde_json::to_value(args)? {
        for (k, v) in map {
            if !v.is_null() && !allowed.contains(&k.as_str()) {
                return Err(Error::invalid(k, format!("does not apply to {command}")));
            }
        }
    }
    Ok(())
}

fn load_mdp(args: &RunArgs) -> Result<Mdp> {
    let path = args
        .mdp
        .as_ref()
        .ok_or_else(|| Error::invalid("mdp", "an MDP file is required"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid("mdp", format!("{}: {e}", path.display())))?;
    Mdp::from_json(&text)
}

fn spec_from(args: &RunArgs, classifier: ClassifierKind, default_margin: f64, default_weights: WeightScheme) -> Result<HingeLossSpec> {
    let mut spec = HingeLossSpec::new(
        classifier,
        args.margin.unwrap_or(default_margin),
        args.weights.unwrap_or(default_weights),
    )?;
    if let Some(w) = args.w_max {
        spec.w_max = w;
    }
    spec.validate()?;
    Ok(spec)
}

/// Tabular defaults: ratio classifier, unit weights, margin 0.3, step 0.01,
/// K = 5, 1000 iterations, full-width cyclic batches.
pub fn tabular_config(args: &RunArgs, mdp: &Mdp, classifier: ClassifierKind, seed: u64) -> Result<TabularRunConfig> {
    let spec = spec_from(args, classifier, 0.3, WeightScheme::Unit)?;
    let n_iters = args.iters.unwrap_or(1000);
    let eta = if args.paper_schedule.unwrap_or(false) {
        1.0 / (n_iters.max(1) as f64).sqrt()
    } else {
        args.emda_step.unwrap_or(0.01)
    };
    let cfg = TabularRunConfig {
        spec,
        emda: EmdaConfig::new(eta, args.emda_iters.unwrap_or(5))?,
        schedule: BatchSchedule {
            mode: args.schedule.unwrap_or(BatchMode::CyclicSweep),
            batch_size: args.batch_size.unwrap_or(mdp.n_states()),
        },
        n_iters,
        seed,
        early_stop_tol: args.early_stop,
    };
    if cfg.schedule.batch_size == 0 || cfg.schedule.batch_size > mdp.n_states() {
        return Err(Error::invalid("batch_size", format!("must lie in [1, {}]", mdp.n_states())));
    }
    Ok(cfg)
}

/// Neural defaults: ratio classifier, policy-weighted advantages, margin
/// 0.2, K = 5, T = 64, 2048 TD/SGD steps, width 256, radius 10.
pub fn neural_config(args: &RunArgs, classifier: ClassifierKind, seed: u64) -> Result<NeuralRunConfig> {
    let cfg = NeuralRunConfig {
        n_iters: args.outer_iters.unwrap_or(64),
        emda: EmdaConfig {
            eta: args.emda_step.unwrap_or(0.01),
            k_max: args.emda_iters.unwrap_or(5),
        },
        spec: spec_from(args, classifier, 0.2, WeightScheme::PolicyWeighted)?,
        t_upd: args.t_upd.unwrap_or(2048),
        width_f: args.width_f.unwrap_or(256),
        width_q: args.width_q.unwrap_or(256),
        radius_f: args.radius_f.unwrap_or(10.0),
        radius_q: args.radius_q.unwrap_or(10.0),
        paper_schedule: args.paper_schedule.unwrap_or(false),
        init: args.init.unwrap_or(InitScheme::Symmetric),
        warm_start: !args.cold_start.unwrap_or(false),
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn keys(groups: &[&[&'static str]]) -> Vec<&'static str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

/// Resolves a run command into a job and its MDP.
pub fn resolve_run(command: &str, args: &RunArgs, seed: u64) -> Result<(Job, Mdp)> {
    let mdp = load_mdp(args)?;
    let job = match command {
        "run-tabular" => {
            reject_keys(args, &keys(&[COMMON_KEYS, TABULAR_KEYS, SINGLE_RUN_KEYS]), command)?;
            Job::RunTabular {
                config: tabular_config(args, &mdp, args.classifier.unwrap_or(ClassifierKind::Ratio), seed)?,
            }
        }
        "run-neural" => {
            reject_keys(args, &keys(&[COMMON_KEYS, NEURAL_KEYS, SINGLE_RUN_KEYS]), command)?;
            Job::RunNeural {
                config: neural_config(args, args.classifier.unwrap_or(ClassifierKind::Ratio), seed)?,
            }
        }
        _ => {
            let mode = args
                .mode
                .ok_or_else(|| Error::invalid("mode", "required (tabular|neural)"))?;
            let specific = match mode {
                SweepMode::Tabular => TABULAR_KEYS,
                SweepMode::Neural => NEURAL_KEYS,
            };
            reject_keys(args, &keys(&[COMMON_KEYS, specific, &["mode", "classifiers", "seeds"]]), "this sweep mode")?;
            let classifiers = args.classifiers.clone().unwrap_or_else(|| ClassifierKind::ALL.to_vec());
            let seeds = args.seeds.clone().unwrap_or_else(|| vec![seed]);
            if classifiers.is_empty() || seeds.is_empty() {
                return Err(Error::invalid("sweep", "needs at least one classifier and one seed"));
            }
            let (tabular, neural) = match mode {
                SweepMode::Tabular => (Some(tabular_config(args, &mdp, ClassifierKind::Ratio, 0)?), None),
                SweepMode::Neural => (None, Some(neural_config(args, ClassifierKind::Ratio, 0)?)),
            };
            Job::Sweep {
                mode,
                classifiers,
                seeds,
                tabular,
                neural,
            }
        }
    };
    Ok((job, mdp))
}

fn write(dir: &Path, name: &str, bytes: &[u8], outputs: &mut Vec<String>) -> Result<()> {
    std::fs::write(dir.join(name), bytes)?;
    outputs.push(name.to_string());
    Ok(())
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

fn tabular_summary(rec: &TabularRunRecord) -> Value {
    json!({
        "final_gap": rec.final_gap,
        "min_gap": tabular_min_gap(rec),
        "iterations": rec.iterations.len(),
        "c_range": rec.c_range(),
        "clamp_count": rec.clamp_count,
        "min_log_prob": rec.min_log_prob,
        "negative_mass": rec.final_signs.iter().map(|s| s.negative_mass).collect::<Vec<_>>(),
        "final_policy": rec.final_policy.probs(),
    })
}

fn tabular_min_gap(rec: &TabularRunRecord) -> f64 {
    rec.iterations.iter().map(|it| it.gap).fold(rec.final_gap, f64::min)
}

fn neural_summary(rec: &NeuralRunRecord) -> Value {
    json!({
        "final_gap": rec.final_gap,
        "min_gap": rec.best_gap(),
        "eta": rec.eta,
        "c_range": crate::neural::c_bound_report(rec),
        "final_policy": rec.final_policy.probs(),
    })
}

/// Outcome of one sweep member: `(final gap, min gap)` or the error text.
type MemberResult = std::result::Result<(f64, f64, String), String>;

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (Some(mean), Some(var.sqrt()))
}

/// JSON-lines sink for EMDA gradients. The first write error is kept and
/// reported once the run ends.
struct Tracer {
    out: Option<std::io::BufWriter<std::fs::File>>,
    error: Option<std::io::Error>,
}

impl Tracer {
    fn open(path: Option<&Path>) -> Result<Self> {
        let out = match path {
            Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
            None => None,
        };
        Ok(Tracer { out, error: None })
    }

    fn record(&mut self, iter: usize, res: &EmdaResult) {
        let Some(out) = self.out.as_mut() else { return };
        if self.error.is_some() {
            return;
        }
        for g in &res.grad_log {
            let line = json!({
                "iter": iter,
                "k": g.k,
                "state": g.state,
                "action": g.action,
                "g": g.g,
                "active": g.active,
            });
            if let Err(e) = writeln!(out, "{line}") {
                self.error = Some(e);
                return;
            }
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(e) = self.error {
            return Err(e.into());
        }
        if let Some(mut out) = self.out {
            out.flush()?;
        }
        Ok(())
    }
}

/// Runs a job into `out_dir`. Returns the written file names and whether
/// every run succeeded.
pub fn execute(job: &Job, mdp: &Mdp, out_dir: &Path) -> Result<(Vec<String>, bool)> {
    execute_traced(job, mdp, out_dir, None)
}

/// [`execute`], optionally dumping EMDA gradients of a single run to `trace`.
/// The trace is a debugging aid and is not listed among the outputs.
pub fn execute_traced(job: &Job, mdp: &Mdp, out_dir: &Path, trace: Option<&Path>) -> Result<(Vec<String>, bool)> {
    std::fs::create_dir_all(out_dir)?;
    let mut outputs = Vec::new();
    match job {
        Job::RunTabular { config } => {
            let mut tracer = Tracer::open(trace)?;
            let rec = run_tabular_observed(mdp, config, &mut |t, res| tracer.record(t, res))?;
            tracer.finish()?;
            write(out_dir, "metrics.csv", rec.to_csv().as_bytes(), &mut outputs)?;
            write(out_dir, "summary.json", pretty(&tabular_summary(&rec)).as_bytes(), &mut outputs)?;
            Ok((outputs, true))
        }
        Job::RunNeural { config } => {
            let mut tracer = Tracer::open(trace)?;
            let rec = run_neural_observed(mdp, config, &mut |t, res| tracer.record(t, res))?;
            tracer.finish()?;
            write(out_dir, "metrics.csv", rec.to_csv().as_bytes(), &mut outputs)?;
            write(out_dir, "summary.json", pretty(&neural_summary(&rec)).as_bytes(), &mut outputs)?;
            write(out_dir, "energy.hpo", &rec.energy.net.to_bytes(), &mut outputs)?;
            write(out_dir, "critic.hpo", &rec.critic.to_bytes(), &mut outputs)?;
            Ok((outputs, true))
        }
        Job::Sweep {
            mode,
            classifiers,
            seeds,
            tabular,
            neural,
        } => {
            let members: Vec<(ClassifierKind, u64)> = classifiers
                .iter()
                .flat_map(|&c| seeds.iter().map(move |&s| (c, s)))
                .collect();
            let results: Vec<MemberResult> = members
                .par_iter()
                .map(|&(classifier, seed)| -> MemberResult {
                    let name = format!("{}_{}_seed{}.csv", mode_name(*mode), classifier.name(), seed);
                    let (csv, final_gap, min_gap) = match mode {
                        SweepMode::Tabular => {
                            let mut cfg = tabular.clone().expect("tabular sweep carries a config");
                            cfg.spec.classifier = classifier;
                            cfg.seed = seed;
                            let rec = run_tabular(mdp, &cfg).map_err(|e| e.to_string())?;
                            (rec.to_csv(), rec.final_gap, tabular_min_gap(&rec))
                        }
                        SweepMode::Neural => {
                            let mut cfg = neural.clone().expect("neural sweep carries a config");
                            cfg.spec.classifier = classifier;
                            cfg.seed = seed;
                            let rec = run_neural(mdp, &cfg).map_err(|e| e.to_string())?;
                            (rec.to_csv(), rec.final_gap, rec.best_gap())
                        }
                    };
                    std::fs::write(out_dir.join(&name), csv).map_err(|e| e.to_string())?;
                    Ok((final_gap, min_gap, name))
                })
                .collect();

            let mut all_ok = true;
            let mut rows = Vec::new();
            for &classifier in classifiers {
                let mut finals = Vec::new();
                let mut mins = Vec::new();
                let mut errors = Vec::new();
                for ((c, seed), res) in members.iter().zip(&results) {
                    if *c != classifier {
                        continue;
                    }
                    match res {
                        Ok((f, m, name)) => {
                            finals.push(*f);
                            mins.push(*m);
                            outputs.push(name.clone());
                        }
                        Err(e) => {
                            all_ok = false;
                            errors.push(json!({ "seed": seed, "error": e }));
                        }
                    }
                }
                let (fm, fs) = mean_std(&finals);
                let (mm, ms) = mean_std(&mins);
                rows.push(json!({
                    "classifier": classifier,
                    "runs": finals.len() + errors.len(),
                    "failed": errors.len(),
                    "final_gap_mean": fm,
                    "final_gap_std": fs,
                    "min_gap_mean": mm,
                    "min_gap_std": ms,
                    "errors": errors,
                }));
            }
            write(out_dir, "summary.json", pretty(&Value::Array(rows)).as_bytes(), &mut outputs)?;
            Ok((outputs, all_ok))
        }
    }
}

fn mode_name(mode: SweepMode) -> &'static str {
    match mode {
        SweepMode::Tabular => "tabular",
        SweepMode::Neural => "neural",
    }
}

fn job_seeds(job: &Job) -> Vec<u64> {
    match job {
        Job::RunTabular { config } => vec![config.seed],
        Job::RunNeural { config } => vec![config.seed],
        Job::Sweep { seeds, .. } => seeds.clone(),
    }
}

/// Executes a job and writes its manifest next to the outputs.
pub fn execute_with_manifest(job: &Job, mdp: &Mdp, out_dir: &Path) -> Result<(RunManifest, bool)> {
    execute_with_manifest_traced(job, mdp, out_dir, None)
}

fn execute_with_manifest_traced(
    job: &Job,
    mdp: &Mdp,
    out_dir: &Path,
    trace: Option<&Path>,
) -> Result<(RunManifest, bool)> {
    let (outputs, ok) = execute_traced(job, mdp, out_dir, trace)?;
    let manifest = RunManifest {
        job: job.clone(),
        mdp: mdp.to_file(),
        seeds: job_seeds(job),
        outputs,
        out_dir: out_dir.display().to_string(),
        git_describe: GIT_DESCRIBE.to_string(),
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        pretty(&serde_json::to_value(&manifest)?),
    )?;
    Ok((manifest, ok))
}

/// Re-runs a manifest into `out_dir`. With `check`, returns the outputs that
/// differ from the originals stored beside the manifest.
pub fn replay(manifest_path: &Path, out_dir: &Path, check: bool) -> Result<Vec<String>> {
    let manifest = RunManifest::load(manifest_path)?;
    let mdp = Mdp::from_file(manifest.mdp.clone())?;
    let (fresh, _) = execute_with_manifest(&manifest.job, &mdp, out_dir)?;
    let mut mismatched = Vec::new();
    if check {
        let original_dir = manifest_path.parent().unwrap_or(Path::new("."));
        for name in &manifest.outputs {
            let a = std::fs::read(original_dir.join(name)).ok();
            let b = std::fs::read(out_dir.join(name)).ok();
            if a.is_none() || a != b {
                mismatched.push(name.clone());
            }
        }
        for name in &fresh.outputs {
            if !manifest.outputs.contains(name) {
                mismatched.push(name.clone());
            }
        }
    }
    Ok(mismatched)
}

fn read_config(path: Option<&PathBuf>) -> Result<Map<String, Value>> {
    let Some(path) = path else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::invalid("config", format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text).map_err(|e| Error::invalid("config", e.to_string()))? {
        Value::Object(map) => Ok(map),
        _ => Err(Error::invalid("config", "must be a JSON object")),
    }
}

/// Global settings after merging flags over the config file.
struct Globals {
    seed: u64,
    out_dir: PathBuf,
    jobs: Option<usize>,
}

fn take_globals(cli: &Cli, file: &mut Map<String, Value>) -> Result<Globals> {
    let mut get = |key: &str| file.remove(key);
    let bad = |key: &str| Error::invalid(key.to_string(), "has the wrong type");
    let seed = match (cli.seed, get("seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => v.as_u64().ok_or_else(|| bad("seed"))?,
        (None, None) => 0,
    };
    let out_dir = match (&cli.out_dir, get("out-dir")) {
        (Some(p), _) => p.clone(),
        (None, Some(v)) => PathBuf::from(v.as_str().ok_or_else(|| bad("out-dir"))?),
        (None, None) => PathBuf::from("out"),
    };
    let jobs = match (cli.jobs, get("jobs")) {
        (Some(j), _) => Some(j),
        (None, Some(v)) => Some(v.as_u64().ok_or_else(|| bad("jobs"))? as usize),
        (None, None) => None,
    };
    if jobs == Some(0) {
        return Err(Error::invalid("jobs", "must be at least 1"));
    }
    Ok(Globals { seed, out_dir, jobs })
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    let mut file = read_config(cli.config.as_ref()).map_err(Failure::Config)?;
    let globals = take_globals(&cli, &mut file).map_err(Failure::Config)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = globals.jobs {
            b = b.num_threads(j);
        }
        b.build().map_err(|e| Failure::Config(Error::invalid("jobs", e.to_string())))?
    };
    pool.install(|| match &cli.command {
        Command::GenMdp(flags) => {
            let args = merge(flags, &file).map_err(Failure::Config)?;
            let mdp = generate_mdp(&args, globals.seed).map_err(Failure::Config)?;
            let path = args.output.clone().unwrap_or_else(|| globals.out_dir.join("mdp.json"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Failure::Run(e.into()))?;
            }
            std::fs::write(&path, mdp.to_json()).map_err(|e| Failure::Run(e.into()))?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::RunTabular(flags) | Command::RunNeural(flags) | Command::Sweep(flags) => {
            let name = match &cli.command {
                Command::RunTabular(_) => "run-tabular",
                Command::RunNeural(_) => "run-neural",
                _ => "sweep",
            };
            let args = merge(flags, &file).map_err(Failure::Config)?;
            let (job, mdp) = resolve_run(name, &args, globals.seed).map_err(Failure::Config)?;
            let (manifest, ok) =
                execute_with_manifest_traced(&job, &mdp, &globals.out_dir, args.trace_emda.as_deref())
                    .map_err(Failure::Run)?;
            if let Some(path) = &args.out {
                std::fs::copy(globals.out_dir.join("metrics.csv"), path)
                    .map_err(|e| Failure::Run(e.into()))?;
            }
            eprintln!(
                "wrote {} files to {}",
                manifest.outputs.len() + 1,
                globals.out_dir.display()
            );
            if ok {
                Ok(())
            } else {
                Err(Failure::Run(Error::invalid("sweep", "some runs failed; see summary.json")))
            }
        }
        Command::Check(flags) => {
            let args = merge(flags, &file).map_err(Failure::Config)?;
            let reports = run_suite(args.suite.unwrap_or(Suite::All), globals.seed).map_err(Failure::Run)?;
            println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
            match reports.iter().find(|r| !r.passed) {
                None => Ok(()),
                Some(r) => Err(Failure::Run(Error::invalid(
                    r.name.clone(),
                    format!("residual {:e} exceeds {:e}", r.residual, r.tolerance),
                ))),
            }
        }
        Command::Replay(args) => {
            let mismatched = replay(&args.manifest, &globals.out_dir, args.check).map_err(|e| match e {
                Error::Json(_) | Error::Invalid { .. } => Failure::Config(e),
                other => Failure::Run(other),
            })?;
            if mismatched.is_empty() {
                if args.check {
                    eprintln!("all outputs reproduced byte for byte");
                }
                Ok(())
            } else {
                Err(Failure::Run(Error::invalid(
                    "replay",
                    format!("outputs differ: {}", mismatched.join(", ")),
                )))
            }
        }
    })
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

#![allow(dead_code)]

use hingepo::hinge::{ClassifierKind, HingeLossSpec, WeightScheme};
use hingepo::mdp::{random_mdp, Mdp};
use hingepo::rng::{stream, stream_rng};
use hingepo::tabular::TabularRunConfig;

/// Seeded random 5-state 3-action MDPs, `gamma = 0.9`.
pub fn tabular_suite(n: usize) -> Vec<Mdp> {
    (0..n as u64)
        .map(|i| random_mdp(5, 3, 0.9, &mut stream_rng(1000 + i, stream::MDP)).unwrap())
        .collect()
}

/// Unit weights, margin 0.3, step 0.01, K = 5, full cyclic sweeps.
pub fn tabular_config(classifier: ClassifierKind, n_iters: usize) -> TabularRunConfig {
    let spec = HingeLossSpec::new(classifier, 0.3, WeightScheme::Unit).unwrap();
    TabularRunConfig::defaults(spec, 5, n_iters, 0)
}

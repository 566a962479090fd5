use hingepo::checks::{check_closed_form, CLOSED_FORM_TOL};
use hingepo::emda::{improvement_condition, run_emda, EmdaConfig};
use hingepo::hinge::{Batch, ClassifierKind, HingeLossSpec, Pair, WeightScheme};
use hingepo::mdp::{evaluate_policy_exact, random_mdp, random_policy, TabularPolicy};
use hingepo::rng::stream_rng;
use proptest::prelude::*;
use rand::Rng as _;

/// Straight-line EMDA on one state, in probability space. Returns the final
/// probabilities and the accumulated step per action.
fn reference_emda(
    pi: &[f64],
    adv: &[Option<f64>],
    spec: &HingeLossSpec,
    eta: f64,
    k_max: usize,
) -> (Vec<f64>, Vec<f64>) {
    let mut theta = pi.to_vec();
    let mut c = vec![0.0; pi.len()];
    for _ in 0..k_max {
        let mut g = vec![0.0; pi.len()];
        for a in 0..pi.len() {
            let Some(adv) = adv[a] else { continue };
            let (t, p) = (theta[a], pi[a]);
            let (h, dh) = match spec.classifier {
                ClassifierKind::Ratio => (t / p - 1.0, 1.0 / p),
                ClassifierKind::Sub => (t - p, 1.0),
                ClassifierKind::Root => ((t / p).sqrt() - 1.0, 0.5 / (t * p).sqrt()),
                ClassifierKind::Log => (t.ln() - p.ln(), 1.0 / t),
            };
            let y = adv.signum();
            let w = match spec.weight_scheme {
                WeightScheme::Unit => 1.0,
                WeightScheme::AbsAdv => adv.abs(),
                WeightScheme::PolicyWeighted => p * adv.abs(),
            };
            if y * h < spec.margin {
                g[a] = -w * y * dh;
            }
            c[a] -= eta * g[a] / adv;
        }
        let w: Vec<f64> = g.iter().map(|gi| (-eta * gi).exp()).collect();
        let z: f64 = w.iter().zip(&theta).map(|(wi, ti)| wi * ti).sum();
        theta = w.iter().zip(&theta).map(|(wi, ti)| wi * ti / z).collect();
    }
    (theta, c)
}

#[test]
fn three_action_run_matches_reference_interpreter() {
    let mut rng = stream_rng(21, 100);
    for trial in 0..40 {
        let classifier = ClassifierKind::ALL[trial % 4];
        let weights = [WeightScheme::Unit, WeightScheme::AbsAdv, WeightScheme::PolicyWeighted][trial % 3];
        let spec = HingeLossSpec::new(classifier, rng.random_range(0.05..0.5), weights).unwrap();
        let pi = random_policy(1, 3, &mut rng);
        let row = pi.row(0);
        let adv: Vec<Option<f64>> = (0..3)
            .map(|a| (a != trial % 3 || trial % 2 == 0).then(|| rng.random_range(-2.0..2.0)))
            .collect();
        let eta = rng.random_range(0.01..0.5);
        let batch = Batch::new(
            adv.iter()
                .enumerate()
                .filter_map(|(a, v)| v.map(|adv| Pair { state: 0, action: a, adv }))
                .collect(),
        );
        let res = run_emda(&pi, &batch, &spec, &EmdaConfig::new(eta, 5).unwrap()).unwrap();
        let (theta, c) = reference_emda(&row, &adv, &spec, eta, 5);
        for a in 0..3 {
            assert!((res.target.prob(0, a) - theta[a]).abs() < 1e-12, "trial {trial}");
            assert!((res.c(0, a) - c[a]).abs() <= 1e-12 * c[a].abs().max(1.0), "trial {trial}");
        }
    }
}

#[test]
fn closed_form_on_fifty_instances() {
    let report = check_closed_form(50, 22).unwrap();
    assert!(report.passed, "{}", report.residual);
    assert!(report.residual <= CLOSED_FORM_TOL);
}

#[test]
fn true_advantage_runs_improve_every_updated_state() {
    let mut rng = stream_rng(23, 100);
    for trial in 0..100 {
        let mdp = random_mdp(4, 3, 0.9, &mut rng).unwrap();
        let pi = random_policy(4, 3, &mut rng);
        let tables = evaluate_policy_exact(&mdp, &pi).unwrap();
        // One pair per state, as the tabular algorithm draws them.
        let batch = Batch::new(
            (0..4)
                .map(|s| {
                    let a = rng.random_range(0..3);
                    Pair { state: s, action: a, adv: tables.adv(s, a) }
                })
                .collect(),
        )
        .without_zero_advantage(1e-12);
        let spec = HingeLossSpec::new(ClassifierKind::ALL[trial % 4], 0.3, WeightScheme::Unit).unwrap();
        let res = run_emda(&pi, &batch, &spec, &EmdaConfig::new(0.05, 5).unwrap()).unwrap();
        let cond = improvement_condition(&res.target, &tables.adv);
        for s in batch.states() {
            assert!(cond[s] > 0.0, "trial {trial} state {s}: {}", cond[s]);
        }
    }
}

fn classifier() -> impl Strategy<Value = ClassifierKind> {
    prop::sample::select(ClassifierKind::ALL.to_vec())
}

fn weights() -> impl Strategy<Value = WeightScheme> {
    prop::sample::select(vec![WeightScheme::Unit, WeightScheme::AbsAdv, WeightScheme::PolicyWeighted])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn single_pair_update_stays_on_simplex_and_moves_with_advantage(
        seed in any::<u64>(),
        na in 2usize..6,
        c in classifier(),
        w in weights(),
        eps in 0.01f64..1.0,
        eta in 0.001f64..1.0,
        k in 1usize..8,
        raw in prop::collection::vec(-3.0f64..3.0, 5),
    ) {
        let mut rng = stream_rng(seed, 102);
        let pi = random_policy(1, na, &mut rng);
        // Zero-mean under pi, like a true advantage.
        let mean: f64 = (0..na).map(|a| pi.prob(0, a) * raw[a]).sum();
        let adv: Vec<f64> = (0..na).map(|a| raw[a] - mean).collect();
        let a = rng.random_range(0..na);
        prop_assume!(adv[a].abs() > 1e-9);
        let spec = HingeLossSpec::new(c, eps, w).unwrap();
        let batch = Batch::new(vec![Pair { state: 0, action: a, adv: adv[a] }]);
        let res = run_emda(&pi, &batch, &spec, &EmdaConfig::new(eta, k).unwrap()).unwrap();
        let row = res.target.row(0);
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        // Tiny entries may underflow once exponentiated; the stored logs may not.
        prop_assert!(res.target.is_strictly_positive());
        if adv[a] > 0.0 {
            prop_assert!(row[a] >= pi.prob(0, a));
        } else {
            prop_assert!(row[a] <= pi.prob(0, a));
        }
        let improvement: f64 = (0..na).map(|b| row[b] * adv[b]).sum();
        prop_assert!(improvement > 0.0, "{}", improvement);
    }

    #[test]
    fn multi_pair_update_stays_on_simplex(
        seed in any::<u64>(),
        na in 2usize..6,
        c in classifier(),
        w in weights(),
        eta in 0.001f64..1.0,
        k in 1usize..8,
    ) {
        let mut rng = stream_rng(seed, 103);
        let pi = random_policy(3, na, &mut rng);
        let pairs = (0..3)
            .flat_map(|s| (0..na).map(move |a| (s, a)))
            .map(|(s, a)| Pair { state: s, action: a, adv: rng.random_range(-2.0..2.0) })
            .collect();
        let spec = HingeLossSpec::new(c, 0.2, w).unwrap();
        let res = run_emda(&pi, &Batch::new(pairs), &spec, &EmdaConfig::new(eta, k).unwrap()).unwrap();
        prop_assert!(res.target.max_row_error() <= 1e-12);
        prop_assert!(res.target.is_strictly_positive());
    }

    #[test]
    fn bounded_step_weights_keep_c_in_band(
        seed in any::<u64>(),
        na in 2usize..5,
        sub in any::<bool>(),
        eps in 0.01f64..0.5,
        eta in 0.001f64..0.5,
        k in 1usize..8,
    ) {
        let mut rng = stream_rng(seed, 104);
        let classifier = if sub { ClassifierKind::Sub } else { ClassifierKind::Ratio };
        let spec = HingeLossSpec::with_bounded_steps(classifier, eps).unwrap();
        let pi = random_policy(2, na, &mut rng);
        let pairs: Vec<Pair> = (0..2)
            .flat_map(|s| (0..na).map(move |a| (s, a)))
            .map(|(s, a)| Pair { state: s, action: a, adv: rng.random_range(-2.0..2.0) })
            .collect();
        let batch = Batch::new(pairs).without_zero_advantage(1e-12);
        let res = run_emda(&pi, &batch, &spec, &EmdaConfig::new(eta, k).unwrap()).unwrap();
        for p in &batch.pairs {
            let c = res.c(p.state, p.action);
            prop_assert!(c >= eta - 1e-12 && c <= k as f64 * eta + 1e-12, "{} outside [{}, {}]", c, eta, k as f64 * eta);
        }
    }
}

#[test]
fn uniform_target_of_an_untouched_state_is_unchanged() {
    let pi = TabularPolicy::uniform(2, 3);
    let spec = HingeLossSpec::new(ClassifierKind::Ratio, 0.2, WeightScheme::Unit).unwrap();
    let batch = Batch::new(vec![Pair { state: 0, action: 1, adv: 1.0 }]);
    let res = run_emda(&pi, &batch, &spec, &EmdaConfig::new(0.1, 5).unwrap()).unwrap();
    assert_eq!(res.target.row(1), pi.row(1));
}

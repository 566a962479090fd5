use hingepo::nn::{InitScheme, TwoLayerNet};
use hingepo::rng::{stream_rng, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vector(d: usize, rng: &mut Rng) -> Vec<f64> {
    let v = gaussian(d, rng);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Moves `alpha` by a random direction of length `len`.
fn perturb(net: &mut TwoLayerNet, len: f64, rng: &mut Rng) {
    let dir = unit_vector(net.alpha().len(), rng);
    let alpha: Vec<f64> = net.alpha().iter().zip(&dir).map(|(a, d)| a + len * d).collect();
    net.set_alpha(&alpha);
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = stream_rng(31, 100);
    let (m, d) = (32, 6);
    let mut net = TwoLayerNet::init(m, d, 1.0, InitScheme::Independent, &mut rng).unwrap();
    perturb(&mut net, 0.5, &mut rng);
    let h = 1e-6;
    let mut probes = 0;
    while probes < 100 {
        let x = unit_vector(d, &mut rng);
        // Skip inputs within reach of a ReLU kink.
        let near_kink = (0..m).any(|i| {
            let z: f64 = net.alpha()[i * d..(i + 1) * d].iter().zip(&x).map(|(a, b)| a * b).sum();
            z.abs() < 1e-4
        });
        if near_kink {
            continue;
        }
        probes += 1;
        let g = net.grad_alpha(&x);
        for j in 0..m * d {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut a = net.alpha().to_vec();
            a[j] += h;
            plus.set_alpha(&a);
            a[j] -= 2.0 * h;
            minus.set_alpha(&a);
            let fd = (plus.forward(&x) - minus.forward(&x)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-5, "coordinate {j}: fd {fd} vs {}", g[j]);
        }
    }
}

#[test]
fn projection_is_the_nearest_ball_point() {
    let mut rng = stream_rng(32, 100);
    let radius = 1.5;
    let mut net = TwoLayerNet::init(16, 4, radius, InitScheme::Independent, &mut rng).unwrap();
    perturb(&mut net, 3.0 * radius, &mut rng);
    let outside = net.alpha().to_vec();
    net.project_ball();
    let projected = net.alpha().to_vec();
    assert!((net.displacement() - radius).abs() < 1e-12);
    let best = dist(&outside, &projected);
    let n = projected.len();
    for _ in 0..1000 {
        let dir = unit_vector(n, &mut rng);
        let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
        let probe: Vec<f64> = net.alpha0().iter().zip(&dir).map(|(a, d)| a + r * d).collect();
        assert!(dist(&outside, &probe) >= best - 1e-12);
    }
    let mut again = net.clone();
    again.project_ball();
    assert_eq!(again.alpha(), net.alpha());
}

const WIDTHS: [usize; 3] = [1 << 6, 1 << 10, 1 << 14];

#[test]
fn init_output_scale_does_not_grow_with_width() {
    let d = 8;
    let mut stds = Vec::new();
    for &m in &WIDTHS {
        let mut outputs = Vec::new();
        for seed in 0..20 {
            let mut rng = stream_rng(seed, 33);
            let net = TwoLayerNet::init(m, d, 1.0, InitScheme::Independent, &mut rng).unwrap();
            for _ in 0..50 {
                outputs.push(net.forward(&unit_vector(d, &mut rng)));
            }
        }
        let n = outputs.len() as f64;
        let mean = outputs.iter().sum::<f64>() / n;
        let var = outputs.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / (n - 1.0);
        stds.push(var.sqrt());
    }
    // Var u = E[relu(z)^2] = 1/(2d) for z ~ N(0, 1/d).
    let expected = (0.5 / d as f64).sqrt();
    for (&m, &s) in WIDTHS.iter().zip(&stds) {
        assert!(s > 0.5 * expected && s < 2.0 * expected, "m = {m}: std {s}");
    }
}

/// Max over 100 inputs of the linearization error after a random step of
/// length `radius`, averaged over 20 seeds.
fn mean_linearization_gap(m: usize, radius: f64) -> f64 {
    let d = 8;
    let mut total = 0.0;
    for seed in 0..20 {
        let mut rng = stream_rng(seed, 34);
        let mut net = TwoLayerNet::init(m, d, radius, InitScheme::Independent, &mut rng).unwrap();
        perturb(&mut net, radius, &mut rng);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = unit_vector(d, &mut rng);
            worst = worst.max((net.forward(&x) - net.linearized_forward(&x)).abs());
        }
        total += worst;
    }
    total / 20.0
}

#[test]
fn linearization_gap_shrinks_with_width() {
    let gaps: Vec<f64> = WIDTHS.iter().map(|&m| mean_linearization_gap(m, 1.0)).collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

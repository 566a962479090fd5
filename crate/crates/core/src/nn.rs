//! Two-layer ReLU networks in the lazy-training regime.
//!
//! `u(x) = m^{-1/2} sum_i b_i relu(alpha_i . x)` with output signs `b` frozen
//! at init and first-layer weights kept inside a ball around their initial
//! value.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;

const MAGIC: &[u8; 4] = b"HPO1";

/// How the initial weights are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// I.i.d. rows `N(0, I/d)` and i.i.d. signs.
    Independent,
    /// Neurons come in pairs sharing a row with opposite signs, so the output
    /// is identically zero at init. Needs an even width.
    Symmetric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerNet {
    m: usize,
    d: usize,
    alpha: Vec<f64>,
    alpha0: Vec<f64>,
    b: Vec<i8>,
    radius: f64,
}

impl TwoLayerNet {
    pub fn init(m: usize, d: usize, radius: f64, scheme: InitScheme, rng: &mut Rng) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("width", "must be at least 1"));
        }
        if d == 0 {
            return Err(Error::invalid("input_dim", "must be at least 1"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid("radius", format!("must be positive and finite, got {radius}")));
        }
        let scale = (1.0 / d as f64).sqrt();
        let draw_row = |rng: &mut Rng| -> Vec<f64> {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * scale
                })
                .collect()
        };
        let mut alpha0 = Vec::with_capacity(m * d);
        let mut b = Vec::with_capacity(m);
        match scheme {
            InitScheme::Independent => {
                for _ in 0..m {
                    alpha0.extend(draw_row(rng));
                    b.push(if rng.random_bool(0.5) { 1 } else { -1 });
                }
            }
            InitScheme::Symmetric => {
                if !m.is_multiple_of(2) {
                    return Err(Error::invalid("width", format!("symmetric init needs an even width, got {m}")));
                }
                for _ in 0..m / 2 {
                    let row = draw_row(rng);
                    let sign: i8 = if rng.random_bool(0.5) { 1 } else { -1 };
                    alpha0.extend_from_slice(&row);
                    alpha0.extend_from_slice(&row);
                    b.push(sign);
                    b.push(-sign);
                }
            }
        }
        Ok(TwoLayerNet {
            m,
            d,
            alpha: alpha0.clone(),
            alpha0,
            b,
            radius,
        })
    }

    /// Builds a net from explicit weights; `alpha0` is set to `alpha`.
    pub fn from_weights(m: usize, d: usize, alpha: Vec<f64>, b: Vec<i8>, radius: f64) -> Result<Self> {
        if alpha.len() != m * d {
            return Err(Error::invalid("alpha", format!("expected {} entries, got {}", m * d, alpha.len())));
        }
        if b.len() != m || b.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("b", "must be m entries in {-1, +1}"));
        }
        Ok(TwoLayerNet {
            m,
            d,
            alpha0: alpha.clone(),
            alpha,
            b,
            radius,
        })
    }

    pub fn width(&self) -> usize {
        self.m
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha0(&self) -> &[f64] {
        &self.alpha0
    }

    pub fn signs(&self) -> &[i8] {
        &self.b
    }

    pub fn set_alpha(&mut self, alpha: &[f64]) {
        assert_eq!(alpha.len(), self.alpha.len());
        self.alpha.copy_from_slice(alpha);
    }

    /// Resets the trainable weights to their initial value.
    pub fn reset(&mut self) {
        self.alpha.copy_from_slice(&self.alpha0);
    }

    fn row(w: &[f64], d: usize, i: usize) -> &[f64] {
        &w[i * d..(i + 1) * d]
    }

    fn dot(a: &[f64], x: &[f64]) -> f64 {
        a.iter().zip(x).map(|(u, v)| u * v).sum()
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.d);
        let mut acc = 0.0;
        for i in 0..self.m {
            let z = Self::dot(Self::row(&self.alpha, self.d, i), x);
            if z > 0.0 {
                acc += self.b[i] as f64 * z;
            }
        }
        acc / (self.m as f64).sqrt()
    }

    /// `du/dalpha`, row-major `m x d`. The ReLU derivative at 0 is taken as 0.
    pub fn grad_alpha(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.m * self.d];
        let scale = 1.0 / (self.m as f64).sqrt();
        for i in 0..self.m {
            if Self::dot(Self::row(&self.alpha, self.d, i), x) > 0.0 {
                let c = self.b[i] as f64 * scale;
                for (gj, xj) in g[i * self.d..(i + 1) * self.d].iter_mut().zip(x) {
                    *gj = c * xj;
                }
            }
        }
        g
    }

    /// `alpha -= step * du/dalpha(x)` without materializing the gradient.
    pub fn descend(&mut self, x: &[f64], step: f64) {
        let scale = step / (self.m as f64).sqrt();
        for i in 0..self.m {
            let row = &mut self.alpha[i * self.d..(i + 1) * self.d];
            if Self::dot(row, x) > 0.0 {
                let c = self.b[i] as f64 * scale;
                for (w, xj) in row.iter_mut().zip(x) {
                    *w -= c * xj;
                }
            }
        }
    }

    /// `||alpha - alpha0||_2`.
    pub fn displacement(&self) -> f64 {
        self.alpha
            .iter()
            .zip(&self.alpha0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Euclidean projection onto the ball of radius `R` around `alpha0`.
    pub fn project_ball(&mut self) {
        let norm = self.displacement();
        if norm > self.radius {
            let k = self.radius / norm;
            for (a, a0) in self.alpha.iter_mut().zip(&self.alpha0) {
                *a = a0 + k * (*a - a0);
            }
        }
    }

    /// First-order expansion around `alpha0`: the active set is frozen at init.
    pub fn linearized_forward(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.m {
            if Self::dot(Self::row(&self.alpha0, self.d, i), x) > 0.0 {
                acc += self.b[i] as f64 * Self::dot(Self::row(&self.alpha, self.d, i), x);
            }
        }
        acc / (self.m as f64).sqrt()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.m + 16 * self.m * self.d);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend(self.b.iter().map(|&s| s as u8));
        for v in self.alpha0.iter().chain(&self.alpha) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// The checkpoint does not carry the radius, so it is supplied here.
    pub fn from_bytes(bytes: &[u8], radius: f64) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing HPO1 header"));
        }
        let m = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = 12 + m + 16 * m * d;
        if bytes.len() != expected {
            return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let b: Vec<i8> = bytes[12..12 + m].iter().map(|&u| u as i8).collect();
        if b.iter().any(|&s| s != 1 && s != -1) {
            return Err(bad("output signs must be +1 or -1"));
        }
        let floats: Vec<f64> = bytes[12 + m..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (alpha0, alpha) = floats.split_at(m * d);
        Ok(TwoLayerNet {
            m,
            d,
            alpha: alpha.to_vec(),
            alpha0: alpha0.to_vec(),
            b,
            radius,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path, radius: f64) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, radius)
    }
}

/// `phi(s, a) = (e_s ++ e_a) / sqrt(2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureEncoding {
    pub n_states: usize,
    pub n_actions: usize,
}

impl FeatureEncoding {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        FeatureEncoding { n_states, n_actions }
    }

    pub fn dim(&self) -> usize {
        self.n_states + self.n_actions
    }

    pub fn encode(&self, s: usize, a: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        x[s] = std::f64::consts::FRAC_1_SQRT_2;
        x[self.n_states + a] = std::f64::consts::FRAC_1_SQRT_2;
        x
    }

    /// All encodings, indexed `s * n_actions + a`.
    pub fn table(&self) -> Vec<Vec<f64>> {
        (0..self.n_states)
            .flat_map(|s| (0..self.n_actions).map(move |a| (s, a)))
            .map(|(s, a)| self.encode(s, a))
            .collect()
    }

    /// Net output on every pair, indexed `s * n_actions + a`.
    pub fn evaluate(&self, net: &TwoLayerNet) -> Vec<f64> {
        self.table().iter().map(|x| net.forward(x)).collect()
    }
}

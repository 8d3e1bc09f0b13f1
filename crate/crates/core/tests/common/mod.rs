#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

pub fn ard_kernel(sf2: f64, ls: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    sf2 * matern52(r2.sqrt())
}

/// Mean and variance by explicit inversion of `K + noise I`.
pub fn dense_posterior(xs: &[Vec<f64>], ys: &[f64], noise: f64, sf2: f64, ls: &[f64], x: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let k = DMatrix::from_fn(n, n, |i, j| ard_kernel(sf2, ls, &xs[i], &xs[j]) + if i == j { noise } else { 0.0 });
    let kinv = k.try_inverse().expect("invertible");
    let ks = DVector::from_fn(n, |i, _| ard_kernel(sf2, ls, &xs[i], x));
    let y = DVector::from_column_slice(ys);
    let mean = (ks.transpose() * &kinv * y)[0];
    let var = ard_kernel(sf2, ls, x, x) - (ks.transpose() * &kinv * &ks)[0];
    (mean, var)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}

pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

/// Sample path of a zero-mean GP prior, drawn lazily: each query is sampled
/// from its conditional given all earlier draws.
pub struct PriorSampler {
    pub sf2: f64,
    pub ls: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl PriorSampler {
    pub fn new(sf2: f64, ls: Vec<f64>) -> Self {
        Self {
            sf2,
            ls,
            points: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn sample(&mut self, x: &[f64], rng: &mut ChaCha8Rng) -> f64 {
        if let Some(i) = self.points.iter().position(|p| p.as_slice() == x) {
            return self.values[i];
        }
        let (mean, var) = if self.points.is_empty() {
            (0.0, self.sf2)
        } else {
            dense_posterior(&self.points, &self.values, 1e-10, self.sf2, &self.ls, x)
        };
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        let v = mean + var.max(0.0).sqrt() * z;
        self.points.push(x.to_vec());
        self.values.push(v);
        v
    }
}

/// `min_k (max(rho chi^k d0, nu) - |x_k - x_d|)` by a plain loop.
pub fn brute_margin(norms: &[f64], rho: f64, chi: f64, nu: f64) -> f64 {
    let d0 = norms[0];
    let mut best = f64::INFINITY;
    for (k, d) in norms.iter().enumerate() {
        let env = (rho * chi.powi(k as i32) * d0).max(nu);
        if env - d < best {
            best = env - d;
        }
    }
    best
}

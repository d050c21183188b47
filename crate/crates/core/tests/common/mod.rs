//! Reference implementations shared by the integration tests. Nothing here
//! calls into the library's numerics.
#![allow(dead_code)]

use misteri::{Dataset, Theta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Normal log-likelihood written out directly from the model.
pub fn oracle_loglik(t: &[f64], d: &Dataset) -> f64 {
    let p = d.p();
    let (beta, gamma, theta0) = (t[0], t[1], t[2]);
    let thetaz = &t[3..3 + p];
    let eta0 = t[3 + p];
    let etaz = &t[4 + p..];
    let mut ll = 0.0;
    for i in 0..d.n() {
        let z = d.z_row(i);
        let v = (eta0 + z.iter().zip(etaz).map(|(a, b)| a * b).sum::<f64>()).exp();
        let a = d.a()[i];
        let mu = beta * a + gamma * a * v + theta0 + z.iter().zip(thetaz).map(|(a, b)| a * b).sum::<f64>();
        let r = d.y()[i] - mu;
        ll += -0.5 * (2.0 * std::f64::consts::PI * v).ln() - r * r / (2.0 * v);
    }
    ll
}

/// Central differences of [`oracle_loglik`].
pub fn fd_gradient(t: &[f64], d: &Dataset) -> Vec<f64> {
    (0..t.len())
        .map(|j| {
            let h = 1e-5 * t[j].abs().max(1.0);
            let mut up = t.to_vec();
            let mut dn = t.to_vec();
            up[j] += h;
            dn[j] -= h;
            (oracle_loglik(&up, d) - oracle_loglik(&dn, d)) / (2.0 * h)
        })
        .collect()
}

/// Random parameters and unrelated data with three-level instruments.
pub fn random_instance(seed: u64, n: usize, p: usize) -> (Theta, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    let theta = Theta {
        beta: u(-1.0, 1.0),
        gamma: u(-0.5, 0.5),
        theta0: u(-1.0, 1.0),
        thetaz: (0..p).map(|_| u(-0.5, 0.5)).collect(),
        eta0: u(-0.5, 0.5),
        etaz: (0..p).map(|_| u(-0.4, 0.4)).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let z: Vec<f64> = (0..n * p).map(|_| rng.gen_range(0..3) as f64).collect();
    let a: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let y: Vec<f64> = (0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
    (theta, Dataset::new(y, a, z, p).unwrap())
}

/// Rows come in pairs sharing `(a, z)` with residuals `+sigma` and `-sigma`,
/// which zeroes every score component at the returned parameters.
pub fn zero_score_instance(seed: u64) -> (Theta, Dataset) {
    let (t, base) = random_instance(seed, 40, 2);
    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut z = Vec::new();
    for i in 0..base.n() {
        let zi = base.z_row(i);
        let ai = base.a()[i];
        let v = (t.eta0 + zi.iter().zip(&t.etaz).map(|(a, b)| a * b).sum::<f64>()).exp();
        let mu = t.beta * ai + t.gamma * ai * v + t.theta0 + zi.iter().zip(&t.thetaz).map(|(a, b)| a * b).sum::<f64>();
        for s in [1.0, -1.0] {
            y.push(mu + s * v.sqrt());
            a.push(ai);
            z.extend_from_slice(zi);
        }
    }
    (t, Dataset::new(y, a, z, 2).unwrap())
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Binary treatment and instrument with instrument-dependent outcome variance.
pub fn binary_dataset(seed: u64, n: usize, eta_z: f64, beta: f64, gamma: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let zi = f64::from(rng.gen_bool(0.5));
        let ai = f64::from(rng.gen_bool(0.4));
        let v = (0.1 + eta_z * zi).exp();
        let e: f64 = rng.sample(StandardNormal);
        y.push(beta * ai + gamma * ai * v + 1.0 + 0.3 * zi + v.sqrt() * e);
        a.push(ai);
        z.push(zi);
    }
    Dataset::new(y, a, z, 1).unwrap()
}

/// Cell means, pooled within-stratum variances and the two-equation solve
/// for `(beta, gamma)`.
pub fn closed_form_oracle(d: &Dataset) -> (f64, f64) {
    let cell = |zv: f64, av: f64| -> Vec<f64> {
        (0..d.n()).filter(|&i| d.z()[i] == zv && d.a()[i] == av).map(|i| d.y()[i]).collect()
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut diff = [0.0; 2];
    let mut var = [0.0; 2];
    for (k, zv) in [0.0, 1.0].into_iter().enumerate() {
        let (c0, c1) = (cell(zv, 0.0), cell(zv, 1.0));
        let (m0, m1) = (mean(&c0), mean(&c1));
        diff[k] = m1 - m0;
        let ss: f64 = c0.iter().map(|y| (y - m0).powi(2)).sum::<f64>() + c1.iter().map(|y| (y - m1).powi(2)).sum::<f64>();
        var[k] = ss / (c0.len() + c1.len() - 2) as f64;
    }
    // [1 var0; 1 var1] (beta, gamma)' = (diff0, diff1)'
    let det = var[1] - var[0];
    let gamma = (diff[1] - diff[0]) / det;
    let beta = (var[1] * diff[0] - var[0] * diff[1]) / det;
    (beta, gamma)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

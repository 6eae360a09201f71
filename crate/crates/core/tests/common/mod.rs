#![allow(dead_code)]

use exposure_dynamics::probit::ProbitData;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Φ from statrs, independent of the crate's erfc path.
pub fn oracle_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Direct-formula probit log-likelihood over raw observations.
pub fn naive_log_likelihood(beta: &[f64; 3], obs: &[(f64, bool)]) -> f64 {
    obs.iter()
        .map(|&(x, y)| {
            let p = oracle_cdf(beta[0] + beta[1] * x + beta[2] * x * x);
            if y {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

/// Same formula, on `(x, n, k)` counts.
pub fn naive_grouped_log_likelihood(beta: &[f64; 3], counts: &[(f64, f64, f64)]) -> f64 {
    let mut total = 0.0;
    for &(x, n, k) in counts {
        let p = oracle_cdf(beta[0] + beta[1] * x + beta[2] * x * x);
        if k > 0.0 {
            total += k * p.ln();
        }
        if n > k {
            total += (n - k) * (1.0 - p).ln();
        }
    }
    total
}

/// `n` observations with x uniform on `x_lo..=x_hi` and y drawn from the
/// probit model with coefficients `beta`.
pub fn probit_sample(
    rng: &mut ChaCha8Rng,
    beta: [f64; 3],
    n: usize,
    x_lo: u32,
    x_hi: u32,
) -> Vec<(f64, bool)> {
    (0..n)
        .map(|_| {
            let x = rng.random_range(x_lo..=x_hi) as f64;
            let eps: f64 = rng.sample(StandardNormal);
            (x, beta[0] + beta[1] * x + beta[2] * x * x + eps > 0.0)
        })
        .collect()
}

pub fn group(obs: &[(f64, bool)]) -> Vec<(f64, f64, f64)> {
    let mut map = std::collections::BTreeMap::<u64, (f64, f64)>::new();
    for &(x, y) in obs {
        let e = map.entry(x.to_bits()).or_default();
        e.0 += 1.0;
        e.1 += y as u8 as f64;
    }
    map.into_iter()
        .map(|(b, (n, k))| (f64::from_bits(b), n, k))
        .collect()
}

pub fn data(obs: &[(f64, bool)]) -> ProbitData {
    ProbitData::from_observations(obs.iter().copied()).unwrap()
}

/// Central differences with per-coordinate steps.
pub fn fd_gradient<F: Fn(&[f64; 3]) -> f64>(f: F, beta: &[f64; 3], steps: [f64; 3]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for j in 0..3 {
        let (mut p, mut m) = (*beta, *beta);
        p[j] += steps[j];
        m[j] -= steps[j];
        g[j] = (f(&p) - f(&m)) / (2.0 * steps[j]);
    }
    g
}

pub fn norm(v: &[f64; 3]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Exhaustive grid maximum of the oracle likelihood over
/// β₀ ∈ [−2, 2] step 0.05, β₁ ∈ [−0.5, 0.5] step 0.01, β₂ ∈ [−0.05, 0.05] step 0.001.
pub fn grid_maximum(counts: &[(f64, f64, f64)]) -> (f64, [f64; 3]) {
    let mut best = (f64::NEG_INFINITY, [0.0; 3]);
    for i in 0..=80 {
        let b0 = -2.0 + 0.05 * i as f64;
        for j in 0..=100 {
            let b1 = -0.5 + 0.01 * j as f64;
            for k in 0..=100 {
                let b2 = -0.05 + 0.001 * k as f64;
                let beta = [b0, b1, b2];
                let ll = naive_grouped_log_likelihood(&beta, counts);
                if ll > best.0 {
                    best = (ll, beta);
                }
            }
        }
    }
    best
}

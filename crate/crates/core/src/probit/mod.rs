//! Maximum-likelihood probit regression on the quadratic exposure design
//! `(1, x, x²)`.
//!
//! Observations are stored as weighted `(x, y)` cells, so per-event rows and
//! per-index counts produce the same likelihood. Cells are kept sorted, which
//! makes every reduction independent of input order.

pub mod normal;

use serde::{Deserialize, Serialize};

use crate::curve::ExposureCurve;
use crate::error::{Error, Result};
use crate::exposure_log::SequenceStore;

pub use normal::{inverse_cdf, std_normal_cdf};

/// Coefficients `(β₀, β₁, β₂)` of the latent `y* = β₀ + β₁x + β₂x²`.
pub type Beta = [f64; 3];
pub type Matrix3 = [[f64; 3]; 3];

pub const COEFFICIENT_NAMES: [&str; 3] = ["intercept", "linear", "quadratic"];

#[inline]
pub fn design_row(x: f64) -> [f64; 3] {
    [1.0, x, x * x]
}

#[inline]
pub fn latent(beta: &Beta, x: f64) -> f64 {
    beta[0] + beta[1] * x + beta[2] * x * x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub x: f64,
    pub y: bool,
    /// Number of observations sharing this `(x, y)`.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbitData {
    cells: Vec<Cell>,
    n_obs: u64,
}

impl ProbitData {
    /// Builds from individual `(x, listened)` observations.
    pub fn from_observations<I: IntoIterator<Item = (f64, bool)>>(obs: I) -> Result<Self> {
        Self::from_cells(obs.into_iter().map(|(x, y)| (x, y, 1u64)))
    }

    /// Builds from grouped `(x, n, k)` counts: `n` trials at `x`, `k` of them listened.
    pub fn from_counts<I: IntoIterator<Item = (f64, u64, u64)>>(counts: I) -> Result<Self> {
        let mut cells = Vec::new();
        for (x, n, k) in counts {
            if k > n {
                return Err(Error::InvalidArgument(format!(
                    "k = {k} exceeds n = {n} at x = {x}"
                )));
            }
            cells.push((x, true, k));
            cells.push((x, false, n - k));
        }
        Self::from_cells(cells)
    }

    /// Every event of the store with `x_min ≤ exposure_index ≤ x_max`.
    pub fn from_store(store: &SequenceStore, x_min: u32, x_max: u32) -> Result<Self> {
        let mut counts = std::collections::BTreeMap::<u32, (u64, u64)>::new();
        for seq in store.sequences() {
            for ev in &seq.events {
                if (x_min..=x_max).contains(&ev.exposure_index) {
                    let c = counts.entry(ev.exposure_index).or_default();
                    c.0 += 1;
                    c.1 += ev.listened as u64;
                }
            }
        }
        Self::from_counts(counts.into_iter().map(|(x, (n, k))| (x as f64, n, k)))
    }

    /// The grouped fast path: one pair of cells per present curve index.
    pub fn from_curve(curve: &ExposureCurve) -> Result<Self> {
        Self::from_counts(curve.present().map(|p| (p.x as f64, p.n, p.k)))
    }

    fn from_cells<I: IntoIterator<Item = (f64, bool, u64)>>(raw: I) -> Result<Self> {
        let mut items: Vec<(f64, bool, u64)> = Vec::new();
        for (x, y, w) in raw {
            if !x.is_finite() {
                return Err(Error::NonFinite(x));
            }
            if w > 0 {
                items.push((x, y, w));
            }
        }
        items.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut cells: Vec<Cell> = Vec::new();
        let mut n_obs = 0u64;
        let mut acc: Option<(f64, bool, u64)> = None;
        for (x, y, w) in items {
            n_obs += w;
            acc = match acc {
                Some((ax, ay, aw)) if ax == x && ay == y => Some((ax, ay, aw + w)),
                Some((ax, ay, aw)) => {
                    cells.push(Cell {
                        x: ax,
                        y: ay,
                        weight: aw as f64,
                    });
                    Some((x, y, w))
                }
                None => Some((x, y, w)),
            };
        }
        if let Some((x, y, w)) = acc {
            cells.push(Cell {
                x,
                y,
                weight: w as f64,
            });
        }
        Ok(ProbitData { cells, n_obs })
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn n_obs(&self) -> u64 {
        self.n_obs
    }

    pub fn n_listened(&self) -> u64 {
        self.cells
            .iter()
            .filter(|c| c.y)
            .map(|c| c.weight as u64)
            .sum()
    }

    /// Same observations with every `x` replaced by `x - shift`.
    pub fn shifted(&self, shift: f64) -> ProbitData {
        let cells = self
            .cells
            .iter()
            .map(|c| Cell {
                x: c.x - shift,
                ..*c
            })
            .collect();
        ProbitData {
            cells,
            n_obs: self.n_obs,
        }
    }

    /// Smallest and largest `x` present.
    pub fn x_range(&self) -> Option<(f64, f64)> {
        Some((self.cells.first()?.x, self.cells.last()?.x))
    }
}

/// Sum of `y log Φ(η) + (1 − y) log(1 − Φ(η))` over all observations.
pub fn log_likelihood(beta: &Beta, data: &ProbitData) -> f64 {
    data.cells
        .iter()
        .map(|c| c.weight * cell_log_lik(beta, c))
        .sum()
}

#[inline]
fn sign(y: bool) -> f64 {
    if y {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn cell_log_lik(beta: &Beta, c: &Cell) -> f64 {
    normal::log_cdf(sign(c.y) * latent(beta, c.x))
}

/// Analytic gradient and Hessian of [`log_likelihood`] at `beta`.
pub fn score_and_information(beta: &Beta, data: &ProbitData) -> (Beta, Matrix3) {
    let mut grad = [0.0; 3];
    let mut hess = [[0.0; 3]; 3];
    for c in &data.cells {
        let q = sign(c.y);
        let eta = q * latent(beta, c.x);
        let lambda = normal::inverse_mills(eta);
        let d1 = c.weight * q * lambda;
        let d2 = -c.weight * lambda * (eta + lambda);
        let row = design_row(c.x);
        for i in 0..3 {
            grad[i] += d1 * row[i];
            for j in 0..=i {
                hess[i][j] += d2 * row[i] * row[j];
            }
        }
    }
    for i in 0..3 {
        for j in 0..i {
            hess[j][i] = hess[i][j];
        }
    }
    (grad, hess)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Convergence when `‖∇ℓ‖ ≤ grad_tol · n_obs`.
    pub grad_tol: f64,
    pub step_halvings: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iter: 100,
            grad_tol: 1e-8,
            step_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbitFit {
    pub beta: Beta,
    /// Inverse of the observed information at `beta`.
    pub covariance: Matrix3,
    pub standard_errors: Beta,
    pub z_scores: Beta,
    /// Two-sided Wald p-values.
    pub p_values: Beta,
    pub log_likelihood: f64,
    pub gradient_norm: f64,
    pub n_obs: u64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ProbitFit {
    pub fn latent(&self, x: f64) -> f64 {
        latent(&self.beta, x)
    }

    /// Fitted listening probability Φ(ŷ*(x)).
    pub fn probability(&self, x: f64) -> f64 {
        normal::cdf(self.latent(x))
    }
}

fn norm(v: &Beta) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Cholesky factor of a symmetric positive-definite 3×3 matrix. The pivot
/// test runs on the unit-diagonal rescaling so the threshold does not depend
/// on the magnitude of `x`.
fn cholesky(a: &Matrix3) -> Option<(Matrix3, Beta)> {
    let mut scale = [0.0; 3];
    for i in 0..3 {
        if !(a[i][i] > 0.0 && a[i][i].is_finite()) {
            return None;
        }
        scale[i] = a[i][i].sqrt();
    }
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut s = a[i][j] / (scale[i] * scale[j]);
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 1e-12 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some((l, scale))
}

fn cholesky_solve(l: &Matrix3, scale: &Beta, b: &Beta) -> Beta {
    let mut y = [0.0; 3];
    for i in 0..3 {
        let mut s = b[i] / scale[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let mut s = y[i];
        for k in i + 1..3 {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    for i in 0..3 {
        x[i] /= scale[i];
    }
    x
}

fn negate(m: &Matrix3) -> Matrix3 {
    let mut out = *m;
    out.iter_mut().flatten().for_each(|v| *v = -*v);
    out
}

/// Inverse of a symmetric positive-definite matrix, `None` when singular.
pub fn spd_inverse(a: &Matrix3) -> Option<Matrix3> {
    let (l, scale) = cholesky(a)?;
    let mut inv = [[0.0; 3]; 3];
    for j in 0..3 {
        let mut e = [0.0; 3];
        e[j] = 1.0;
        let col = cholesky_solve(&l, &scale, &e);
        for i in 0..3 {
            inv[i][j] = col[i];
        }
    }
    for i in 0..3 {
        for j in 0..i {
            let avg = 0.5 * (inv[i][j] + inv[j][i]);
            inv[i][j] = avg;
            inv[j][i] = avg;
        }
    }
    Some(inv)
}

fn perfectly_classified(beta: &Beta, data: &ProbitData) -> bool {
    data.cells
        .iter()
        .all(|c| sign(c.y) * latent(beta, c.x) > 0.0)
}

fn max_abs_latent(beta: &Beta, data: &ProbitData) -> f64 {
    data.cells
        .iter()
        .map(|c| latent(beta, c.x).abs())
        .fold(0.0, f64::max)
}

/// Relative drop in log-likelihood still treated as "no decrease" by the line search.
pub const ROUNDOFF_SLACK: f64 = 256.0 * f64::EPSILON;

/// Newton–Raphson with step halving. The log-likelihood never decreases
/// between accepted iterates, up to [`ROUNDOFF_SLACK`].
pub fn fit_probit(data: &ProbitData, config: &FitConfig) -> Result<ProbitFit> {
    fit_probit_traced(data, config).map(|(fit, _)| fit)
}

/// [`fit_probit`], also returning the log-likelihood of every accepted
/// iterate, starting point included.
pub fn fit_probit_traced(data: &ProbitData, config: &FitConfig) -> Result<(ProbitFit, Vec<f64>)> {
    let n = data.n_obs();
    let k = data.n_listened();
    if n == 0 {
        return Err(Error::NoData);
    }
    if k == 0 || k == n {
        return Err(Error::DegenerateOutcome);
    }
    let tol = config.grad_tol * n as f64;

    let mut beta: Beta = [inverse_cdf(k as f64 / n as f64)?, 0.0, 0.0];
    let mut ll = log_likelihood(&beta, data);
    let mut trace = vec![ll];
    let (mut grad, mut hess) = score_and_information(&beta, data);
    let mut converged = norm(&grad) <= tol;
    let mut iterations = 0;
    let mut warnings = Vec::new();

    while !converged && iterations < config.max_iter {
        let (l, scale) = cholesky(&negate(&hess)).ok_or(Error::NonIdentifiable)?;
        let step = cholesky_solve(&l, &scale, &grad);
        iterations += 1;

        let mut accepted = None;
        let mut t = 1.0;
        // near the optimum the gain is below what the summed likelihood can resolve
        let slack = ROUNDOFF_SLACK * ll.abs();
        for _ in 0..=config.step_halvings {
            let cand = [
                beta[0] + t * step[0],
                beta[1] + t * step[1],
                beta[2] + t * step[2],
            ];
            let cand_ll = log_likelihood(&cand, data);
            if cand_ll >= ll - slack {
                accepted = Some((cand, cand_ll));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_ll)) = accepted else {
            warnings.push(format!("line search stalled at iteration {iterations}"));
            break;
        };
        beta = cand;
        ll = cand_ll;
        trace.push(ll);
        (grad, hess) = score_and_information(&beta, data);
        converged = norm(&grad) <= tol;

        if perfectly_classified(&beta, data) {
            return Err(Error::Separation);
        }
    }

    if !converged {
        if max_abs_latent(&beta, data) > normal::TAIL_CUTOFF {
            return Err(Error::Separation);
        }
        if iterations >= config.max_iter {
            warnings.push(format!(
                "no convergence within {} iterations",
                config.max_iter
            ));
        }
    }

    let tail: f64 = data
        .cells
        .iter()
        .filter(|c| latent(&beta, c.x).abs() > normal::TAIL_CUTOFF)
        .map(|c| c.weight)
        .sum();
    if tail > 0.0 {
        warnings.push(format!(
            "{tail} observations with |latent| > {} evaluated by tail expansion",
            normal::TAIL_CUTOFF
        ));
    }

    let covariance = spd_inverse(&negate(&hess)).ok_or(Error::NonIdentifiable)?;
    let standard_errors = [0, 1, 2].map(|i| covariance[i][i].max(0.0).sqrt());
    let z_scores = [0, 1, 2].map(|i| beta[i] / standard_errors[i]);
    let p_values = z_scores.map(|z| libm::erfc(z.abs() * std::f64::consts::FRAC_1_SQRT_2));

    let fit = ProbitFit {
        beta,
        covariance,
        standard_errors,
        z_scores,
        p_values,
        log_likelihood: ll,
        gradient_norm: norm(&grad),
        n_obs: n,
        converged,
        iterations,
        warnings,
    };
    Ok((fit, trace))
}

//! Wigner matrices under the natural and the tilted measure, a dense
//! symmetric eigensolver, and the Monte Carlo experiments built on them:
//! semicircle distance, the BBP outlier, eigenvector localization and tail
//! probabilities.
//!
//! Scaling: `√N X_ij ~ μ` for `i < j` and `√(N/2) X_ii ~ μ`. Sample `k` of a
//! run draws its entries from `rng_stream(seed, k)` in row order over the
//! upper triangle, so runs are reproducible and independent of scheduling.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::freeprob::{self, semicircle_cdf, FreeProbError};
use crate::laws::{EntryLaw, LawError};
use crate::numerics::rng_stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("invalid ensemble configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    FreeProb(#[from] FreeProbError),
    #[error("{method} did not converge after {iterations} iterations")]
    NoConvergence { method: &'static str, iterations: usize },
    #[error("importance weights degenerate: effective sample size {ess:.3} < {min}", min = MIN_ESS)]
    DegenerateWeights { ess: f64 },
}

pub type Result<T> = std::result::Result<T, MonteCarloError>;

/// Largest matrix size accepted by [`WignerEnsembleConfig::validate`].
pub const MAX_N: usize = 1000;
/// Default half-width of the tail window `[x - δ, x + δ]`.
pub const DEFAULT_DELTA: f64 = 0.1;
/// Tilted estimates with fewer effective samples are rejected.
pub const MIN_ESS: f64 = 10.0;
/// QL iterations allowed per eigenvalue.
pub const QL_MAX_ITER: usize = 30;
/// Krylov dimension of one Lanczos cycle (capped at `N`).
pub const LANCZOS_DIM: usize = 80;
/// Lanczos cycles before giving up.
pub const LANCZOS_MAX_CYCLES: usize = 50;
/// Default exponent `κ` in the delocalization threshold `ε N^κ`.
pub const DEFAULT_DELOC_EXPONENT: f64 = -0.25;

/// Dense symmetric matrix, stored in full row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, v) in d.iter().enumerate() {
            m.data[i * d.len() + i] = *v;
        }
        m
    }

    /// `β v vᵀ`.
    pub fn rank_one(beta: f64, v: &[f64]) -> Self {
        let n = v.len();
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = beta * v[i] * v[j];
            }
        }
        m
    }

    /// Builds from full rows; fails unless the rows form a symmetric square
    /// matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(MonteCarloError::InvalidConfig("matrix rows must have length N".into()));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        let m = Self { n, data };
        for i in 0..n {
            for j in 0..i {
                if m.get(i, j) != m.get(j, i) {
                    return Err(MonteCarloError::InvalidConfig(format!("matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    /// `⟨x, M x⟩`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Max absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { n: self.n, data: self.data.iter().map(|v| c * v).collect() }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Eigenvalues in ascending order; `vectors[k]` belongs to `values[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Option<Vec<Vec<f64>>>,
}

/// Householder reduction to tridiagonal form (EISPACK tred2). `v` holds the
/// matrix on entry and the accumulated transform on exit when `vectors` is
/// set. Returns the diagonal and the subdiagonal (`e[0] = 0`).
fn tred2(v: &mut [f64], n: usize, vectors: bool) -> (Vec<f64>, Vec<f64>) {
    let mut d: Vec<f64> = v[(n - 1) * n..].to_vec();
    let mut e = vec![0.0; n];
    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1) * n + j];
                v[i * n + j] = 0.0;
                v[j * n + i] = 0.0;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let f = d[i - 1];
            let g = if f > 0.0 { -h.sqrt() } else { h.sqrt() };
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in &mut e[..i] {
                *ej = 0.0;
            }
            for j in 0..i {
                let f = d[j];
                v[j * n + i] = f;
                let mut g = e[j] + v[j * n + j] * f;
                for k in j + 1..i {
                    g += v[k * n + j] * d[k];
                    e[k] += v[k * n + j] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let (f, g) = (d[j], e[j]);
                for k in j..i {
                    v[k * n + j] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1) * n + j];
                v[i * n + j] = 0.0;
            }
        }
        d[i] = h;
    }
    if !vectors {
        let diag = (0..n).map(|j| v[j * n + j]).collect();
        e[0] = 0.0;
        return (diag, e);
    }
    for i in 0..n - 1 {
        v[(n - 1) * n + i] = v[i * n + i];
        v[i * n + i] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[k * n + i + 1] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[k * n + i + 1] * v[k * n + j];
                }
                for k in 0..=i {
                    v[k * n + j] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[k * n + i + 1] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1) * n + j];
        v[(n - 1) * n + j] = 0.0;
    }
    v[(n - 1) * n + n - 1] = 1.0;
    e[0] = 0.0;
    (d, e)
}

/// Implicit-shift QL on a symmetric tridiagonal matrix (EISPACK tql2), with
/// `e[i]` the entry coupling `i - 1` and `i`. Rotations are applied to the
/// columns of `v` when given.
fn tql2(d: &mut [f64], e: &mut [f64], mut v: Option<&mut [f64]>) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITER {
                    return Err(MonteCarloError::NoConvergence { method: "tridiagonal QL", iterations: QL_MAX_ITER });
                }
                let g = d[l];
                let p = (d[l + 1] - g) / (2.0 * e[l]);
                let r = if p < 0.0 { -p.hypot(1.0) } else { p.hypot(1.0) };
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in &mut d[l + 2..] {
                    *di -= h;
                }
                f += h;
                let mut p = d[m];
                let (mut c, mut c2, mut c3) = (1.0, 1.0, 1.0);
                let el1 = e[l + 1];
                let (mut s, mut s2) = (0.0, 0.0);
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    let r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    if let Some(v) = v.as_deref_mut() {
                        for k in 0..n {
                            let h = v[k * n + i + 1];
                            v[k * n + i + 1] = s * v[k * n + i] + c * h;
                            v[k * n + i] = c * v[k * n + i] - s * h;
                        }
                    }
                }
                let p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

fn sorted_eigen(d: Vec<f64>, v: Option<Vec<f64>>) -> Eigen {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = order.iter().map(|&k| d[k]).collect();
    let vectors = v.map(|v| order.iter().map(|&k| (0..n).map(|i| v[i * n + k]).collect()).collect());
    Eigen { values, vectors }
}

/// All eigenvalues (and optionally eigenvectors) by Householder
/// tridiagonalization and implicit-shift QL.
pub fn eig_full(x: &SymMatrix, vectors: bool) -> Result<Eigen> {
    let n = x.n;
    if n == 0 {
        return Ok(Eigen { values: vec![], vectors: vectors.then(Vec::new) });
    }
    let mut v = x.data.clone();
    let (mut d, mut e) = tred2(&mut v, n, vectors);
    if vectors {
        tql2(&mut d, &mut e, Some(&mut v))?;
        Ok(sorted_eigen(d, Some(v)))
    } else {
        tql2(&mut d, &mut e, None)?;
        Ok(sorted_eigen(d, None))
    }
}

/// Largest eigenvalue and a unit eigenvector by restarted Lanczos with full
/// reorthogonalization. Each cycle builds a Krylov basis of dimension
/// `min(N, 80)` and restarts from the top Ritz vector until the residual
/// `‖Xu - λu‖` is at most `1e-8 ‖X‖₁`. The start vector is fixed, so the
/// result is deterministic; the eigenvector sign is normalized to make its
/// largest entry positive.
pub fn eig_top(x: &SymMatrix) -> Result<(f64, Vec<f64>)> {
    let n = x.n;
    if n == 0 {
        return Err(MonteCarloError::InvalidConfig("empty matrix".into()));
    }
    let scale = x.norm_one();
    if scale == 0.0 {
        let mut u = vec![0.0; n];
        u[0] = 1.0;
        return Ok((0.0, u));
    }
    let tol = 1e-8 * scale;
    let k = n.min(LANCZOS_DIM);
    let mut rng = rng_stream(0x5eed_1a2c_05, 0);
    let mut start: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let s = norm(&start);
    start.iter_mut().for_each(|v| *v /= s);
    for _ in 0..LANCZOS_MAX_CYCLES {
        let mut q: Vec<Vec<f64>> = vec![start];
        let mut alpha = Vec::with_capacity(k);
        let mut beta = Vec::with_capacity(k);
        loop {
            let j = q.len() - 1;
            let mut w = x.matvec(&q[j]);
            alpha.push(dot(&q[j], &w));
            for _ in 0..2 {
                for qi in &q {
                    let c = dot(qi, &w);
                    w.iter_mut().zip(qi).for_each(|(wv, qv)| *wv -= c * qv);
                }
            }
            let b = norm(&w);
            if q.len() == k || b <= 1e-14 * scale {
                break;
            }
            beta.push(b);
            w.iter_mut().for_each(|v| *v /= b);
            q.push(w);
        }
        let m = alpha.len();
        let mut d = alpha;
        let mut e = vec![0.0; m];
        e[1..].copy_from_slice(&beta);
        let mut s = vec![0.0; m * m];
        for i in 0..m {
            s[i * m + i] = 1.0;
        }
        tql2(&mut d, &mut e, Some(&mut s))?;
        let top = (0..m).max_by(|&a, &b| d[a].total_cmp(&d[b])).expect("nonempty");
        let mut u = vec![0.0; n];
        for (i, qi) in q.iter().enumerate() {
            let c = s[i * m + top];
            u.iter_mut().zip(qi).for_each(|(uv, qv)| *uv += c * qv);
        }
        let un = norm(&u);
        u.iter_mut().for_each(|v| *v /= un);
        let xu = x.matvec(&u);
        let lambda = dot(&u, &xu);
        let resid = norm(&xu.iter().zip(&u).map(|(a, b)| a - lambda * b).collect::<Vec<_>>());
        if resid <= tol {
            let imax = (0..n).max_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs())).expect("nonempty");
            if u[imax] < 0.0 {
                u.iter_mut().for_each(|v| *v = -*v);
            }
            return Ok((lambda, u));
        }
        start = u;
    }
    Err(MonteCarloError::NoConvergence { method: "Lanczos", iterations: LANCZOS_MAX_CYCLES * k })
}

/// Kolmogorov distance between the empirical distribution of `eigenvalues`
/// and the semicircle law.
pub fn semicircle_ks(eigenvalues: &[f64]) -> f64 {
    let mut x = eigenvalues.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = semicircle_cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Direction of a rank-one tilt.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TiltDirection {
    /// `(1/√N, …, 1/√N)`.
    Uniform,
    /// `⌊v√N⌋` entries equal to `√r2 · N^{-1/4}`, the remaining mass spread
    /// evenly over the other coordinates.
    Localized { v: f64, r2: f64 },
    Explicit { vector: Vec<f64> },
}

impl TiltDirection {
    pub fn resolve(&self, n: usize) -> Result<Vec<f64>> {
        let nf = n as f64;
        match self {
            TiltDirection::Uniform => Ok(vec![nf.sqrt().recip(); n]),
            TiltDirection::Localized { v, r2 } => localized_direction(n, *v, *r2),
            TiltDirection::Explicit { vector } => {
                if vector.len() != n {
                    return Err(MonteCarloError::InvalidConfig(format!(
                        "tilt direction has length {} but N = {n}",
                        vector.len()
                    )));
                }
                if (norm(vector) - 1.0).abs() > 1e-12 {
                    return Err(MonteCarloError::InvalidConfig("tilt direction must have unit norm".into()));
                }
                Ok(vector.clone())
            }
        }
    }
}

/// The localized unit vector described at [`TiltDirection::Localized`].
pub fn localized_direction(n: usize, v: f64, r2: f64) -> Result<Vec<f64>> {
    let nf = n as f64;
    if !(v >= 0.0 && r2 > 0.0 && v.is_finite() && r2.is_finite()) {
        return Err(MonteCarloError::InvalidConfig(format!("localized direction needs v >= 0, r2 > 0 (got {v}, {r2})")));
    }
    let k = ((v * nf.sqrt()).floor() as usize).min(n);
    let big = r2.sqrt() * nf.powf(-0.25);
    let rest = 1.0 - k as f64 * big * big;
    if rest < 0.0 || (k == n && rest > 1e-12) {
        return Err(MonteCarloError::InvalidConfig(format!(
            "localized direction with v = {v}, r2 = {r2} does not fit on the unit sphere at N = {n}"
        )));
    }
    let small = if k < n { (rest / (n - k) as f64).sqrt() } else { 0.0 };
    let mut e: Vec<f64> = (0..n).map(|i| if i < k { big } else { small }).collect();
    let s = norm(&e);
    e.iter_mut().for_each(|x| *x /= s);
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tilt {
    pub theta: f64,
    pub direction: TiltDirection,
}

#[derive(Debug, Clone)]
pub struct WignerEnsembleConfig {
    pub law: EntryLaw,
    pub n: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub tilt: Option<Tilt>,
}

impl WignerEnsembleConfig {
    pub fn new(law: EntryLaw, n: usize, n_samples: usize, seed: u64) -> Self {
        Self { law, n, n_samples, seed, tilt: None }
    }

    pub fn with_tilt(mut self, theta: f64, direction: TiltDirection) -> Self {
        self.tilt = Some(Tilt { theta, direction });
        self
    }

    /// Checks sizes and the tilt, returning the resolved tilt direction.
    pub fn validate(&self) -> Result<Option<(f64, Vec<f64>)>> {
        if self.n == 0 || self.n > MAX_N {
            return Err(MonteCarloError::InvalidConfig(format!("N must be in 1..={MAX_N}, got {}", self.n)));
        }
        if self.n_samples == 0 {
            return Err(MonteCarloError::InvalidConfig("n_samples must be positive".into()));
        }
        match &self.tilt {
            None => Ok(None),
            Some(t) => {
                if !(t.theta >= 0.0 && t.theta.is_finite()) {
                    return Err(MonteCarloError::InvalidConfig(format!("tilt theta must be >= 0, got {}", t.theta)));
                }
                Ok(Some((t.theta, t.direction.resolve(self.n)?)))
            }
        }
    }
}

/// Entry `X_ij` from a standardized draw.
fn scale_entry(xi: f64, i: usize, j: usize, n: usize) -> f64 {
    let nf = n as f64;
    if i == j {
        xi * (2.0 / nf).sqrt()
    } else {
        xi / nf.sqrt()
    }
}

/// Tilt parameter of entry `(i, j)`: `2θ√N e_i e_j` off the diagonal and
/// `√(2N) θ e_i²` on it.
fn entry_tilt(theta: f64, e: &[f64], i: usize, j: usize) -> f64 {
    let nf = e.len() as f64;
    if i == j {
        (2.0 * nf).sqrt() * theta * e[i] * e[i]
    } else {
        2.0 * theta * nf.sqrt() * e[i] * e[j]
    }
}

/// Sample `sample_index` of the untilted ensemble.
pub fn sample_wigner(law: &EntryLaw, n: usize, seed: u64, sample_index: u64) -> SymMatrix {
    let mut rng = rng_stream(seed, sample_index);
    let mut x = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            x.set(i, j, scale_entry(law.sample(&mut rng), i, j, n));
        }
    }
    x
}

/// Sample `sample_index` of the ensemble tilted by `e^{θN⟨e, Xe⟩}`. Entries
/// stay independent, each drawn from the law tilted by [`entry_tilt`]. At
/// `θ = 0` this reproduces [`sample_wigner`] bit for bit.
pub fn sample_tilted_wigner(law: &EntryLaw, theta: f64, e: &[f64], seed: u64, sample_index: u64) -> Result<SymMatrix> {
    let n = e.len();
    let mut rng = rng_stream(seed, sample_index);
    let mut x = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let xi = law.sample_tilted(entry_tilt(theta, e, i, j), &mut rng)?;
            x.set(i, j, scale_entry(xi, i, j, n));
        }
    }
    Ok(x)
}

/// `Σ_{i≤j} L(γ_ij)`, the log normalizer of the tilt.
pub fn tilt_log_normalizer(law: &EntryLaw, theta: f64, e: &[f64]) -> f64 {
    let n = e.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i..n {
            s += law.log_laplace(entry_tilt(theta, e, i, j));
        }
    }
    s
}

/// Sample `k` of a configured run (tilted when the config has a tilt).
pub fn sample_from_config(cfg: &WignerEnsembleConfig, sample_index: u64) -> Result<SymMatrix> {
    match cfg.validate()? {
        None => Ok(sample_wigner(&cfg.law, cfg.n, cfg.seed, sample_index)),
        Some((theta, e)) => sample_tilted_wigner(&cfg.law, theta, &e, cfg.seed, sample_index),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumStats {
    pub lambda_max: f64,
    /// Only available from a full spectrum.
    pub ks_to_semicircle: Option<f64>,
    pub spectral_radius: f64,
    #[serde(skip)]
    pub top_eigenvector: Option<Vec<f64>>,
}

/// Spectrum summary of one matrix. With `full_spectrum` every eigenvalue is
/// computed (giving the semicircle distance); otherwise Lanczos is run on
/// `X` and `-X`.
pub fn spectrum_stats(x: &SymMatrix, full_spectrum: bool, keep_vector: bool) -> Result<SpectrumStats> {
    if full_spectrum {
        let eig = eig_full(x, false)?;
        let lambda_max = *eig.values.last().expect("nonempty");
        let spectral_radius = lambda_max.abs().max(eig.values[0].abs());
        let top_eigenvector = if keep_vector { Some(eig_top(x)?.1) } else { None };
        Ok(SpectrumStats {
            lambda_max,
            ks_to_semicircle: Some(semicircle_ks(&eig.values)),
            spectral_radius,
            top_eigenvector,
        })
    } else {
        let (lambda_max, u) = eig_top(x)?;
        let (neg_min, _) = eig_top(&x.scaled(-1.0))?;
        Ok(SpectrumStats {
            lambda_max,
            ks_to_semicircle: None,
            spectral_radius: lambda_max.abs().max(neg_min.abs()),
            top_eigenvector: keep_vector.then_some(u),
        })
    }
}

/// One row of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub sample: u64,
    pub lambda_max: f64,
    pub ks: Option<f64>,
    pub spectral_radius: f64,
    /// `⟨u, e⟩²` against the tilt direction, for tilted runs.
    pub overlap_sq: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanStderr {
    /// Mean and standard error of `xs`, summed in order.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, stderr: (var / n).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub n: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub lambda_max: MeanStderr,
    pub ks: Option<MeanStderr>,
    pub overlap_sq: Option<MeanStderr>,
}

impl EnsembleSummary {
    pub fn from_records(cfg: &WignerEnsembleConfig, records: &[SampleRecord]) -> Self {
        let lm: Vec<f64> = records.iter().map(|r| r.lambda_max).collect();
        let ks: Option<Vec<f64>> = records.iter().map(|r| r.ks).collect();
        let ov: Option<Vec<f64>> = records.iter().map(|r| r.overlap_sq).collect();
        Self {
            n: cfg.n,
            n_samples: records.len(),
            seed: cfg.seed,
            lambda_max: MeanStderr::of(&lm),
            ks: ks.map(|v| MeanStderr::of(&v)),
            overlap_sq: ov.map(|v| MeanStderr::of(&v)),
        }
    }
}

/// Runs every sample of `cfg` in parallel. Records come back in sample
/// order, so the output does not depend on the thread count.
pub fn simulate(cfg: &WignerEnsembleConfig, full_spectrum: bool) -> Result<Vec<SampleRecord>> {
    let tilt = cfg.validate()?;
    (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let x = match &tilt {
                None => sample_wigner(&cfg.law, cfg.n, cfg.seed, k),
                Some((theta, e)) => sample_tilted_wigner(&cfg.law, *theta, e, cfg.seed, k)?,
            };
            let st = spectrum_stats(&x, full_spectrum, tilt.is_some())?;
            let overlap_sq = match (&tilt, &st.top_eigenvector) {
                (Some((_, e)), Some(u)) => Some(dot(u, e).powi(2)),
                _ => None,
            };
            Ok(SampleRecord {
                sample: k,
                lambda_max: st.lambda_max,
                ks: st.ks_to_semicircle,
                spectral_radius: st.spectral_radius,
                overlap_sq,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BbpSummary {
    pub theta: f64,
    pub n: usize,
    pub n_samples: usize,
    pub lambda_max: MeanStderr,
    pub overlap_sq: MeanStderr,
    /// `K_σ(2θ)` above the transition `2θ > 1`, the edge 2 below it.
    pub predicted_lambda_max: f64,
    /// `-G_σ(x)²/G_σ'(x)` at the predicted outlier, 0 below the transition.
    pub predicted_overlap_sq: f64,
}

/// Limits of the top eigenvalue and of its overlap with `e` under a rank-one
/// tilt of strength `θ`.
pub fn bbp_prediction(theta: f64) -> Result<(f64, f64)> {
    if 2.0 * theta > 1.0 {
        let x = freeprob::k_sigma(2.0 * theta)?;
        let g = freeprob::g_sigma(x)?;
        Ok((x, -g * g / freeprob::g_sigma_prime(x)?))
    } else {
        Ok((freeprob::EDGE, 0.0))
    }
}

/// Top eigenvalue and overlap over tilted samples, next to their limits.
pub fn bbp_experiment(
    law: &EntryLaw,
    n: usize,
    theta: f64,
    direction: TiltDirection,
    n_samples: usize,
    seed: u64,
) -> Result<BbpSummary> {
    let cfg = WignerEnsembleConfig::new(law.clone(), n, n_samples, seed).with_tilt(theta, direction);
    let records = simulate(&cfg, false)?;
    let s = EnsembleSummary::from_records(&cfg, &records);
    let (predicted_lambda_max, predicted_overlap_sq) = bbp_prediction(theta)?;
    Ok(BbpSummary {
        theta,
        n,
        n_samples,
        lambda_max: s.lambda_max,
        overlap_sq: s.overlap_sq.expect("tilted runs record overlaps"),
        predicted_lambda_max,
        predicted_overlap_sq,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalizationParams {
    pub epsilon: f64,
    pub r2: f64,
    /// `κ` in the small-entry threshold `ε N^κ`.
    pub deloc_exponent: f64,
}

impl LocalizationParams {
    pub fn new(epsilon: f64, r2: f64) -> Self {
        Self { epsilon, r2, deloc_exponent: DEFAULT_DELOC_EXPONENT }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalizationStats {
    pub epsilon: f64,
    pub r2: f64,
    /// Entries with `|u_i| / (√r2 N^{-1/4}) ∈ [1-ε, 1+ε]`.
    pub bucket_count: usize,
    pub bucket_mass: f64,
    /// `Σ u_i²` over entries outside the bucket with `|u_i| ≤ ε N^κ`.
    pub small_mass: f64,
    /// `⟨u, e⟩²`, when a reference direction is given.
    pub overlap_sq: Option<f64>,
    /// Entries (anywhere) with `|u_i| > ε N^κ`.
    pub deloc_violation_count: usize,
}

/// Sum of squares in ascending order, so the result does not depend on the
/// order of the input.
fn mass(mut sq: Vec<f64>) -> f64 {
    sq.sort_by(f64::total_cmp);
    sq.iter().fold(0.0, |acc, v| acc + v)
}

pub fn localization_stats(u: &[f64], reference: Option<&[f64]>, params: &LocalizationParams) -> Result<LocalizationStats> {
    let n = u.len() as f64;
    if u.is_empty() || (norm(u) - 1.0).abs() > 1e-9 {
        return Err(MonteCarloError::InvalidConfig("localization_stats needs a unit vector".into()));
    }
    if let Some(e) = reference {
        if e.len() != u.len() {
            return Err(MonteCarloError::InvalidConfig("reference direction has the wrong length".into()));
        }
    }
    let target = params.r2.sqrt() * n.powf(-0.25);
    let small = params.epsilon * n.powf(params.deloc_exponent);
    let mut bucket = Vec::new();
    let mut rest = Vec::new();
    let mut violations = 0;
    for &x in u {
        let a = x.abs();
        if a > small {
            violations += 1;
        }
        let ratio = a / target;
        if (1.0 - params.epsilon..=1.0 + params.epsilon).contains(&ratio) {
            bucket.push(x * x);
        } else if a <= small {
            rest.push(x * x);
        }
    }
    Ok(LocalizationStats {
        epsilon: params.epsilon,
        r2: params.r2,
        bucket_count: bucket.len(),
        bucket_mass: mass(bucket),
        small_mass: mass(rest),
        overlap_sq: reference.map(|e| dot(u, e).powi(2)),
        deloc_violation_count: violations,
    })
}

/// Localization statistics of the top eigenvector of every sample of `cfg`,
/// measured against the tilt direction when there is one.
pub fn localization_experiment(cfg: &WignerEnsembleConfig, params: &LocalizationParams) -> Result<Vec<LocalizationStats>> {
    let tilt = cfg.validate()?;
    (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let x = match &tilt {
                None => sample_wigner(&cfg.law, cfg.n, cfg.seed, k),
                Some((theta, e)) => sample_tilted_wigner(&cfg.law, *theta, e, cfg.seed, k)?,
            };
            let (_, u) = eig_top(&x)?;
            localization_stats(&u, tilt.as_ref().map(|(_, e)| e.as_slice()), params)
        })
        .collect()
}

/// Event on the top eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TailEvent {
    AtLeast { x: f64 },
    /// `|λ_max - center| ≤ delta`.
    Window { center: f64, delta: f64 },
    /// Always true; estimates the total weight.
    Any,
}

impl TailEvent {
    pub fn contains(&self, lambda: f64) -> bool {
        match *self {
            TailEvent::AtLeast { x } => lambda >= x,
            TailEvent::Window { center, delta } => (lambda - center).abs() <= delta,
            TailEvent::Any => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailEstimate {
    pub p_hat: f64,
    pub stderr: f64,
}

fn top_eigenvalues(law: &EntryLaw, n: usize, n_samples: usize, seed: u64, tilt: Option<(f64, &[f64])>) -> Result<Vec<(f64, f64)>> {
    (0..n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let (x, quad) = match tilt {
                None => (sample_wigner(law, n, seed, k), 0.0),
                Some((theta, e)) => {
                    let x = sample_tilted_wigner(law, theta, e, seed, k)?;
                    let q = x.quadratic_form(e);
                    (x, q)
                }
            };
            Ok((eig_top(&x)?.0, quad))
        })
        .collect()
}

/// Frequency of `event` over untilted samples, with its binomial standard
/// error.
pub fn tail_estimate_direct(law: &EntryLaw, n: usize, event: TailEvent, n_samples: usize, seed: u64) -> Result<TailEstimate> {
    if n == 0 || n > MAX_N || n_samples == 0 {
        return Err(MonteCarloError::InvalidConfig(format!("need 1 <= N <= {MAX_N} and n_samples > 0")));
    }
    let tops = top_eigenvalues(law, n, n_samples, seed, None)?;
    let hits = tops.iter().filter(|(l, _)| event.contains(*l)).count() as f64;
    let m = n_samples as f64;
    let p = hits / m;
    Ok(TailEstimate { p_hat: p, stderr: (p * (1.0 - p) / m).sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TiltedTailEstimate {
    pub n: usize,
    pub theta: f64,
    pub p_hat: f64,
    /// Standard error of `p_hat`.
    pub p_stderr: f64,
    /// `-(1/N) log p_hat`.
    pub log_p_per_n: f64,
    /// Delta-method standard error of `log_p_per_n`.
    pub stderr: f64,
    pub ess: f64,
}

/// Importance-sampling estimate of `P(event)` from the ensemble tilted by
/// `e^{θN⟨e, Xe⟩}`, using the exact weight
/// `exp(-θN⟨e, Xe⟩ + Σ_{i≤j} L(γ_ij))`. At `θ = 0` every weight is 1 and the
/// estimate equals [`tail_estimate_direct`] on the same seed.
pub fn tail_estimate_tilted(
    law: &EntryLaw,
    n: usize,
    event: TailEvent,
    theta: f64,
    direction: &TiltDirection,
    n_samples: usize,
    seed: u64,
) -> Result<TiltedTailEstimate> {
    let cfg = WignerEnsembleConfig::new(law.clone(), n, n_samples, seed).with_tilt(theta, direction.clone());
    let (theta, e) = cfg.validate()?.expect("tilt set above");
    let log_norm = tilt_log_normalizer(law, theta, &e);
    let nf = n as f64;
    let tops = top_eigenvalues(law, n, n_samples, seed, Some((theta, &e)))?;
    let logw: Vec<f64> = tops
        .iter()
        .map(|&(l, q)| if event.contains(l) { -theta * nf * q + log_norm } else { f64::NEG_INFINITY })
        .collect();
    let shift = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(MonteCarloError::DegenerateWeights { ess: 0.0 });
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - shift).exp()).collect();
    let s1: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    let ess = s1 * s1 / s2;
    if ess < MIN_ESS {
        return Err(MonteCarloError::DegenerateWeights { ess });
    }
    let m = n_samples as f64;
    let mean_scaled = s1 / m;
    let var_scaled = if n_samples > 1 { (s2 - m * mean_scaled * mean_scaled).max(0.0) / (m - 1.0) } else { 0.0 };
    let se_scaled = (var_scaled / m).sqrt();
    let log_p = shift + mean_scaled.ln();
    Ok(TiltedTailEstimate {
        n,
        theta,
        p_hat: log_p.exp(),
        p_stderr: se_scaled * shift.exp(),
        log_p_per_n: -log_p / nf,
        stderr: se_scaled / (mean_scaled * nf),
        ess,
    })
}

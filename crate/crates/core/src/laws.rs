//! Entry laws of the Wigner matrix.
//!
//! Every law here is a symmetric mixture of centered Gaussians and symmetric
//! atom pairs `(δ_b + δ_{-b}) / 2` (an atom pair with `b = 0` is a point mass
//! at zero). That family covers the sparse Gaussian, Gaussian/Rademacher
//! combinations, Rademacher mixtures and the three-point law, and it gives
//! closed forms for the log-Laplace transform `L`, for `L'`, and for exact
//! sampling under exponential tilts.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, Tolerances};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("tail constant B did not stabilize (last estimates {last:?} at X_max = {x_max:e})")]
    NonStableTail { last: (f64, f64), x_max: f64 },
    #[error("tilt {gamma} out of range: L(gamma) is not finite")]
    TiltOutOfRange { gamma: f64 },
    #[error("cannot parse law spec `{0}`")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, LawError>;

/// Below this `|x|`, `psi` returns its limit `1/2` exactly.
pub const PSI_ZERO_CUTOFF: f64 = 1e-4;
/// Absolute margin used to decide `B < A` and `A = B`.
pub const CLASSIFICATION_MARGIN: f64 = 1e-3;
/// Grid decreases of `psi` smaller than this are treated as noise.
pub const MONOTONICITY_TOL: f64 = 1e-9;
/// Upper end of the diagnostic grid for `psi`.
pub const DIAGNOSTIC_X_MAX: f64 = 50.0;
const SHARP_TOL: f64 = 1e-6;
const PARAM_TOL: f64 = 1e-9;

/// Parameters of a builtin law. Serializes as `{"kind": "...", ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LawSpec {
    Gaussian,
    Rademacher,
    SparseGaussian { p: f64 },
    GaussRademacherMix { a: f64, b: f64, bvar: f64 },
    RademacherMixture { weights: Vec<f64>, atoms: Vec<f64> },
    ThreePoint { p: f64 },
}

impl LawSpec {
    pub fn build(&self) -> Result<EntryLaw> {
        match self {
            LawSpec::Gaussian => Ok(gaussian()),
            LawSpec::Rademacher => Ok(rademacher()),
            LawSpec::SparseGaussian { p } => sparse_gaussian(*p),
            LawSpec::GaussRademacherMix { a, b, bvar } => gauss_rademacher_mix(*a, *b, *bvar),
            LawSpec::RademacherMixture { weights, atoms } => rademacher_mixture(weights, atoms),
            LawSpec::ThreePoint { p } => three_point(*p),
        }
    }
}

impl fmt::Display for LawSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join("/");
        match self {
            LawSpec::Gaussian => write!(f, "gaussian"),
            LawSpec::Rademacher => write!(f, "rademacher"),
            LawSpec::SparseGaussian { p } => write!(f, "sparse_gaussian:p={p}"),
            LawSpec::GaussRademacherMix { a, b, bvar } => write!(f, "gauss_rademacher_mix:a={a},b={b},bvar={bvar}"),
            LawSpec::RademacherMixture { weights, atoms } => {
                write!(f, "rademacher_mixture:weights={},atoms={}", join(weights), join(atoms))
            }
            LawSpec::ThreePoint { p } => write!(f, "three_point:p={p}"),
        }
    }
}

/// Inline form: `kind[:key=value,...]`, list values separated by `/`,
/// e.g. `sparse_gaussian:p=0.5` or `rademacher_mixture:weights=0.05/0.95,atoms=3/0.76`.
impl FromStr for LawSpec {
    type Err = LawError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return serde_json::from_str(s).map_err(|e| LawError::Parse(format!("{s}: {e}")));
        }
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params = std::collections::BTreeMap::new();
        for kv in rest.split(',').filter(|kv| !kv.trim().is_empty()) {
            let (k, v) = kv.split_once('=').ok_or_else(|| LawError::Parse(s.to_string()))?;
            params.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |key: &str| -> Result<f64> {
            params
                .get(key)
                .ok_or_else(|| LawError::Parse(format!("{s}: missing `{key}`")))?
                .parse::<f64>()
                .map_err(|_| LawError::Parse(format!("{s}: `{key}` is not a number")))
        };
        let list = |key: &str| -> Result<Vec<f64>> {
            params
                .get(key)
                .ok_or_else(|| LawError::Parse(format!("{s}: missing `{key}`")))?
                .split('/')
                .map(|x| x.trim().parse::<f64>().map_err(|_| LawError::Parse(format!("{s}: bad list `{key}`"))))
                .collect()
        };
        let spec = match kind.trim() {
            "gaussian" => LawSpec::Gaussian,
            "rademacher" => LawSpec::Rademacher,
            "sparse_gaussian" => LawSpec::SparseGaussian { p: num("p")? },
            "gauss_rademacher_mix" => LawSpec::GaussRademacherMix { a: num("a")?, b: num("b")?, bvar: num("bvar")? },
            "rademacher_mixture" => LawSpec::RademacherMixture { weights: list("weights")?, atoms: list("atoms")? },
            "three_point" => LawSpec::ThreePoint { p: num("p")? },
            other => return Err(LawError::Parse(format!("unknown law kind `{other}`"))),
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub variance: f64,
}

/// Symmetric pair `(δ_value + δ_{-value}) / 2` carrying total mass `weight`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomPair {
    pub weight: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    WholeLine,
    /// `(value, mass)` for every atom, both signs listed.
    Discrete(Vec<(f64, f64)>),
    /// Gaussian part plus atoms.
    Mixture,
}

/// A symmetric, unit-variance, sub-Gaussian entry distribution. Immutable
/// after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryLaw {
    name: String,
    spec: LawSpec,
    gaussians: Vec<GaussianComponent>,
    atoms: Vec<AtomPair>,
}

/// `log cosh y`, accurate near zero and without overflow for large `|y|`.
fn log_cosh(y: f64) -> f64 {
    let y = y.abs();
    if y < 1.0 {
        let s = (0.5 * y).sinh();
        (2.0 * s * s).ln_1p()
    } else {
        y + (-2.0 * y).exp().ln_1p() - std::f64::consts::LN_2
    }
}

/// `cosh y - 1`, accurate near zero.
fn cosh_m1(y: f64) -> f64 {
    let s = (0.5 * y).sinh();
    2.0 * s * s
}

impl EntryLaw {
    fn new(name: String, spec: LawSpec, gaussians: Vec<GaussianComponent>, atoms: Vec<AtomPair>) -> Self {
        let total: f64 = gaussians.iter().map(|g| g.weight).chain(atoms.iter().map(|a| a.weight)).sum();
        let gaussians = gaussians
            .into_iter()
            .filter(|g| g.weight > 0.0)
            .map(|g| GaussianComponent { weight: g.weight / total, ..g })
            .collect();
        let atoms = atoms
            .into_iter()
            .filter(|a| a.weight > 0.0)
            .map(|a| AtomPair { weight: a.weight / total, value: a.value.abs() })
            .collect();
        Self { name, spec, gaussians, atoms }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn spec(&self) -> &LawSpec {
        &self.spec
    }

    pub fn gaussians(&self) -> &[GaussianComponent] {
        &self.gaussians
    }

    pub fn atoms(&self) -> &[AtomPair] {
        &self.atoms
    }

    pub fn has_density(&self) -> bool {
        self.atoms.is_empty() && !self.gaussians.is_empty()
    }

    pub fn support(&self) -> Support {
        if self.gaussians.is_empty() {
            let mut pts = Vec::new();
            for a in &self.atoms {
                if a.value == 0.0 {
                    pts.push((0.0, a.weight));
                } else {
                    pts.push((-a.value, 0.5 * a.weight));
                    pts.push((a.value, 0.5 * a.weight));
                }
            }
            pts.sort_by(|x, y| x.0.total_cmp(&y.0));
            Support::Discrete(pts)
        } else if self.atoms.is_empty() {
            Support::WholeLine
        } else {
            Support::Mixture
        }
    }

    /// Per-component exponents `s_k(x)` with `L(x) = log Σ w_k e^{s_k(x)}`.
    fn exponents(&self, x: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let g = self.gaussians.iter().map(move |g| (g.weight, 0.5 * g.variance * x * x));
        let a = self.atoms.iter().map(move |a| (a.weight, log_cosh(a.value * x)));
        g.chain(a)
    }

    /// Log-Laplace transform `L(x) = log ∫ e^{xt} dμ(t)`.
    pub fn log_laplace(&self, x: f64) -> f64 {
        let max_s = self.exponents(x).map(|(_, s)| s).fold(0.0, f64::max);
        if max_s <= 1.0 {
            // log(1 + Σ w_k (e^{s_k} - 1)); exact zero at x = 0.
            let mut acc = 0.0;
            for g in &self.gaussians {
                acc += g.weight * (0.5 * g.variance * x * x).exp_m1();
            }
            for a in &self.atoms {
                acc += a.weight * cosh_m1(a.value * x);
            }
            acc.ln_1p()
        } else {
            let sum: f64 = self.exponents(x).map(|(w, s)| w * (s - max_s).exp()).sum();
            max_s + sum.ln()
        }
    }

    /// `L'(x)`, the mean of the law tilted by `e^{x t}`.
    pub fn log_laplace_prime(&self, x: f64) -> f64 {
        let max_s = self.exponents(x).map(|(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
        let mut num = 0.0;
        let mut den = 0.0;
        for g in &self.gaussians {
            let w = g.weight * (0.5 * g.variance * x * x - max_s).exp();
            num += w * g.variance * x;
            den += w;
        }
        for a in &self.atoms {
            let w = a.weight * (log_cosh(a.value * x) - max_s).exp();
            num += w * a.value * (a.value * x).tanh();
            den += w;
        }
        num / den
    }

    /// `L(x) - (c + u)x²`, computed component by component so that `c = B/2`
    /// cancels exactly against the widest Gaussian even for tiny `u`.
    pub fn log_laplace_minus_quadratic(&self, x: f64, c: f64, u: f64) -> f64 {
        let x2 = x * x;
        let terms = || {
            let g = self.gaussians.iter().map(move |g| (g.weight, ((0.5 * g.variance - c) - u) * x2));
            let a = self.atoms.iter().map(move |a| (a.weight, log_cosh(a.value * x) - (c + u) * x2));
            g.chain(a)
        };
        let max_s = terms().map(|(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms().map(|(w, s)| w * (s - max_s).exp()).sum();
        max_s + sum.ln()
    }

    /// `psi(x) = L(x) / x^2`, with the exact limit `1/2` near zero.
    pub fn psi(&self, x: f64) -> f64 {
        if x.abs() <= PSI_ZERO_CUTOFF {
            0.5
        } else {
            self.log_laplace(x) / (x * x)
        }
    }

    /// `B` read off the mixture: the largest Gaussian variance, or 0 for
    /// compactly supported laws.
    pub fn declared_b(&self) -> f64 {
        self.gaussians.iter().map(|g| g.variance).fold(0.0, f64::max)
    }

    /// Variance `∫ t^2 dμ(t)`.
    pub fn variance(&self) -> f64 {
        self.gaussians.iter().map(|g| g.weight * g.variance).sum::<f64>()
            + self.atoms.iter().map(|a| a.weight * a.value * a.value).sum::<f64>()
    }

    /// Fourth moment `∫ t^4 dμ(t)`.
    pub fn fourth_moment(&self) -> f64 {
        self.gaussians.iter().map(|g| 3.0 * g.weight * g.variance * g.variance).sum::<f64>()
            + self.atoms.iter().map(|a| a.weight * a.value.powi(4)).sum::<f64>()
    }

    /// Exact draw from the law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.draw(0.0, 0.0, rng)
    }

    /// Exact draw from `e^{γt} dμ(t) / e^{L(γ)}`. With `gamma = 0` this
    /// consumes the stream exactly as [`EntryLaw::sample`] does and returns the
    /// same value.
    pub fn sample_tilted<R: Rng + ?Sized>(&self, gamma: f64, rng: &mut R) -> Result<f64> {
        let norm = self.log_laplace(gamma);
        if !gamma.is_finite() || !norm.is_finite() {
            return Err(LawError::TiltOutOfRange { gamma });
        }
        Ok(self.draw(gamma, norm, rng))
    }

    fn draw<R: Rng + ?Sized>(&self, gamma: f64, log_norm: f64, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let n_g = self.gaussians.len();
        let n = n_g + self.atoms.len();
        let mut chosen = n - 1;
        for k in 0..n {
            let (w, s) = if k < n_g {
                let g = &self.gaussians[k];
                (g.weight, 0.5 * g.variance * gamma * gamma)
            } else {
                let a = &self.atoms[k - n_g];
                (a.weight, log_cosh(a.value * gamma))
            };
            acc += w * (s - log_norm).exp();
            if u < acc {
                chosen = k;
                break;
            }
        }
        if chosen < n_g {
            let g = &self.gaussians[chosen];
            let z: f64 = rng.sample(StandardNormal);
            gamma * g.variance + g.variance.sqrt() * z
        } else {
            let a = &self.atoms[chosen - n_g];
            let p_plus = 1.0 / (1.0 + (-2.0 * gamma * a.value).exp());
            let v: f64 = rng.gen();
            if v < p_plus {
                a.value
            } else {
                -a.value
            }
        }
    }
}

pub fn gaussian() -> EntryLaw {
    EntryLaw::new(
        "gaussian".into(),
        LawSpec::Gaussian,
        vec![GaussianComponent { weight: 1.0, variance: 1.0 }],
        vec![],
    )
}

pub fn rademacher() -> EntryLaw {
    EntryLaw::new("rademacher".into(), LawSpec::Rademacher, vec![], vec![AtomPair { weight: 1.0, value: 1.0 }])
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(LawError::InvalidParameters(format!("{name} must lie in (0, 1), got {p}")))
    }
}

/// `ζ Γ` with `ζ ~ Bernoulli(p)` and `Γ ~ N(0, 1/p)`.
pub fn sparse_gaussian(p: f64) -> Result<EntryLaw> {
    check_probability("p", p)?;
    Ok(EntryLaw::new(
        format!("sparse_gaussian(p={p})"),
        LawSpec::SparseGaussian { p },
        vec![GaussianComponent { weight: p, variance: 1.0 / p }],
        vec![AtomPair { weight: 1.0 - p, value: 0.0 }],
    ))
}

/// `a N(0, bvar) + (1 - a) (δ_b + δ_{-b}) / 2` with `a bvar + (1 - a) b^2 = 1`.
pub fn gauss_rademacher_mix(a: f64, b: f64, bvar: f64) -> Result<EntryLaw> {
    check_probability("a", a)?;
    if !(bvar > 0.0 && bvar.is_finite()) || !b.is_finite() {
        return Err(LawError::InvalidParameters(format!("need bvar > 0 and finite b, got bvar={bvar}, b={b}")));
    }
    let var = a * bvar + (1.0 - a) * b * b;
    if (var - 1.0).abs() > PARAM_TOL {
        return Err(LawError::InvalidParameters(format!("a*bvar + (1-a)*b^2 = 1 violated (got {var})")));
    }
    Ok(EntryLaw::new(
        format!("gauss_rademacher_mix(a={a},b={b},bvar={bvar})"),
        LawSpec::GaussRademacherMix { a, b, bvar },
        vec![GaussianComponent { weight: a, variance: bvar }],
        vec![AtomPair { weight: 1.0 - a, value: b }],
    ))
}

/// `Σ α_i (δ_{β_i} + δ_{-β_i}) / 2` with `Σ α_i = 1` and `Σ α_i β_i^2 = 1`.
pub fn rademacher_mixture(weights: &[f64], atoms: &[f64]) -> Result<EntryLaw> {
    if weights.is_empty() || weights.len() != atoms.len() {
        return Err(LawError::InvalidParameters(format!(
            "weights and atoms must be non-empty and of equal length ({} vs {})",
            weights.len(),
            atoms.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || atoms.iter().any(|b| !b.is_finite()) {
        return Err(LawError::InvalidParameters("weights must be nonnegative and atoms finite".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > PARAM_TOL {
        return Err(LawError::InvalidParameters(format!("sum of weights = 1 violated (got {total})")));
    }
    let var: f64 = weights.iter().zip(atoms).map(|(w, b)| w * b * b).sum();
    if (var - 1.0).abs() > PARAM_TOL {
        return Err(LawError::InvalidParameters(format!("sum of weight*atom^2 = 1 violated (got {var})")));
    }
    let pairs = weights.iter().zip(atoms).map(|(&weight, &value)| AtomPair { weight, value }).collect();
    Ok(EntryLaw::new(
        format!("rademacher_mixture(weights={weights:?},atoms={atoms:?})"),
        LawSpec::RademacherMixture { weights: weights.to_vec(), atoms: atoms.to_vec() },
        vec![],
        pairs,
    ))
}

/// `(p/2)(δ_{1/√p} + δ_{-1/√p}) + (1 - p) δ_0`.
pub fn three_point(p: f64) -> Result<EntryLaw> {
    check_probability("p", p)?;
    Ok(EntryLaw::new(
        format!("three_point(p={p})"),
        LawSpec::ThreePoint { p },
        vec![],
        vec![AtomPair { weight: p, value: 1.0 / p.sqrt() }, AtomPair { weight: 1.0 - p, value: 0.0 }],
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailConstants {
    /// `A / 2 = sup psi`.
    pub a: f64,
    /// `B / 2 = lim psi(x)` as `|x| → ∞`.
    pub b: f64,
    /// Interior maximizer of `psi`, when the maximum is not the tail value.
    pub m_star: Option<f64>,
    pub psi_second_at_mstar: Option<f64>,
}

/// `B` from the tail of `psi`: doubles `X_max` from 50 until `2 psi(X_max)`
/// changes by less than 1e-6, giving up past 1e6.
pub fn tail_b_extrapolated(law: &EntryLaw) -> Result<f64> {
    let mut x = DIAGNOSTIC_X_MAX;
    let mut prev = 2.0 * law.psi(x);
    while x <= 1e6 {
        let next = 2.0 * law.psi(2.0 * x);
        if (next - prev).abs() < 1e-6 {
            return Ok(next);
        }
        prev = next;
        x *= 2.0;
    }
    Err(LawError::NonStableTail { last: (prev, 2.0 * law.psi(x)), x_max: x })
}

/// Tail constants `A`, `B` and the maximizer `m*` of `psi`. `B` is read off
/// the mixture (the law declares its tail); `A` combines a grid-and-golden
/// maximization of `psi` on `[0, 50]` with the plateau value `B / 2`.
pub fn tail_constants(law: &EntryLaw) -> Result<TailConstants> {
    let tol = Tolerances::default();
    let b = law.declared_b();
    let (arg, psi_max) = numerics::maximize_1d_grid(|x| law.psi(x), (0.0, DIAGNOSTIC_X_MAX), 4096, &tol);
    let floor = b.max(1.0);
    // Round-off in L(x)/x^2 must not lift A above an exact plateau.
    let a = if 2.0 * psi_max <= floor + 1e-12 { floor } else { 2.0 * psi_max };
    let interior = psi_max > 0.5f64.max(0.5 * b) + 1e-9 && arg < DIAGNOSTIC_X_MAX * 0.99;
    let (m_star, psi2) = if interior {
        let d2 = numerics::derivative(|x| law.psi(x), arg, 2, &Tolerances { fd_step: 1e-3, ..tol });
        (Some(arg), Some(d2))
    } else {
        (None, None)
    };
    Ok(TailConstants { a, b, m_star, psi_second_at_mstar: psi2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LawTag {
    SharpSubGaussian,
    IncreasingPsi,
    CompactCase,
    Unclassified,
}

impl fmt::Display for LawTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LawTag::SharpSubGaussian => "SharpSubGaussian",
            LawTag::IncreasingPsi => "IncreasingPsi",
            LawTag::CompactCase => "CompactCase",
            LawTag::Unclassified => "Unclassified",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationEvidence {
    /// Grid steps where `psi` dropped by more than `MONOTONICITY_TOL`.
    pub monotonicity_violations: usize,
    pub largest_decrease: f64,
    /// Strict local maxima of `psi` on the grid.
    pub local_maxima: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LawClassification {
    pub tag: LawTag,
    pub constants: TailConstants,
    pub evidence: ClassificationEvidence,
}

fn psi_grid_evidence(law: &EntryLaw) -> ClassificationEvidence {
    let n = 2048;
    let lo: f64 = 1e-2;
    let ratio = (DIAGNOSTIC_X_MAX / lo).ln() / (n - 1) as f64;
    let values: Vec<f64> = (0..n).map(|i| law.psi(lo * (ratio * i as f64).exp())).collect();
    let mut violations = 0;
    let mut largest = 0.0f64;
    for w in values.windows(2) {
        let drop = w[0] - w[1];
        if drop > MONOTONICITY_TOL {
            violations += 1;
        }
        largest = largest.max(drop);
    }
    let local_maxima = values.windows(3).filter(|w| w[1] > w[0] && w[1] > w[2]).count();
    ClassificationEvidence { monotonicity_violations: violations, largest_decrease: largest, local_maxima }
}

/// Regime of the law: sharp sub-Gaussian (`A = 1`), nondecreasing `psi`
/// (`A = B`), or a unique nondegenerate interior maximum of `psi` with `B < A`.
pub fn classify(law: &EntryLaw) -> Result<LawClassification> {
    let constants = tail_constants(law)?;
    let evidence = psi_grid_evidence(law);
    let TailConstants { a, b, .. } = constants;
    let tag = if a <= 1.0 + SHARP_TOL {
        LawTag::SharpSubGaussian
    } else if (a - b).abs() <= CLASSIFICATION_MARGIN && evidence.monotonicity_violations == 0 {
        LawTag::IncreasingPsi
    } else if b < a - CLASSIFICATION_MARGIN
        && evidence.local_maxima == 1
        && constants.psi_second_at_mstar.is_some_and(|d| d < 0.0)
    {
        LawTag::CompactCase
    } else {
        LawTag::Unclassified
    };
    Ok(LawClassification { tag, constants, evidence })
}

/// The non-Gaussian builtin laws used throughout the tests and examples.
pub fn builtin_catalog() -> Vec<EntryLaw> {
    vec![
        rademacher(),
        sparse_gaussian(0.5).expect("valid"),
        gauss_rademacher_mix(0.5, 0.5f64.sqrt(), 1.5).expect("valid"),
        rademacher_mixture(&[0.05, 0.95], &[3.0, (0.55f64 / 0.95).sqrt()]).expect("valid"),
        three_point(0.2).expect("valid"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_stream;

    fn all_laws() -> Vec<EntryLaw> {
        let mut v = builtin_catalog();
        v.push(gaussian());
        v.push(sparse_gaussian(0.1).unwrap());
        v.push(three_point(0.05).unwrap());
        v
    }

    #[test]
    fn basic_identities_for_every_builtin() {
        for law in all_laws() {
            assert_eq!(law.log_laplace(0.0), 0.0, "{}", law.name());
            for i in 0..100 {
                let x = -10.0 + 20.0 * i as f64 / 99.0;
                assert!((law.log_laplace(x) - law.log_laplace(-x)).abs() <= 1e-12, "{}", law.name());
            }
            assert!((2.0 * law.psi(1e-3) - 1.0).abs() <= 1e-4, "{}", law.name());
            assert!((law.variance() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn psi_examples() {
        assert_eq!(gaussian().psi(3.7), 0.5);
        assert_eq!(gaussian().psi(0.0), 0.5);
        let sg = sparse_gaussian(0.5).unwrap();
        let x: f64 = 1.3;
        let expected = (0.5 * (x * x / 1.0).exp() + 0.5).ln() / (x * x);
        assert!((sg.psi(x) - expected).abs() < 1e-14);
        assert!((sg.psi(1e4) - 1.0).abs() < 1e-8);
        let tp = three_point(0.2).unwrap();
        let expected = (0.2 * ((x / 0.2f64.sqrt()).cosh() - 1.0) + 1.0).ln() / (x * x);
        assert!((tp.psi(x) - expected).abs() < 1e-14);
        let mix = gauss_rademacher_mix(0.5, 0.5f64.sqrt(), 1.5).unwrap();
        let expected = (0.5 * (0.75 * x * x).exp() + 0.5 * (0.5f64.sqrt() * x).cosh()).ln();
        assert!((mix.log_laplace(x) - expected).abs() < 1e-14);
    }

    #[test]
    fn derivative_of_l_matches_finite_differences() {
        let tol = Tolerances::default();
        for law in all_laws() {
            for &x in &[0.0, 0.3, 1.0, 2.5, 7.0] {
                let fd = numerics::derivative(|t| law.log_laplace(t), x, 1, &tol);
                let an = law.log_laplace_prime(x);
                assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "{} at {x}: {fd} vs {an}", law.name());
            }
        }
    }

    #[test]
    fn psi_of_sparse_gaussian_is_increasing_at_one() {
        let law = sparse_gaussian(0.5).unwrap();
        let d = numerics::derivative(|x| law.psi(x), 1.0, 1, &Tolerances::default());
        assert!(d > 0.0);
        let grid: Vec<f64> = (1..200).map(|i| law.psi(0.5 + i as f64 * 0.005)).collect();
        assert!(grid.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn sub_gaussian_bound_and_lipschitz_composition() {
        for law in all_laws() {
            let tc = tail_constants(&law).unwrap();
            let mut lip = 0.0f64;
            let mut slope_bound = 0.0f64;
            for i in 0..2000 {
                let x = i as f64 * 0.025;
                assert!(law.log_laplace(x) <= 0.5 * tc.a * x * x + 1e-9, "{}", law.name());
                let (u, v) = (x * x, (x + 0.025) * (x + 0.025));
                lip = lip.max((law.log_laplace(u.sqrt()) - law.log_laplace(v.sqrt())).abs() / (v - u));
                // d/du L(sqrt u) = L'(x) / (2x); its sup bounds every chord slope.
                for k in 0..=10 {
                    let t = x + 0.0025 * k as f64;
                    let s = if t == 0.0 { 0.5 } else { law.log_laplace_prime(t) / (2.0 * t) };
                    slope_bound = slope_bound.max(s);
                }
            }
            assert!(lip.is_finite() && lip <= slope_bound * (1.0 + 1e-3), "{}: {lip} vs {slope_bound}", law.name());
        }
    }

    #[test]
    fn tail_constants_examples() {
        let tc = tail_constants(&sparse_gaussian(0.5).unwrap()).unwrap();
        assert_eq!((tc.a, tc.b), (2.0, 2.0));
        assert!(tc.m_star.is_none());
        let tc = tail_constants(&gaussian()).unwrap();
        assert_eq!((tc.a, tc.b), (1.0, 1.0));
        let tc = tail_constants(&three_point(0.2).unwrap()).unwrap();
        assert_eq!(tc.b, 0.0);
        // Reference values from an independent 30-digit root solve of psi' = 0.
        assert!((tc.a - 1.154_827_744_843_054_4).abs() < 1e-9, "{}", tc.a);
        assert!((tc.m_star.unwrap() - 1.537_469_284_566_674).abs() < 1e-5);
        let d2 = tc.psi_second_at_mstar.unwrap();
        assert!(d2 < 0.0 && (d2 + 0.139_139_018_817_668_5).abs() < 1e-3, "{d2}");
    }

    #[test]
    fn generic_tail_extrapolation() {
        let b = tail_b_extrapolated(&sparse_gaussian(0.5).unwrap()).unwrap();
        assert!((b - 2.0).abs() < 1e-5);
        assert!((tail_b_extrapolated(&gaussian()).unwrap() - 1.0).abs() < 1e-12);
        // psi decays like 1/(x sqrt p) for compact support: too slow to stabilize.
        assert!(matches!(
            tail_b_extrapolated(&three_point(0.2).unwrap()),
            Err(LawError::NonStableTail { .. })
        ));
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify(&gaussian()).unwrap().tag, LawTag::SharpSubGaussian);
        assert_eq!(classify(&rademacher()).unwrap().tag, LawTag::SharpSubGaussian);
        for p in [0.1, 0.3, 0.5, 0.9] {
            assert_eq!(classify(&sparse_gaussian(p).unwrap()).unwrap().tag, LawTag::IncreasingPsi, "p={p}");
        }
        for p in [0.05, 0.2, 0.3] {
            let c = classify(&three_point(p).unwrap()).unwrap();
            assert_eq!(c.tag, LawTag::CompactCase, "p={p}: {c:?}");
            assert!(c.constants.b < c.constants.a - CLASSIFICATION_MARGIN);
        }
        // p > 1/3: sharp sub-Gaussian tails.
        assert_eq!(classify(&three_point(0.5).unwrap()).unwrap().tag, LawTag::SharpSubGaussian);
        let mix = classify(&gauss_rademacher_mix(0.5, 0.5f64.sqrt(), 1.5).unwrap()).unwrap();
        assert_eq!(mix.tag, LawTag::IncreasingPsi);
        assert!((mix.constants.a - 1.5).abs() < 1e-12);
    }

    #[test]
    fn constructor_validation() {
        assert!(matches!(sparse_gaussian(0.0), Err(LawError::InvalidParameters(_))));
        assert!(matches!(three_point(1.0), Err(LawError::InvalidParameters(_))));
        let e = gauss_rademacher_mix(0.5, 1.0, 1.5).unwrap_err();
        assert!(e.to_string().contains("a*bvar + (1-a)*b^2 = 1"));
        let e = rademacher_mixture(&[0.5, 0.4], &[1.0, 1.0]).unwrap_err();
        assert!(e.to_string().contains("sum of weights"));
        let e = rademacher_mixture(&[0.5, 0.5], &[1.0, 2.0]).unwrap_err();
        assert!(e.to_string().contains("weight*atom^2"));
        assert!(rademacher_mixture(&[1.0], &[]).is_err());
    }

    #[test]
    fn spec_parsing_round_trips() {
        for law in all_laws() {
            let inline = law.spec().to_string();
            let parsed: LawSpec = inline.parse().unwrap();
            assert_eq!(&parsed, law.spec());
            let json = serde_json::to_string(law.spec()).unwrap();
            let back: LawSpec = json.parse().unwrap();
            assert_eq!(back.build().unwrap(), law);
        }
        assert!("cauchy".parse::<LawSpec>().is_err());
        assert!("sparse_gaussian:q=1".parse::<LawSpec>().is_err());
        let j: LawSpec = r#"{"kind":"sparse_gaussian","p":0.25}"#.parse().unwrap();
        assert_eq!(j, LawSpec::SparseGaussian { p: 0.25 });
    }

    #[test]
    fn rademacher_draws() {
        let law = rademacher();
        let mut rng = rng_stream(1, 0);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let v = law.sample(&mut rng);
            assert!(v == 1.0 || v == -1.0);
            sum += v;
        }
        assert!((sum / n as f64).abs() < 0.02);
    }

    #[test]
    fn sparse_gaussian_zero_frequency() {
        let p = 0.3;
        let law = sparse_gaussian(p).unwrap();
        let mut rng = rng_stream(2, 0);
        let n = 100_000;
        let zeros = (0..n).filter(|_| law.sample(&mut rng) == 0.0).count() as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((zeros - n as f64 * (1.0 - p)).abs() < 3.0 * sd);
    }

    #[test]
    fn unit_variance_of_draws() {
        let n = 1_000_000;
        for (k, law) in all_laws().into_iter().enumerate() {
            let mut rng = rng_stream(3, k as u64);
            let s2: f64 = (0..n).map(|_| law.sample(&mut rng).powi(2)).sum::<f64>() / n as f64;
            // 0.01, widened to 3 sigma (sigma^2 = (m4 - 1)/n) for heavy sparse laws.
            let tol = (3.0 * ((law.fourth_moment() - 1.0) / n as f64).sqrt()).max(0.01);
            assert!((s2 - 1.0).abs() < tol, "{}: {s2}", law.name());
        }
    }

    #[test]
    fn tilted_gaussian_mean() {
        let law = gaussian();
        let mut rng = rng_stream(4, 0);
        let n = 100_000;
        let m: f64 = (0..n).map(|_| law.sample_tilted(2.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((m - 2.0).abs() < 0.02);
    }

    #[test]
    fn tilted_rademacher_probability() {
        let law = rademacher();
        let gamma: f64 = 0.7;
        let p = gamma.exp() / (gamma.exp() + (-gamma).exp());
        let mut rng = rng_stream(5, 0);
        let n = 100_000;
        let plus = (0..n).filter(|_| law.sample_tilted(gamma, &mut rng).unwrap() > 0.0).count() as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((plus - n as f64 * p).abs() < 4.0 * sd);
    }

    #[test]
    fn tilted_mean_matches_l_prime() {
        let n = 200_000;
        for (k, law) in all_laws().into_iter().enumerate() {
            for &gamma in &[0.4, 1.5] {
                let mut rng = rng_stream(6, k as u64);
                let draws: Vec<f64> = (0..n).map(|_| law.sample_tilted(gamma, &mut rng).unwrap()).collect();
                let mean = draws.iter().sum::<f64>() / n as f64;
                let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                let target = law.log_laplace_prime(gamma);
                assert!((mean - target).abs() < 4.0 * (var / n as f64).sqrt(), "{} γ={gamma}", law.name());
            }
        }
    }

    fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn zero_tilt_matches_plain_sampling() {
        let n = 20_000;
        for (k, law) in all_laws().into_iter().enumerate() {
            let mut r1 = rng_stream(7, k as u64);
            let mut r2 = rng_stream(8, k as u64);
            let a: Vec<f64> = (0..n).map(|_| law.sample(&mut r1)).collect();
            let b: Vec<f64> = (0..n).map(|_| law.sample_tilted(0.0, &mut r2).unwrap()).collect();
            // Critical KS distance at level 0.01 for two samples of size n.
            let crit = 1.628 * (2.0 / n as f64).sqrt();
            assert!(ks_two_sample(a, b) < crit, "{}", law.name());
            let mut r3 = rng_stream(9, 0);
            let mut r4 = rng_stream(9, 0);
            for _ in 0..100 {
                assert_eq!(law.sample(&mut r3).to_bits(), law.sample_tilted(0.0, &mut r4).unwrap().to_bits());
            }
        }
    }

    #[test]
    fn infinite_tilt_is_rejected() {
        let mut rng = rng_stream(0, 0);
        assert!(matches!(gaussian().sample_tilted(f64::INFINITY, &mut rng), Err(LawError::TiltOutOfRange { .. })));
    }
}

//! The annealed spherical integral `F(θ)`.
//!
//! For laws with nondecreasing `psi`, `F(θ) = max(θ², sup_α K_θ(α))` where
//! `K_θ` involves the Gibbs functional `R(C) = C ζ_C + G(ζ_C)` of
//! `G(ζ) = log ∫ exp(L(x) - ζx²) dx`. For compactly supported laws with an
//! interior maximum of `psi` the supremum is over the explicit
//! `V(α) = θ²(A-1)α² + θ² + ½log(1-α)`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;
use thiserror::Error;

use crate::laws::{self, EntryLaw, LawClassification, LawError, LawTag};
use crate::numerics::{self, NumericsError, Tolerances};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnealedError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error("operation needs a {expected} law, got {found}")]
    WrongRegime { expected: LawTag, found: LawTag },
    #[error("no bracket found for theta_0 below theta = {0}")]
    BracketGrowthFailed(f64),
    #[error("Gibbs solver inconsistency: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, AnnealedError>;

/// `l = -lim G'(ζ)` as `ζ ↓ B/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum LimitL {
    Finite(f64),
    Infinite,
}

/// Log-space truncation depth for the Gibbs integrals.
const LOG_DROP: f64 = 45.0;
const SCAN_POINTS: usize = 256;
const ALPHA_FLOOR: f64 = 1e-9;
/// Points of the production α grid (the tests use denser ones).
pub const ALPHA_GRID: usize = 512;
/// `F(θ) > θ² + THETA_ZERO_MARGIN` is the predicate located by `theta_zero`.
pub const THETA_ZERO_MARGIN: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
struct Moments {
    log_integral: f64,
    m2: f64,
    m4: f64,
}

/// One solved point of the Gibbs problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GibbsPoint {
    pub c: f64,
    pub zeta: f64,
    /// `G(ζ_C)`.
    pub g: f64,
    /// `G''(ζ_C)`; infinite at the boundary point `ζ = B/2`.
    pub g2: f64,
}

impl GibbsPoint {
    pub fn r(&self) -> f64 {
        self.c * self.zeta + self.g
    }
}

/// Solver for `G`, `G'`, `ζ_C` and `R(C)` of one law. Solved points are kept
/// in a table sorted by `C`; neighbouring entries bracket new roots since
/// `ζ_C` decreases in `C`.
#[derive(Debug)]
pub struct GibbsSolver {
    law: Arc<EntryLaw>,
    b_half: f64,
    tol: Tolerances,
    l: OnceLock<std::result::Result<LimitL, LawError>>,
    cache: Mutex<Vec<GibbsPoint>>,
}

impl Clone for GibbsSolver {
    fn clone(&self) -> Self {
        let l = OnceLock::new();
        if let Some(v) = self.l.get() {
            let _ = l.set(v.clone());
        }
        Self {
            law: self.law.clone(),
            b_half: self.b_half,
            tol: self.tol,
            l,
            cache: Mutex::new(self.cache.lock().expect("cache lock").clone()),
        }
    }
}

impl GibbsSolver {
    /// `b` is the tail constant `B` of the law.
    pub fn new(law: Arc<EntryLaw>, b: f64) -> Self {
        Self {
            law,
            b_half: 0.5 * b,
            tol: Tolerances::default(),
            l: OnceLock::new(),
            cache: Mutex::new(Vec::new()),
        }
    }

    pub fn law(&self) -> &EntryLaw {
        &self.law
    }

    pub fn b_half(&self) -> f64 {
        self.b_half
    }

    /// Smallest radius beyond which `L(x) - ζx²` stays below `level`. Uses
    /// `L ≤ max_k s_k` over the mixture components with `log cosh(bx) ≤ b|x|`.
    fn radius(&self, u: f64, level: f64) -> f64 {
        let zeta = self.b_half + u;
        let drop = -level;
        let mut r: f64 = 0.0;
        for g in self.law.gaussians() {
            let k = (self.b_half - 0.5 * g.variance) + u;
            r = r.max((drop.max(0.0) / k).sqrt());
        }
        for a in self.law.atoms() {
            let b = a.value;
            let disc = (b * b + 4.0 * zeta * drop).max(0.0);
            r = r.max((b + disc.sqrt()) / (2.0 * zeta));
        }
        r
    }

    fn moments(&self, zeta: f64) -> Result<Moments> {
        self.moments_above_boundary(zeta - self.b_half)
    }

    /// Gibbs integrals at `ζ = B/2 + u`.
    fn moments_above_boundary(&self, u: f64) -> Result<Moments> {
        let zeta = self.b_half + u;
        if !(u > 0.0) || !zeta.is_finite() {
            return Err(NumericsError::DivergentIntegrand(format!(
                "exp(L(x) - zeta x^2) is not integrable at zeta = {zeta} (B/2 = {})",
                self.b_half
            ))
            .into());
        }
        let law = &*self.law;
        let bh = self.b_half;
        let h = |x: f64| law.log_laplace_minus_quadratic(x, bh, u);
        let (mut hmax, mut xpk) = (0.0, 0.0);
        for a in law.atoms() {
            let x = a.value / (2.0 * zeta);
            let v = h(x);
            if v > hmax {
                (hmax, xpk) = (v, x);
            }
        }
        let r0 = self.radius(u, hmax - LOG_DROP);
        for i in 1..=SCAN_POINTS {
            let x = r0 * i as f64 / SCAN_POINTS as f64;
            let v = h(x);
            if v > hmax {
                (hmax, xpk) = (v, x);
            }
        }
        let r = self.radius(u, hmax - LOG_DROP).max(xpk);
        if !(r > 0.0) || !r.is_finite() {
            return Err(NumericsError::DivergentIntegrand(format!("no truncation radius at zeta = {zeta}")).into());
        }
        // Geometric breaks from the narrowest Gaussian scale: near ζ = B/2 the
        // integrand has structure both at O(1/√ζ) and at O(r).
        let w = (0.5 / zeta).sqrt().min(r / 8.0);
        let mut breaks = vec![0.0];
        let mut x = w;
        while x < r {
            breaks.push(x);
            x *= 2.0;
        }
        breaks.push(r);
        if xpk > 0.0 && xpk < r {
            breaks.push(xpk);
            breaks.sort_by(f64::total_cmp);
        }
        let f = |x: f64| {
            let w = (h(x) - hmax).exp();
            let x2 = x * x;
            [w, x2 * w, x2 * x2 * w]
        };
        let [i0, i2, i4] = numerics::integrate_many_on(f, &breaks, &self.tol)?;
        Ok(Moments { log_integral: hmax + (2.0 * i0).ln(), m2: i2 / i0, m4: i4 / i0 })
    }

    /// `G(ζ) = log ∫ exp(L(x) - ζx²) dx`.
    pub fn big_g(&self, zeta: f64) -> Result<f64> {
        Ok(self.moments(zeta)?.log_integral)
    }

    /// `G'(ζ)`, minus the second moment of the Gibbs density.
    pub fn big_g_prime(&self, zeta: f64) -> Result<f64> {
        Ok(-self.moments(zeta)?.m2)
    }

    /// `G''(ζ)`, the variance of `x²` under the Gibbs density.
    pub fn big_g_second(&self, zeta: f64) -> Result<f64> {
        let m = self.moments(zeta)?;
        Ok(m.m4 - m.m2 * m.m2)
    }

    /// `l`, from `-G'(B/2 + 2^-k)` for `k = 1..40`: finite once successive
    /// values agree within 1e-5, infinite once they pass 1e8.
    pub fn limit_l(&self) -> Result<LimitL> {
        let v = self.l.get_or_init(|| {
            let mut prev = f64::NAN;
            for k in 1..=40 {
                let u = 2f64.powi(-k);
                let v = match self.moments_above_boundary(u) {
                    Ok(m) => m.m2,
                    Err(_) => return Err(LawError::NonStableTail { last: (prev, f64::NAN), x_max: self.b_half + u }),
                };
                if v > 1e8 {
                    return Ok(LimitL::Infinite);
                }
                if (v - prev).abs() <= 1e-5 {
                    return Ok(LimitL::Finite(v));
                }
                prev = v;
            }
            Err(LawError::NonStableTail { last: (prev, prev), x_max: self.b_half })
        });
        Ok(v.clone()?)
    }

    fn lookup(&self, c: f64) -> (Option<GibbsPoint>, Option<GibbsPoint>, Option<GibbsPoint>) {
        let cache = self.cache.lock().expect("cache lock");
        let i = cache.partition_point(|p| p.c < c);
        if i < cache.len() && cache[i].c == c {
            return (None, Some(cache[i]), None);
        }
        let below = i.checked_sub(1).map(|j| cache[j]);
        let above = cache.get(i).copied();
        (below, None, above)
    }

    fn store(&self, p: GibbsPoint) {
        let mut cache = self.cache.lock().expect("cache lock");
        let i = cache.partition_point(|q| q.c < p.c);
        if i < cache.len() && cache[i].c == p.c {
            return;
        }
        cache.insert(i, p);
    }

    pub fn cached_points(&self) -> Vec<GibbsPoint> {
        self.cache.lock().expect("cache lock").clone()
    }

    /// Solves `G'(ζ) = -C` (safeguarded Newton, bracketed), or returns the
    /// boundary point `ζ = B/2` when `C ≥ l`.
    pub fn solve(&self, c: f64) -> Result<GibbsPoint> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(AnnealedError::Inconsistent(format!("C must be positive and finite, got {c}")));
        }
        if let LimitL::Finite(l) = self.limit_l()? {
            if c >= l {
                let g = self.big_g(self.b_half).map_err(|_| {
                    AnnealedError::Inconsistent("l is finite but G(B/2) diverges".into())
                })?;
                return Ok(GibbsPoint { c, zeta: self.b_half, g, g2: f64::INFINITY });
            }
        }
        let (below, hit, above) = self.lookup(c);
        if let Some(p) = hit {
            return Ok(p);
        }
        let bh = self.b_half;
        // Work in u = ζ - B/2 > 0.
        let mut lo = above.map(|p| p.zeta - bh).filter(|u| *u > 0.0);
        let mut hi = below.map(|p| p.zeta - bh);
        // log u is close to linear in log C (u ~ 1/(2C) at both ends).
        let mut u = match (above.filter(|_| lo.is_some()), below) {
            (Some(pa), Some(pb)) => {
                let (ua, ub) = (pa.zeta - bh, pb.zeta - bh);
                let t = (c / pb.c).ln() / (pa.c / pb.c).ln();
                (ub.ln() + t * (ua / ub).ln()).exp().clamp(ua, ub)
            }
            (Some(pa), None) => (pa.zeta - bh) * pa.c / c,
            (None, Some(pb)) => (pb.zeta - bh) * pb.c / c,
            (None, None) => 0.5 / c,
        };
        let mut last = None;
        for _ in 0..200 {
            let m = self.moments_above_boundary(u)?;
            let f = c - m.m2; // G'(ζ) + C, increasing in ζ
            last = Some((u, m));
            // The quadrature is good to ~1e-10 relative; stop at that floor.
            if f.abs() <= 1e-10 * c {
                break;
            }
            if f < 0.0 {
                lo = Some(u);
            } else {
                hi = Some(u);
            }
            let var = m.m4 - m.m2 * m.m2;
            let newton = u - f / var;
            let next = match (lo, hi) {
                (Some(a), Some(b)) => {
                    if b - a <= 1e-15 * b {
                        break;
                    }
                    if newton > a && newton < b && var > 0.0 {
                        newton
                    } else {
                        (a * b).sqrt()
                    }
                }
                (Some(a), None) => {
                    if newton > a && var > 0.0 && newton < a * 16.0 {
                        newton
                    } else {
                        a * 4.0
                    }
                }
                (None, Some(b)) => {
                    if newton > 0.0 && newton < b && var > 0.0 && newton > b / 16.0 {
                        newton
                    } else {
                        b / 4.0
                    }
                }
                (None, None) => unreachable!(),
            };
            if (next - u).abs() <= 1e-15 * u {
                break;
            }
            u = next;
        }
        let (u, m) = last.expect("at least one iteration");
        if (c - m.m2).abs() > 1e-8 * c.max(1.0) {
            return Err(NumericsError::NonConvergent { value: u + bh, error: (c - m.m2).abs() }.into());
        }
        let p = GibbsPoint { c, zeta: bh + u, g: m.log_integral, g2: m.m4 - m.m2 * m.m2 };
        self.store(p);
        Ok(p)
    }

    pub fn zeta_of_c(&self, c: f64) -> Result<f64> {
        Ok(self.solve(c)?.zeta)
    }

    /// `R(C) = C ζ_C + G(ζ_C)`.
    pub fn r_of_c(&self, c: f64) -> Result<f64> {
        Ok(self.solve(c)?.r())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    SmallTheta,
    IncreasingPsiStructured,
    IncreasingPsiGrid,
    CompactExplicit,
    CompactGrid,
    UpperBoundOnly,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One evaluation of `F(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FProfile {
    pub theta: f64,
    pub value: f64,
    pub regime: Regime,
    /// Optimal `α`; `1` when the supremum is the `θ²` floor.
    pub alpha_opt: Option<f64>,
    pub zeta_opt: Option<f64>,
    /// True when the value is backed by a proven formula for this law and θ.
    pub validity: bool,
    /// `Aθ²`, reported for `UpperBoundOnly` profiles.
    pub upper: Option<f64>,
}

impl FProfile {
    fn floor(theta: f64, regime: Regime, validity: bool) -> Self {
        Self { theta, value: theta * theta, regime, alpha_opt: Some(1.0), zeta_opt: None, validity, upper: None }
    }
}

/// `V(α) = θ²(A-1)α² + θ² + ½log(1-α)`.
pub fn compact_v(theta: f64, a: f64, alpha: f64) -> f64 {
    let t2 = theta * theta;
    t2 * (a - 1.0) * alpha * alpha + t2 + 0.5 * (-alpha).ln_1p()
}

/// The interior critical point `α_+ = (1 + √(1 - 1/(θ²(A-1))))/2` of `V`,
/// when it exists.
pub fn compact_alpha_plus(theta: f64, a: f64) -> Option<f64> {
    let t = theta * theta * (a - 1.0);
    (t >= 1.0).then(|| 0.5 * (1.0 + (1.0 - 1.0 / t).sqrt()))
}

/// `V(α_+)` written out in closed form.
pub fn compact_closed_form(theta: f64, a: f64) -> Option<f64> {
    let t2 = theta * theta;
    let t = t2 * (a - 1.0);
    if t < 1.0 {
        return None;
    }
    let s = (1.0 - 1.0 / t).sqrt();
    Some(0.25 * t2 * (a - 1.0) * (1.0 + s) * (1.0 + s) + t2 + 0.5 * (-s).ln_1p() - 0.5 * std::f64::consts::LN_2)
}

/// `sup_{α ∈ [0,1)} V(α)` by grid-and-golden maximization, as `(α, value)`.
pub fn compact_v_numeric(theta: f64, a: f64) -> (f64, f64) {
    let tol = Tolerances::default();
    numerics::maximize_1d(|al| compact_v(theta, a, al), (0.0, 1.0 - 1e-13), &tol)
}

/// `F` for one law: classification, Gibbs solver, memoized profiles.
#[derive(Debug)]
pub struct AnnealedModel {
    law: Arc<EntryLaw>,
    class: LawClassification,
    solver: GibbsSolver,
    memo: Mutex<HashMap<u64, FProfile>>,
    compact_threshold: OnceLock<f64>,
}

impl Clone for AnnealedModel {
    fn clone(&self) -> Self {
        let compact_threshold = OnceLock::new();
        if let Some(v) = self.compact_threshold.get() {
            let _ = compact_threshold.set(*v);
        }
        Self {
            law: self.law.clone(),
            class: self.class,
            solver: self.solver.clone(),
            memo: Mutex::new(self.memo.lock().expect("memo lock").clone()),
            compact_threshold,
        }
    }
}

impl AnnealedModel {
    pub fn new(law: EntryLaw) -> Result<Self> {
        let class = laws::classify(&law)?;
        Ok(Self::with_classification(law, class))
    }

    pub fn with_classification(law: EntryLaw, class: LawClassification) -> Self {
        let law = Arc::new(law);
        let solver = GibbsSolver::new(law.clone(), class.constants.b);
        Self { law, class, solver, memo: Mutex::new(HashMap::new()), compact_threshold: OnceLock::new() }
    }

    pub fn law(&self) -> &EntryLaw {
        &self.law
    }

    pub fn classification(&self) -> &LawClassification {
        &self.class
    }

    pub fn solver(&self) -> &GibbsSolver {
        &self.solver
    }

    pub fn a(&self) -> f64 {
        self.class.constants.a
    }

    pub fn b(&self) -> f64 {
        self.class.constants.b
    }

    /// `1/(2√(A-1))`, below which `F(θ) = θ²`; infinite when `A = 1`.
    pub fn small_theta_bound(&self) -> f64 {
        let a = self.a();
        if a <= 1.0 {
            f64::INFINITY
        } else {
            0.5 / (a - 1.0).sqrt()
        }
    }

    fn require(&self, expected: LawTag) -> Result<()> {
        if self.class.tag == expected {
            Ok(())
        } else {
            Err(AnnealedError::WrongRegime { expected, found: self.class.tag })
        }
    }

    /// `K_θ(α) = θ²(α² + B(1-α)²) + R(4θ²α(1-α)) - ½log(1-α) - log(2θ) - ½log(2π) - ½`,
    /// with `K_θ(1) = θ²`.
    pub fn k_theta(&self, theta: f64, alpha: f64) -> Result<f64> {
        let t2 = theta * theta;
        if alpha >= 1.0 {
            return Ok(t2);
        }
        let c = 4.0 * t2 * alpha * (1.0 - alpha);
        let r = self.solver.r_of_c(c)?;
        let b = self.b();
        Ok(t2 * (alpha * alpha + b * (1.0 - alpha) * (1.0 - alpha)) + r
            - 0.5 * (-alpha).ln_1p()
            - (2.0 * theta).ln()
            - 0.5 * (2.0 * PI).ln()
            - 0.5)
    }

    /// `K_θ'(α)` through `R'(C) = ζ_C`.
    pub fn k_theta_prime(&self, theta: f64, alpha: f64) -> Result<f64> {
        let t2 = theta * theta;
        let zeta = self.solver.zeta_of_c(4.0 * t2 * alpha * (1.0 - alpha))?;
        let b = self.b();
        Ok(2.0 * t2 * (alpha - b * (1.0 - alpha)) + 4.0 * t2 * zeta * (1.0 - 2.0 * alpha) + 0.5 / (1.0 - alpha))
    }

    /// `(K_θ'(α), K_θ''(α))`, using `dζ_C/dC = -1/G''(ζ_C)`.
    fn k_theta_derivatives(&self, theta: f64, alpha: f64) -> Result<(f64, f64)> {
        let t2 = theta * theta;
        let p = self.solver.solve(4.0 * t2 * alpha * (1.0 - alpha))?;
        let b = self.b();
        let s = 1.0 - 2.0 * alpha;
        let d1 = 2.0 * t2 * (alpha - b * (1.0 - alpha)) + 4.0 * t2 * p.zeta * s + 0.5 / (1.0 - alpha);
        let d2 = 2.0 * t2 * (1.0 + b) - 8.0 * t2 * p.zeta - 16.0 * t2 * t2 * s * s / p.g2
            + 0.5 / ((1.0 - alpha) * (1.0 - alpha));
        Ok((d1, d2))
    }

    /// Optimal α of the nearest memoized structured profile.
    fn alpha_hint(&self, theta: f64) -> Option<f64> {
        let memo = self.memo.lock().expect("memo lock");
        memo.values()
            .filter(|p| p.regime == Regime::IncreasingPsiStructured)
            .filter_map(|p| p.alpha_opt.filter(|a| *a < 0.5).map(|a| ((p.theta - theta).abs(), p.theta, a)))
            .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)))
            .map(|(_, _, a)| a)
    }

    /// The root of `K_θ'` in `(0, ½)`: Newton steps kept inside a shrinking
    /// bracket, bisecting (geometrically while the bracket spans decades)
    /// when a step leaves it. `K_θ` is concave there.
    fn critical_alpha(&self, theta: f64) -> Result<f64> {
        let (mut lo, mut hi) = (ALPHA_FLOOR, 0.5);
        let mut a = self.alpha_hint(theta).unwrap_or(0.25).clamp(1e-6, 0.49);
        for _ in 0..200 {
            let (d1, d2) = self.k_theta_derivatives(theta, a)?;
            if d1 == 0.0 {
                return Ok(a);
            }
            if d1 > 0.0 {
                lo = a;
            } else {
                hi = a;
            }
            let newton = a - d1 / d2;
            let next = if d2 < 0.0 && newton > lo && newton < hi {
                newton
            } else if hi > 4.0 * lo {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            };
            if (next - a).abs() <= 1e-12 * a || hi - lo <= 1e-15 {
                return Ok(next);
            }
            a = next;
        }
        Err(NumericsError::NonConvergent { value: a, error: hi - lo }.into())
    }

    /// `sup_{α} K_θ(α)` over a uniform grid of `(0, 1)` refined by golden
    /// section, as `(α, value)`. No `θ²` floor.
    pub fn k_theta_grid_sup(&self, theta: f64, points: usize) -> Result<(f64, f64)> {
        let mut err = None;
        let tol = Tolerances::default();
        let res = numerics::maximize_1d_grid(
            |al| match self.k_theta(theta, al) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NAN
                }
            },
            (ALPHA_FLOOR.max(1e-6), 1.0 - 1e-6),
            points,
            &tol,
        );
        match err {
            Some(e) => Err(e),
            None => Ok(res),
        }
    }

    fn profile_from_alpha(&self, theta: f64, alpha: f64, k: f64, regime: Regime) -> Result<FProfile> {
        let t2 = theta * theta;
        if k > t2 {
            let zeta = self.solver.zeta_of_c(4.0 * t2 * alpha * (1.0 - alpha))?;
            Ok(FProfile { theta, value: k, regime, alpha_opt: Some(alpha), zeta_opt: Some(zeta), validity: true, upper: None })
        } else {
            Ok(FProfile::floor(theta, regime, true))
        }
    }

    /// Finite-difference `K_θ'` at a root of the analytic derivative.
    fn check_critical_point(&self, theta: f64, alpha: f64) -> Result<()> {
        let h = 1e-6 * alpha.min(1.0 - alpha);
        let kp = self.k_theta(theta, alpha + h)?;
        let km = self.k_theta(theta, alpha - h)?;
        let fd = (kp - km) / (2.0 * h);
        let scale = (theta * theta).max(0.5 / alpha).max(1.0);
        if fd.abs() > 1e-5 * scale {
            return Err(AnnealedError::Inconsistent(format!(
                "K' at the critical point alpha = {alpha}: finite difference {fd:e}"
            )));
        }
        Ok(())
    }

    /// Grid path for nondecreasing `psi`.
    pub fn f_increasing_grid(&self, theta: f64, points: usize) -> Result<FProfile> {
        self.require(LawTag::IncreasingPsi)?;
        let (alpha, k) = self.k_theta_grid_sup(theta, points)?;
        self.profile_from_alpha(theta, alpha, k, Regime::IncreasingPsiGrid)
    }

    /// `F(θ)` for a law with nondecreasing `psi`.
    pub fn f_increasing(&self, theta: f64) -> Result<FProfile> {
        self.require(LawTag::IncreasingPsi)?;
        if theta <= self.small_theta_bound() {
            return Ok(FProfile::floor(theta, Regime::SmallTheta, true));
        }
        let b = self.b();
        let t = theta * theta * (b - 1.0);
        if t < 1.0 {
            return self.f_increasing_grid(theta, ALPHA_GRID);
        }
        let alpha_minus = 0.5 * (1.0 - (1.0 - 1.0 / t).sqrt());
        let l = self.solver.limit_l()?;
        let alpha = match l {
            LimitL::Finite(l) if l <= 1.0 / (b - 1.0) => alpha_minus,
            _ => {
                // K is concave on (0, ½), K' → +∞ at 0 and K'(½) = θ²(1-B) + 1 ≤ 0.
                if self.k_theta_prime(theta, 0.5)? >= 0.0 {
                    0.5
                } else {
                    let root = self.critical_alpha(theta)?;
                    self.check_critical_point(theta, root)?;
                    root
                }
            }
        };
        let k = self.k_theta(theta, alpha)?;
        self.profile_from_alpha(theta, alpha, k, Regime::IncreasingPsiStructured)
    }

    /// First `θ ≥ 1/√(A-1)` at which `V(α_+) ≥ θ²`; the explicit formula is
    /// used (and flagged valid) from there on.
    pub fn compact_validity_threshold(&self) -> f64 {
        *self.compact_threshold.get_or_init(|| {
            let a = self.a();
            let lo = 1.0 / (a - 1.0).sqrt();
            let gap = |th: f64| compact_closed_form(th, a).map_or(-1.0, |v| v - th * th);
            let mut hi = 2.0 * lo;
            while gap(hi) < 0.0 {
                hi *= 2.0;
            }
            numerics::find_root(gap, (lo, hi), &Tolerances::default()).unwrap_or(hi)
        })
    }

    /// `F(θ)` for a compactly supported law with an interior maximum of `psi`.
    pub fn f_compact(&self, theta: f64) -> Result<FProfile> {
        self.require(LawTag::CompactCase)?;
        let a = self.a();
        if theta <= self.small_theta_bound() {
            return Ok(FProfile::floor(theta, Regime::SmallTheta, true));
        }
        let valid = theta >= self.compact_validity_threshold();
        if !valid {
            let (alpha, v) = compact_v_numeric(theta, a);
            let t2 = theta * theta;
            let mut p = FProfile::floor(theta, Regime::CompactGrid, false);
            if v > t2 {
                p.value = v;
                p.alpha_opt = Some(alpha);
            }
            return Ok(p);
        }
        let value = compact_closed_form(theta, a).expect("θ above 1/√(A-1)");
        Ok(FProfile {
            theta,
            value: value.max(theta * theta),
            regime: Regime::CompactExplicit,
            alpha_opt: compact_alpha_plus(theta, a),
            zeta_opt: None,
            validity: true,
            upper: None,
        })
    }

    /// `F(θ)`, dispatched on the law's classification. Memoized by θ.
    pub fn f_value(&self, theta: f64) -> Result<FProfile> {
        if let Some(p) = self.memo.lock().expect("memo lock").get(&theta.to_bits()) {
            return Ok(*p);
        }
        let p = match self.class.tag {
            LawTag::SharpSubGaussian => FProfile::floor(theta, Regime::SmallTheta, true),
            LawTag::IncreasingPsi => self.f_increasing(theta)?,
            LawTag::CompactCase => self.f_compact(theta)?,
            LawTag::Unclassified => FProfile {
                upper: Some(self.a() * theta * theta),
                ..FProfile::floor(theta, Regime::UpperBoundOnly, false)
            },
        };
        self.memo.lock().expect("memo lock").insert(theta.to_bits(), p);
        Ok(p)
    }

    /// Adds already computed profiles to the memo table.
    pub fn remember(&self, profiles: &[FProfile]) {
        let mut memo = self.memo.lock().expect("memo lock");
        for p in profiles {
            memo.entry(p.theta.to_bits()).or_insert(*p);
        }
    }

    /// `θ₀ = inf{θ : F(θ) > θ²}` by bisection; `None` when `F ≡ θ²`.
    pub fn theta_zero(&self) -> Result<Option<f64>> {
        match self.class.tag {
            LawTag::SharpSubGaussian | LawTag::Unclassified => return Ok(None),
            _ => {}
        }
        let above = |th: f64| -> Result<bool> { Ok(self.f_value(th)?.value > th * th + THETA_ZERO_MARGIN) };
        let inv = 1.0 / (self.a() - 1.0).sqrt();
        let mut lo = 0.5 * inv;
        let mut hi = 10.0 * inv.max(1.0);
        let mut grown = 0;
        while !above(hi)? {
            lo = hi;
            hi *= 2.0;
            grown += 1;
            if grown > 20 {
                return Err(AnnealedError::BracketGrowthFailed(hi));
            }
        }
        while hi - lo > 1e-9 * hi {
            let mid = 0.5 * (lo + hi);
            if above(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Some(hi))
    }

    /// One-sided difference quotients of `F` at `θ` with step `h`, and their
    /// difference.
    pub fn kink_diagnostic(&self, theta: f64, h: f64) -> Result<KinkDiagnostic> {
        let f0 = self.f_value(theta)?.value;
        let left = (f0 - self.f_value(theta - h)?.value) / h;
        let right = (self.f_value(theta + h)?.value - f0) / h;
        Ok(KinkDiagnostic { theta, left, right, jump: right - left })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KinkDiagnostic {
    pub theta: f64,
    pub left: f64,
    pub right: f64,
    pub jump: f64,
}

/// `F(θ)` for a law, with a fresh model.
pub fn f_value(law: &EntryLaw, theta: f64) -> Result<FProfile> {
    AnnealedModel::new(law.clone())?.f_value(theta)
}

//! Semicircle transforms, the limiting spherical integral `J(x, θ)` and the
//! GOE rate function.

use std::f64::consts::PI;
use std::fmt;
use std::sync::OnceLock;

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::numerics::{self, Tolerances};

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum FreeProbError {
    #[error("argument {0} outside the domain")]
    OutOfDomain(f64),
}

pub type Result<T> = std::result::Result<T, FreeProbError>;

/// Right edge of the semicircle support.
pub const EDGE: f64 = 2.0;

/// A rate-function value that may be `+∞`. Kept as its own variant so CSV
/// output prints `inf` instead of relying on float infinities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateValue {
    Finite(f64),
    Infinite,
}

impl RateValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            RateValue::Finite(v) => Some(v),
            RateValue::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, RateValue::Infinite)
    }
}

impl fmt::Display for RateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateValue::Finite(v) => write!(f, "{v}"),
            RateValue::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for RateValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RateValue::Finite(v) => s.serialize_f64(*v),
            RateValue::Infinite => s.serialize_str("inf"),
        }
    }
}

fn check_edge(x: f64) -> Result<()> {
    if x >= EDGE {
        Ok(())
    } else {
        Err(FreeProbError::OutOfDomain(x))
    }
}

/// Stieltjes transform of the semicircle outside the bulk, `(x - √(x²-4))/2`.
pub fn g_sigma(x: f64) -> Result<f64> {
    check_edge(x)?;
    // 2 / (x + √(x²-4)) avoids cancellation for large x.
    Ok(2.0 / (x + (x * x - 4.0).sqrt()))
}

/// Derivative of `g_sigma`, `-G² / (1 - G²)`; infinite at the edge.
pub fn g_sigma_prime(x: f64) -> Result<f64> {
    let g = g_sigma(x)?;
    Ok(-g * g / (1.0 - g * g))
}

/// `z + 1/z`.
pub fn k_sigma(z: f64) -> Result<f64> {
    if z > 0.0 {
        Ok(z + 1.0 / z)
    } else {
        Err(FreeProbError::OutOfDomain(z))
    }
}

pub fn semicircle_density(x: f64) -> f64 {
    if x.abs() >= EDGE {
        0.0
    } else {
        (4.0 - x * x).sqrt() / (2.0 * PI)
    }
}

pub fn semicircle_cdf(x: f64) -> f64 {
    if x <= -EDGE {
        0.0
    } else if x >= EDGE {
        1.0
    } else {
        0.5 + x * (4.0 - x * x).sqrt() / (4.0 * PI) + (0.5 * x).asin() / PI
    }
}

fn potential_by_quadrature(x: f64) -> f64 {
    let tol = Tolerances { quad_rel: 1e-13, ..Tolerances::default() };
    let top = 2f64.sqrt();
    // y = 2 - t² on [0, 2] and y = -2 + s² on [-2, 0] remove the square-root
    // edges; the log singularity at x = 2 becomes t² log t².
    let right = move |t: f64| {
        let t2 = t * t;
        (x - 2.0 + t2).ln() * t2 * (4.0 - t2).sqrt() / PI
    };
    let left = move |s: f64| {
        let s2 = s * s;
        (x + 2.0 - s2).ln() * s2 * (4.0 - s2).sqrt() / PI
    };
    let r = numerics::integrate(right, numerics::Domain::Interval(0.0, top), &tol)
        .expect("semicircle log-potential quadrature converges");
    let l = numerics::integrate(left, numerics::Domain::Interval(0.0, top), &tol)
        .expect("semicircle log-potential quadrature converges");
    r + l
}

/// Semicircle constants; `∫log(2 - y)dσ(y)` is computed once on first use.
pub struct SemicircleConstants;

static POTENTIAL_AT_EDGE: OnceLock<f64> = OnceLock::new();

impl SemicircleConstants {
    pub const EDGE: f64 = EDGE;

    pub fn log_potential_at_edge() -> f64 {
        *POTENTIAL_AT_EDGE.get_or_init(|| potential_by_quadrature(EDGE))
    }
}

/// `∫ log(x - y) dσ(y)` for `x ≥ 2`, by quadrature.
pub fn log_potential(x: f64) -> Result<f64> {
    check_edge(x)?;
    if x == EDGE {
        return Ok(SemicircleConstants::log_potential_at_edge());
    }
    Ok(potential_by_quadrature(x))
}

/// `J(x, ·)` with the `x`-dependent pieces precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalLimit {
    pub x: f64,
    pub g: f64,
    pub log_potential: f64,
}

impl SphericalLimit {
    pub fn new(x: f64) -> Result<Self> {
        Ok(Self { x, g: g_sigma(x)?, log_potential: log_potential(x)? })
    }

    pub fn j(&self, theta: f64) -> f64 {
        if theta <= 0.5 * self.g {
            theta * theta
        } else {
            theta * self.x - 0.5 - 0.5 * (2.0 * theta).ln() - 0.5 * self.log_potential
        }
    }
}

/// Limiting spherical integral `J(x, θ)` for a semicircular bulk with top
/// eigenvalue `x`.
pub fn j_sph(x: f64, theta: f64) -> Result<f64> {
    if !(theta >= 0.0) {
        return Err(FreeProbError::OutOfDomain(theta));
    }
    Ok(SphericalLimit::new(x)?.j(theta))
}

/// `I_GOE(x) = ½∫₂ˣ √(y²-4) dy` in closed form; infinite below the edge.
pub fn i_goe(x: f64) -> RateValue {
    if x < EDGE {
        return RateValue::Infinite;
    }
    let r = (x * x - 4.0).sqrt();
    // ln_1p keeps accuracy near the edge.
    let log_term = ((x - 2.0 + r) / 2.0).ln_1p();
    RateValue::Finite(x * r / 4.0 - log_term)
}

/// `sup_{θ ∈ [0, x]} {J(x, θ) - θ²}` by numerical maximization, returned as
/// `(θ*, value)`.
pub fn i_goe_variational(x: f64) -> Result<(f64, f64)> {
    let sl = SphericalLimit::new(x)?;
    let tol = Tolerances::default();
    Ok(numerics::maximize_1d(|t| sl.j(t) - t * t, (0.0, x), &tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    // ½∫₂ˣ√(y²-4)dy - I_GOE(x) at 30 digits, and ∫log(x-y)dσ.
    const I_GOE_25: f64 = 0.244_352_819_440_054_69;
    const I_GOE_3: f64 = 0.714_627_333_005_635_38;
    const PHI_25: f64 = 0.818_147_180_559_945_31;
    const PHI_3: f64 = 1.035_372_666_994_364_6;
    const PHI_10: f64 = 2.297_534_241_729_396_7;

    #[test]
    fn g_and_k() {
        assert_eq!(g_sigma(2.0).unwrap(), 1.0);
        assert!((g_sigma(2.5).unwrap() - 0.5).abs() < 1e-15);
        assert!((g_sigma(10.0 / 3.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(k_sigma(1.0).unwrap(), 2.0);
        assert_eq!(k_sigma(2.0).unwrap(), 2.5);
        for x in [2.1, 3.0, 7.0] {
            assert!((k_sigma(g_sigma(x).unwrap()).unwrap() - x).abs() < 1e-13);
        }
        assert!(g_sigma(1.9).is_err());
        assert!(k_sigma(0.0).is_err());
        assert!((g_sigma_prime(2.5).unwrap() + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn potential_values() {
        assert!((log_potential(2.0).unwrap() - 0.5).abs() < 1e-10);
        assert!((log_potential(2.5).unwrap() - PHI_25).abs() < 1e-11);
        assert!((log_potential(3.0).unwrap() - PHI_3).abs() < 1e-11);
        assert!((log_potential(10.0).unwrap() - PHI_10).abs() < 1e-11);
        let x = 1e4;
        assert!((log_potential(x).unwrap() - x.ln()).abs() < 1e-4);
        assert!(log_potential(1.0).is_err());
        let again = potential_by_quadrature(2.0);
        assert!((again - SemicircleConstants::log_potential_at_edge()).abs() < 1e-10);
    }

    #[test]
    fn potential_derivative_is_stieltjes() {
        let h = 1e-4;
        let fd = (log_potential(3.0 + h).unwrap() - log_potential(3.0 - h).unwrap()) / (2.0 * h);
        assert!((fd - g_sigma(3.0).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn j_examples() {
        assert!((j_sph(3.0, 0.1).unwrap() - 0.01).abs() < 1e-15);
        let sl = SphericalLimit::new(3.0).unwrap();
        let t = 0.5 * sl.g;
        assert!((sl.j(t + 1e-8) - sl.j(t - 1e-8)).abs() <= 1e-6);
        let below = SphericalLimit::new(2.0).unwrap().j(0.5);
        assert_eq!(below, 0.25);
        let above = 0.5 * 2.0 - 0.5 - 0.5 * 1f64.ln() - 0.5 * log_potential(2.0).unwrap();
        assert!((above - 0.25).abs() < 1e-10);
    }

    #[test]
    fn j_is_nondecreasing_and_below_theta_x() {
        for x in [2.0, 2.5, 3.0, 5.0] {
            let sl = SphericalLimit::new(x).unwrap();
            let vals: Vec<f64> = (0..10_000).map(|i| sl.j(x * i as f64 / 9_999.0)).collect();
            assert!(vals.windows(2).all(|w| w[1] >= w[0] - 1e-9), "x={x}");
        }
        for x in [2.001, 2.5, 4.0, 9.0] {
            let sl = SphericalLimit::new(x).unwrap();
            for i in 0..200 {
                let t = 0.5 + i as f64 * 0.05;
                assert!(sl.j(t) <= t * x);
            }
        }
    }

    fn i_goe_quadrature(x: f64) -> f64 {
        // y = 2 + t² removes the square-root edge.
        let f = |t: f64| t * t * (4.0 + t * t).sqrt();
        numerics::integrate(f, numerics::Domain::Interval(0.0, (x - 2.0).sqrt()), &Tolerances::default()).unwrap()
    }

    #[test]
    fn i_goe_values() {
        assert_eq!(i_goe(2.0), RateValue::Finite(0.0));
        assert!((i_goe(3.0).finite().unwrap() - I_GOE_3).abs() < 1e-14);
        assert!((i_goe(2.5).finite().unwrap() - I_GOE_25).abs() < 1e-14);
        assert!((i_goe(2.5).finite().unwrap() - (2.5 * 1.5 / 4.0 - 2f64.ln())).abs() < 1e-15);
        assert!(i_goe(1.99).is_infinite());
        assert_eq!(i_goe(1.5).to_string(), "inf");
        let mut worst = 0.0f64;
        for i in 0..200 {
            let x = 2.0 + 8.0 * i as f64 / 199.0;
            worst = worst.max((i_goe(x).finite().unwrap() - i_goe_quadrature(x)).abs());
        }
        assert!(worst <= 1e-8, "{worst}");
    }

    #[test]
    fn i_goe_is_convex() {
        let h = 8.0 / 399.0;
        let v: Vec<f64> = (0..400).map(|i| i_goe(2.0 + h * i as f64).finite().unwrap()).collect();
        assert!(v.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] >= -1e-9));
    }

    #[test]
    fn variational_identity() {
        let (_, v) = i_goe_variational(3.0).unwrap();
        assert!((v - I_GOE_3).abs() < 1e-6);
        let (_, v0) = i_goe_variational(2.0).unwrap();
        assert!(v0.abs() < 1e-8);
        // never below a dense grid
        let sl = SphericalLimit::new(3.0).unwrap();
        let best = (0..300_001).map(|i| 3.0 * i as f64 / 300_000.0).map(|t| sl.j(t) - t * t).fold(f64::MIN, f64::max);
        assert!(v >= best - 1e-12 && v - best < 1e-9, "{v} {best}");
    }

    #[test]
    fn cdf_and_density() {
        assert_eq!(semicircle_cdf(0.0), 0.5);
        assert_eq!(semicircle_cdf(-3.0), 0.0);
        assert_eq!(semicircle_cdf(2.0), 1.0);
        let mass = numerics::integrate(semicircle_density, numerics::Domain::Interval(-2.0, 1.0), &Tolerances::default())
            .unwrap();
        assert!((mass - semicircle_cdf(1.0)).abs() < 1e-8);
    }
}

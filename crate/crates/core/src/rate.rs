//! The rate function `I(x) = sup_{θ ≥ 0} {J(x, θ) - F(θ)}` of the largest
//! eigenvalue.
//!
//! Since `J(x, θ) ≤ θx` and `F(θ) ≥ θ²`, the objective is negative for
//! `θ > x` while `I(x) ≥ 0`, so the supremum is searched on `[0, x]`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::annealed::{AnnealedError, AnnealedModel, FProfile};
use crate::freeprob::{i_goe, FreeProbError, RateValue, SphericalLimit};
use crate::laws::{LawTag, TailConstants};
use crate::numerics::{self, Tolerances};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error(transparent)]
    Annealed(#[from] AnnealedError),
    #[error(transparent)]
    FreeProb(#[from] FreeProbError),
    #[error("x grid must be sorted strictly increasing")]
    UnsortedGrid,
}

pub type Result<T> = std::result::Result<T, RateError>;

/// Points of the θ scan in `rate_point`.
pub const THETA_GRID: usize = 256;
/// Points of the shared θ grid used by `rate_curve`, over `[0, max x]`.
pub const CURVE_THETA_GRID: usize = 1024;
/// Maximizers within this of the max count as near-maximizers. A smooth
/// maximum with curvature κ spreads them over `2√(2·tol/κ)`.
pub const NEAR_MAX_TOL: f64 = 1e-8;
/// A near-maximizer spread above this flags a possibly non-unique `θ*`.
pub const SPREAD_FLAG: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    pub x: f64,
    pub value: RateValue,
    pub theta_star: Option<f64>,
    /// False when some `F` near the maximizer is not covered by a proven
    /// formula; the value is then only an upper bound.
    pub validity: bool,
    pub i_goe: RateValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCurve {
    pub law: String,
    pub tag: LawTag,
    pub constants: TailConstants,
    pub theta_zero: Option<f64>,
    pub points: Vec<RatePoint>,
}

impl RateCurve {
    /// The `I_GOE` column.
    pub fn goe_reference(&self) -> Vec<RateValue> {
        self.points.iter().map(|p| p.i_goe).collect()
    }
}

fn objective(model: &AnnealedModel, sl: &SphericalLimit, theta: f64) -> Result<(f64, FProfile)> {
    let f = model.f_value(theta)?;
    Ok((sl.j(theta) - f.value, f))
}

/// Maximizes `J - F` on `[0, x]` starting from the scan `grid` (ascending,
/// all within `[0, x]`), refining around the best grid point.
fn maximize_on(model: &AnnealedModel, sl: &SphericalLimit, grid: &[f64]) -> Result<(f64, f64, bool)> {
    let mut vals = Vec::with_capacity(grid.len());
    for &t in grid {
        vals.push(objective(model, sl, t)?);
    }
    let mut best = 0;
    for (i, (v, _)) in vals.iter().enumerate() {
        if *v > vals[best].0 {
            best = i;
        }
    }
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let mut err = None;
    let (t_ref, v_ref) = numerics::maximize_1d_grid(
        |t| match objective(model, sl, t) {
            Ok((v, _)) => v,
            Err(e) => {
                err.get_or_insert(e);
                f64::NAN
            }
        },
        (lo, hi),
        8,
        &Tolerances { opt_abs: 1e-7, ..Tolerances::default() },
    );
    if let Some(e) = err {
        return Err(e);
    }
    let (theta, value) = if v_ref > vals[best].0 { (t_ref, v_ref) } else { (grid[best], vals[best].0) };
    let mut validity = model.f_value(theta)?.validity;
    for i in best.saturating_sub(1)..=(best + 1).min(grid.len() - 1) {
        validity &= vals[i].1.validity;
    }
    Ok((theta, value, validity))
}

/// `I(x)`: infinite below 2, otherwise the grid-and-golden supremum of
/// `J(x, θ) - F(θ)` over `θ ∈ [0, x]`.
pub fn rate_point(model: &AnnealedModel, x: f64) -> Result<RatePoint> {
    if x < 2.0 {
        return Ok(RatePoint { x, value: RateValue::Infinite, theta_star: None, validity: true, i_goe: i_goe(x) });
    }
    let sl = SphericalLimit::new(x)?;
    let grid: Vec<f64> = (0..THETA_GRID).map(|i| x * i as f64 / (THETA_GRID - 1) as f64).collect();
    let (theta, value, validity) = maximize_on(model, &sl, &grid)?;
    Ok(RatePoint { x, value: RateValue::Finite(value), theta_star: Some(theta), validity, i_goe: i_goe(x) })
}

/// `I` on a sorted grid. `F` is tabulated once on a θ grid shared by all
/// points (spacing `max x / 1023`) and each point is then refined locally.
/// Work is split into fixed chunks, each on its own clone of the model, so
/// results do not depend on the thread count.
pub fn rate_curve(model: &AnnealedModel, xs: &[f64]) -> Result<RateCurve> {
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(RateError::UnsortedGrid);
    }
    let x_max = xs.last().copied().unwrap_or(2.0).max(2.0);
    let step = x_max / (CURVE_THETA_GRID - 1) as f64;
    let thetas: Vec<f64> = (0..CURVE_THETA_GRID).map(|i| step * i as f64).collect();
    let tabulated: Vec<FProfile> = thetas
        .par_chunks(64)
        .map(|chunk| {
            let m = model.clone();
            chunk.iter().map(|&t| m.f_value(t)).collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    model.remember(&tabulated);
    let points = xs
        .par_iter()
        .map(|&x| {
            if x < 2.0 {
                return rate_point(model, x);
            }
            let m = model.clone();
            let sl = SphericalLimit::new(x)?;
            let mut grid: Vec<f64> = thetas.iter().copied().take_while(|t| *t < x).collect();
            grid.push(x);
            let (theta, value, validity) = maximize_on(&m, &sl, &grid)?;
            Ok(RatePoint { x, value: RateValue::Finite(value), theta_star: Some(theta), validity, i_goe: i_goe(x) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateCurve {
        law: model.law().name().to_string(),
        tag: model.classification().tag,
        constants: model.classification().constants,
        theta_zero: model.theta_zero()?,
        points,
    })
}

/// `[2, √(A-1) + 1/√(A-1)]`, on which `I = I_GOE` when `1 < A < 2`.
pub fn goe_window(a: f64) -> Option<(f64, f64)> {
    if a > 1.0 && a < 2.0 {
        let s = (a - 1.0).sqrt();
        Some((2.0, s + 1.0 / s))
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub x: f64,
    pub max_value: f64,
    /// Grid points within `NEAR_MAX_TOL` of the max.
    pub near_maximizers: usize,
    /// Contiguous runs of near-maximizers.
    pub clusters: usize,
    pub spread: f64,
    pub flagged: bool,
}

/// Scans `θ ∈ [0, x]` on `points` grid points for near-maximizers of
/// `J(x, θ) - F(θ)`.
pub fn theta_star_uniqueness_report(model: &AnnealedModel, x: f64, points: usize) -> Result<UniquenessReport> {
    let sl = SphericalLimit::new(x)?;
    let grid: Vec<f64> = (0..points).map(|i| x * i as f64 / (points - 1) as f64).collect();
    let vals = grid.iter().map(|&t| Ok(objective(model, &sl, t)?.0)).collect::<Result<Vec<f64>>>()?;
    let max_value = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let near: Vec<bool> = vals.iter().map(|v| *v >= max_value - NEAR_MAX_TOL).collect();
    let idx: Vec<usize> = near.iter().enumerate().filter(|(_, n)| **n).map(|(i, _)| i).collect();
    let clusters = near.iter().enumerate().filter(|(i, n)| **n && (*i == 0 || !near[i - 1])).count();
    let spread = match (idx.first(), idx.last()) {
        (Some(&a), Some(&b)) => grid[b] - grid[a],
        _ => 0.0,
    };
    Ok(UniquenessReport {
        x,
        max_value,
        near_maximizers: idx.len(),
        clusters,
        spread,
        flagged: clusters > 1 || spread > SPREAD_FLAG,
    })
}

/// Operational stand-in for `x_μ`: the smallest curve point whose maximizer
/// lies beyond `θ₀` with an unflagged uniqueness report. Metadata only.
pub fn x_mu_proxy(model: &AnnealedModel, curve: &RateCurve) -> Result<Option<f64>> {
    let Some(t0) = curve.theta_zero else {
        return Ok(None);
    };
    for p in &curve.points {
        if let Some(t) = p.theta_star {
            if t > t0 && !theta_star_uniqueness_report(model, p.x, 2001)?.flagged {
                return Ok(Some(p.x));
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freeprob::i_goe_variational;
    use crate::laws::{gaussian, sparse_gaussian};

    #[test]
    fn gaussian_rate_is_i_goe() {
        let m = AnnealedModel::new(gaussian()).unwrap();
        let p = rate_point(&m, 3.0).unwrap();
        assert!((p.value.finite().unwrap() - 0.714_627_333_005_635_4).abs() < 1e-6);
        let p = rate_point(&m, 2.0).unwrap();
        assert!(p.value.finite().unwrap().abs() < 1e-8);
        assert!(rate_point(&m, 1.5).unwrap().value.is_infinite());
        let (_, v) = i_goe_variational(3.0).unwrap();
        assert!((v - rate_point(&m, 3.0).unwrap().value.finite().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn windows() {
        let (a, b) = goe_window(1.5).unwrap();
        assert_eq!(a, 2.0);
        assert!((b - 2.121_320_343_559_642_4).abs() < 1e-12);
        assert_eq!(goe_window(2.0), None);
        assert_eq!(goe_window(1.25), Some((2.0, 2.5)));
    }

    #[test]
    fn uniqueness_reports() {
        let m = AnnealedModel::new(gaussian()).unwrap();
        let r = theta_star_uniqueness_report(&m, 3.0, 2001).unwrap();
        assert_eq!(r.clusters, 1);
        assert!(!r.flagged);
        let r = theta_star_uniqueness_report(&m, 2.0, 2001).unwrap();
        assert!(r.flagged);
        let s = AnnealedModel::new(sparse_gaussian(0.5).unwrap()).unwrap();
        let r = theta_star_uniqueness_report(&s, 20.0, 801).unwrap();
        assert_eq!(r.clusters, 1);
        let p = rate_point(&s, 20.0).unwrap();
        assert!(p.theta_star.unwrap() > s.theta_zero().unwrap().unwrap());
    }

    #[test]
    fn curve_rejects_unsorted_grid() {
        let m = AnnealedModel::new(gaussian()).unwrap();
        assert_eq!(rate_curve(&m, &[3.0, 2.0]).unwrap_err(), RateError::UnsortedGrid);
    }
}

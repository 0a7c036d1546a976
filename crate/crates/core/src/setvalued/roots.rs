use serde::Serialize;

use super::{Interval, ScalarMap, SetValuedError};

/// Default number of grid points used to bracket fixed points.
pub const DEFAULT_GRID: usize = 4096;
/// `||g'(x*)| − 1|` below which a fixed point is called marginal.
pub const MARGINAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Attracting,
    Repelling,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedPoint {
    pub x: f64,
    pub slope: f64,
    pub stability: Stability,
}

impl FixedPoint {
    fn classify(x: f64, slope: f64) -> Self {
        let d = slope.abs() - 1.0;
        let stability = if d.abs() <= MARGINAL_TOL {
            Stability::Marginal
        } else if d < 0.0 {
            Stability::Attracting
        } else {
            Stability::Repelling
        };
        Self { x, slope, stability }
    }

    pub fn is_attracting(&self) -> bool {
        self.stability == Stability::Attracting
    }
}

/// Root of `f` in `[a, b]` given a sign change, bisected to floating-point
/// resolution.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    if fa == 0.0 {
        return a;
    }
    if f(b) == 0.0 {
        return b;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a.min(b) || m >= a.max(b) {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Fixed points of `g` on `domain` with the default grid.
pub fn fixed_points(g: &ScalarMap, domain: Interval, tol: f64) -> Result<Vec<FixedPoint>, SetValuedError> {
    fixed_points_with(g, domain, tol, DEFAULT_GRID)
}

/// Fixed points of `g` on `domain`: sign changes of `g(x) − x` on a uniform
/// grid of `grid_n` points, each refined by bisection.
///
/// Roots closer together than one grid cell may be missed.
pub fn fixed_points_with(
    g: &ScalarMap,
    domain: Interval,
    tol: f64,
    grid_n: usize,
) -> Result<Vec<FixedPoint>, SetValuedError> {
    if !(domain.len() > 0.0) {
        return Err(SetValuedError::InvalidArgument(format!("empty domain {domain}")));
    }
    if !(tol > 0.0) {
        return Err(SetValuedError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if grid_n < 2 {
        return Err(SetValuedError::InvalidArgument("grid needs at least two points".into()));
    }
    let h = |x: f64| g.eval(x) - x;
    let xs: Vec<f64> = domain.linspace(grid_n).collect();
    let hs: Vec<f64> = xs.iter().map(|&x| h(x)).collect();

    let flat = hs.iter().filter(|v| v.abs() <= tol).count();
    if flat * 2 > grid_n {
        return Err(SetValuedError::Degenerate(format!(
            "{flat} of {grid_n} grid points are fixed points"
        )));
    }

    let mut roots: Vec<f64> = Vec::new();
    let mut last_zero: Option<usize> = None;
    for i in 0..xs.len() {
        if hs[i].abs() <= tol {
            // Consecutive near-zero grid values describe the same root.
            if last_zero != Some(i.wrapping_sub(1)) {
                roots.push(xs[i]);
            }
            last_zero = Some(i);
            continue;
        }
        if i + 1 < xs.len() && hs[i + 1].abs() > tol && (hs[i] < 0.0) != (hs[i + 1] < 0.0) {
            roots.push(bisect(h, xs[i], xs[i + 1]));
        }
    }
    Ok(roots
        .into_iter()
        .map(|x| FixedPoint::classify(x, g.deriv(x)))
        .collect())
}

/// A fixed point with unit derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tangency {
    pub alpha: f64,
    pub x: f64,
    pub slope: f64,
    /// `g(x) − x` at the returned point.
    pub residual: f64,
}

fn critical_point_near(g: &ScalarMap, x0: f64, w0: f64, region: Interval) -> Option<f64> {
    let d = |x: f64| g.deriv(x) - 1.0;
    let mut w = w0.max(1e-9);
    for _ in 0..60 {
        let a = (x0 - w).max(region.lo);
        let b = (x0 + w).min(region.hi);
        if (d(a) < 0.0) != (d(b) < 0.0) {
            return Some(bisect(d, a, b));
        }
        if a <= region.lo && b >= region.hi {
            return None;
        }
        w *= 2.0;
    }
    None
}

/// Parameter at which a pair of fixed points of `map_at(α)` in `region` is
/// born or annihilated between `alpha_a` and `alpha_b`.
///
/// The number of fixed points is bisected in α to localise the event; the
/// point `x_c(α)` where `g'_α = 1` between the colliding pair is then tracked
/// and `ψ(α) = g_α(x_c) − x_c` bisected to `tol_alpha`.
pub fn tangency_parameter<M>(
    map_at: M,
    region: Interval,
    alpha_a: f64,
    alpha_b: f64,
    tol_alpha: f64,
) -> Result<Tangency, SetValuedError>
where
    M: Fn(f64) -> ScalarMap,
{
    let count = |a: f64| -> Result<usize, SetValuedError> {
        Ok(fixed_points(&map_at(a), region, 1e-13)?.len())
    };
    let (ca, cb) = (count(alpha_a)?, count(alpha_b)?);
    if ca == cb {
        return Err(SetValuedError::NotFound(format!(
            "fixed-point count {ca} is the same at α = {alpha_a} and α = {alpha_b}"
        )));
    }
    let (mut lo, mut hi) = (alpha_a, alpha_b);
    while (hi - lo).abs() > 1e-7 * hi.abs().max(1.0) {
        let m = 0.5 * (lo + hi);
        if count(m)? == ca {
            lo = m;
        } else {
            hi = m;
        }
    }
    let (c_lo, c_hi) = (count(lo)?, count(hi)?);
    let (a_more, mut a_few, far_few) = if c_lo > c_hi {
        (lo, hi, alpha_b)
    } else {
        (hi, lo, alpha_a)
    };
    let g_more = map_at(a_more);
    let fps = fixed_points(&g_more, region, 1e-13)?;
    let x_c0 = fps
        .windows(2)
        .filter(|w| (w[0].slope < 1.0) != (w[1].slope < 1.0))
        .min_by(|p, q| (p[1].x - p[0].x).total_cmp(&(q[1].x - q[0].x)))
        .map(|w| (bisect(|x| g_more.deriv(x) - 1.0, w[0].x, w[1].x), w[1].x - w[0].x))
        .ok_or_else(|| SetValuedError::NotFound("no colliding pair of fixed points".into()))?;
    let (x_c0, sep) = x_c0;

    let psi = |a: f64| -> Option<(f64, f64)> {
        let g = map_at(a);
        let xc = critical_point_near(&g, x_c0, 4.0 * sep, region)?;
        Some((g.eval(xc) - xc, xc))
    };
    let sign_more = psi(a_more)
        .ok_or_else(|| SetValuedError::NotFound("critical point lost".into()))?
        .0
        < 0.0;
    // Walk away from the collision until ψ changes sign.
    let mut step = a_few - a_more;
    loop {
        if let Some((v, _)) = psi(a_few) {
            if (v < 0.0) != sign_more {
                break;
            }
        }
        if a_few == far_few {
            return Err(SetValuedError::NotFound(
                "tangency function does not change sign".into(),
            ));
        }
        step *= 2.0;
        a_few = a_more + step;
        if (a_few - far_few) * step > 0.0 {
            a_few = far_few;
        }
    }
    let (mut p, mut q) = (a_more, a_few);
    while (q - p).abs() > tol_alpha {
        let m = 0.5 * (p + q);
        if m == p || m == q {
            break;
        }
        match psi(m) {
            Some((v, _)) if (v < 0.0) == sign_more => p = m,
            _ => q = m,
        }
    }
    let alpha = 0.5 * (p + q);
    let (residual, x) = psi(alpha)
        .or_else(|| psi(p))
        .ok_or_else(|| SetValuedError::NotFound("critical point lost".into()))?;
    Ok(Tangency {
        alpha,
        x,
        slope: map_at(alpha).deriv(x),
        residual,
    })
}

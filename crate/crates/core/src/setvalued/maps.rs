use std::fmt;
use std::sync::Arc;

use super::{Interval, SetValuedError};
use crate::rng;

pub type Fx = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Fax = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Finite-difference step used by derivative cross-checks.
pub const FD_STEP: f64 = 1e-5;
/// Relative tolerance used by derivative cross-checks.
pub const FD_REL_TOL: f64 = 1e-6;

/// A C¹ (optionally C²) scalar map with its derivatives.
#[derive(Clone)]
pub struct ScalarMap {
    f: Fx,
    df: Fx,
    d2f: Option<Fx>,
}

impl ScalarMap {
    pub fn new<F, D>(f: F, df: D) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            df: Arc::new(df),
            d2f: None,
        }
    }

    pub fn with_second<D2>(mut self, d2f: D2) -> Self
    where
        D2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.d2f = Some(Arc::new(d2f));
        self
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        (self.df)(x)
    }

    pub fn second(&self, x: f64) -> Option<f64> {
        self.d2f.as_ref().map(|g| g(x))
    }

    pub fn has_second(&self) -> bool {
        self.d2f.is_some()
    }

    /// `outer ∘ inner`, with derivatives by the chain rule.
    pub fn compose(outer: &ScalarMap, inner: &ScalarMap) -> ScalarMap {
        let (fo, fi) = (outer.f.clone(), inner.f.clone());
        let (dfo, dfi) = (outer.df.clone(), inner.df.clone());
        let f = {
            let (fo, fi) = (fo.clone(), fi.clone());
            move |x: f64| fo(fi(x))
        };
        let df = {
            let (dfo, fi, dfi) = (dfo.clone(), fi.clone(), dfi.clone());
            move |x: f64| dfo(fi(x)) * dfi(x)
        };
        let mut out = ScalarMap::new(f, df);
        if let (Some(d2o), Some(d2i)) = (outer.d2f.clone(), inner.d2f.clone()) {
            out = out.with_second(move |x: f64| {
                let y = fi(x);
                let g1 = dfi(x);
                d2o(y) * g1 * g1 + dfo(y) * d2i(x)
            });
        }
        out
    }

    /// Mirror image `x ↦ -f(-x)`.
    pub fn mirrored(&self) -> ScalarMap {
        let (f, df) = (self.f.clone(), self.df.clone());
        let mut out = ScalarMap::new(move |x| -f(-x), move |x| df(-x));
        if let Some(d2) = self.d2f.clone() {
            out = out.with_second(move |x| -d2(-x));
        }
        out
    }

    /// Compares analytic derivatives against central differences at `n`
    /// pseudo-random points of `domain`.
    pub fn check_derivatives(&self, domain: Interval, n: usize, seed: u64) -> Result<(), SetValuedError> {
        let mut r = rng::stream_rng(seed, 0);
        let h = FD_STEP;
        for _ in 0..n {
            let x = rng::uniform(&mut r, domain.lo + h, domain.hi - h);
            let fd = (self.eval(x + h) - self.eval(x - h)) / (2.0 * h);
            let d = self.deriv(x);
            if (fd - d).abs() > FD_REL_TOL * d.abs().max(1.0) {
                return Err(SetValuedError::InvalidArgument(format!(
                    "first derivative mismatch at x={x}: analytic {d}, finite difference {fd}"
                )));
            }
            if let Some(d2) = self.second(x) {
                let fd2 = (self.deriv(x + h) - self.deriv(x - h)) / (2.0 * h);
                if (fd2 - d2).abs() > FD_REL_TOL * d2.abs().max(1.0) {
                    return Err(SetValuedError::InvalidArgument(format!(
                        "second derivative mismatch at x={x}: analytic {d2}, finite difference {fd2}"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for ScalarMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarMap")
            .field("has_second", &self.has_second())
            .finish()
    }
}

/// The extremal maps `f⁻(x) = min F(x)` and `f⁺(x) = max F(x)` of an
/// interval-valued map `F(x) = [f⁻(x), f⁺(x)]`.
#[derive(Clone, Debug)]
pub struct ExtremalPair {
    lower: ScalarMap,
    upper: ScalarMap,
    min_gap: f64,
}

/// Points of the working domain sampled when validating a pair.
const PAIR_CHECK_POINTS: usize = 257;

impl ExtremalPair {
    /// Builds the pair and checks on a sample of `domain` that the images are
    /// intervals of length bounded away from zero.
    pub fn new(lower: ScalarMap, upper: ScalarMap, domain: Interval) -> Result<Self, SetValuedError> {
        let mut min_gap = f64::INFINITY;
        for x in domain.linspace(PAIR_CHECK_POINTS) {
            let (a, b) = (lower.eval(x), upper.eval(x));
            if !(a.is_finite() && b.is_finite()) {
                return Err(SetValuedError::InvalidArgument(format!(
                    "extremal maps not finite at x={x}"
                )));
            }
            if a > b {
                return Err(SetValuedError::InvalidArgument(format!(
                    "f⁻({x}) = {a} exceeds f⁺({x}) = {b}"
                )));
            }
            min_gap = min_gap.min(b - a);
        }
        if min_gap <= 0.0 {
            return Err(SetValuedError::Degenerate(
                "image intervals collapse to points (f⁻ = f⁺ somewhere)".into(),
            ));
        }
        Ok(Self {
            lower,
            upper,
            min_gap,
        })
    }

    pub fn lower(&self) -> &ScalarMap {
        &self.lower
    }

    pub fn upper(&self) -> &ScalarMap {
        &self.upper
    }

    /// Smallest image length seen on the validation sample.
    pub fn min_gap(&self) -> f64 {
        self.min_gap
    }

    pub fn image(&self, x: f64) -> Interval {
        Interval {
            lo: self.lower.eval(x),
            hi: self.upper.eval(x),
        }
    }

    /// `f⁺ ∘ f⁻`.
    pub fn upper_after_lower(&self) -> ScalarMap {
        ScalarMap::compose(&self.upper, &self.lower)
    }

    /// `f⁻ ∘ f⁺`.
    pub fn lower_after_upper(&self) -> ScalarMap {
        ScalarMap::compose(&self.lower, &self.upper)
    }

    pub fn check_derivatives(&self, domain: Interval, n: usize, seed: u64) -> Result<(), SetValuedError> {
        self.lower.check_derivatives(domain, n, seed)?;
        self.upper.check_derivatives(domain, n, seed.wrapping_add(1))
    }
}

/// Scalar map depending on a parameter: `(α, x) ↦ f_α(x)` with `x`-derivatives.
#[derive(Clone)]
pub struct ParamMap {
    f: Fax,
    dx: Fax,
    dxx: Option<Fax>,
}

impl ParamMap {
    pub fn new<F, D>(f: F, dx: D) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            f: Arc::new(f),
            dx: Arc::new(dx),
            dxx: None,
        }
    }

    pub fn with_second<D2>(mut self, dxx: D2) -> Self
    where
        D2: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.dxx = Some(Arc::new(dxx));
        self
    }

    pub fn eval(&self, alpha: f64, x: f64) -> f64 {
        (self.f)(alpha, x)
    }

    /// Freezes the parameter, shifting the value by `shift`.
    pub fn at(&self, alpha: f64, shift: f64) -> ScalarMap {
        let (f, dx) = (self.f.clone(), self.dx.clone());
        let mut m = ScalarMap::new(move |x| f(alpha, x) + shift, move |x| dx(alpha, x));
        if let Some(dxx) = self.dxx.clone() {
            m = m.with_second(move |x| dxx(alpha, x));
        }
        m
    }
}

/// Parametrized family `α ↦ F_α` of interval-valued maps on a working domain.
#[derive(Clone)]
pub struct SetValuedFamily {
    name: String,
    lower: ParamMap,
    upper: ParamMap,
    lower_shift: f64,
    upper_shift: f64,
    alpha_domain: (f64, f64),
    domain: Interval,
}

impl fmt::Debug for SetValuedFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SetValuedFamily")
            .field("name", &self.name)
            .field("alpha_domain", &self.alpha_domain)
            .field("domain", &self.domain)
            .finish()
    }
}

impl SetValuedFamily {
    /// Family given directly by its extremal maps.
    pub fn from_extremal(
        name: impl Into<String>,
        lower: ParamMap,
        upper: ParamMap,
        alpha_domain: (f64, f64),
        domain: Interval,
    ) -> Result<Self, SetValuedError> {
        if !(alpha_domain.0 < alpha_domain.1) {
            return Err(SetValuedError::InvalidArgument(format!(
                "parameter domain ({}, {}) is empty",
                alpha_domain.0, alpha_domain.1
            )));
        }
        if domain.len() <= 0.0 {
            return Err(SetValuedError::InvalidArgument("empty working domain".into()));
        }
        Ok(Self {
            name: name.into(),
            lower,
            upper,
            lower_shift: 0.0,
            upper_shift: 0.0,
            alpha_domain,
            domain,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alpha_domain(&self) -> (f64, f64) {
        self.alpha_domain
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    pub fn lower_at(&self, alpha: f64) -> ScalarMap {
        self.lower.at(alpha, self.lower_shift)
    }

    pub fn upper_at(&self, alpha: f64) -> ScalarMap {
        self.upper.at(alpha, self.upper_shift)
    }

    /// Extremal pair of `F_α`.
    pub fn pair(&self, alpha: f64) -> Result<ExtremalPair, SetValuedError> {
        let (a, b) = self.alpha_domain;
        if !(a < alpha && alpha < b) {
            return Err(SetValuedError::InvalidArgument(format!(
                "α = {alpha} outside the parameter domain ({a}, {b})"
            )));
        }
        ExtremalPair::new(self.lower_at(alpha), self.upper_at(alpha), self.domain)
    }

    /// Largest change of either extremal map over `x` on a grid when α moves
    /// by `h`, maximized over a grid of α values. Small values relative to
    /// `h` are the numerical footprint of continuity in α uniformly in x.
    pub fn continuity_modulus(&self, n_alpha: usize, n_x: usize, h: f64) -> f64 {
        let (a, b) = self.alpha_domain;
        let span = Interval {
            lo: a + (b - a) * 0.05,
            hi: b - (b - a) * 0.05 - h,
        };
        let mut worst = 0.0_f64;
        for alpha in span.linspace(n_alpha) {
            for x in self.domain.linspace(n_x) {
                let dl = (self.lower.eval(alpha + h, x) - self.lower.eval(alpha, x)).abs();
                let du = (self.upper.eval(alpha + h, x) - self.upper.eval(alpha, x)).abs();
                worst = worst.max(dl).max(du);
            }
        }
        worst
    }
}

/// `F_α(x) = [f_α(x) − σ, f_α(x) + σ]`.
pub fn additive_family(
    name: impl Into<String>,
    map: ParamMap,
    sigma: f64,
    alpha_domain: (f64, f64),
    domain: Interval,
) -> Result<SetValuedFamily, SetValuedError> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(SetValuedError::InvalidArgument(format!(
            "noise radius must be positive, got {sigma}"
        )));
    }
    let mut fam = SetValuedFamily::from_extremal(name, map.clone(), map, alpha_domain, domain)?;
    fam.lower_shift = -sigma;
    fam.upper_shift = sigma;
    Ok(fam)
}

/// Worked examples.
pub mod examples {
    use super::*;

    /// `f_α(x) = ½α·arctan(x) + ½x` with additive noise of radius `sigma`:
    /// a set-valued pitchfork in which two symmetric minimal invariant sets
    /// merge into one as α decreases through α₀(σ).
    pub fn pitchfork(sigma: f64) -> Result<SetValuedFamily, SetValuedError> {
        let map = ParamMap::new(
            |a, x| 0.5 * a * x.atan() + 0.5 * x,
            |a, x| 0.5 * a / (1.0 + x * x) + 0.5,
        )
        .with_second(|a, x| {
            let q = 1.0 + x * x;
            -a * x / (q * q)
        });
        additive_family(
            "pitchfork",
            map,
            sigma,
            (0.0, 10.0),
            Interval { lo: -10.0, hi: 10.0 },
        )
    }

    /// `f_α(x) = −x² + α` with additive noise of radius `sigma`: a connected
    /// minimal invariant set splits into a two-cycle of intervals.
    pub fn doubling(sigma: f64) -> Result<SetValuedFamily, SetValuedError> {
        let map = ParamMap::new(|a, x| -x * x + a, |_, x| -2.0 * x).with_second(|_, _| -2.0);
        additive_family(
            "doubling",
            map,
            sigma,
            (0.0, 2.0),
            Interval { lo: -0.5, hi: 1.5 },
        )
    }

    /// `f_α(x) = slope·x + α`: a contraction for every α when `|slope| < 1`.
    pub fn linear(slope: f64, sigma: f64) -> Result<SetValuedFamily, SetValuedError> {
        let map = ParamMap::new(move |a, x| slope * x + a, move |_, _| slope).with_second(|_, _| 0.0);
        additive_family(
            "linear",
            map,
            sigma,
            (-10.0, 10.0),
            Interval { lo: -100.0, hi: 100.0 },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::examples::*;
    use super::*;

    #[test]
    fn additive_shift() {
        let fam = additive_family(
            "half",
            ParamMap::new(|_, x| 0.5 * x, |_, _| 0.5),
            1.0,
            (-1.0, 1.0),
            Interval { lo: -10.0, hi: 10.0 },
        )
        .unwrap();
        let p = fam.pair(0.0).unwrap();
        for x in [-3.0, 0.0, 2.5] {
            assert_eq!(p.lower().eval(x), 0.5 * x - 1.0);
            assert_eq!(p.upper().eval(x), 0.5 * x + 1.0);
            assert_eq!(p.lower().deriv(x), 0.5);
            assert_eq!(p.upper().deriv(x), 0.5);
        }
        assert!((p.min_gap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_positive_sigma_rejected() {
        assert!(matches!(pitchfork(0.0), Err(SetValuedError::InvalidArgument(_))));
        assert!(matches!(doubling(-0.1), Err(SetValuedError::InvalidArgument(_))));
    }

    #[test]
    fn collapsed_images_rejected() {
        let m = ScalarMap::new(|x| 0.5 * x, |_| 0.5);
        let r = ExtremalPair::new(m.clone(), m, Interval { lo: -1.0, hi: 1.0 });
        assert!(matches!(r, Err(SetValuedError::Degenerate(_))));
    }

    #[test]
    fn swapped_extremals_rejected() {
        let lo = ScalarMap::new(|x| x + 1.0, |_| 1.0);
        let hi = ScalarMap::new(|x| x, |_| 1.0);
        assert!(ExtremalPair::new(lo, hi, Interval { lo: 0.0, hi: 1.0 }).is_err());
    }

    #[test]
    fn worked_examples_have_consistent_derivatives() {
        let cases = [
            (pitchfork(0.5).unwrap(), [0.5, 2.0, 3.7]),
            (doubling(0.015).unwrap(), [0.3, 0.8, 1.1]),
            (linear(0.4, 0.2).unwrap(), [-2.0, 0.0, 3.0]),
        ];
        for (fam, alphas) in cases {
            for a in alphas {
                let p = fam.pair(a).unwrap();
                p.check_derivatives(fam.domain(), 100, 11).unwrap();
                p.upper_after_lower().check_derivatives(Interval { lo: -1.0, hi: 1.0 }, 100, 3).unwrap();
                p.lower_after_upper().check_derivatives(Interval { lo: -1.0, hi: 1.0 }, 100, 4).unwrap();
            }
        }
    }

    #[test]
    fn wrong_derivative_detected() {
        let m = ScalarMap::new(|x: f64| x.sin(), |x: f64| x.cos() * 1.001);
        assert!(m.check_derivatives(Interval { lo: -1.0, hi: 1.0 }, 100, 5).is_err());
    }

    #[test]
    fn parameter_continuity_is_lipschitz() {
        // |∂f/∂α| ≤ ½·π/2 for the pitchfork and = 1 for the others.
        let h = 1e-4;
        assert!(pitchfork(0.5).unwrap().continuity_modulus(20, 200, h) <= 0.8 * h);
        assert!(doubling(0.015).unwrap().continuity_modulus(20, 200, h) <= 1.0 * h + 1e-15);
    }

    #[test]
    fn alpha_outside_domain() {
        assert!(pitchfork(0.5).unwrap().pair(-1.0).is_err());
    }

    #[test]
    fn mirror_is_involutive() {
        let m = ScalarMap::new(|x: f64| x.exp(), |x: f64| x.exp()).with_second(|x: f64| x.exp());
        let mm = m.mirrored().mirrored();
        for x in [-1.0, 0.3, 2.0] {
            assert_eq!(mm.eval(x), m.eval(x));
            assert_eq!(mm.deriv(x), m.deriv(x));
            assert_eq!(mm.second(x), m.second(x));
        }
    }
}

use rayon::prelude::*;
use serde::Serialize;

use super::invariant::{image_of_set, is_monotone, minimal_invariant_sets, Monotonicity};
use super::roots::{fixed_points, tangency_parameter, Tangency};
use super::{hausdorff, ExtremalPair, Interval, IntervalUnion, ParamMap, ScalarMap, SetValuedError, SetValuedFamily};

/// Result of the persistence test at a minimal invariant interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Persistence {
    /// All four boundary derivatives are below `1 − tol` in absolute value.
    pub persistent: bool,
    /// `|f⁻'(e₁)|, |f⁺'(e₁)|, |f⁻'(e₂)|, |f⁺'(e₂)|`.
    pub derivatives: [f64; 4],
}

fn boundary_derivatives(pair: &ExtremalPair, e: Interval) -> [f64; 4] {
    [
        pair.lower().deriv(e.lo).abs(),
        pair.upper().deriv(e.lo).abs(),
        pair.lower().deriv(e.hi).abs(),
        pair.upper().deriv(e.hi).abs(),
    ]
}

/// Checks whether the minimal invariant interval `e` persists under small
/// parameter changes: it does when no boundary derivative reaches one.
pub fn check_persistence(pair: &ExtremalPair, e: Interval, tol: f64) -> Result<Persistence, SetValuedError> {
    let set = IntervalUnion::single(e);
    let drift = hausdorff(&image_of_set(pair, &set, 4001), &set)?;
    let allowed = 1e-6 * e.len().max(1.0);
    if drift > allowed {
        return Err(SetValuedError::InvalidArgument(format!(
            "{e} is not invariant: F(E) is {drift} away"
        )));
    }
    let derivatives = boundary_derivatives(pair, e);
    Ok(Persistence {
        persistent: derivatives.iter().all(|&d| d < 1.0 - tol),
        derivatives,
    })
}

/// Which end of the minimal invariant set is tested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// `e₁`, governed by `f⁻`.
    Lower,
    /// `e₂`, governed by `f⁺`.
    Upper,
}

/// Values of the four sufficient conditions for a saddle-node of an
/// extremal map at a boundary point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaddleNodeConditions {
    pub boundary: Boundary,
    pub alpha0: f64,
    pub x0: f64,
    /// `+1` when the boundary fixed point disappears as α increases past
    /// α₀, `−1` when it disappears as α decreases.
    pub direction: f64,
    /// (i) strictly increasing on the checked neighbourhood.
    pub monotone: bool,
    /// (ii) `f'(x₀)`.
    pub slope: f64,
    pub slope_ok: bool,
    /// (iii) `f''(x₀)`.
    pub curvature: f64,
    pub curvature_ok: bool,
    /// (iv) `∂f_α(x₀)/∂α` by central difference.
    pub d_alpha: f64,
    pub d_alpha_ok: bool,
}

impl SaddleNodeConditions {
    pub fn all(&self) -> bool {
        self.monotone && self.slope_ok && self.curvature_ok && self.d_alpha_ok
    }
}

/// Half-width of the neighbourhood of `x₀` on which monotonicity is sampled.
const MONOTONE_RADIUS: f64 = 0.25;

fn saddle_node_conditions<M>(
    map_at: M,
    alpha0: f64,
    x0: f64,
    boundary: Boundary,
    direction: f64,
    h_alpha: f64,
    tol: f64,
) -> Result<SaddleNodeConditions, SetValuedError>
where
    M: Fn(f64) -> ScalarMap,
{
    if !(h_alpha > 0.0) || !(tol > 0.0) {
        return Err(SetValuedError::InvalidArgument(
            "parameter step and tolerance must be positive".into(),
        ));
    }
    if direction != 1.0 && direction != -1.0 {
        return Err(SetValuedError::InvalidArgument(format!(
            "direction must be ±1, got {direction}"
        )));
    }
    let g = map_at(alpha0);
    let curvature = g.second(x0).ok_or_else(|| {
        SetValuedError::Capability("second derivative of the extremal map is not available".into())
    })?;
    let nbhd = Interval {
        lo: x0 - MONOTONE_RADIUS,
        hi: x0 + MONOTONE_RADIUS,
    };
    let monotone = [alpha0 - h_alpha, alpha0, alpha0 + h_alpha]
        .iter()
        .all(|&a| is_monotone(&map_at(a), nbhd) == Monotonicity::Increasing);
    let slope = g.deriv(x0);
    let d_alpha = (map_at(alpha0 + h_alpha).eval(x0) - map_at(alpha0 - h_alpha).eval(x0)) / (2.0 * h_alpha);
    // The upper-boundary conditions are f'' > 0 and ∂f/∂α > 0 for a fixed
    // point that vanishes as α increases; the lower boundary flips both
    // signs and a reversed parameter direction flips the last one.
    let side = match boundary {
        Boundary::Upper => 1.0,
        Boundary::Lower => -1.0,
    };
    Ok(SaddleNodeConditions {
        boundary,
        alpha0,
        x0,
        direction,
        monotone,
        slope,
        slope_ok: (slope - 1.0).abs() <= tol,
        curvature,
        curvature_ok: side * curvature > 0.0,
        d_alpha,
        d_alpha_ok: side * direction * d_alpha > 0.0,
    })
}

/// Sufficient conditions for a discontinuous bifurcation at the boundary
/// point `x0` of a minimal invariant set of `family` at `alpha0`.
pub fn check_saddle_node_sufficient(
    family: &SetValuedFamily,
    alpha0: f64,
    x0: f64,
    boundary: Boundary,
    direction: f64,
    h_alpha: f64,
    tol: f64,
) -> Result<SaddleNodeConditions, SetValuedError> {
    match boundary {
        Boundary::Upper => saddle_node_conditions(|a| family.upper_at(a), alpha0, x0, boundary, direction, h_alpha, tol),
        Boundary::Lower => saddle_node_conditions(|a| family.lower_at(a), alpha0, x0, boundary, direction, h_alpha, tol),
    }
}

/// The same conditions for a single-valued family `f_α` (no noise), where
/// they are the classical saddle-node conditions.
pub fn scalar_saddle_node_test(
    map: &ParamMap,
    alpha0: f64,
    x0: f64,
    direction: f64,
    h_alpha: f64,
    tol: f64,
) -> Result<SaddleNodeConditions, SetValuedError> {
    saddle_node_conditions(|a| map.at(a, 0.0), alpha0, x0, Boundary::Upper, direction, h_alpha, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BifurcationKind {
    BoundarySaddleNode,
    CompositionSaddleNode,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationReport {
    pub alpha_star: f64,
    pub kind: BifurcationKind,
    /// `|f⁻'(e₁)|, |f⁺'(e₁)|, |f⁻'(e₂)|, |f⁺'(e₂)|` at α* for the component
    /// whose boundary meets the tangency.
    pub boundary_derivatives: [f64; 4],
    pub hausdorff_jump: f64,
    /// Grid bracket in which the jump was observed.
    pub bracket: (f64, f64),
    pub components_before: usize,
    pub components_after: usize,
    /// Every map (`f-`, `f+`, `f+∘f-`, `f-∘f+`) with a tangency in the bracket.
    pub tangencies: Vec<(String, Tangency)>,
    /// Derivative of the composition at its tangency (reversing case).
    pub composition_derivative: Option<f64>,
    pub conditions: Option<SaddleNodeConditions>,
    pub error: Option<String>,
}

impl BifurcationReport {
    fn failed(alpha: f64, err: &SetValuedError) -> Self {
        Self {
            alpha_star: alpha,
            kind: BifurcationKind::None,
            boundary_derivatives: [f64::NAN; 4],
            hausdorff_jump: f64::NAN,
            bracket: (alpha, alpha),
            components_before: 0,
            components_after: 0,
            tangencies: Vec::new(),
            composition_derivative: None,
            conditions: None,
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanOptions {
    /// A step is a jump when it exceeds `jump_tol` times the median step.
    pub jump_tol: f64,
    /// Fixed-point residual tolerance.
    pub tol: f64,
    /// Bisection tolerance for the tangency parameter.
    pub alpha_tol: f64,
    /// Parameter step for condition (iv).
    pub h_alpha: f64,
    /// Tolerance on `|f'(x₀) − 1|` for condition (ii).
    pub slope_tol: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            jump_tol: 10.0,
            tol: 1e-13,
            alpha_tol: 1e-10,
            h_alpha: 1e-6,
            slope_tol: 1e-6,
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scans `alpha_grid` for discontinuities of `α ↦ M_α` in Hausdorff distance.
///
/// Grid points are evaluated in parallel; reports are in grid order. Each
/// flagged bracket is narrowed by bisection and the responsible saddle-node
/// is located on the extremal maps or on their compositions.
pub fn bifurcation_scan(
    family: &SetValuedFamily,
    alpha_grid: &[f64],
    opts: &ScanOptions,
) -> Result<Vec<BifurcationReport>, SetValuedError> {
    if alpha_grid.len() < 2 {
        return Err(SetValuedError::InvalidArgument(
            "parameter grid needs at least two points".into(),
        ));
    }
    if alpha_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SetValuedError::InvalidArgument("parameter grid must be increasing".into()));
    }
    let (a, b) = family.alpha_domain();
    if alpha_grid[0] <= a || alpha_grid[alpha_grid.len() - 1] >= b {
        return Err(SetValuedError::InvalidArgument(format!(
            "parameter grid leaves ({a}, {b})"
        )));
    }
    let domain = family.domain();
    let sets_at = |alpha: f64| -> Result<IntervalUnion, SetValuedError> {
        minimal_invariant_sets(&family.pair(alpha)?, domain, opts.tol)
    };
    let sets: Vec<Result<IntervalUnion, SetValuedError>> =
        alpha_grid.par_iter().map(|&al| sets_at(al)).collect();

    let mut reports = Vec::new();
    for (al, s) in alpha_grid.iter().zip(&sets) {
        if let Err(e) = s {
            reports.push(BifurcationReport::failed(*al, e));
        }
    }
    let steps: Vec<Option<f64>> = sets
        .windows(2)
        .map(|w| match (&w[0], &w[1]) {
            (Ok(p), Ok(q)) => hausdorff(p, q).ok(),
            _ => None,
        })
        .collect();
    let mut finite: Vec<f64> = steps.iter().flatten().copied().collect();
    let baseline = median(&mut finite);
    let threshold = (opts.jump_tol * baseline).max(1e-9);

    let flagged: Vec<usize> = steps
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.filter(|&h| h > threshold).map(|_| i))
        .collect();
    let refined: Vec<BifurcationReport> = flagged
        .par_iter()
        .map(|&i| {
            let (lo, hi) = (alpha_grid[i], alpha_grid[i + 1]);
            let s_lo = sets[i].as_ref().unwrap().clone();
            let s_hi = sets[i + 1].as_ref().unwrap().clone();
            refine_bracket(family, lo, hi, s_lo, s_hi, opts)
                .unwrap_or_else(|e| BifurcationReport::failed(0.5 * (lo + hi), &e))
        })
        .collect();
    reports.extend(refined);
    reports.sort_by(|p, q| p.alpha_star.total_cmp(&q.alpha_star));
    Ok(reports)
}

fn refine_bracket(
    family: &SetValuedFamily,
    grid_lo: f64,
    grid_hi: f64,
    mut s_lo: IntervalUnion,
    mut s_hi: IntervalUnion,
    opts: &ScanOptions,
) -> Result<BifurcationReport, SetValuedError> {
    let domain = family.domain();
    let sets_at = |alpha: f64| minimal_invariant_sets(&family.pair(alpha)?, domain, opts.tol);
    let (mut lo, mut hi) = (grid_lo, grid_hi);
    for _ in 0..40 {
        if hi - lo <= 1e-9 * hi.abs().max(1.0) {
            break;
        }
        let m = 0.5 * (lo + hi);
        let s_m = sets_at(m)?;
        if hausdorff(&s_lo, &s_m)? >= hausdorff(&s_m, &s_hi)? {
            hi = m;
            s_hi = s_m;
        } else {
            lo = m;
            s_lo = s_m;
        }
    }
    let jump = hausdorff(&s_lo, &s_hi)?;

    let candidates: [(&str, Box<dyn Fn(f64) -> ScalarMap + Sync>); 4] = [
        ("f-", Box::new(|a| family.lower_at(a))),
        ("f+", Box::new(|a| family.upper_at(a))),
        ("f+∘f-", Box::new(|a| ScalarMap::compose(&family.upper_at(a), &family.lower_at(a)))),
        ("f-∘f+", Box::new(|a| ScalarMap::compose(&family.lower_at(a), &family.upper_at(a)))),
    ];
    let mut tangencies = Vec::new();
    for (name, map_at) in &candidates {
        if let Ok(t) = tangency_parameter(map_at, domain, grid_lo, grid_hi, opts.alpha_tol) {
            tangencies.push((name.to_string(), t));
        }
    }
    let boundary = tangencies.iter().find(|(n, _)| n == "f-" || n == "f+").cloned();
    let composition = tangencies.iter().find(|(n, _)| n.contains('∘')).cloned();
    let (kind, chosen) = match (&boundary, &composition) {
        (Some(t), _) => (BifurcationKind::BoundarySaddleNode, Some(t.clone())),
        (None, Some(t)) => (BifurcationKind::CompositionSaddleNode, Some(t.clone())),
        (None, None) => (BifurcationKind::None, None),
    };
    let Some((name, t)) = chosen else {
        return Ok(BifurcationReport {
            alpha_star: 0.5 * (lo + hi),
            kind,
            boundary_derivatives: [f64::NAN; 4],
            hausdorff_jump: jump,
            bracket: (grid_lo, grid_hi),
            components_before: s_lo.len(),
            components_after: s_hi.len(),
            tangencies,
            composition_derivative: None,
            conditions: None,
            error: Some("no tangency of the extremal maps or their compositions in the bracket".into()),
        });
    };

    // The tangency fixed point exists on the side with more fixed points.
    let map_for = |a: f64| -> ScalarMap {
        let (_, m) = candidates.iter().find(|(n, _)| *n == name).unwrap();
        m(a)
    };
    let count = |a: f64| fixed_points(&map_for(a), domain, opts.tol).map(|v| v.len()).unwrap_or(0);
    let exists_above = count(grid_hi) > count(grid_lo);
    let direction = if exists_above { -1.0 } else { 1.0 };
    let more_side = if exists_above { &s_hi } else { &s_lo };

    // Component of M whose boundary meets the tangency point, with that
    // boundary moved onto it; composition tangencies act through f⁻ or f⁺ of
    // a point in the cycle, so the nearest endpoint is used either way.
    let pair = family.pair(t.alpha)?;
    let comp = more_side
        .components()
        .iter()
        .min_by(|p, q| {
            let dp = (p.lo - t.x).abs().min((p.hi - t.x).abs());
            let dq = (q.lo - t.x).abs().min((q.hi - t.x).abs());
            dp.total_cmp(&dq)
        })
        .copied()
        .unwrap_or(Interval::point(t.x));
    let comp = if (comp.lo - t.x).abs() <= (comp.hi - t.x).abs() {
        Interval { lo: t.x, hi: comp.hi.max(t.x) }
    } else {
        Interval { lo: comp.lo.min(t.x), hi: t.x }
    };
    let (conditions, composition_derivative) = match kind {
        BifurcationKind::BoundarySaddleNode => {
            let b = if name == "f-" { Boundary::Lower } else { Boundary::Upper };
            let c = check_saddle_node_sufficient(family, t.alpha, t.x, b, direction, opts.h_alpha, opts.slope_tol).ok();
            (c, None)
        }
        _ => (None, Some(t.slope)),
    };
    Ok(BifurcationReport {
        alpha_star: t.alpha,
        kind,
        boundary_derivatives: boundary_derivatives(&pair, comp),
        hausdorff_jump: jump,
        bracket: (grid_lo, grid_hi),
        components_before: s_lo.len(),
        components_after: s_hi.len(),
        tangencies,
        composition_derivative,
        conditions,
        error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::super::examples::{doubling, linear, pitchfork};
    use super::super::invariant::minimal_invariant_sets_reversing;
    use super::*;

    fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        Interval { lo: a, hi: b }.linspace(n).collect()
    }

    fn half_pair() -> ExtremalPair {
        ExtremalPair::new(
            ScalarMap::new(|x| x / 2.0 - 1.0, |_| 0.5),
            ScalarMap::new(|x| x / 2.0 + 1.0, |_| 0.5),
            Interval { lo: -10.0, hi: 10.0 },
        )
        .unwrap()
    }

    #[test]
    fn linear_persistence() {
        let p = check_persistence(&half_pair(), Interval { lo: -2.0, hi: 2.0 }, 1e-6).unwrap();
        assert!(p.persistent);
        assert_eq!(p.derivatives, [0.5; 4]);
    }

    #[test]
    fn non_invariant_interval_rejected() {
        let r = check_persistence(&half_pair(), Interval { lo: -1.0, hi: 2.0 }, 1e-6);
        assert!(matches!(r, Err(SetValuedError::InvalidArgument(_))));
    }

    #[test]
    fn doubling_boundary_slopes_exceed_one() {
        let fam = doubling(0.015).unwrap();
        let pair = fam.pair(0.86).unwrap();
        let e = minimal_invariant_sets_reversing(&pair, fam.domain(), 1e-13).unwrap().union;
        assert_eq!(e.len(), 1);
        let p = check_persistence(&pair, e.components()[0], 1e-6).unwrap();
        assert!(!p.persistent);
        assert!(p.derivatives[2] > 1.0 && p.derivatives[3] > 1.0, "{p:?}");
    }

    #[test]
    fn linear_map_fails_slope_condition() {
        let m = ParamMap::new(|a, x| 0.5 * x + a, |_, _| 0.5).with_second(|_, _| 0.0);
        let c = scalar_saddle_node_test(&m, 0.3, 0.6, 1.0, 1e-6, 1e-6).unwrap();
        assert!(!c.slope_ok);
        assert!(!c.all());
    }

    #[test]
    fn classical_fold() {
        // f_α(x) = α + x + x² has fixed points ±√−α for α < 0 that merge at
        // (0, 0) and vanish for α > 0.
        let m = ParamMap::new(|a, x| a + x + x * x, |_, x| 1.0 + 2.0 * x).with_second(|_, _| 2.0);
        let c = scalar_saddle_node_test(&m, 0.0, 0.0, 1.0, 1e-6, 1e-9).unwrap();
        assert!(c.all(), "{c:?}");
        assert_eq!(c.curvature, 2.0);
        assert!((c.d_alpha - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cubic_fold_is_degenerate() {
        // α + x − x³ has f' = 1 only at x = 0 where f'' vanishes: no fold.
        let m = ParamMap::new(|a, x| a + x - x * x * x, |_, x| 1.0 - 3.0 * x * x)
            .with_second(|_, x| -6.0 * x);
        let c = scalar_saddle_node_test(&m, 0.0, 0.0, 1.0, 1e-6, 1e-9).unwrap();
        assert!(c.slope_ok && c.d_alpha_ok);
        assert!(!c.curvature_ok);
    }

    #[test]
    fn missing_second_derivative() {
        let fam = SetValuedFamily::from_extremal(
            "no-second",
            ParamMap::new(|a, x| 0.5 * x + a, |_, _| 0.5),
            ParamMap::new(|a, x| 0.5 * x + a + 1.0, |_, _| 0.5),
            (-1.0, 1.0),
            Interval { lo: -5.0, hi: 5.0 },
        )
        .unwrap();
        let r = check_saddle_node_sufficient(&fam, 0.0, 1.0, Boundary::Upper, 1.0, 1e-6, 1e-6);
        assert!(matches!(r, Err(SetValuedError::Capability(_))));
    }

    #[test]
    fn pitchfork_scan() {
        let fam = pitchfork(0.5).unwrap();
        let reps = bifurcation_scan(&fam, &grid(1.5, 4.0, 101), &ScanOptions::default()).unwrap();
        assert_eq!(reps.len(), 1, "{reps:#?}");
        let r = &reps[0];
        assert_eq!(r.kind, BifurcationKind::BoundarySaddleNode);
        assert_eq!((r.components_before, r.components_after), (1, 2));
        assert!(r.conditions.unwrap().all(), "{:?}", r.conditions);
        assert!(r.boundary_derivatives.iter().any(|&d| (d - 1.0).abs() < 1e-6));
    }

    #[test]
    fn doubling_scan() {
        let fam = doubling(0.015).unwrap();
        let reps = bifurcation_scan(&fam, &grid(0.8, 0.95, 61), &ScanOptions::default()).unwrap();
        assert_eq!(reps.len(), 1, "{reps:#?}");
        let r = &reps[0];
        assert_eq!(r.kind, BifurcationKind::CompositionSaddleNode);
        assert_eq!((r.components_before, r.components_after), (1, 2));
        assert!((r.composition_derivative.unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn linear_scan_is_quiet() {
        let fam = linear(0.5, 0.3).unwrap();
        let reps = bifurcation_scan(&fam, &grid(-2.0, 2.0, 41), &ScanOptions::default()).unwrap();
        assert!(reps.is_empty(), "{reps:#?}");
    }

    #[test]
    fn bad_grids() {
        let fam = linear(0.5, 0.3).unwrap();
        let o = ScanOptions::default();
        assert!(bifurcation_scan(&fam, &[0.0], &o).is_err());
        assert!(bifurcation_scan(&fam, &[0.0, -1.0], &o).is_err());
        assert!(bifurcation_scan(&fam, &[0.0, 20.0], &o).is_err());
    }
}

use serde::Serialize;

use super::roots::{bisect, fixed_points, FixedPoint};
use super::{hausdorff, ExtremalPair, Interval, IntervalUnion, ScalarMap, SetValuedError};

/// Derivative samples used to classify monotonicity on a region.
pub const MONOTONICITY_SAMPLES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    /// The derivative changes sign; the critical point is located by bisection.
    Neither { critical_point: f64 },
}

/// Sign of `g'` on `MONOTONICITY_SAMPLES` points of `region`.
pub fn is_monotone(g: &ScalarMap, region: Interval) -> Monotonicity {
    let xs: Vec<f64> = region.linspace(MONOTONICITY_SAMPLES).collect();
    let ds: Vec<f64> = xs.iter().map(|&x| g.deriv(x)).collect();
    if ds.iter().all(|&d| d > 0.0) {
        return Monotonicity::Increasing;
    }
    if ds.iter().all(|&d| d < 0.0) {
        return Monotonicity::Decreasing;
    }
    // Locate a sign change (or a zero sample) of the derivative.
    for i in 0..xs.len() {
        if ds[i] == 0.0 {
            return Monotonicity::Neither { critical_point: xs[i] };
        }
        if i + 1 < xs.len() && (ds[i] < 0.0) != (ds[i + 1] < 0.0) {
            return Monotonicity::Neither {
                critical_point: bisect(|x| g.deriv(x), xs[i], xs[i + 1]),
            };
        }
    }
    unreachable!("mixed signs imply a sign change")
}

fn require(pair: &ExtremalPair, region: Interval, want: Monotonicity) -> Result<(), SetValuedError> {
    for (name, g) in [("f⁻", pair.lower()), ("f⁺", pair.upper())] {
        let m = is_monotone(g, region);
        if m != want {
            let critical_point = match m {
                Monotonicity::Neither { critical_point } => Some(critical_point),
                _ => None,
            };
            let message = match critical_point {
                Some(c) => format!("{name} is not monotone on {region}: critical point at x = {c}"),
                None => format!("{name} is {m:?} on {region}, expected {want:?}"),
            };
            return Err(SetValuedError::PreconditionViolation {
                message,
                critical_point,
            });
        }
    }
    Ok(())
}

/// Minimal invariant sets of a pair of increasing extremal maps.
///
/// Each attracting fixed point `e₁` of `f⁻` is paired with the smallest
/// attracting fixed point `e₂ ≥ e₁` of `f⁺`. `[e₁, e₂]` is forward invariant
/// because `f⁻(e₁) = e₁` and `f⁺(e₂) = e₂`, and it is minimal exactly when
/// `f⁻` has no fixed point in `(e₁, e₂]` and `f⁺` none in `[e₁, e₂)`.
pub fn minimal_invariant_sets_monotone(
    pair: &ExtremalPair,
    domain: Interval,
    tol: f64,
) -> Result<IntervalUnion, SetValuedError> {
    require(pair, domain, Monotonicity::Increasing)?;
    let lower = fixed_points(pair.lower(), domain, tol)?;
    let upper = fixed_points(pair.upper(), domain, tol)?;
    let attracting = |v: &[FixedPoint]| -> Vec<f64> {
        v.iter().filter(|p| p.is_attracting()).map(|p| p.x).collect()
    };
    let (la, ua) = (attracting(&lower), attracting(&upper));
    if la.is_empty() || ua.is_empty() {
        return Err(SetValuedError::NotFound(format!(
            "no attracting fixed point of {} in {domain}",
            if la.is_empty() { "f⁻" } else { "f⁺" }
        )));
    }
    let mut comps = Vec::new();
    for &e1 in &la {
        let Some(&e2) = ua.iter().find(|&&b| b >= e1) else {
            continue;
        };
        let lower_inside = lower.iter().any(|p| p.x > e1 && p.x <= e2);
        let upper_inside = upper.iter().any(|p| p.x >= e1 && p.x < e2);
        if !lower_inside && !upper_inside {
            comps.push(Interval { lo: e1, hi: e2 });
        }
    }
    if comps.is_empty() {
        return Err(SetValuedError::NotFound(
            "no minimal invariant interval between attracting fixed points".into(),
        ));
    }
    Ok(IntervalUnion::from_intervals(comps))
}

/// Minimal invariant sets of decreasing extremal maps, with `F`'s action on
/// the components: `cycle[i]` is the index of the component containing
/// `F(component i)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReversingSets {
    pub union: IntervalUnion,
    pub cycle: Vec<usize>,
}

fn decreasing_image(pair: &ExtremalPair, iv: Interval) -> Interval {
    Interval {
        lo: pair.lower().eval(iv.hi),
        hi: pair.upper().eval(iv.lo),
    }
}

/// Minimal invariant sets of a pair of extremal maps that are decreasing on
/// the invariant region.
///
/// Boundary points are attracting fixed points of `f⁻∘f⁺` (left ends) and
/// `f⁺∘f⁻` (right ends). One of each gives a single interval; two of each
/// give a two-cycle of intervals.
pub fn minimal_invariant_sets_reversing(
    pair: &ExtremalPair,
    domain: Interval,
    tol: f64,
) -> Result<ReversingSets, SetValuedError> {
    let lo_fp: Vec<f64> = fixed_points(&pair.lower_after_upper(), domain, tol)?
        .into_iter()
        .filter(FixedPoint::is_attracting)
        .map(|p| p.x)
        .collect();
    let hi_fp: Vec<f64> = fixed_points(&pair.upper_after_lower(), domain, tol)?
        .into_iter()
        .filter(FixedPoint::is_attracting)
        .map(|p| p.x)
        .collect();
    if lo_fp.is_empty() || hi_fp.is_empty() {
        return Err(SetValuedError::NotFound(
            "no attracting fixed point of the compositions".into(),
        ));
    }
    let hull = Interval {
        lo: lo_fp[0].min(hi_fp[0]),
        hi: lo_fp[lo_fp.len() - 1].max(hi_fp[hi_fp.len() - 1]),
    };
    require(pair, hull, Monotonicity::Decreasing)?;

    let comps: Vec<Interval> = match (lo_fp.len(), hi_fp.len()) {
        (1, 1) => vec![Interval {
            lo: lo_fp[0],
            hi: hi_fp[0],
        }],
        (2, 2) => vec![
            Interval {
                lo: lo_fp[0],
                hi: hi_fp[0],
            },
            Interval {
                lo: lo_fp[1],
                hi: hi_fp[1],
            },
        ],
        (a, b) => {
            return Err(SetValuedError::NotFound(format!(
                "unsupported fixed-point structure ({a} left ends, {b} right ends)"
            )))
        }
    };
    if comps.iter().any(|c| c.lo > c.hi) {
        return Err(SetValuedError::NotFound(
            "composition fixed points do not bound an interval".into(),
        ));
    }
    let slack = 1e3 * tol.max(1e-12);
    let mut cycle = Vec::with_capacity(comps.len());
    for c in &comps {
        let img = decreasing_image(pair, *c);
        let target = comps
            .iter()
            .position(|d| hausdorff(&IntervalUnion::single(img), &IntervalUnion::single(*d)).unwrap() <= slack)
            .ok_or_else(|| SetValuedError::NotFound(format!("F({c}) = {img} is not a component")))?;
        cycle.push(target);
    }
    let union = IntervalUnion::from_intervals(comps);
    Ok(ReversingSets { union, cycle })
}

/// Minimal invariant sets by whichever constructor applies: the monotone one
/// when both extremal maps increase on the domain, the reversing one
/// otherwise, and the grid oracle as a last resort (seeded at the attracting
/// fixed points of `f⁻` and of `f⁺∘f⁻`).
pub fn minimal_invariant_sets(
    pair: &ExtremalPair,
    domain: Interval,
    tol: f64,
) -> Result<IntervalUnion, SetValuedError> {
    let inc = is_monotone(pair.lower(), domain) == Monotonicity::Increasing
        && is_monotone(pair.upper(), domain) == Monotonicity::Increasing;
    if inc {
        return minimal_invariant_sets_monotone(pair, domain, tol);
    }
    match minimal_invariant_sets_reversing(pair, domain, tol) {
        Ok(r) => Ok(r.union),
        Err(SetValuedError::PreconditionViolation { .. }) | Err(SetValuedError::NotFound(_)) => {
            let mut seeds: Vec<f64> = fixed_points(pair.lower(), domain, tol)?
                .into_iter()
                .chain(fixed_points(&pair.upper_after_lower(), domain, tol)?)
                .filter(FixedPoint::is_attracting)
                .map(|p| p.x)
                .collect();
            if seeds.is_empty() {
                seeds.push(domain.mid());
            }
            let opts = OracleOptions::default();
            let mut out = IntervalUnion::empty();
            for s in seeds {
                let r = set_iterate_oracle(pair, Interval::point(s), domain, &opts)?;
                out = out.union(&r);
            }
            Ok(out)
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleOptions {
    pub grid_n: usize,
    pub max_iter: usize,
    /// Successive iterates closer than this in Hausdorff distance stop the
    /// iteration.
    pub tol: f64,
    /// Longest cycle of grid sets recognised as a limit.
    pub max_period: usize,
    /// Cells added on each side of the first limit before iterating again.
    pub pad: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            grid_n: 4096,
            max_iter: 100_000,
            tol: 0.0,
            max_period: 4,
            pad: 16,
        }
    }
}

/// Grid of cell centres with a boolean membership mask.
struct Grid {
    lo: f64,
    h: f64,
    n: usize,
}

impl Grid {
    fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.h
    }

    /// Indices of the centres inside `[a, b]`.
    fn span(&self, a: f64, b: f64) -> Option<(usize, usize)> {
        let first = ((a - self.lo) / self.h - 0.5).ceil().max(0.0);
        let last = ((b - self.lo) / self.h - 0.5).floor().min((self.n - 1) as f64);
        (first <= last).then(|| (first as usize, last as usize))
    }

    fn to_union(&self, mask: &[bool]) -> IntervalUnion {
        let mut comps = Vec::new();
        let mut i = 0;
        while i < self.n {
            if mask[i] {
                let start = i;
                while i + 1 < self.n && mask[i + 1] {
                    i += 1;
                }
                comps.push(Interval {
                    lo: self.center(start),
                    hi: self.center(i),
                });
            }
            i += 1;
        }
        // Runs are separated by at least one empty cell, so no merging occurs.
        IntervalUnion::from_intervals(comps)
    }
}

/// Brute-force forward iteration `S ↦ ⋃_{x∈S} [f⁻(x), f⁺(x)]` of a set
/// represented by the cell centres of a uniform grid over `domain`.
///
/// Stops when an iterate repeats with period at most `max_period` (the
/// union of the cycle is returned) or moves less than `tol`. An image
/// leaving `domain` counts as non-convergence.
pub fn set_iterate_oracle(
    pair: &ExtremalPair,
    seed: Interval,
    domain: Interval,
    opts: &OracleOptions,
) -> Result<IntervalUnion, SetValuedError> {
    if opts.grid_n < 1000 {
        return Err(SetValuedError::InvalidArgument(format!(
            "oracle grid needs at least 1000 points, got {}",
            opts.grid_n
        )));
    }
    if !seed.is_subset_of(&domain, 0.0) {
        return Err(SetValuedError::InvalidArgument(format!(
            "seed {seed} is not inside {domain}"
        )));
    }
    let grid = Grid {
        lo: domain.lo,
        h: domain.len() / opts.grid_n as f64,
        n: opts.grid_n,
    };
    let lower: Vec<f64> = (0..grid.n).map(|i| pair.lower().eval(grid.center(i))).collect();
    let upper: Vec<f64> = (0..grid.n).map(|i| pair.upper().eval(grid.center(i))).collect();

    let mut mask = vec![false; grid.n];
    match grid.span(seed.lo, seed.hi) {
        Some((a, b)) => mask[a..=b].iter_mut().for_each(|m| *m = true),
        None => {
            let i = (((seed.mid() - grid.lo) / grid.h) as usize).min(grid.n - 1);
            mask[i] = true;
        }
    }
    let first = iterate_mask(&grid, &lower, &upper, domain, mask, opts)?;
    // Growing from inside stalls up to h/(1 − slope) short of each boundary;
    // iterating again from a padded limit approaches it from outside, where
    // rounding to cell centres stops within one cell.
    let mut padded = vec![false; grid.n];
    for i in (0..grid.n).filter(|&i| first[i]) {
        let a = i.saturating_sub(opts.pad);
        let b = (i + opts.pad).min(grid.n - 1);
        padded[a..=b].iter_mut().for_each(|m| *m = true);
    }
    let second = iterate_mask(&grid, &lower, &upper, domain, padded, opts)?;
    Ok(grid.to_union(&second))
}

fn iterate_mask(
    grid: &Grid,
    lower: &[f64],
    upper: &[f64],
    domain: Interval,
    mut mask: Vec<bool>,
    opts: &OracleOptions,
) -> Result<Vec<bool>, SetValuedError> {
    let mut history: Vec<Vec<bool>> = vec![mask.clone()];
    let mut last_distance = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let mut diff = vec![0i32; grid.n + 1];
        let mut escaped = false;
        for i in (0..grid.n).filter(|&i| mask[i]) {
            let (a, b) = (lower[i], upper[i]);
            if a < domain.lo || b > domain.hi || !a.is_finite() || !b.is_finite() {
                escaped = true;
                continue;
            }
            if let Some((p, q)) = grid.span(a, b) {
                diff[p] += 1;
                diff[q + 1] -= 1;
            }
        }
        let mut next = vec![false; grid.n];
        let mut acc = 0;
        for i in 0..grid.n {
            acc += diff[i];
            next[i] = acc > 0;
        }
        if next.iter().all(|m| !m) {
            return Err(SetValuedError::ConvergenceFailure {
                iterations: it,
                last_distance,
            });
        }
        last_distance = hausdorff(&grid.to_union(&next), &grid.to_union(&mask)).unwrap();
        if escaped {
            return Err(SetValuedError::ConvergenceFailure {
                iterations: it,
                last_distance,
            });
        }
        if last_distance < opts.tol {
            return Ok(next);
        }
        if let Some(p) = (1..=opts.max_period.min(history.len()))
            .find(|&p| history[history.len() - p] == next)
        {
            let mut all = next.clone();
            for h in &history[history.len() - p..] {
                all.iter_mut().zip(h).for_each(|(a, &b)| *a |= b);
            }
            return Ok(all);
        }
        history.push(next.clone());
        if history.len() > opts.max_period {
            history.remove(0);
        }
        mask = next;
    }
    Err(SetValuedError::ConvergenceFailure {
        iterations: opts.max_iter,
        last_distance,
    })
}

/// `F(S)` sampled on `n` points per component of `S`.
pub fn image_of_set(pair: &ExtremalPair, set: &IntervalUnion, n: usize) -> IntervalUnion {
    IntervalUnion::from_intervals(
        set.components()
            .iter()
            .flat_map(|c| c.linspace(n).collect::<Vec<_>>())
            .map(|x| pair.image(x)),
    )
}

#[cfg(test)]
mod tests {
    use super::super::examples::{doubling, pitchfork};
    use super::*;

    fn iv(a: f64, b: f64) -> Interval {
        Interval::new(a, b).unwrap()
    }

    fn half_pair() -> ExtremalPair {
        ExtremalPair::new(
            ScalarMap::new(|x| x / 2.0 - 1.0, |_| 0.5),
            ScalarMap::new(|x| x / 2.0 + 1.0, |_| 0.5),
            iv(-10.0, 10.0),
        )
        .unwrap()
    }

    #[test]
    fn linear_monotone_set() {
        let e = minimal_invariant_sets_monotone(&half_pair(), iv(-10.0, 10.0), 1e-12).unwrap();
        assert_eq!(e.len(), 1);
        let c = e.components()[0];
        assert!((c.lo + 2.0).abs() < 1e-12 && (c.hi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_linear_contraction() {
        let opts = OracleOptions::default();
        let e = set_iterate_oracle(&half_pair(), iv(0.0, 0.1), iv(-10.0, 10.0), &opts).unwrap();
        let cell = 20.0 / opts.grid_n as f64;
        assert_eq!(e.len(), 1);
        let c = e.components()[0];
        assert!((c.lo + 2.0).abs() <= 2.0 * cell && (c.hi - 2.0).abs() <= 2.0 * cell, "{c}");
    }

    #[test]
    fn oracle_reports_escape() {
        let pair = ExtremalPair::new(
            ScalarMap::new(|x| 2.0 * x, |_| 2.0),
            ScalarMap::new(|x| 2.0 * x + 0.1, |_| 2.0),
            iv(-10.0, 10.0),
        )
        .unwrap();
        let r = set_iterate_oracle(&pair, iv(1.0, 1.1), iv(-10.0, 10.0), &OracleOptions::default());
        assert!(matches!(r, Err(SetValuedError::ConvergenceFailure { .. })), "{r:?}");
    }

    #[test]
    fn oracle_rejects_coarse_grid() {
        let opts = OracleOptions {
            grid_n: 100,
            ..Default::default()
        };
        assert!(set_iterate_oracle(&half_pair(), iv(0.0, 0.1), iv(-10.0, 10.0), &opts).is_err());
    }

    #[test]
    fn pitchfork_regimes() {
        let fam = pitchfork(0.5).unwrap();
        let d = fam.domain();
        let two = minimal_invariant_sets_monotone(&fam.pair(4.0).unwrap(), d, 1e-12).unwrap();
        assert_eq!(two.len(), 2, "{two}");
        // Symmetric under x ↦ −x.
        let (a, b) = (two.components()[0], two.components()[1]);
        assert!((a.lo + b.hi).abs() < 1e-9 && (a.hi + b.lo).abs() < 1e-9);
        let one = minimal_invariant_sets_monotone(&fam.pair(2.0).unwrap(), d, 1e-12).unwrap();
        assert_eq!(one.len(), 1, "{one}");
    }

    #[test]
    fn pitchfork_agrees_with_oracle() {
        let fam = pitchfork(0.5).unwrap();
        let d = fam.domain();
        let opts = OracleOptions::default();
        let cell = d.len() / opts.grid_n as f64;
        for alpha in [2.0, 4.0] {
            let pair = fam.pair(alpha).unwrap();
            let sets = minimal_invariant_sets_monotone(&pair, d, 1e-12).unwrap();
            for c in sets.components() {
                let o = set_iterate_oracle(&pair, Interval::point(c.mid()), d, &opts).unwrap();
                let h = hausdorff(&o, &IntervalUnion::single(*c)).unwrap();
                assert!(h <= 2.0 * cell, "α={alpha} {c} vs {o}: {h}");
            }
        }
    }

    #[test]
    fn doubling_regimes() {
        let fam = doubling(0.015).unwrap();
        let d = fam.domain();
        let one = minimal_invariant_sets_reversing(&fam.pair(0.85).unwrap(), d, 1e-13).unwrap();
        assert_eq!(one.union.len(), 1);
        assert_eq!(one.cycle, vec![0]);
        let two = minimal_invariant_sets_reversing(&fam.pair(0.8664).unwrap(), d, 1e-13).unwrap();
        assert_eq!(two.union.len(), 2, "{}", two.union);
        assert_eq!(two.cycle, vec![1, 0]);
        let c = two.union.components();
        assert!((c[0].lo - 0.088).abs() < 2e-3 && (c[0].hi - 0.338).abs() < 2e-3, "{}", two.union);
        assert!((c[1].lo - 0.737).abs() < 2e-3 && (c[1].hi - 0.874).abs() < 2e-3, "{}", two.union);
    }

    #[test]
    fn doubling_agrees_with_oracle() {
        let fam = doubling(0.015).unwrap();
        let d = fam.domain();
        let opts = OracleOptions {
            grid_n: 20_000,
            ..Default::default()
        };
        let cell = d.len() / opts.grid_n as f64;
        for alpha in [0.8, 0.87, 0.9] {
            let pair = fam.pair(alpha).unwrap();
            let r = minimal_invariant_sets_reversing(&pair, d, 1e-13).unwrap();
            let seed = Interval::point(r.union.components()[0].mid());
            let o = set_iterate_oracle(&pair, seed, d, &opts).unwrap();
            // Each boundary moves by a two-step composition whose rounding
            // errors add up, and its slope is close to one near the
            // bifurcation, so allow more cells than for contractions.
            let h = hausdorff(&o, &r.union).unwrap();
            assert!(h <= 10.0 * cell, "α={alpha}: {} vs {o}: {h}", r.union);
        }
    }

    #[test]
    fn critical_point_inside_is_reported() {
        let fam = doubling(0.3).unwrap();
        let r = minimal_invariant_sets_reversing(&fam.pair(0.5).unwrap(), fam.domain(), 1e-13);
        match r {
            Err(SetValuedError::PreconditionViolation { critical_point, .. }) => {
                assert!(critical_point.unwrap().abs() < 1e-12)
            }
            other => panic!("{other:?}"),
        }
        // The oracle confirms that 0 lies in the invariant set.
        let o = set_iterate_oracle(
            &fam.pair(0.5).unwrap(),
            Interval::point(0.4),
            fam.domain(),
            &OracleOptions::default(),
        )
        .unwrap();
        assert!(o.contains(0.0) || o.dist(0.0) < 1e-3, "{o}");
    }

    #[test]
    fn returned_sets_are_invariant() {
        let fam = pitchfork(0.5).unwrap();
        let pair = fam.pair(4.0).unwrap();
        let e = minimal_invariant_sets_monotone(&pair, fam.domain(), 1e-12).unwrap();
        assert!(hausdorff(&image_of_set(&pair, &e, 4001), &e).unwrap() <= 1e-9);
        let fam = doubling(0.015).unwrap();
        let pair = fam.pair(0.9).unwrap();
        let e = minimal_invariant_sets_reversing(&pair, fam.domain(), 1e-13).unwrap().union;
        assert!(hausdorff(&image_of_set(&pair, &e, 4001), &e).unwrap() <= 1e-9);
    }

    #[test]
    fn dispatcher_picks_constructor() {
        let fam = doubling(0.015).unwrap();
        let e = minimal_invariant_sets(&fam.pair(0.9).unwrap(), fam.domain(), 1e-13).unwrap();
        assert_eq!(e.len(), 2);
        let fam = pitchfork(0.5).unwrap();
        let e = minimal_invariant_sets(&fam.pair(4.0).unwrap(), fam.domain(), 1e-12).unwrap();
        assert_eq!(e.len(), 2);
    }
}

//! Parameter sweeps over λ: invariant sets, boundary derivatives and the
//! deterministic fixed-point slope.

use super::{
    deterministic_return, return_map_sample, KoperConfig, KoperError, ReturnCloud, SectionSpec, STREAM_DERIV,
};
use crate::estimator::{DerivativeEstimate, WindowPolicy};
use crate::rdsim::TimeSeries;
use crate::setvalued::{hausdorff, Interval, IntervalUnion};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitOptions {
    pub z0: f64,
    /// Recorded returns after burn-in.
    pub length: usize,
    pub burn_in: usize,
    /// Sorted orbit points further apart than this start a new component.
    pub split_gap: f64,
    /// Early returns tolerated per orbit step before giving up.
    pub max_retries: usize,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self { z0: -8.06, length: 580, burn_in: 20, split_gap: 0.05, max_retries: 10 }
    }
}

/// A stochastic return-map orbit; return `j` (counting retries) draws from
/// stream `j`. Early returns are discarded and redrawn.
pub fn orbit(cfg: &KoperConfig, section: &SectionSpec, opts: &OrbitOptions) -> Result<(Vec<f64>, usize), KoperError> {
    cfg.validate()?;
    section.validate()?;
    if opts.length == 0 {
        return Err(KoperError::InvalidArgument("orbit length must be positive".into()));
    }
    let mut z = opts.z0;
    let mut out = Vec::with_capacity(opts.length);
    let mut stream = 0u64;
    let mut early = 0usize;
    for i in 0..opts.burn_in + opts.length {
        let mut retries = 0;
        let s = loop {
            let s = return_map_sample(z, cfg, section, None, stream)?;
            stream += 1;
            if !s.early_return {
                break s;
            }
            early += 1;
            retries += 1;
            if retries > opts.max_retries {
                return Err(KoperError::TooManyFailures { ok: i, total: opts.burn_in + opts.length });
            }
        };
        z = s.z_out;
        if i >= opts.burn_in {
            out.push(z);
        }
    }
    Ok((out, early))
}

/// Empirical support of `samples` split at gaps wider than `split_gap`.
pub fn support_components(samples: &[f64], split_gap: f64) -> IntervalUnion {
    let mut xs: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    xs.sort_by(f64::total_cmp);
    let mut comps = Vec::new();
    let Some(&first) = xs.first() else {
        return IntervalUnion::empty();
    };
    let (mut lo, mut hi) = (first, first);
    for &x in &xs[1..] {
        if x - hi > split_gap {
            comps.push(Interval { lo, hi });
            lo = x;
        }
        hi = x;
    }
    comps.push(Interval { lo, hi });
    IntervalUnion::from_intervals(comps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub support: Option<IntervalUnion>,
    /// Hausdorff distance to the previous successful row.
    pub hausdorff_step: Option<f64>,
    pub early_returns: usize,
    pub error: Option<String>,
    #[serde(skip)]
    pub orbit: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpInfo {
    pub lambda_before: f64,
    pub lambda_after: f64,
    pub step: f64,
    pub median_step: f64,
}

impl JumpInfo {
    pub fn location(&self) -> f64 {
        0.5 * (self.lambda_before + self.lambda_after)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantSweep {
    pub rows: Vec<SweepRow>,
    /// Largest Hausdorff step, if it exceeds `jump_factor` times the median.
    pub jump: Option<JumpInfo>,
}

/// Long noisy orbits for every λ, their supports, and the discontinuity.
///
/// Every λ uses the same noise streams, so consecutive supports differ only
/// through the dynamics.
pub fn invariant_set_sweep(
    cfg: &KoperConfig,
    section: &SectionSpec,
    lambdas: &[f64],
    opts: &OrbitOptions,
    jump_factor: f64,
) -> Result<InvariantSweep, KoperError> {
    cfg.validate()?;
    section.validate()?;
    if lambdas.len() < 2 {
        return Err(KoperError::InvalidArgument("a sweep needs at least two values of lambda".into()));
    }
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let mut rows: Vec<SweepRow> = lambdas
        .par_iter()
        .map(|&lambda| match orbit(&cfg.with_lambda(lambda), section, opts) {
            Ok((zs, early)) => SweepRow {
                lambda,
                support: Some(support_components(&zs, opts.split_gap)),
                hausdorff_step: None,
                early_returns: early,
                error: None,
                orbit: zs,
            },
            Err(e) => SweepRow {
                lambda,
                support: None,
                hausdorff_step: None,
                early_returns: 0,
                error: Some(e.to_string()),
                orbit: Vec::new(),
            },
        })
        .collect();

    let mut prev: Option<usize> = None;
    let mut steps = Vec::new();
    for i in 0..rows.len() {
        let Some(cur) = rows[i].support.clone() else { continue };
        if let Some(p) = prev {
            let d = hausdorff(rows[p].support.as_ref().unwrap(), &cur).expect("non-empty supports");
            rows[i].hausdorff_step = Some(d);
            steps.push((p, i, d));
        }
        prev = Some(i);
    }
    let jump = if steps.is_empty() {
        None
    } else {
        let mut ds: Vec<f64> = steps.iter().map(|s| s.2).collect();
        ds.sort_by(f64::total_cmp);
        let median = ds[ds.len() / 2];
        let &(p, i, d) = steps.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
        (d > jump_factor * median).then(|| JumpInfo {
            lambda_before: rows[p].lambda,
            lambda_after: rows[i].lambda,
            step: d,
            median_step: median,
        })
    };
    Ok(InvariantSweep { rows, jump })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeRow {
    pub lambda: f64,
    /// Lower boundary `m_λ` of the reconstructed invariant set.
    pub m: Option<f64>,
    pub d_lambda: Option<f64>,
    /// Realization pairs that produced two regular returns.
    pub n_used: usize,
    /// Additive estimator on the orbit data.
    pub cross_check: Option<DerivativeEstimate>,
    pub error: Option<String>,
}

impl DerivativeRow {
    /// Whether `d_λ` and the data-driven estimate agree within `3·se` of the
    /// latter plus `tol`.
    pub fn agrees(&self, tol: f64) -> Option<bool> {
        let (d, e) = (self.d_lambda?, self.cross_check.as_ref()?);
        Some((d - e.d).abs() <= 3.0 * e.se + tol)
    }
}

/// `d_λ = (minᵢ wᵢ − minᵢ zᵢ)/eps_fd` with `zᵢ`, `wᵢ` the returns of
/// `m_λ` and `m_λ + eps_fd` under the same noise realization `i`.
pub fn boundary_derivative(
    cfg: &KoperConfig,
    section: &SectionSpec,
    m: f64,
    n_real: usize,
    eps_fd: f64,
) -> Result<(f64, usize), KoperError> {
    if n_real == 0 || !(eps_fd > 0.0) {
        return Err(KoperError::InvalidArgument("need n_real >= 1 and eps_fd > 0".into()));
    }
    let pairs: Vec<Option<(f64, f64)>> = (0..n_real as u64)
        .into_par_iter()
        .map(|i| {
            let z = return_map_sample(m, cfg, section, None, STREAM_DERIV + i).ok()?;
            let w = return_map_sample(m + eps_fd, cfg, section, None, STREAM_DERIV + i).ok()?;
            (!z.early_return && !w.early_return).then_some((z.z_out, w.z_out))
        })
        .collect();
    let used: Vec<(f64, f64)> = pairs.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(KoperError::TooManyFailures { ok: 0, total: n_real });
    }
    let zmin = used.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let wmin = used.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok(((wmin - zmin) / eps_fd, used.len()))
}

/// [`boundary_derivative`] at the lower boundary of every sweep row, plus
/// the data-only additive estimate on the same orbit.
pub fn boundary_derivative_sweep(
    cfg: &KoperConfig,
    section: &SectionSpec,
    sweep: &InvariantSweep,
    n_real: usize,
    eps_fd: f64,
    policy: &WindowPolicy,
) -> Vec<DerivativeRow> {
    sweep
        .rows
        .iter()
        .map(|row| {
            let m = row.support.as_ref().and_then(|s| s.hull()).map(|h| h.lo);
            let Some(m) = m else {
                return DerivativeRow {
                    lambda: row.lambda,
                    m: None,
                    d_lambda: None,
                    n_used: 0,
                    cross_check: None,
                    error: Some(format!("no boundary: {}", row.error.as_deref().unwrap_or("empty support"))),
                };
            };
            let cross_check =
                TimeSeries::from_samples(row.orbit.clone()).ok().and_then(|s| policy.estimate(&s).ok());
            match boundary_derivative(&cfg.with_lambda(row.lambda), section, m, n_real, eps_fd) {
                Ok((d, n_used)) => {
                    DerivativeRow { lambda: row.lambda, m: Some(m), d_lambda: Some(d), n_used, cross_check, error: None }
                }
                Err(e) => DerivativeRow {
                    lambda: row.lambda,
                    m: Some(m),
                    d_lambda: None,
                    n_used: 0,
                    cross_check,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// deterministic map

/// Default finite-difference step for `p_λ'`.
pub const FD_H: f64 = 1e-4;

/// Central differences of `p_λ` at `z` with steps `h` and `h/2`, and the
/// Richardson extrapolation `(4·D(h/2) − D(h))/3`.
pub fn return_map_derivative(
    cfg: &KoperConfig,
    section: &SectionSpec,
    z: f64,
    h: f64,
) -> Result<(f64, f64, f64), KoperError> {
    let p = |z| deterministic_return(z, cfg, section);
    let d1 = (p(z + h)? - p(z - h)?) / (2.0 * h);
    let d2 = (p(z + h / 2.0)? - p(z - h / 2.0)?) / h;
    Ok((d1, d2, (4.0 * d2 - d1) / 3.0))
}

/// Fixed points of `p_λ` in the section's `z_range`: sign changes of
/// `p(z) − z` on an `n_grid` grid, bisected to `tol`. Sign changes across
/// return failures are skipped. Returns `(z*, p'(z*))` pairs.
pub fn fixed_points_of_return_map(
    cfg: &KoperConfig,
    section: &SectionSpec,
    n_grid: usize,
    tol: f64,
) -> Result<Vec<(f64, f64)>, KoperError> {
    let (a, b) = section.z_range;
    let n_grid = n_grid.max(3);
    let zs: Vec<f64> = (0..n_grid).map(|i| a + (b - a) * i as f64 / (n_grid - 1) as f64).collect();
    let h: Vec<Option<f64>> =
        zs.par_iter().map(|&z| deterministic_return(z, cfg, section).ok().map(|p| p - z)).collect();
    let mut out = Vec::new();
    for i in 0..n_grid - 1 {
        let (Some(ha), Some(hb)) = (h[i], h[i + 1]) else { continue };
        if ha == 0.0 {
            out.push(zs[i]);
            continue;
        }
        if ha * hb >= 0.0 {
            continue;
        }
        let (mut lo, mut hi, mut hlo) = (zs[i], zs[i + 1], ha);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let hm = deterministic_return(mid, cfg, section)? - mid;
            if hm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if (hm < 0.0) == (hlo < 0.0) {
                lo = mid;
                hlo = hm;
            } else {
                hi = mid;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    out.into_iter()
        .map(|z| Ok((z, return_map_derivative(cfg, section, z, FD_H)?.2)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeterministicDerivative {
    pub lambda: f64,
    pub z_star: f64,
    /// `|p(z*) − z*|`.
    pub residual: f64,
    pub slope_h: f64,
    pub slope_half: f64,
    pub slope: f64,
    /// The fixed point had vanished; `z_star` is the last one found.
    pub frozen: bool,
}

const FIXED_GRID: usize = 81;

/// Attracting fixed point of `p_λ` (σ forced to 0) and the Richardson-extrapolated slope there.
pub fn deterministic_derivative_at_fixed_point(
    cfg: &KoperConfig,
    section: &SectionSpec,
    tol: f64,
) -> Result<DeterministicDerivative, KoperError> {
    let det = cfg.deterministic();
    det.validate()?;
    section.validate()?;
    let fps = fixed_points_of_return_map(&det, section, FIXED_GRID, tol)?;
    let (z, _) = fps
        .into_iter()
        .filter(|(_, s)| s.abs() < 1.0)
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .ok_or_else(|| KoperError::NotFound(format!("no attracting fixed point at lambda = {}", cfg.lambda)))?;
    derivative_at(&det, section, z, false)
}

fn derivative_at(det: &KoperConfig, section: &SectionSpec, z: f64, frozen: bool) -> Result<DeterministicDerivative, KoperError> {
    let (d1, d2, r) = return_map_derivative(det, section, z, FD_H)?;
    Ok(DeterministicDerivative {
        lambda: det.lambda,
        z_star: z,
        residual: (deterministic_return(z, det, section)? - z).abs(),
        slope_h: d1,
        slope_half: d2,
        slope: r,
        frozen,
    })
}

/// [`deterministic_derivative_at_fixed_point`] over increasing λ; once the
/// fixed point is gone the slope is taken at the last fixed point found.
pub fn deterministic_derivative_sweep(
    cfg: &KoperConfig,
    section: &SectionSpec,
    lambdas: &[f64],
    tol: f64,
) -> Vec<Result<DeterministicDerivative, KoperError>> {
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let found: Vec<_> = lambdas
        .par_iter()
        .map(|&l| deterministic_derivative_at_fixed_point(&cfg.with_lambda(l), section, tol))
        .collect();
    let mut last: Option<f64> = None;
    found
        .into_iter()
        .zip(&lambdas)
        .map(|(r, &l)| match r {
            Ok(d) => {
                last = Some(d.z_star);
                Ok(d)
            }
            Err(KoperError::NotFound(msg)) => match last {
                Some(z) => derivative_at(&cfg.with_lambda(l).deterministic(), section, z, true),
                None => Err(KoperError::NotFound(msg)),
            },
            Err(e) => Err(e),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtCheck {
    pub dt: f64,
    pub at_dt: DeterministicDerivative,
    pub at_half: DeterministicDerivative,
}

impl DtCheck {
    pub fn z_change(&self) -> f64 {
        (self.at_dt.z_star - self.at_half.z_star).abs()
    }

    pub fn slope_change(&self) -> f64 {
        (self.at_dt.slope - self.at_half.slope).abs()
    }
}

/// Fixed point and slope at `dt` and `dt/2`.
pub fn dt_convergence_check(cfg: &KoperConfig, section: &SectionSpec, tol: f64) -> Result<DtCheck, KoperError> {
    let at_dt = deterministic_derivative_at_fixed_point(cfg, section, tol)?;
    let half = KoperConfig { dt: cfg.dt / 2.0, ..*cfg };
    let at_half = deterministic_derivative_at_fixed_point(&half, section, tol)?;
    Ok(DtCheck { dt: cfg.dt, at_dt, at_half })
}

// ---------------------------------------------------------------------------
// CSV

/// Columns `lambda,z_in,z_out,steps,early_flag`.
pub fn write_cloud_csv<W: Write>(w: &mut W, clouds: &[ReturnCloud]) -> std::io::Result<()> {
    writeln!(w, "lambda,z_in,z_out,steps,early_flag")?;
    for c in clouds {
        for s in c.samples() {
            writeln!(w, "{:?},{:?},{:?},{},{}", c.lambda, s.z_in, s.z_out, s.steps, s.early_return as u8)?;
        }
    }
    Ok(())
}

/// Columns `lambda,comp_count,lo_1,hi_1,…,lo_K,hi_K,hausdorff_step`, with
/// `K` the largest component count; missing cells are empty.
pub fn write_sweep_csv<W: Write>(w: &mut W, sweep: &InvariantSweep) -> std::io::Result<()> {
    let kmax = sweep.rows.iter().filter_map(|r| r.support.as_ref()).map(|s| s.len()).max().unwrap_or(1).max(1);
    let mut head = vec!["lambda".to_string(), "comp_count".to_string()];
    for i in 1..=kmax {
        head.push(format!("lo_{i}"));
        head.push(format!("hi_{i}"));
    }
    head.push("hausdorff_step".into());
    writeln!(w, "{}", head.join(","))?;
    for r in &sweep.rows {
        let mut cells = vec![format!("{:?}", r.lambda)];
        let comps = r.support.as_ref().map(|s| s.components()).unwrap_or(&[]);
        cells.push(comps.len().to_string());
        for i in 0..kmax {
            match comps.get(i) {
                Some(c) => {
                    cells.push(format!("{:?}", c.lo));
                    cells.push(format!("{:?}", c.hi));
                }
                None => {
                    cells.push(String::new());
                    cells.push(String::new());
                }
            }
        }
        cells.push(r.hausdorff_step.map(|d| format!("{d:?}")).unwrap_or_default());
        writeln!(w, "{}", cells.join(","))?;
    }
    if let Some(j) = &sweep.jump {
        writeln!(w, "# jump between lambda={:?} and lambda={:?}: step {:?} (median {:?})", j.lambda_before, j.lambda_after, j.step, j.median_step)?;
    }
    for r in sweep.rows.iter().filter(|r| r.error.is_some()) {
        writeln!(w, "# lambda={:?}: {}", r.lambda, r.error.as_deref().unwrap())?;
    }
    Ok(())
}

/// Columns `lambda,d_lambda,method`; one row per available value.
pub fn write_derivative_csv<W: Write>(
    w: &mut W,
    rows: &[DerivativeRow],
    deterministic: &[DeterministicDerivative],
) -> std::io::Result<()> {
    writeln!(w, "lambda,d_lambda,method")?;
    for r in rows {
        if let Some(d) = r.d_lambda {
            writeln!(w, "{:?},{d:?},min-crn", r.lambda)?;
        }
        if let Some(e) = &r.cross_check {
            writeln!(w, "{:?},{:?},additive", r.lambda, e.d)?;
        }
    }
    for d in deterministic {
        let method = if d.frozen { "deterministic-frozen" } else { "deterministic" };
        writeln!(w, "{:?},{:?},{method}", d.lambda, d.slope)?;
    }
    for r in rows.iter().filter(|r| r.error.is_some()) {
        writeln!(w, "# lambda={:?}: {}", r.lambda, r.error.as_deref().unwrap())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse() -> KoperConfig {
        KoperConfig { dt: 0.01, ..Default::default() }
    }

    #[test]
    fn components_split_at_gaps() {
        let u = support_components(&[0.0, 0.01, 0.02, 0.5, 0.52, 0.03], 0.05);
        assert_eq!(u.len(), 2);
        assert_eq!(u.components()[0], Interval { lo: 0.0, hi: 0.03 });
        assert_eq!(u.components()[1], Interval { lo: 0.5, hi: 0.52 });
        assert!(support_components(&[], 0.1).is_empty());
    }

    #[test]
    fn deterministic_fixed_point_attracts_at_minus_6_9() {
        let cfg = coarse();
        let sec = SectionSpec::default();
        let d = deterministic_derivative_at_fixed_point(&cfg, &sec, 1e-11).unwrap();
        assert!(d.residual < 1e-8, "{d:?}");
        assert!(d.slope.abs() < 1.0 && d.slope > 0.0, "{d:?}");
        assert!((d.z_star + 8.06).abs() < 0.1, "{d:?}");
        // step h and h/2 agree closely
        assert!((d.slope_h - d.slope_half).abs() < 1e-3, "{d:?}");
    }

    #[test]
    fn orbit_reproducible_and_sweep_rows_sorted() {
        let cfg = coarse();
        let sec = SectionSpec::default();
        let opts = OrbitOptions { length: 30, burn_in: 5, ..Default::default() };
        let (a, _) = orbit(&cfg, &sec, &opts).unwrap();
        let (b, _) = orbit(&cfg, &sec, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        let sweep = invariant_set_sweep(&cfg, &sec, &[-6.89, -6.9], &opts, 10.0).unwrap();
        assert_eq!(sweep.rows[0].lambda, -6.9);
        assert!(sweep.rows[1].hausdorff_step.is_some());
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &sweep).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lambda,comp_count,lo_1,hi_1"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
    }

    #[test]
    fn zero_noise_boundary_derivative_is_a_difference_quotient() {
        let cfg = coarse().deterministic();
        let sec = SectionSpec::default();
        let (d, n) = boundary_derivative(&cfg, &sec, -8.1, 3, 0.01).unwrap();
        assert_eq!(n, 3);
        let p = |z| deterministic_return(z, &cfg, &sec).unwrap();
        assert!((d - (p(-8.09) - p(-8.1)) / 0.01).abs() < 1e-12);
    }
}

//! Derivative of an extremal map near the boundary of a minimal invariant
//! set, estimated from one time series.
//!
//! Two windows `I₁ = [m₁, m₁+δ)` and `I₂ = [m₂, m₂+δ)` are placed near the
//! lower boundary. The successors of visits to each window are averaged and
//! the difference of averages divided by `Δ = m₂ + δ − m₁`. The general
//! variant keeps only successors landing in an ε-window above the lowest
//! possible image (so the noise contribution is at most ε); with additive
//! noise all successors are kept and the noise averages out.
//!
//! The upper boundary is handled by negating the series: the lower
//! extremal map of `y = −x` has derivative `f⁺'(−y)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rdsim::TimeSeries;
use crate::rng;
use crate::setvalued::Interval;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("insufficient samples: k1 = {k1}, k2 = {k2} (minimum {k_min})")]
    InsufficientSamples { k1: usize, k2: usize, k_min: usize },
    #[error("empirical support is unstable: halves give minima {first} and {second}")]
    UnstableSupport { first: f64, second: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Minimum accepted pairs per window.
pub const DEFAULT_K_MIN: usize = 30;
/// Warnings fire at `D ≥ 1 − 0.05`.
pub const DEFAULT_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// Near `e₁`; estimates `f⁻'`.
    Lower,
    /// Near `e₂`; estimates `f⁺'`. Window coordinates refer to the negated
    /// series.
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub m1: f64,
    pub m2: f64,
    pub delta: f64,
    /// Length of the image windows (general variant).
    pub epsilon: f64,
    pub side: Side,
}

impl WindowSpec {
    pub fn new(m1: f64, m2: f64, delta: f64, epsilon: f64, side: Side) -> Result<Self, EstimatorError> {
        let w = Self {
            m1,
            m2,
            delta,
            epsilon,
            side,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if ![self.m1, self.m2, self.delta, self.epsilon].iter().all(|v| v.is_finite()) {
            return Err(EstimatorError::InvalidWindow("non-finite window parameter".into()));
        }
        if !(self.delta > 0.0) {
            return Err(EstimatorError::InvalidWindow(format!("δ = {} must be positive", self.delta)));
        }
        if !(self.epsilon > 0.0) {
            return Err(EstimatorError::InvalidWindow(format!("ε = {} must be positive", self.epsilon)));
        }
        if !(self.separation() > 0.0) {
            return Err(EstimatorError::InvalidWindow(format!(
                "windows overlap or touch: δ₀ = m₂ − m₁ − δ = {}",
                self.separation()
            )));
        }
        Ok(())
    }

    pub fn i1(&self) -> Interval {
        Interval {
            lo: self.m1,
            hi: self.m1 + self.delta,
        }
    }

    pub fn i2(&self) -> Interval {
        Interval {
            lo: self.m2,
            hi: self.m2 + self.delta,
        }
    }

    /// `δ₀ = m₂ − m₁ − δ`.
    pub fn separation(&self) -> f64 {
        self.m2 - self.m1 - self.delta
    }

    /// `Δ = m₂ + δ − m₁`.
    pub fn span(&self) -> f64 {
        self.m2 + self.delta - self.m1
    }

    /// `ε/Δ`.
    pub fn slack(&self) -> f64 {
        self.epsilon / self.span()
    }

    #[inline]
    fn in_window(lo: f64, delta: f64, x: f64) -> bool {
        lo <= x && x < lo + delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    General,
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    #[serde(rename = "D")]
    pub d: f64,
    pub k1: usize,
    pub k2: usize,
    pub window: WindowSpec,
    /// `ε/Δ` for the general variant, 0 for the additive one.
    pub bound_slack: f64,
    pub variant: Variant,
    /// Mean accepted successor of `I₁` visits.
    pub mean_w: f64,
    /// Mean accepted successor of `I₂` visits.
    pub mean_z: f64,
    /// Plug-in standard error of `D` from the two group variances.
    pub se: f64,
    /// Image-window anchors `min f⁻` over `I₁`, `I₂` (general variant).
    pub anchors: Option<(f64, f64)>,
}

/// Where the ε-windows of the general variant start.
#[derive(Clone, Copy)]
pub enum Anchor<'a> {
    /// Known lower extremal map; the anchor is its minimum over each window.
    Known(&'a (dyn Fn(f64) -> f64 + Sync)),
    /// Anchor at the lowest observed successor of each window.
    DataOnly,
}

/// Grid points used to minimise `f⁻` over a window.
const MIN_GRID: usize = 1025;

fn grid_min(f: &dyn Fn(f64) -> f64, iv: Interval) -> f64 {
    iv.linspace(MIN_GRID).map(f).fold(f64::INFINITY, f64::min)
}

/// `Ĩⱼ = [min_{Iⱼ} f⁻, min_{Iⱼ} f⁻ + ε]`, minimum taken on a grid.
pub fn image_windows(f_minus: &dyn Fn(f64) -> f64, window: &WindowSpec) -> (Interval, Interval) {
    let a1 = grid_min(f_minus, window.i1());
    let a2 = grid_min(f_minus, window.i2());
    (
        Interval {
            lo: a1,
            hi: a1 + window.epsilon,
        },
        Interval {
            lo: a2,
            hi: a2 + window.epsilon,
        },
    )
}

fn frame(series: &TimeSeries, side: Side) -> std::borrow::Cow<'_, [f64]> {
    match side {
        Side::Lower => std::borrow::Cow::Borrowed(series.samples()),
        Side::Upper => std::borrow::Cow::Owned(series.samples().iter().map(|x| -x).collect()),
    }
}

/// Successors of visits to `I₁` and `I₂`, optionally filtered by image windows.
fn groups(xs: &[f64], w: &WindowSpec, filter: Option<(Interval, Interval)>) -> (Vec<f64>, Vec<f64>) {
    let mut g1 = Vec::new();
    let mut g2 = Vec::new();
    for p in xs.windows(2) {
        let (x, y) = (p[0], p[1]);
        if WindowSpec::in_window(w.m1, w.delta, x) {
            if filter.is_none_or(|(t1, _)| t1.contains(y)) {
                g1.push(y);
            }
        } else if WindowSpec::in_window(w.m2, w.delta, x) && filter.is_none_or(|(_, t2)| t2.contains(y)) {
            g2.push(y);
        }
    }
    (g1, g2)
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var)
}

fn finish(
    g1: &[f64],
    g2: &[f64],
    window: &WindowSpec,
    k_min: usize,
    variant: Variant,
    anchors: Option<(f64, f64)>,
) -> Result<DerivativeEstimate, EstimatorError> {
    let (k1, k2) = (g1.len(), g2.len());
    if k1 < k_min.max(1) || k2 < k_min.max(1) {
        return Err(EstimatorError::InsufficientSamples { k1, k2, k_min });
    }
    let (mw, vw) = mean_var(g1);
    let (mz, vz) = mean_var(g2);
    let span = window.span();
    Ok(DerivativeEstimate {
        d: (mz - mw) / span,
        k1,
        k2,
        window: *window,
        bound_slack: match variant {
            Variant::General => window.slack(),
            Variant::Additive => 0.0,
        },
        variant,
        mean_w: mw,
        mean_z: mz,
        se: (vw / k1 as f64 + vz / k2 as f64).sqrt() / span,
        anchors,
    })
}

/// Estimate for general bounded noise: pairs `(xᵢ, xᵢ₊₁)` with `xᵢ ∈ Iⱼ`
/// are kept only when `xᵢ₊₁ ∈ Ĩⱼ`.
pub fn estimate_general(
    series: &TimeSeries,
    window: &WindowSpec,
    anchor: Anchor<'_>,
    k_min: usize,
) -> Result<DerivativeEstimate, EstimatorError> {
    window.validate()?;
    let xs = frame(series, window.side);
    let images = match anchor {
        Anchor::Known(f) => image_windows(f, window),
        Anchor::DataOnly => {
            let (s1, s2) = groups(&xs, window, None);
            let lo = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
            if s1.is_empty() || s2.is_empty() {
                return Err(EstimatorError::InsufficientSamples {
                    k1: s1.len(),
                    k2: s2.len(),
                    k_min,
                });
            }
            let (a1, a2) = (lo(&s1), lo(&s2));
            (
                Interval {
                    lo: a1,
                    hi: a1 + window.epsilon,
                },
                Interval {
                    lo: a2,
                    hi: a2 + window.epsilon,
                },
            )
        }
    };
    let (g1, g2) = groups(&xs, window, Some(images));
    finish(&g1, &g2, window, k_min, Variant::General, Some((images.0.lo, images.1.lo)))
}

/// [`estimate_general`] with ε widened by factors of 1.25 until both
/// accepted groups hold `k_min` pairs. The bound slack `ε/Δ` grows with it;
/// gives up once ε exceeds the range of the series.
pub fn estimate_general_adaptive(
    series: &TimeSeries,
    window: &WindowSpec,
    anchor: Anchor<'_>,
    k_min: usize,
) -> Result<DerivativeEstimate, EstimatorError> {
    let xs = series.samples();
    let range = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) - xs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w = *window;
    loop {
        match estimate_general(series, &w, anchor, k_min) {
            Err(EstimatorError::InsufficientSamples { .. }) if w.epsilon * 1.25 <= range => w.epsilon *= 1.25,
            r => return r,
        }
    }
}

/// Estimate for additive noise: every visit to a window counts.
pub fn estimate_additive(
    series: &TimeSeries,
    window: &WindowSpec,
    k_min: usize,
) -> Result<DerivativeEstimate, EstimatorError> {
    window.validate()?;
    let xs = frame(series, window.side);
    let (g1, g2) = groups(&xs, window, None);
    finish(&g1, &g2, window, k_min, Variant::Additive, None)
}

/// Bootstrap standard error of `D`: the accepted successors of each group
/// are resampled with replacement `n_boot` times.
pub fn bootstrap_se(
    series: &TimeSeries,
    est: &DerivativeEstimate,
    n_boot: usize,
    seed: u64,
) -> Result<f64, EstimatorError> {
    if n_boot < 2 {
        return Err(EstimatorError::InvalidArgument("bootstrap needs at least two replicates".into()));
    }
    let w = &est.window;
    let xs = frame(series, w.side);
    let filter = est.anchors.map(|(a1, a2)| {
        (
            Interval {
                lo: a1,
                hi: a1 + w.epsilon,
            },
            Interval {
                lo: a2,
                hi: a2 + w.epsilon,
            },
        )
    });
    let (g1, g2) = groups(&xs, w, filter);
    if g1.is_empty() || g2.is_empty() {
        return Err(EstimatorError::InsufficientSamples {
            k1: g1.len(),
            k2: g2.len(),
            k_min: 1,
        });
    }
    let span = w.span();
    let reps: Vec<f64> = (0..n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream_rng(seed, b);
            let mut resample_mean = |v: &[f64]| {
                let n = v.len();
                (0..n)
                    .map(|_| v[((rng::unit_f64(&mut r) * n as f64) as usize).min(n - 1)])
                    .sum::<f64>()
                    / n as f64
            };
            let m1 = resample_mean(&g1);
            let m2 = resample_mean(&g2);
            (m2 - m1) / span
        })
        .collect();
    let (_, var) = mean_var(&reps);
    Ok(var.sqrt())
}

/// Where `auto_window` placed the windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPlacement {
    pub window: WindowSpec,
    /// Estimated boundary (in the window's frame).
    pub e_hat: f64,
    /// Distance from `ê` to the far end of `I₂`.
    pub reach: f64,
}

/// Windows anchored at the empirical boundary: `m₁ = ê`, `m₂ = ê + δ + gap`.
///
/// The boundary estimate is the empirical minimum (of the negated series for
/// the upper side); it must agree between the two halves of the series
/// within `delta`.
pub fn auto_window(
    series: &TimeSeries,
    side: Side,
    delta: f64,
    gap: f64,
    epsilon: Option<f64>,
) -> Result<WindowPlacement, EstimatorError> {
    if !(delta > 0.0) || !(gap > 0.0) {
        return Err(EstimatorError::InvalidWindow(format!(
            "δ = {delta} and gap = {gap} must be positive"
        )));
    }
    let xs = frame(series, side);
    if xs.len() < 2 {
        return Err(EstimatorError::InvalidArgument("series too short".into()));
    }
    let half = xs.len() / 2;
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let (a, b) = (min(&xs[..half]), min(&xs[half..]));
    if (a - b).abs() > delta {
        return Err(EstimatorError::UnstableSupport { first: a, second: b });
    }
    let e_hat = a.min(b);
    let top = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let window = WindowSpec::new(e_hat, e_hat + delta + gap, delta, epsilon.unwrap_or(delta), side)?;
    if window.m2 + window.delta > top {
        return Err(EstimatorError::InvalidWindow(format!(
            "windows reach {} beyond the empirical support [{e_hat}, {top}]",
            window.m2 + window.delta
        )));
    }
    Ok(WindowPlacement {
        window,
        e_hat,
        reach: window.span(),
    })
}

/// How `warning_scan` places windows and which estimator it runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPolicy {
    pub side: Side,
    /// Window length as a fraction of the empirical range (the starting
    /// value when `adapt` is set).
    pub delta_frac: f64,
    /// Widen δ by factors of 1.25 until `I₁` holds `target_visits` visits.
    pub adapt: bool,
    #[serde(default = "default_target_visits")]
    pub target_visits: usize,
    /// Window separation as a fraction of the empirical range.
    pub gap_frac: f64,
    /// When set, the separation is this multiple of the (adapted) δ instead,
    /// which keeps both windows close to the boundary.
    #[serde(default)]
    pub gap_deltas: Option<f64>,
    /// Image-window length as a fraction of the empirical range (`None`: ε = δ).
    pub epsilon_frac: Option<f64>,
    pub variant: Variant,
    pub k_min: usize,
}

fn default_target_visits() -> usize {
    400
}

impl Default for WindowPolicy {
    fn default() -> Self {
        Self {
            side: Side::Lower,
            delta_frac: 0.01,
            adapt: true,
            target_visits: default_target_visits(),
            gap_frac: 0.5,
            gap_deltas: Some(4.0),
            epsilon_frac: None,
            variant: Variant::Additive,
            k_min: DEFAULT_K_MIN,
        }
    }
}

impl WindowPolicy {
    /// Places windows on `series` and runs the configured estimator.
    pub fn estimate(&self, series: &TimeSeries) -> Result<DerivativeEstimate, EstimatorError> {
        let xs = frame(series, self.side);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        if !(range > 0.0) {
            return Err(EstimatorError::InvalidWindow("series has zero range".into()));
        }
        let gap_of = |d: f64| self.gap_deltas.map_or(self.gap_frac * range, |m| m * d);
        let mut delta = self.delta_frac * range;
        if self.adapt {
            let visits = |d: f64| xs[..xs.len() - 1].iter().filter(|&&x| x < lo + d).count();
            while visits(delta) < self.target_visits.max(self.k_min) && 2.0 * (delta * 1.25) + gap_of(delta * 1.25) < range {
                delta *= 1.25;
            }
        }
        let gap = gap_of(delta);
        let p = auto_window(
            series,
            self.side,
            delta,
            gap,
            self.epsilon_frac.map(|e| e * range),
        )?;
        match self.variant {
            Variant::Additive => estimate_additive(series, &p.window, self.k_min),
            Variant::General => estimate_general_adaptive(series, &p.window, Anchor::DataOnly, self.k_min),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningRow {
    pub alpha: f64,
    #[serde(rename = "D")]
    pub d: Option<f64>,
    pub k1: usize,
    pub k2: usize,
    pub slack: f64,
    pub flag: bool,
    pub error: Option<String>,
}

/// `D(α)` for each series, flagged where `D ≥ threshold`; rows sorted by α.
pub fn warning_scan(
    series_per_alpha: &[(f64, TimeSeries)],
    policy: &WindowPolicy,
    threshold: f64,
) -> Result<Vec<WarningRow>, EstimatorError> {
    if series_per_alpha.len() < 2 {
        return Err(EstimatorError::InvalidArgument(
            "a warning scan needs at least two parameter values".into(),
        ));
    }
    let mut rows: Vec<WarningRow> = series_per_alpha
        .par_iter()
        .map(|(alpha, s)| match policy.estimate(s) {
            Ok(e) => WarningRow {
                alpha: *alpha,
                d: Some(e.d),
                k1: e.k1,
                k2: e.k2,
                slack: e.bound_slack,
                flag: e.d >= threshold,
                error: None,
            },
            Err(err) => {
                let (k1, k2) = match err {
                    EstimatorError::InsufficientSamples { k1, k2, .. } => (k1, k2),
                    _ => (0, 0),
                };
                WarningRow {
                    alpha: *alpha,
                    d: None,
                    k1,
                    k2,
                    slack: f64::NAN,
                    flag: false,
                    error: Some(err.to_string()),
                }
            }
        })
        .collect();
    rows.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    Ok(rows)
}

/// CSV with columns `alpha,D,k1,k2,slack,flag`; failed rows leave `D` and
/// `slack` empty and are explained in a trailing comment.
pub fn write_warning_csv<W: Write>(w: &mut W, rows: &[WarningRow]) -> std::io::Result<()> {
    writeln!(w, "alpha,D,k1,k2,slack,flag")?;
    for r in rows {
        let d = r.d.map(|d| format!("{d:?}")).unwrap_or_default();
        let slack = if r.slack.is_finite() { format!("{:?}", r.slack) } else { String::new() };
        writeln!(w, "{:?},{d},{},{},{slack},{}", r.alpha, r.k1, r.k2, r.flag as u8)?;
    }
    for r in rows.iter().filter(|r| r.error.is_some()) {
        writeln!(w, "# alpha={:?}: {}", r.alpha, r.error.as_deref().unwrap())?;
    }
    Ok(())
}

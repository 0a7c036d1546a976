//! The Koper fast-slow model with bounded additive noise and its return map.
//!
//! The model is treated as a family of random maps on R³: a drift
//! (`y − x³ + 3x`, `ε(kx − 2(y+λ) + z)`, `ε(λ + y − z)`) integrated with
//! explicit Euler, plus a bounded kick `A·u`, `u ∈ [−1,1]³`, once every
//! `map_step` time units. The return map launches from `(x_section, y0, z)`
//! and stops when `y < 0` and `x` crosses `x_detect` from the right.
//!
//! Stochastic realizations are indexed: sample `i` always draws from stream
//! `i` of `cfg.seed`, so the same index reproduces the same noise sequence.
//! That is what makes common random numbers (and thread-count independence)
//! work in the sweeps.

mod sweep;

pub use sweep::{
    boundary_derivative, boundary_derivative_sweep, deterministic_derivative_at_fixed_point, deterministic_derivative_sweep,
    dt_convergence_check, fixed_points_of_return_map, invariant_set_sweep, orbit, return_map_derivative,
    support_components, write_cloud_csv, write_derivative_csv, write_sweep_csv, DerivativeRow,
    DeterministicDerivative, DtCheck, InvariantSweep, JumpInfo, OrbitOptions, SweepRow,
};

use crate::rdsim;
use crate::rng::{self, ChaCha8Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KoperError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no return to the section within {steps} steps (z_in = {z_in})")]
    NoReturn { z_in: f64, steps: u64 },
    #[error("state left the guard box at step {step}: {state:?}")]
    Divergence { step: u64, state: [f64; 3] },
    #[error("too many failed samples: {ok} of {total} succeeded")]
    TooManyFailures { ok: usize, total: usize },
    #[error("not found: {0}")]
    NotFound(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for KoperError {
    fn from(e: std::io::Error) -> Self {
        KoperError::Io(e.to_string())
    }
}

impl From<rdsim::RdsimError> for KoperError {
    fn from(e: rdsim::RdsimError) -> Self {
        KoperError::Io(e.to_string())
    }
}

pub type State = [f64; 3];

/// Shape of the noise mixing matrix; the effective matrix is `sigma · MIXING`.
pub const DEFAULT_MIXING: [[f64; 3]; 3] = [[1.0, 0.5, 0.2], [0.5, 1.0, 0.3], [0.2, 0.3, 1.0]];

/// The parameter interval in which `q₊` is a folded node.
pub const STUDIED_LAMBDA: (f64, f64) = (-8.0, -23.0 / 6.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KoperConfig {
    pub eps: f64,
    pub k: f64,
    pub lambda: f64,
    /// Euler step of the drift.
    pub dt: f64,
    /// Time between noise kicks (the step `t − s` of the random map).
    pub map_step: f64,
    pub sigma: f64,
    pub mixing: [[f64; 3]; 3],
    pub seed: u64,
    /// Crossings earlier than this (in time units) are flagged as early returns.
    pub min_return_time: f64,
    /// Integration budget per return, in time units.
    pub max_time: f64,
    /// Half-widths of the guard box around the origin.
    pub guard: [f64; 3],
}

impl Default for KoperConfig {
    fn default() -> Self {
        Self {
            eps: 0.01,
            k: -10.0,
            lambda: -6.9,
            dt: 1e-3,
            map_step: 50.0,
            sigma: 0.01,
            mixing: DEFAULT_MIXING,
            seed: 0,
            min_return_time: 1.0,
            max_time: 2000.0,
            guard: [10.0, 200.0, 200.0],
        }
    }
}

impl KoperConfig {
    pub fn validate(&self) -> Result<(), KoperError> {
        let bad = |m: &str| Err(KoperError::InvalidArgument(m.into()));
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad("eps must be positive");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.map_step >= self.dt && self.map_step.is_finite()) {
            return bad("map_step must be at least dt");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be non-negative");
        }
        if !(self.k.is_finite() && self.lambda.is_finite()) {
            return bad("k and lambda must be finite");
        }
        if !(self.max_time > self.min_return_time && self.min_return_time >= 0.0) {
            return bad("need 0 <= min_return_time < max_time");
        }
        if self.guard.iter().any(|g| !(*g > 0.0)) || self.mixing.iter().flatten().any(|a| !a.is_finite()) {
            return bad("guard must be positive and mixing finite");
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    pub fn deterministic(&self) -> Self {
        Self { sigma: 0.0, ..*self }
    }

    /// Effective noise matrix `A = σ·M`.
    pub fn noise_matrix(&self) -> [[f64; 3]; 3] {
        self.mixing.map(|row| row.map(|a| self.sigma * a))
    }

    /// Largest displacement of a single kick in the max norm, `‖A‖∞`.
    pub fn kick_bound(&self) -> f64 {
        self.noise_matrix().iter().map(|r| r.iter().map(|a| a.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Euler substeps per noise kick.
    pub fn substeps(&self) -> u64 {
        ((self.map_step / self.dt).round() as u64).max(1)
    }

    fn max_steps(&self) -> u64 {
        (self.max_time / self.dt).ceil() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SectionSpec {
    /// Launch plane `x = x_section`.
    pub x_section: f64,
    /// Detection threshold crossed from the right.
    pub x_detect: f64,
    pub y0: f64,
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
}

impl Default for SectionSpec {
    fn default() -> Self {
        Self { x_section: -0.8, x_detect: -0.75, y0: -2.0, y_range: (-3.0, -1.0), z_range: (-9.0, -7.0) }
    }
}

impl SectionSpec {
    pub fn validate(&self) -> Result<(), KoperError> {
        if !(self.z_range.0 < self.z_range.1) || !(self.y_range.0 < self.y_range.1) {
            return Err(KoperError::InvalidArgument("section ranges must be increasing".into()));
        }
        if !(self.x_section < self.x_detect) {
            return Err(KoperError::InvalidArgument("launch plane must lie left of the detection plane".into()));
        }
        if !(self.y0 < 0.0 && self.y0 > self.y_range.0 && self.y0 < self.y_range.1) {
            return Err(KoperError::InvalidArgument("y0 must be negative and inside y_range".into()));
        }
        Ok(())
    }

    /// `z_range` widened by `margin` on both sides.
    pub fn padded_z(&self, margin: f64) -> (f64, f64) {
        (self.z_range.0 - margin, self.z_range.1 + margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnSample {
    pub z_in: f64,
    pub z_out: f64,
    /// Euler steps until the crossing.
    pub steps: u64,
    pub early_return: bool,
}

// ---------------------------------------------------------------------------
// geometry

#[inline]
pub fn vector_field(s: &State, cfg: &KoperConfig) -> State {
    let [x, y, z] = *s;
    [
        y - x * x * x + 3.0 * x,
        cfg.eps * (cfg.k * x - 2.0 * (y + cfg.lambda) + z),
        cfg.eps * (cfg.lambda + y - z),
    ]
}

/// `y` on the critical manifold above `x`.
pub fn critical_manifold_y(x: f64) -> f64 {
    x * x * x - 3.0 * x
}

/// Fold lines `x = ±1` of the critical manifold.
pub const FOLD_X: [f64; 2] = [-1.0, 1.0];

/// Folded singularities `[q₋, q₊]`: points on the folds where the
/// slow flow's `y`-component vanishes.
pub fn folded_singularities(k: f64, lambda: f64) -> [State; 2] {
    FOLD_X.map(|x| {
        let y = critical_manifold_y(x);
        [x, y, 2.0 * (y + lambda) - k * x]
    })
}

/// The sign symmetry `(x, y, z, λ) → (−x, −y, −z, −λ)`.
pub fn mirror(s: &State) -> State {
    [-s[0], -s[1], -s[2]]
}

// ---------------------------------------------------------------------------
// steps

#[inline]
pub fn euler_step(s: &State, cfg: &KoperConfig) -> State {
    let v = vector_field(s, cfg);
    [s[0] + cfg.dt * v[0], s[1] + cfg.dt * v[1], s[2] + cfg.dt * v[2]]
}

/// `A·u`.
#[inline]
pub fn kick(cfg: &KoperConfig, u: &[f64; 3]) -> State {
    let a = cfg.noise_matrix();
    [0, 1, 2].map(|i| a[i][0] * u[0] + a[i][1] * u[1] + a[i][2] * u[2])
}

/// One step of the random map: Euler drift plus `A·u` for `u ∈ [−1,1]³`.
pub fn koper_step(s: &State, cfg: &KoperConfig, u: &[f64; 3]) -> State {
    let e = euler_step(s, cfg);
    let d = kick(cfg, u);
    [e[0] + d[0], e[1] + d[1], e[2] + d[2]]
}

/// Draws `u` uniformly from `[−1,1]³`.
pub fn draw_increment<R: RngCore + ?Sized>(rng: &mut R) -> [f64; 3] {
    [0; 3].map(|_| rng::uniform(rng, -1.0, 1.0))
}

fn check_guard(s: &State, cfg: &KoperConfig, step: u64) -> Result<(), KoperError> {
    if s.iter().zip(&cfg.guard).any(|(v, g)| !(v.abs() <= *g)) {
        return Err(KoperError::Divergence { step, state: *s });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// return map

/// Integrates from `(x_section, y0, z_in)` to the next detection crossing.
///
/// Noise is drawn from `rng` only when `sigma > 0`; the kick lands on the
/// last substep of every `map_step` block counted from launch. The crossing
/// is located by linear interpolation between the straddling states.
pub fn return_map_with<R: RngCore + ?Sized>(
    z_in: f64,
    cfg: &KoperConfig,
    section: &SectionSpec,
    max_steps: u64,
    rng: &mut R,
) -> Result<ReturnSample, KoperError> {
    if !z_in.is_finite() {
        return Err(KoperError::InvalidArgument("z_in must be finite".into()));
    }
    let noisy = cfg.sigma > 0.0;
    let a = cfg.noise_matrix();
    let nsub = cfg.substeps();
    let xd = section.x_detect;
    let (eps, k, lam, dt) = (cfg.eps, cfg.k, cfg.lambda, cfg.dt);
    let (mut x, mut y, mut z) = (section.x_section, section.y0, z_in);
    let mut j = 0u64;
    let mut n = 0u64;
    while n < max_steps {
        let fx = y - x * x * x + 3.0 * x;
        let fy = eps * (k * x - 2.0 * (y + lam) + z);
        let fz = eps * (lam + y - z);
        let (mut xn, mut yn, mut zn) = (x + dt * fx, y + dt * fy, z + dt * fz);
        j += 1;
        if j == nsub {
            j = 0;
            if noisy {
                let u = draw_increment(rng);
                xn += a[0][0] * u[0] + a[0][1] * u[1] + a[0][2] * u[2];
                yn += a[1][0] * u[0] + a[1][1] * u[1] + a[1][2] * u[2];
                zn += a[2][0] * u[0] + a[2][1] * u[1] + a[2][2] * u[2];
            }
        }
        n += 1;
        if yn < 0.0 && x > xd && xn <= xd {
            let s = (x - xd) / (x - xn);
            return Ok(ReturnSample {
                z_in,
                z_out: z + s * (zn - z),
                steps: n,
                early_return: (n as f64) * dt <= cfg.min_return_time,
            });
        }
        x = xn;
        y = yn;
        z = zn;
        // the guard is cheap but not free; every 64 steps is plenty
        if n % 64 == 0 {
            check_guard(&[x, y, z], cfg, n)?;
        }
    }
    Err(KoperError::NoReturn { z_in, steps: max_steps })
}

/// Return-map sample `stream` of `cfg.seed` (the stream is unused when σ = 0).
pub fn return_map_sample(
    z_in: f64,
    cfg: &KoperConfig,
    section: &SectionSpec,
    max_steps: Option<u64>,
    stream: u64,
) -> Result<ReturnSample, KoperError> {
    let mut rng = rng::stream_rng(cfg.seed, stream);
    return_map_with(z_in, cfg, section, max_steps.unwrap_or_else(|| cfg.max_steps()), &mut rng)
}

/// Deterministic return map `p_λ(z)` (σ forced to 0).
pub fn deterministic_return(z: f64, cfg: &KoperConfig, section: &SectionSpec) -> Result<f64, KoperError> {
    let det = cfg.deterministic();
    let s = return_map_sample(z, &det, section, None, 0)?;
    Ok(s.z_out)
}

// Stream layout: orbit returns use indices below 2⁴⁰, the derivative sweep
// the next block, clouds the one after.
pub(crate) const STREAM_DERIV: u64 = 1 << 40;
pub(crate) const STREAM_CLOUD: u64 = 2 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub z_in: f64,
    pub samples: Vec<ReturnSample>,
    pub failures: usize,
    /// Min and max of non-early returns (approximations of `f⁻`, `f⁺`).
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnCloud {
    pub lambda: f64,
    pub points: Vec<CloudPoint>,
    pub failures: usize,
    pub total: usize,
}

impl ReturnCloud {
    pub fn samples(&self) -> impl Iterator<Item = &ReturnSample> {
        self.points.iter().flat_map(|p| p.samples.iter())
    }
}

/// `n_per_z` noisy returns from every point of `z_grid`.
///
/// Fails only if fewer than 90% of the samples return.
pub fn stochastic_return_cloud(
    cfg: &KoperConfig,
    section: &SectionSpec,
    z_grid: &[f64],
    n_per_z: usize,
) -> Result<ReturnCloud, KoperError> {
    cfg.validate()?;
    section.validate()?;
    if n_per_z == 0 || z_grid.is_empty() {
        return Err(KoperError::InvalidArgument("need a non-empty grid and n_per_z >= 1".into()));
    }
    let points: Vec<CloudPoint> = z_grid
        .par_iter()
        .enumerate()
        .map(|(zi, &z)| {
            let mut samples = Vec::with_capacity(n_per_z);
            let mut failures = 0;
            for r in 0..n_per_z {
                let stream = STREAM_CLOUD + (zi * n_per_z + r) as u64;
                match return_map_sample(z, cfg, section, None, stream) {
                    Ok(s) => samples.push(s),
                    Err(_) => failures += 1,
                }
            }
            let good = samples.iter().filter(|s| !s.early_return).map(|s| s.z_out);
            let (lower, upper) = good.fold((None, None), |(lo, hi): (Option<f64>, Option<f64>), v| {
                (Some(lo.map_or(v, |l| l.min(v))), Some(hi.map_or(v, |h| h.max(v))))
            });
            CloudPoint { z_in: z, samples, failures, lower, upper }
        })
        .collect();
    let total = z_grid.len() * n_per_z;
    let failures: usize = points.iter().map(|p| p.failures).sum();
    let ok = total - failures;
    if (ok as f64) < 0.9 * total as f64 {
        return Err(KoperError::TooManyFailures { ok, total });
    }
    Ok(ReturnCloud { lambda: cfg.lambda, points, failures, total })
}

/// Full trajectory from the section for `t_max` time units, every `stride`-th
/// state, flattened as `x, y, z` triples.
pub fn trajectory(
    z_in: f64,
    cfg: &KoperConfig,
    section: &SectionSpec,
    t_max: f64,
    stride: usize,
    stream: u64,
) -> Result<Vec<f64>, KoperError> {
    cfg.validate()?;
    let stride = stride.max(1);
    let mut rng: ChaCha8Rng = rng::stream_rng(cfg.seed, stream);
    let nsub = cfg.substeps();
    let steps = (t_max / cfg.dt).ceil() as u64;
    let mut s = [section.x_section, section.y0, z_in];
    let mut out = Vec::with_capacity(3 * (steps as usize / stride + 1));
    out.extend_from_slice(&s);
    for n in 1..=steps {
        s = if cfg.sigma > 0.0 && n % nsub == 0 {
            koper_step(&s, cfg, &draw_increment(&mut rng))
        } else {
            euler_step(&s, cfg)
        };
        check_guard(&s, cfg, n)?;
        if n as usize % stride == 0 {
            out.extend_from_slice(&s);
        }
    }
    Ok(out)
}

/// Writes a trajectory as a 3-channel binary series.
pub fn write_trajectory_bnts(path: &Path, data: &[f64], cfg: &KoperConfig) -> Result<(), KoperError> {
    let meta = serde_json::json!({ "kind": "koper-trajectory", "channels": ["x", "y", "z"], "config": cfg, "rng": rng::RNG_ALGORITHM });
    rdsim::write_bnts(path, 3, data, &meta.to_string())?;
    Ok(())
}

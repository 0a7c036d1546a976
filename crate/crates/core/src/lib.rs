//! Discontinuous bifurcations of minimal invariant sets in one-dimensional
//! random dynamical systems with bounded noise.
//!
//! The crate is organised around four pieces:
//!
//! * [`setvalued`] — interval-valued maps described by their extremal maps,
//!   minimal invariant sets, Hausdorff distances and bifurcation tests.
//! * [`rdsim`] — seeded simulation of random difference equations and the
//!   time-series formats used to persist them.
//! * [`estimator`] — reconstruction of extremal-map derivatives from a single
//!   time series, used as an early-warning signal.
//! * [`koper`] — the bounded-noise Koper model, its stochastic return map and
//!   the parameter sweeps built on it.

pub mod estimator;
pub mod koper;
pub mod rdsim;
pub mod rng;
pub mod setvalued;

pub use setvalued::{hausdorff, Interval, IntervalUnion};

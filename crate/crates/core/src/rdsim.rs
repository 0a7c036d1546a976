//! Random difference equations `x_{i+1} = h(x_i, ξ_i)` with bounded i.i.d.
//! noise, and the time-series files they produce.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, RNG_ALGORITHM};
use crate::setvalued::Interval;

#[derive(Debug, Error)]
pub enum RdsimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("trajectory left the guard interval at step {step} (x = {value})")]
    Divergence { step: usize, value: f64 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed series file: {0}")]
    Format(String),
}

/// Distribution of the noise variables `ξᵢ`; always uniform on a compact
/// interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseModel {
    /// `ξ ~ U[lo, hi]`.
    UniformInterval { lo: f64, hi: f64 },
    /// `ξ = scale·U` with `U ~ U[0, 1]`.
    ScaledUnit { scale: f64 },
}

impl NoiseModel {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self, RdsimError> {
        let m = NoiseModel::UniformInterval { lo, hi };
        m.validate()?;
        Ok(m)
    }

    pub fn scaled_unit(scale: f64) -> Result<Self, RdsimError> {
        let m = NoiseModel::ScaledUnit { scale };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), RdsimError> {
        let s = self.support();
        if !(s.lo.is_finite() && s.hi.is_finite()) || s.lo > s.hi {
            return Err(RdsimError::InvalidArgument(format!(
                "noise support [{}, {}] is not a compact interval",
                s.lo, s.hi
            )));
        }
        Ok(())
    }

    pub fn support(&self) -> Interval {
        match *self {
            NoiseModel::UniformInterval { lo, hi } => Interval { lo, hi },
            // A negative scale yields lo > hi, which `validate` rejects.
            NoiseModel::ScaledUnit { scale } => Interval { lo: 0.0, hi: scale },
        }
    }

    /// One draw from the noise law.
    #[inline]
    pub fn sample<R: rng::RngCore + ?Sized>(&self, r: &mut R) -> f64 {
        let s = self.support();
        // Rounding of lo + w·u can overshoot hi by one ulp.
        rng::uniform(r, s.lo, s.hi).min(s.hi)
    }
}

type Hx = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Fx = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `h(x, ξ) = f⁻(x) + g(x, ξ)` with `0 ≤ g(x, ξ) ≤ ε_img(x)` over the noise
/// support.
#[derive(Clone)]
pub struct RandomMap {
    name: String,
    h: Hx,
    f_minus: Fx,
    image_len: Fx,
    domain: Interval,
}

impl fmt::Debug for RandomMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RandomMap")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .finish()
    }
}

impl RandomMap {
    pub fn new<H, F, L>(name: impl Into<String>, h: H, f_minus: F, image_len: L, domain: Interval) -> Self
    where
        H: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        L: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            h: Arc::new(h),
            f_minus: Arc::new(f_minus),
            image_len: Arc::new(image_len),
            domain,
        }
    }

    /// `h(x, ξ) = f(x) + ξ`.
    pub fn additive<F>(name: impl Into<String>, f: F, noise: &NoiseModel, domain: Interval) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let s = noise.support();
        let f = Arc::new(f);
        let f2 = f.clone();
        Self::new(name, move |x, xi| f(x) + xi, move |x| f2(x) + s.lo, move |_| s.len(), domain)
    }

    /// `h(x, ξ) = a·x + b + ξ` on a domain comfortably containing its
    /// invariant set when `|a| < 1`.
    pub fn affine(a: f64, b: f64, noise: &NoiseModel) -> Self {
        let s = noise.support();
        let reach = (b.abs() + s.lo.abs().max(s.hi.abs())) / (1.0 - a.abs()).max(1e-3);
        let r = 2.0 * reach.max(1.0);
        Self::additive(
            format!("affine(a={a},b={b})"),
            move |x| a * x + b,
            noise,
            Interval { lo: -r, hi: r },
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> Interval {
        self.domain
    }

    #[inline]
    pub fn h(&self, x: f64, xi: f64) -> f64 {
        (self.h)(x, xi)
    }

    #[inline]
    pub fn f_minus(&self, x: f64) -> f64 {
        (self.f_minus)(x)
    }

    /// `g(x, ξ) = h(x, ξ) − f⁻(x)`.
    pub fn g(&self, x: f64, xi: f64) -> f64 {
        self.h(x, xi) - self.f_minus(x)
    }

    pub fn image_len(&self, x: f64) -> f64 {
        (self.image_len)(x)
    }

    /// Domain inflated by 50% of its length on each side.
    pub fn default_guard(&self) -> Interval {
        let w = 0.5 * self.domain.len();
        Interval {
            lo: self.domain.lo - w,
            hi: self.domain.hi + w,
        }
    }
}

/// Generator settings recorded with every series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SeriesMeta {
    pub seed: Option<u64>,
    pub map: String,
    pub noise: Option<NoiseModel>,
    pub burn_in: usize,
    pub x0: Option<f64>,
    pub rng: String,
    /// Free-form additional parameters.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

/// Ordered finite samples `x₀, …, x_n` with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    samples: Vec<f64>,
    pub meta: SeriesMeta,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, meta: SeriesMeta) -> Result<Self, RdsimError> {
        if samples.is_empty() {
            return Err(RdsimError::InvalidArgument("a time series needs at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(RdsimError::InvalidArgument(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, meta })
    }

    /// Series without generator metadata (measured data).
    pub fn from_samples(samples: Vec<f64>) -> Result<Self, RdsimError> {
        Self::new(samples, SeriesMeta::default())
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Consecutive pairs `(xᵢ, xᵢ₊₁)`.
    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples.windows(2).map(|w| (w[0], w[1]))
    }

    /// The series reflected through zero; turns upper-boundary questions
    /// into lower-boundary ones.
    pub fn negated(&self) -> TimeSeries {
        TimeSeries {
            samples: self.samples.iter().map(|x| -x).collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn write_csv(&self, path: &Path, extra_comments: &[String]) -> Result<(), RdsimError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv_to(&mut w, extra_comments)?;
        w.flush()?;
        Ok(())
    }

    /// One sample per line after `#` comment lines holding the metadata.
    pub fn write_csv_to<W: Write>(&self, w: &mut W, extra_comments: &[String]) -> Result<(), RdsimError> {
        writeln!(w, "# bnews time series")?;
        writeln!(w, "# meta: {}", serde_json::to_string(&self.meta).expect("metadata serializes"))?;
        for c in extra_comments {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        writeln!(w, "x")?;
        for x in &self.samples {
            writeln!(w, "{x:?}")?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, RdsimError> {
        Self::read_csv_from(BufReader::new(File::open(path)?))
    }

    pub fn read_csv_from<R: BufRead>(r: R) -> Result<Self, RdsimError> {
        let mut meta = SeriesMeta::default();
        let mut samples = Vec::new();
        let mut header = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(c) = t.strip_prefix('#') {
                if let Some(m) = c.trim().strip_prefix("meta:") {
                    meta = serde_json::from_str(m.trim())
                        .map_err(|e| RdsimError::Format(format!("line {}: bad metadata: {e}", lineno + 1)))?;
                }
                continue;
            }
            if !header {
                if t != "x" {
                    return Err(RdsimError::Format(format!(
                        "line {}: expected header `x`, found `{t}`",
                        lineno + 1
                    )));
                }
                header = true;
                continue;
            }
            let v: f64 = t
                .parse()
                .map_err(|_| RdsimError::Format(format!("line {}: `{t}` is not a number", lineno + 1)))?;
            samples.push(v);
        }
        if !header {
            return Err(RdsimError::Format("missing header".into()));
        }
        Self::new(samples, meta).map_err(|e| RdsimError::Format(e.to_string()))
    }

    pub fn write_bnts(&self, path: &Path) -> Result<(), RdsimError> {
        let meta = serde_json::to_string(&self.meta).expect("metadata serializes");
        write_bnts(path, 1, &self.samples, &meta)
    }

    pub fn read_bnts(path: &Path) -> Result<Self, RdsimError> {
        let (channels, data, meta) = read_bnts(path)?;
        if channels != 1 {
            return Err(RdsimError::Format(format!("expected 1 channel, found {channels}")));
        }
        let meta = if meta.is_empty() {
            SeriesMeta::default()
        } else {
            serde_json::from_str(&meta).map_err(|e| RdsimError::Format(format!("bad metadata: {e}")))?
        };
        Self::new(data, meta).map_err(|e| RdsimError::Format(e.to_string()))
    }
}

/// Magic bytes of the binary series format.
pub const BNTS_MAGIC: &[u8; 4] = b"BNTS";
pub const BNTS_VERSION: u8 = 1;

/// Binary layout (little endian): magic `BNTS`, version `u8`, channel count
/// `u8`, metadata length `u32` followed by that many bytes of UTF-8 JSON,
/// value count `u64`, then the `f64` values interleaved by channel.
pub fn write_bnts(path: &Path, channels: u8, data: &[f64], meta_json: &str) -> Result<(), RdsimError> {
    if channels == 0 || data.len() % channels as usize != 0 {
        return Err(RdsimError::InvalidArgument(format!(
            "{} values do not split into {channels} channels",
            data.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BNTS_MAGIC)?;
    w.write_all(&[BNTS_VERSION, channels])?;
    let meta_len = u32::try_from(meta_json.len())
        .map_err(|_| RdsimError::InvalidArgument("metadata too large".into()))?;
    w.write_all(&meta_len.to_le_bytes())?;
    w.write_all(meta_json.as_bytes())?;
    w.write_all(&(data.len() as u64).to_le_bytes())?;
    for x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a binary series: `(channels, values, metadata JSON)`.
pub fn read_bnts(path: &Path) -> Result<(u8, Vec<f64>, String), RdsimError> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let bad = |m: &str| RdsimError::Format(m.to_string());
    if buf.len() < 10 || &buf[..4] != BNTS_MAGIC {
        return Err(bad("not a BNTS file"));
    }
    if buf[4] != BNTS_VERSION {
        return Err(RdsimError::Format(format!("unsupported BNTS version {}", buf[4])));
    }
    let channels = buf[5];
    let meta_len = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
    let meta_end = 10 + meta_len;
    if buf.len() < meta_end + 8 {
        return Err(bad("truncated header"));
    }
    let meta = String::from_utf8(buf[10..meta_end].to_vec()).map_err(|_| bad("metadata is not UTF-8"))?;
    let count = u64::from_le_bytes(buf[meta_end..meta_end + 8].try_into().unwrap()) as usize;
    let body = &buf[meta_end + 8..];
    if body.len() != count.checked_mul(8).ok_or_else(|| bad("count overflow"))? {
        return Err(RdsimError::Format(format!(
            "expected {count} values, found {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((channels, data, meta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Leading iterates discarded before recording.
    pub burn_in: usize,
    /// Escape interval; defaults to the map's domain inflated by 50%.
    pub guard: Option<Interval>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            burn_in: 1000,
            guard: None,
        }
    }
}

/// Iterates `map` from `x0` and returns `n_steps` samples after the burn-in.
///
/// The noise stream is `rng::stream_rng(seed, 0)`, one uniform per step, so
/// the output is a pure function of the inputs.
pub fn simulate(
    map: &RandomMap,
    noise: &NoiseModel,
    x0: f64,
    n_steps: usize,
    opts: &SimOptions,
    seed: u64,
) -> Result<TimeSeries, RdsimError> {
    if n_steps == 0 {
        return Err(RdsimError::InvalidArgument("n_steps must be at least 1".into()));
    }
    noise.validate()?;
    let guard = opts.guard.unwrap_or_else(|| map.default_guard());
    let mut r = rng::stream_rng(seed, 0);
    let mut x = x0;
    let mut out = Vec::with_capacity(n_steps);
    let total = opts.burn_in + n_steps;
    for step in 0..total {
        if !guard.contains(x) || !x.is_finite() {
            return Err(RdsimError::Divergence { step, value: x });
        }
        if step >= opts.burn_in {
            out.push(x);
        }
        if step + 1 < total {
            x = map.h(x, noise.sample(&mut r));
        }
    }
    let meta = SeriesMeta {
        seed: Some(seed),
        map: map.name().to_string(),
        noise: Some(*noise),
        burn_in: opts.burn_in,
        x0: Some(x0),
        rng: RNG_ALGORITHM.to_string(),
        params: BTreeMap::new(),
    };
    TimeSeries::new(out, meta)
}

/// `count` independent runs; run `i` uses seed `rng::split_seed(base_seed, i)`.
pub fn simulate_many(
    map: &RandomMap,
    noise: &NoiseModel,
    x0: f64,
    n_steps: usize,
    opts: &SimOptions,
    base_seed: u64,
    count: usize,
) -> Vec<Result<TimeSeries, RdsimError>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| simulate(map, noise, x0, n_steps, opts, rng::split_seed(base_seed, i)))
        .collect()
}

/// `[min, max]` of the samples: an inner approximation of the minimal
/// invariant set visited by the orbit.
pub fn empirical_support(series: &TimeSeries) -> Interval {
    let (lo, hi) = series
        .samples()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    Interval { lo, hi }
}

/// Number and fraction of samples inside `iv`.
pub fn occupancy(series: &TimeSeries, iv: Interval) -> (usize, f64) {
    let k = series.samples().iter().filter(|&&x| iv.contains(x)).count();
    (k, k as f64 / series.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn half_map() -> (RandomMap, NoiseModel) {
        let noise = NoiseModel::uniform(-1.0, 1.0).unwrap();
        (RandomMap::additive("half", |x| 0.5 * x, &noise, Interval { lo: -10.0, hi: 10.0 }), noise)
    }

    #[test]
    fn linear_map_stays_in_invariant_set() {
        let (m, n) = half_map();
        let s = simulate(&m, &n, 0.0, 10_000, &SimOptions::default(), 1).unwrap();
        assert_eq!(s.len(), 10_000);
        assert!(s.samples().iter().all(|x| (-2.0..=2.0).contains(x)));
    }

    #[test]
    fn drift_escapes_guard() {
        let noise = NoiseModel::uniform(0.0, 0.0).unwrap();
        let m = RandomMap::additive("drift", |x| x + 1.0, &noise, Interval { lo: -10.0, hi: 10.0 });
        let opts = SimOptions {
            burn_in: 0,
            guard: Some(Interval { lo: -10.0, hi: 10.0 }),
        };
        match simulate(&m, &noise, 0.0, 100, &opts, 3) {
            Err(RdsimError::Divergence { step, .. }) => assert!(step >= 9, "{step}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn same_seed_same_series() {
        let (m, n) = half_map();
        let a = simulate(&m, &n, 0.3, 1000, &SimOptions::default(), 77).unwrap();
        let b = simulate(&m, &n, 0.3, 1000, &SimOptions::default(), 77).unwrap();
        let c = simulate(&m, &n, 0.3, 1000, &SimOptions::default(), 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn many_runs_independent_of_thread_count() {
        let (m, n) = half_map();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_many(&m, &n, 0.0, 500, &SimOptions::default(), 9, 16))
                .into_iter()
                .map(|r| r.unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn zero_steps_rejected() {
        let (m, n) = half_map();
        assert!(simulate(&m, &n, 0.0, 0, &SimOptions::default(), 1).is_err());
    }

    #[test]
    fn bad_noise_rejected() {
        assert!(NoiseModel::uniform(1.0, 0.0).is_err());
        assert!(NoiseModel::scaled_unit(-1.0).is_err());
        assert!(NoiseModel::uniform(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn support_and_occupancy() {
        let c = TimeSeries::from_samples(vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(empirical_support(&c), Interval { lo: 1.0, hi: 1.0 });
        assert_eq!(occupancy(&c, Interval { lo: 0.0, hi: 2.0 }), (3, 1.0));
        assert_eq!(occupancy(&c, Interval { lo: 2.0, hi: 3.0 }), (0, 0.0));
        assert_eq!(occupancy(&c, Interval::point(0.5)).0, 0);
    }

    #[test]
    fn long_run_support_approaches_invariant_set() {
        // The stationary density of x ↦ x/2 + ξ vanishes to high order at
        // ±2, so the empirical support converges slowly from inside: after
        // 10⁶ steps it typically reaches ±(1.85–1.9).
        let (m, n) = half_map();
        let short = empirical_support(&simulate(&m, &n, 0.0, 10_000, &SimOptions::default(), 5).unwrap());
        let long = empirical_support(&simulate(&m, &n, 0.0, 1_000_000, &SimOptions::default(), 5).unwrap());
        assert!(long.is_subset_of(&Interval { lo: -2.0, hi: 2.0 }, 0.0));
        assert!(long.lo <= short.lo && long.hi >= short.hi);
        assert!(long.lo < -1.8 && long.hi > 1.8, "{long}");
    }

    #[test]
    fn uniform_occupancy_is_binomial() {
        let noise = NoiseModel::scaled_unit(1.0).unwrap();
        let m = RandomMap::additive("iid", |_| 0.0, &noise, Interval { lo: 0.0, hi: 1.0 });
        let n = 100_000;
        let s = simulate(&m, &noise, 0.5, n, &SimOptions::default(), 11).unwrap();
        let (_, frac) = occupancy(&s, Interval { lo: 0.0, hi: 0.5 });
        let sd = (0.25 / n as f64).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * sd, "{frac}");
    }

    #[test]
    fn csv_round_trip() {
        let (m, n) = half_map();
        let s = simulate(&m, &n, 0.1, 200, &SimOptions::default(), 4).unwrap();
        let mut buf = Vec::new();
        s.write_csv_to(&mut buf, &["config line".into()]).unwrap();
        let back = TimeSeries::read_csv_from(&buf[..]).unwrap();
        assert_eq!(back, s);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l == "x"));
        assert!(text.starts_with("# bnews time series"));
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(TimeSeries::read_csv_from("x\n1.0\nfoo\n".as_bytes()).is_err());
        assert!(TimeSeries::read_csv_from("1.0\n".as_bytes()).is_err());
        assert!(TimeSeries::read_csv_from("x\n".as_bytes()).is_err());
    }

    #[test]
    fn bnts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bnts");
        let (m, n) = half_map();
        let s = simulate(&m, &n, 0.1, 300, &SimOptions::default(), 4).unwrap();
        s.write_bnts(&p).unwrap();
        assert_eq!(TimeSeries::read_bnts(&p).unwrap(), s);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"BNTS");
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(TimeSeries::read_bnts(&p), Err(RdsimError::Format(_))));
    }

    #[test]
    fn bnts_three_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bnts");
        let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        write_bnts(&p, 3, &data, "{}").unwrap();
        let (c, d, meta) = read_bnts(&p).unwrap();
        assert_eq!((c, d.as_slice(), meta.as_str()), (3, &data[..], "{}"));
        assert!(write_bnts(&p, 4, &data, "").is_err());
    }

    proptest! {
        #[test]
        fn successors_lie_in_image(x in -5.0..5.0f64, u in 0.0..1.0f64, a in -0.9..0.9f64, w in 0.01..2.0f64) {
            let noise = NoiseModel::uniform(-w / 2.0, w / 2.0).unwrap();
            let m = RandomMap::affine(a, 0.3, &noise);
            let xi = noise.support().lo + u * w;
            let y = m.h(x, xi);
            prop_assert!(y >= m.f_minus(x) - 1e-12);
            prop_assert!(y <= m.f_minus(x) + m.image_len(x) + 1e-12);
            let g = m.g(x, xi);
            prop_assert!((-1e-12..=m.image_len(x) + 1e-12).contains(&g));
        }
    }
}

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

use super::SetValuedError;

/// Gap below which neighbouring components are merged.
pub const MERGE_GAP: f64 = 1e-12;

/// Closed interval `[lo, hi]` with `lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, SetValuedError> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(SetValuedError::InvalidArgument(format!(
                "interval [{lo}, {hi}] is not a finite closed interval"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Distance from `x` to the interval.
    pub fn dist(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }

    pub fn is_subset_of(&self, other: &Interval, tol: f64) -> bool {
        self.lo >= other.lo - tol && self.hi <= other.hi + tol
    }

    /// `n` evenly spaced points including both ends (`n >= 2`).
    pub fn linspace(&self, n: usize) -> impl Iterator<Item = f64> + '_ {
        let n = n.max(2);
        let step = self.len() / (n - 1) as f64;
        (0..n).map(move |i| {
            if i == n - 1 {
                self.hi
            } else {
                self.lo + step * i as f64
            }
        })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.lo, self.hi].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [lo, hi] = <[f64; 2]>::deserialize(d)?;
        Interval::new(lo, hi).map_err(serde::de::Error::custom)
    }
}

/// Finite union of disjoint closed intervals in canonical form: sorted,
/// pairwise disjoint, with components closer than [`MERGE_GAP`] merged.
///
/// Serializes as a sorted JSON array of `[lo, hi]` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalUnion {
    components: Vec<Interval>,
}

impl IntervalUnion {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn single(iv: Interval) -> Self {
        Self {
            components: vec![iv],
        }
    }

    /// Canonicalizes an arbitrary collection of intervals.
    pub fn from_intervals<I: IntoIterator<Item = Interval>>(ivs: I) -> Self {
        let mut v: Vec<Interval> = ivs.into_iter().collect();
        v.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        let mut out: Vec<Interval> = Vec::with_capacity(v.len());
        for iv in v {
            match out.last_mut() {
                Some(last) if iv.lo - last.hi < MERGE_GAP => {
                    last.hi = last.hi.max(iv.hi);
                }
                _ => out.push(iv),
            }
        }
        Self { components: out }
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self, SetValuedError> {
        let ivs = pairs
            .iter()
            .map(|&(a, b)| Interval::new(a, b))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_intervals(ivs))
    }

    pub fn components(&self) -> &[Interval] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Smallest interval containing the union.
    pub fn hull(&self) -> Option<Interval> {
        Some(Interval {
            lo: self.components.first()?.lo,
            hi: self.components.last()?.hi,
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.components.iter().any(|c| c.contains(x))
    }

    pub fn dist(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.dist(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn union(&self, other: &IntervalUnion) -> IntervalUnion {
        Self::from_intervals(self.components.iter().chain(&other.components).copied())
    }

    /// Total Lebesgue measure.
    pub fn measure(&self) -> f64 {
        self.components.iter().map(Interval::len).sum()
    }
}

impl fmt::Display for IntervalUnion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.components.is_empty() {
            return write!(f, "∅");
        }
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, " ∪ ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl Serialize for IntervalUnion {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.components.serialize(s)
    }
}

impl<'de> Deserialize<'de> for IntervalUnion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<Interval>::deserialize(d)?;
        Ok(Self::from_intervals(v))
    }
}

/// Hausdorff semi-distance `d(A|B) = sup_{x∈A} dist(x, B)`.
///
/// On a component of `A`, `dist(·, B)` is piecewise linear with maxima at
/// the component ends or at midpoints of gaps of `B`, so the supremum is
/// attained on that finite candidate set.
fn semi_distance(a: &IntervalUnion, b: &IntervalUnion) -> f64 {
    let gap_mids: Vec<f64> = b
        .components
        .windows(2)
        .map(|w| 0.5 * (w[0].hi + w[1].lo))
        .collect();
    let mut best = 0.0_f64;
    for c in &a.components {
        best = best.max(b.dist(c.lo)).max(b.dist(c.hi));
        for &m in gap_mids.iter().filter(|&&m| c.contains(m)) {
            best = best.max(b.dist(m));
        }
    }
    best
}

/// Hausdorff distance between two nonempty interval unions.
pub fn hausdorff(a: &IntervalUnion, b: &IntervalUnion) -> Result<f64, SetValuedError> {
    if a.is_empty() || b.is_empty() {
        return Err(SetValuedError::InvalidArgument(
            "Hausdorff distance of an empty set".into(),
        ));
    }
    Ok(semi_distance(a, b).max(semi_distance(b, a)))
}

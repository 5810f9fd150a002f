//! Piecewise-constant allocation policies `t -> K(n,t)`.

use serde::{Deserialize, Serialize};

/// One interval `[t_lo, t_hi)` on which the allocation is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyInterval {
    pub t_lo: f64,
    pub t_hi: f64,
    pub k: usize,
}

/// A partition of `[0, t_max)` into left-closed, right-open intervals with
/// an allocation count on each. The last interval also covers `t_max`
/// itself so that lookups at the horizon are defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiecewisePolicy {
    intervals: Vec<PolicyInterval>,
}

impl PiecewisePolicy {
    /// Builds a policy from `(start, k)` switch points on `[0, t_max]`.
    /// Consecutive equal labels are merged and intervals narrower than
    /// `min_width` are absorbed into their successor.
    pub(crate) fn from_switches(switches: &[(f64, usize)], t_max: f64, min_width: f64) -> Self {
        let mut cleaned: Vec<(f64, usize)> = Vec::with_capacity(switches.len());
        for (idx, &(start, k)) in switches.iter().enumerate() {
            let end = switches.get(idx + 1).map_or(t_max, |s| s.0);
            if end - start < min_width && idx + 1 < switches.len() && idx > 0 {
                continue;
            }
            match cleaned.last() {
                Some(&(_, prev)) if prev == k => {}
                _ => cleaned.push((start, k)),
            }
        }
        if let Some(first) = cleaned.first_mut() {
            first.0 = 0.0;
        }
        let intervals = cleaned
            .iter()
            .enumerate()
            .map(|(i, &(t_lo, k))| PolicyInterval {
                t_lo,
                t_hi: cleaned.get(i + 1).map_or(t_max, |s| s.0),
                k,
            })
            .collect();
        Self { intervals }
    }

    pub fn constant(k: usize, t_max: f64) -> Self {
        Self {
            intervals: vec![PolicyInterval {
                t_lo: 0.0,
                t_hi: t_max,
                k,
            }],
        }
    }

    /// Wraps intervals without checking that they partition a domain.
    pub fn from_intervals(intervals: Vec<PolicyInterval>) -> Self {
        Self { intervals }
    }

    pub fn intervals(&self) -> &[PolicyInterval] {
        &self.intervals
    }

    pub fn t_max(&self) -> f64 {
        self.intervals.last().map_or(0.0, |iv| iv.t_hi)
    }

    /// Interior switch times, in increasing order.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.intervals.iter().skip(1).map(|iv| iv.t_lo).collect()
    }

    /// The sequence of allocation values visited as `t` increases.
    pub fn labels(&self) -> Vec<usize> {
        self.intervals.iter().map(|iv| iv.k).collect()
    }

    /// Allocation at time `t`, or `None` outside `[0, t_max]`.
    pub fn k_at(&self, t: f64) -> Option<usize> {
        if !(t >= 0.0 && t <= self.t_max()) {
            return None;
        }
        let idx = self.intervals.partition_point(|iv| iv.t_hi <= t);
        let idx = idx.min(self.intervals.len() - 1);
        Some(self.intervals[idx].k)
    }

    /// Overlapping pieces of two policies on a common domain, as
    /// `(t_lo, t_hi, k_self, k_other)`.
    pub fn overlay(&self, other: &PiecewisePolicy) -> Vec<(f64, f64, usize, usize)> {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.intervals.len() && j < other.intervals.len() {
            let a = self.intervals[i];
            let b = other.intervals[j];
            let lo = a.t_lo.max(b.t_lo);
            let hi = a.t_hi.min(b.t_hi);
            if hi > lo {
                out.push((lo, hi, a.k, b.k));
            }
            if a.t_hi <= b.t_hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        out
    }
}

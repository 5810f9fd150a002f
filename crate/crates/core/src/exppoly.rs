//! Closed-form algebra for functions `alpha + e^(-t) p(t)` with polynomial
//! `p`, and their piecewise versions on `[0, t_max]`.
//!
//! Every value function of the allocation problem lives in this family, and
//! the family is closed under the exponential smoothing
//! `S[f](t) = e^(-t) ∫_0^t f(x) e^x dx`. Pieces are stored relative to an
//! anchor `s` as `alpha + e^(-(t-s)) Σ γ_m (t-s)^m`; this is the same family
//! (rebasing to `s = 0` recovers the plain `t^m e^(-t)` coefficients) but
//! keeps coefficients of order one far from the origin.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::policy::PiecewisePolicy;

/// Bracket width at which crossing times are considered located.
pub const ROOT_TOL: f64 = 1e-10;
/// Allowed jump between left and right limits at an interior breakpoint.
pub const CONTINUITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpPolyError {
    #[error("t = {t} outside domain [0, {t_max}]")]
    OutOfDomain { t: f64, t_max: f64 },
    #[error("breakpoints must start at 0 and be strictly increasing")]
    BadBreakpoints,
    #[error("{pieces} pieces need {} breakpoints, got {breaks}", pieces + 1)]
    PieceCount { pieces: usize, breaks: usize },
    #[error("discontinuity of {jump:e} at t = {t}")]
    Discontinuous { t: f64, jump: f64 },
    #[error("candidate domains differ")]
    DomainMismatch,
    #[error("no candidates given")]
    NoCandidates,
    #[error("{labels} labels for {candidates} candidates")]
    LabelCount { labels: usize, candidates: usize },
    #[error("invalid bracket [{lo}, {hi}]")]
    InvalidBracket { lo: f64, hi: f64 },
}

/// `alpha + e^(-(t-anchor)) Σ coeffs[m] (t-anchor)^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpPoly {
    alpha: f64,
    anchor: f64,
    coeffs: Vec<f64>,
}

fn trim(mut coeffs: Vec<f64>) -> Vec<f64> {
    while coeffs.last() == Some(&0.0) {
        coeffs.pop();
    }
    coeffs
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

impl ExpPoly {
    /// `alpha + e^(-t) Σ coeffs[m] t^m`.
    pub fn new(alpha: f64, coeffs: Vec<f64>) -> Self {
        Self::anchored(alpha, 0.0, coeffs)
    }

    pub fn anchored(alpha: f64, anchor: f64, coeffs: Vec<f64>) -> Self {
        Self {
            alpha,
            anchor,
            coeffs: trim(coeffs),
        }
    }

    pub fn constant(alpha: f64) -> Self {
        Self::new(alpha, Vec::new())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    /// Coefficients relative to [`Self::anchor`].
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Polynomial degree, `None` for a pure constant.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn eval(&self, t: f64) -> f64 {
        if self.coeffs.is_empty() {
            return self.alpha;
        }
        let x = t - self.anchor;
        self.alpha + (-x).exp() * horner(&self.coeffs, x)
    }

    /// First derivative, evaluated directly.
    pub fn derivative(&self, t: f64) -> f64 {
        if self.coeffs.is_empty() {
            return 0.0;
        }
        let x = t - self.anchor;
        let dp: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(m, &c)| m as f64 * c)
            .collect();
        (-x).exp() * (horner(&dp, x) - horner(&self.coeffs, x))
    }

    /// The same function expressed about a new anchor.
    pub fn rebase(&self, anchor: f64) -> Self {
        if anchor == self.anchor || self.coeffs.is_empty() {
            return Self {
                anchor,
                ..self.clone()
            };
        }
        // e^(-(t-a)) = e^(-(t-b)) e^(-(b-a)),  (t-a)^m = Σ_k C(m,k) (t-b)^k (b-a)^(m-k)
        let d = anchor - self.anchor;
        let scale = (-d).exp();
        let deg = self.coeffs.len();
        let pows: Vec<f64> = (0..deg).map(|i| d.powi(i as i32)).collect();
        let mut out = vec![0.0; deg];
        for (m, &c) in self.coeffs.iter().enumerate() {
            let mut binom = 1.0;
            for (k, slot) in out.iter_mut().enumerate().take(m + 1) {
                *slot += c * binom * pows[m - k];
                binom = binom * (m - k) as f64 / (k + 1) as f64;
            }
        }
        for c in &mut out {
            *c *= scale;
        }
        Self::anchored(self.alpha, anchor, out)
    }

    /// Coefficients `β_m` of the plain form `alpha + e^(-t) Σ β_m t^m`.
    /// Loses relative precision when the anchor is far from zero.
    pub fn global_coeffs(&self) -> Vec<f64> {
        self.rebase(0.0).coeffs
    }

    /// `offset + scale * self`.
    pub fn scale_offset(&self, scale: f64, offset: f64) -> Self {
        Self::anchored(
            offset + scale * self.alpha,
            self.anchor,
            self.coeffs.iter().map(|c| scale * c).collect(),
        )
    }

    /// `self - other`, expressed about `self`'s anchor.
    pub fn sub(&self, other: &ExpPoly) -> Self {
        let other = other.rebase(self.anchor);
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len)
            .map(|m| {
                self.coeffs.get(m).copied().unwrap_or(0.0)
                    - other.coeffs.get(m).copied().unwrap_or(0.0)
            })
            .collect();
        Self::anchored(self.alpha - other.alpha, self.anchor, coeffs)
    }

    /// Smoothing of this piece started at its anchor with initial value
    /// `start`: the solution of `y' = f - y`, `y(anchor) = start`.
    fn smooth_piece(&self, start: f64) -> Self {
        let mut coeffs = Vec::with_capacity(self.coeffs.len() + 1);
        coeffs.push(start - self.alpha);
        coeffs.extend(
            self.coeffs
                .iter()
                .enumerate()
                .map(|(m, &c)| c / (m + 1) as f64),
        );
        Self::anchored(self.alpha, self.anchor, coeffs)
    }
}

/// A continuous function on `[0, t_max]` made of [`ExpPoly`] pieces, piece
/// `k` valid on `[breaks[k], breaks[k+1])` and anchored at `breaks[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseExpPoly {
    breaks: Vec<f64>,
    pieces: Vec<ExpPoly>,
}

impl PiecewiseExpPoly {
    /// Builds a piecewise function, rebasing each piece onto its left
    /// breakpoint and checking continuity.
    pub fn new(breaks: Vec<f64>, pieces: Vec<ExpPoly>) -> Result<Self, ExpPolyError> {
        if breaks.len() != pieces.len() + 1 || pieces.is_empty() {
            return Err(ExpPolyError::PieceCount {
                pieces: pieces.len(),
                breaks: breaks.len(),
            });
        }
        if breaks[0] != 0.0 || breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ExpPolyError::BadBreakpoints);
        }
        let pieces: Vec<ExpPoly> = pieces
            .iter()
            .zip(&breaks)
            .map(|(p, &lo)| p.rebase(lo))
            .collect();
        for k in 1..pieces.len() {
            let t = breaks[k];
            let jump = (pieces[k - 1].eval(t) - pieces[k].eval(t)).abs();
            let scale = pieces[k].eval(t).abs().max(1.0);
            if jump > CONTINUITY_TOL * scale {
                return Err(ExpPolyError::Discontinuous { t, jump });
            }
        }
        Ok(Self { breaks, pieces })
    }

    pub fn single(piece: ExpPoly, t_max: f64) -> Result<Self, ExpPolyError> {
        Self::new(vec![0.0, t_max], vec![piece])
    }

    pub fn constant(value: f64, t_max: f64) -> Result<Self, ExpPolyError> {
        Self::single(ExpPoly::constant(value), t_max)
    }

    pub fn t_max(&self) -> f64 {
        *self.breaks.last().expect("non-empty")
    }

    /// All breaks, `0` and `t_max` included.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[ExpPoly] {
        &self.pieces
    }

    /// Index of the piece active at `t` (left-closed, right-open; the last
    /// piece also owns `t_max`).
    pub fn piece_index(&self, t: f64) -> Option<usize> {
        if !(t >= 0.0 && t <= self.t_max()) {
            return None;
        }
        let idx = self.breaks[1..].partition_point(|&b| b <= t);
        Some(idx.min(self.pieces.len() - 1))
    }

    pub fn evaluate(&self, t: f64) -> Result<f64, ExpPolyError> {
        self.piece_index(t)
            .map(|k| self.pieces[k].eval(t))
            .ok_or(ExpPolyError::OutOfDomain {
                t,
                t_max: self.t_max(),
            })
    }

    /// Largest polynomial degree over all pieces.
    pub fn max_degree(&self) -> Option<usize> {
        self.pieces.iter().filter_map(ExpPoly::degree).max()
    }

    /// `offset + scale * self`, coefficient-wise.
    pub fn linear_combine(&self, scale: f64, offset: f64) -> Self {
        Self {
            breaks: self.breaks.clone(),
            pieces: self
                .pieces
                .iter()
                .map(|p| p.scale_offset(scale, offset))
                .collect(),
        }
    }

    /// `S[f](t) = e^(-t) ∫_0^t f(x) e^x dx`, in closed form. The value at
    /// each breakpoint is carried into the next piece as its initial value.
    pub fn smooth(&self) -> Self {
        let mut start = 0.0;
        let mut pieces = Vec::with_capacity(self.pieces.len());
        for (k, piece) in self.pieces.iter().enumerate() {
            let smoothed = piece.smooth_piece(start);
            start = smoothed.eval(self.breaks[k + 1]);
            pieces.push(smoothed);
        }
        Self {
            breaks: self.breaks.clone(),
            pieces,
        }
    }

    /// The same function with extra breakpoints inserted. `points` must be
    /// sorted; points outside `(0, t_max)` or already present are ignored.
    pub fn refine(&self, points: &[f64]) -> Self {
        let breaks = merge_breaks(&[&self.breaks, points], self.t_max());
        let pieces = breaks[..breaks.len() - 1]
            .iter()
            .map(|&lo| {
                let k = self.piece_index(lo).expect("inside domain");
                self.pieces[k].rebase(lo)
            })
            .collect();
        Self { breaks, pieces }
    }

    /// Pointwise difference on the union of both breakpoint sets.
    pub fn sub(&self, other: &PiecewiseExpPoly) -> Result<Self, ExpPolyError> {
        if !same_domain(self.t_max(), other.t_max()) {
            return Err(ExpPolyError::DomainMismatch);
        }
        let breaks = merge_breaks(&[&self.breaks, &other.breaks], self.t_max());
        let lhs = self.refine(&breaks);
        let rhs = other.refine(&breaks);
        let pieces = lhs
            .pieces
            .iter()
            .zip(&rhs.pieces)
            .map(|(a, b)| a.sub(b))
            .collect();
        Ok(Self { breaks, pieces })
    }

    /// First time in `[lo, hi]` at which the function changes sign, located
    /// piece by piece with [`find_root`].
    pub fn find_root(&self, lo: f64, hi: f64, tol: f64) -> Result<Option<f64>, ExpPolyError> {
        if !(lo < hi) || lo < 0.0 || hi > self.t_max() {
            return Err(ExpPolyError::InvalidBracket { lo, hi });
        }
        let start = self.piece_index(lo).expect("checked");
        for k in start..self.pieces.len() {
            let a = self.breaks[k].max(lo);
            let b = self.breaks[k + 1].min(hi);
            if a >= b {
                break;
            }
            if let Some(r) = find_root(&self.pieces[k], a, b, tol)? {
                return Ok(Some(r));
            }
        }
        Ok(None)
    }
}

fn same_domain(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(1.0)
}

/// Sorted union of breakpoint lists on `[0, t_max]`, dropping duplicates and
/// anything closer than the root tolerance to an existing point.
fn merge_breaks(lists: &[&[f64]], t_max: f64) -> Vec<f64> {
    let mut all: Vec<f64> = lists
        .iter()
        .flat_map(|l| l.iter().copied())
        .filter(|&t| t > 0.0 && t < t_max)
        .collect();
    all.sort_by(f64::total_cmp);
    let mut out = vec![0.0];
    for t in all {
        if t - out.last().unwrap() > ROOT_TOL * 1e-2 {
            out.push(t);
        }
    }
    if t_max - out.last().unwrap() <= ROOT_TOL * 1e-2 && out.len() > 1 {
        out.pop();
    }
    out.push(t_max);
    out
}

/// Default crossing-scan step for a horizon.
pub fn default_scan_step(t_max: f64) -> f64 {
    (1e-3f64).min(t_max / 1e4)
}

/// Locates the first sign change of `g` on `[lo, hi]` by scanning a uniform
/// grid and bisecting the first bracketing cell down to width `tol`.
/// Returns `None` when no sign change shows at grid resolution.
pub fn find_root(g: &ExpPoly, lo: f64, hi: f64, tol: f64) -> Result<Option<f64>, ExpPolyError> {
    if !(lo < hi) {
        return Err(ExpPolyError::InvalidBracket { lo, hi });
    }
    let step = default_scan_step(hi - lo);
    let cells = ((hi - lo) / step).ceil() as usize;
    let mut a = lo;
    let mut ga = g.eval(a);
    if ga == 0.0 {
        return Ok(Some(a));
    }
    for i in 1..=cells {
        let b = if i == cells { hi } else { lo + i as f64 * step };
        let gb = g.eval(b);
        if gb == 0.0 {
            return Ok(Some(b));
        }
        if (ga < 0.0) != (gb < 0.0) {
            return Ok(Some(bisect(|t| (g.eval(t) < 0.0) == (gb < 0.0), a, b, tol)));
        }
        a = b;
        ga = gb;
    }
    Ok(None)
}

/// Bisection on a predicate that is false at `lo` and true at `hi`.
/// Returns the right end of the final bracket.
fn bisect(pred: impl Fn(f64) -> bool, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Tunables for [`upper_envelope`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeOptions {
    /// Grid step for sign-change detection.
    pub scan_step: f64,
    /// Final bracket width for crossing times.
    pub root_tol: f64,
}

impl EnvelopeOptions {
    pub fn for_horizon(t_max: f64) -> Self {
        Self {
            scan_step: default_scan_step(t_max),
            root_tol: ROOT_TOL,
        }
    }
}

struct Scan<'a> {
    // active piece of every candidate on the current elementary interval
    active: Vec<&'a ExpPoly>,
}

impl Scan<'_> {
    /// Does candidate `j` strictly beat `cur` at `t`? Values within a few
    /// ulps count as a tie, and ties go to the smaller index.
    fn beats(&self, j: usize, cur: usize, t: f64) -> bool {
        let fj = self.active[j].eval(t);
        let fc = self.active[cur].eval(t);
        let tie = 4.0 * f64::EPSILON * fj.abs().max(fc.abs()).max(1.0);
        let d = fj - fc;
        d > tie || (d >= -tie && j < cur)
    }

    fn winner(&self, t: f64) -> usize {
        let mut best = 0;
        for j in 1..self.active.len() {
            if self.beats(j, best, t) {
                best = j;
            }
        }
        best
    }
}

/// Pointwise maximum of `fs` together with its argmax partition. Ties go to
/// the smallest label, and every crossing found on the scan grid is refined
/// by bisection.
pub fn upper_envelope(
    fs: &[PiecewiseExpPoly],
    labels: &[usize],
    opts: EnvelopeOptions,
) -> Result<(PiecewiseExpPoly, PiecewisePolicy), ExpPolyError> {
    let first = fs.first().ok_or(ExpPolyError::NoCandidates)?;
    if labels.len() != fs.len() {
        return Err(ExpPolyError::LabelCount {
            labels: labels.len(),
            candidates: fs.len(),
        });
    }
    let t_max = first.t_max();
    if fs.iter().any(|f| !same_domain(f.t_max(), t_max)) {
        return Err(ExpPolyError::DomainMismatch);
    }
    let lists: Vec<&[f64]> = fs.iter().map(|f| f.breakpoints()).collect();
    let grid = merge_breaks(&lists, t_max);

    // (start, candidate index, piece index within that candidate)
    let mut segments: Vec<(f64, usize, usize)> = Vec::new();
    for w in grid.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let piece_idx: Vec<usize> = fs
            .iter()
            .map(|f| f.piece_index(lo).expect("inside domain"))
            .collect();
        let scan = Scan {
            active: fs
                .iter()
                .zip(&piece_idx)
                .map(|(f, &k)| &f.pieces[k])
                .collect(),
        };
        let mut cur = scan.winner(lo);
        segments.push((lo, cur, piece_idx[cur]));

        let mut prev = lo;
        let mut g = (lo / opts.scan_step).floor() as i64 + 1;
        loop {
            let mut t = g as f64 * opts.scan_step;
            let last = t >= hi;
            if last {
                t = hi;
            }
            let mut guard = 0;
            loop {
                let challengers: Vec<usize> = (0..fs.len())
                    .filter(|&j| j != cur && scan.beats(j, cur, t))
                    .collect();
                if challengers.is_empty() || guard > 2 * fs.len() {
                    break;
                }
                guard += 1;
                let (root, next) = challengers
                    .iter()
                    .map(|&j| {
                        let r = if scan.beats(j, cur, prev) {
                            prev
                        } else {
                            bisect(|s| scan.beats(j, cur, s), prev, t, opts.root_tol)
                        };
                        (r, j)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .expect("non-empty");
                if root >= hi {
                    // belongs to the next elementary interval
                    break;
                }
                cur = next;
                prev = root;
                segments.push((root, cur, piece_idx[cur]));
            }
            if last {
                break;
            }
            prev = t;
            g += 1;
        }
    }

    let switches: Vec<(f64, usize)> = segments.iter().map(|&(s, j, _)| (s, labels[j])).collect();
    let policy = PiecewisePolicy::from_switches(&switches, t_max, opts.root_tol);

    // Value pieces: merge runs that come from the same candidate piece.
    let mut breaks = Vec::new();
    let mut pieces = Vec::new();
    let mut last_key = None;
    for (idx, &(start, j, k)) in segments.iter().enumerate() {
        let end = segments.get(idx + 1).map_or(t_max, |s| s.0);
        if end - start < opts.root_tol && idx + 1 < segments.len() {
            continue;
        }
        if last_key == Some((j, k)) {
            continue;
        }
        last_key = Some((j, k));
        let start = if breaks.is_empty() { 0.0 } else { start };
        breaks.push(start);
        pieces.push(fs[j].pieces[k].rebase(start));
    }
    breaks.push(t_max);
    let envelope = PiecewiseExpPoly::new(breaks, pieces)?;
    Ok((envelope, policy))
}

#[derive(Serialize, Deserialize)]
struct PieceRecord {
    t_lo: f64,
    t_hi: f64,
    alpha: f64,
    coeffs: Vec<f64>,
}

/// Serialized as an array of `{t_lo, t_hi, alpha, coeffs}` where
/// `coeffs[m]` multiplies `(t - t_lo)^m e^(-(t - t_lo))`.
impl Serialize for PiecewiseExpPoly {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let records: Vec<PieceRecord> = self
            .pieces
            .iter()
            .zip(self.breaks.windows(2))
            .map(|(p, w)| PieceRecord {
                t_lo: w[0],
                t_hi: w[1],
                alpha: p.alpha,
                coeffs: p.coeffs.clone(),
            })
            .collect();
        records.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PiecewiseExpPoly {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let records = Vec::<PieceRecord>::deserialize(deserializer)?;
        let mut breaks: Vec<f64> = records.iter().map(|r| r.t_lo).collect();
        if let Some(last) = records.last() {
            breaks.push(last.t_hi);
        }
        if records.windows(2).any(|w| w[0].t_hi != w[1].t_lo) {
            return Err(D::Error::custom("pieces are not contiguous"));
        }
        let pieces = records
            .into_iter()
            .map(|r| ExpPoly::anchored(r.alpha, r.t_lo, r.coeffs))
            .collect();
        PiecewiseExpPoly::new(breaks, pieces).map_err(D::Error::custom)
    }
}

//! Executable checks of the structural properties of optimal policies:
//!
//! * `A`: `K(n,t)` non-increasing in `t` for fixed `n`;
//! * `B`: `K(n,t)` non-decreasing in `n` for fixed `t`;
//! * `C`: `n - K(n,t)` non-decreasing in `n`, i.e. `K(n+1,t) <= K(n,t) + 1`;
//!
//! plus the invincible-fighter range/interlacing/concavity facts, the frail
//! ratio monotonicity, the long-horizon limits and the frail "always spend
//! everything" regime. Policy comparisons are done on exact interval
//! overlays; value comparisons on an explicit [`TimeGrid`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::{SolveError, ValueTable};

/// Strict-interlacing margin for invincible thresholds.
pub const INTERLACE_MARGIN: f64 = 1e-9;
/// Tolerance of the long-horizon limit checks.
pub const LIMIT_TOL: f64 = 1e-6;
/// Probe time of the `t -> 0` limit check.
pub const SMALL_TIME: f64 = 1e-6;
/// Minimum horizon for [`audit_limits`] and [`audit_all_in_regime`].
pub const LONG_HORIZON: f64 = 50.0;
/// Relative slack for monotonicity of sampled values.
const VALUE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("{property} is not applicable: {reason}")]
    NotApplicable { property: Property, reason: String },
    #[error("t_max too small: policy({n}) only reaches k = {smallest_k}; raise t_max")]
    HorizonTooShort { n: usize, smallest_k: usize },
    #[error("t_max = {t_max} too small, need at least {required}")]
    HorizonBelow { t_max: f64, required: f64 },
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Property {
    A,
    B,
    C,
    Range,
    Interlace,
    ConcaveN,
    Tp2,
    Limits,
    AllIn,
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Property::A => "A",
            Property::B => "B",
            Property::C => "C",
            Property::Range => "RANGE",
            Property::Interlace => "INTERLACE",
            Property::ConcaveN => "CONCAVE_N",
            Property::Tp2 => "TP2",
            Property::Limits => "LIMITS",
            Property::AllIn => "ALL_IN",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Property {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "A" => Property::A,
            "B" => Property::B,
            "C" => Property::C,
            "RANGE" => Property::Range,
            "INTERLACE" => Property::Interlace,
            "CONCAVE_N" => Property::ConcaveN,
            "TP2" => Property::Tp2,
            "LIMITS" => Property::Limits,
            "ALL_IN" => Property::AllIn,
            other => return Err(format!("unknown property {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Violated,
}

/// What a verdict is expected to be on theoretical grounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guarantee {
    /// Proven to hold for these parameters.
    Proven,
    /// A violation is known to exist for these parameters.
    KnownCounterexample,
    /// No guarantee either way; the outcome is recorded as found.
    Unproven,
}

/// Uniform time grid `start, start + step, ... <= end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, step: f64) -> Self {
        Self { start, end, step }
    }

    /// Grid over the whole horizon of a table.
    pub fn covering(table: &ValueTable, step: f64) -> Self {
        Self::new(0.0, table.t_max(), step)
    }

    pub fn points(&self) -> Vec<f64> {
        let count = ((self.end - self.start) / self.step + 1e-9).floor() as usize;
        (0..=count)
            .map(|i| (self.start + i as f64 * self.step).min(self.end))
            .collect()
    }

    /// First grid point in `[lo, hi)`, if any.
    fn first_in(&self, lo: f64, hi: f64) -> Option<f64> {
        let i = ((lo - self.start) / self.step).ceil().max(0.0);
        let t = self.start + i * self.step;
        (t >= lo && t < hi && t <= self.end).then_some(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditParams {
    pub u: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    pub a: Vec<f64>,
    pub n_max: usize,
    pub t_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<TimeGrid>,
}

impl AuditParams {
    fn of(table: &ValueTable, grid: Option<TimeGrid>) -> Self {
        let seq = table.sequence();
        Self {
            u: seq.u(),
            q: seq.q(),
            a: seq.probabilities()[..=table.n_max()].to_vec(),
            n_max: table.n_max(),
            t_max: table.t_max(),
            grid,
        }
    }
}

/// A reproducible counterexample to one property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// `K(n,·)` increases from `k_before` to `k_after` at `t`.
    A {
        n: usize,
        t_before: f64,
        k_before: usize,
        t: f64,
        k_after: usize,
    },
    /// `K(n,t) > K(n',t)` with `n < n'` on `[t_lo, t_hi)`.
    B {
        n: usize,
        n_prime: usize,
        t: f64,
        t_lo: f64,
        t_hi: f64,
        k: usize,
        k_prime: usize,
    },
    /// `K(n+1,t) > K(n,t) + 1` on `[t_lo, t_hi)`.
    C {
        n: usize,
        t: f64,
        t_lo: f64,
        t_hi: f64,
        k: usize,
        k_next: usize,
    },
    Range {
        n: usize,
        visited: Vec<usize>,
    },
    /// `t(n,j+1) < t(n+1,j+1) < t(n,j)` fails.
    Interlace {
        n: usize,
        j: usize,
        lower: f64,
        middle: f64,
        upper: f64,
    },
    /// `N(n,t) - N(n-1,t)` exceeds `N(n-1,t) - N(n-2,t)`.
    ConcaveN {
        n: usize,
        t: f64,
        increment: f64,
        previous_increment: f64,
    },
    /// `N(k,·)/N(k-1,·)` decreases between `t_lo` and `t_hi`.
    Tp2 {
        k: usize,
        t_lo: f64,
        t_hi: f64,
        ratio_lo: f64,
        ratio_hi: f64,
    },
    Limits {
        s: usize,
        quantity: String,
        t: f64,
        value: f64,
        expected: f64,
    },
    AllIn {
        q: f64,
        n: usize,
        predicted_all_in: bool,
        observed_all_in: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub property: Property,
    pub params: AuditParams,
    pub verdict: Verdict,
    pub guarantee: Guarantee,
    /// Human-readable description of everything that was compared.
    pub checked: String,
    pub witnesses: Vec<Witness>,
}

impl AuditReport {
    fn new(
        property: Property,
        params: AuditParams,
        guarantee: Guarantee,
        checked: String,
        witnesses: Vec<Witness>,
    ) -> Self {
        let verdict = if witnesses.is_empty() {
            Verdict::Holds
        } else {
            Verdict::Violated
        };
        Self {
            property,
            params,
            verdict,
            guarantee,
            checked,
            witnesses,
        }
    }

    pub fn holds(&self) -> bool {
        self.verdict == Verdict::Holds
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = match self.verdict {
            Verdict::Holds => "holds",
            Verdict::Violated => "VIOLATED",
        };
        let params = match self.params.q {
            Some(q) => format!("u={}, q={}", self.params.u, q),
            None => format!("u={}, a={:?}", self.params.u, self.params.a),
        };
        write!(
            f,
            "[{}] {} ({}, n_max={}, t_max={})",
            self.property, verdict, params, self.params.n_max, self.params.t_max
        )?;
        if self.guarantee == Guarantee::Unproven {
            write!(f, " [exploratory: no proven guarantee]")?;
        }
        write!(f, "\n    checked: {}", self.checked)?;
        for w in &self.witnesses {
            write!(
                f,
                "\n    witness: {}",
                serde_json::to_string(w).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

fn witness_time(grid: Option<&TimeGrid>, lo: f64, hi: f64) -> f64 {
    grid.and_then(|g| g.first_in(lo, hi))
        .unwrap_or(0.5 * (lo + hi))
}

fn is_q_half_frail(table: &ValueTable) -> bool {
    let seq = table.sequence();
    seq.is_frail() && seq.q() == Some(0.5)
}

/// `K(n,·)` non-increasing in `t`, checked exactly on the interval lists.
pub fn audit_a(table: &ValueTable, grid: Option<TimeGrid>) -> AuditReport {
    let mut witnesses = Vec::new();
    let mut intervals = 0;
    for n in 1..=table.n_max() {
        let ivs = table.policy(n).intervals();
        intervals += ivs.len();
        for w in ivs.windows(2) {
            if w[1].k > w[0].k {
                witnesses.push(Witness::A {
                    n,
                    t_before: 0.5 * (w[0].t_lo + w[0].t_hi),
                    k_before: w[0].k,
                    t: w[1].t_lo,
                    k_after: w[1].k,
                });
            }
        }
    }
    let u = table.sequence().u();
    let guarantee = if u == 0.0 || u == 1.0 {
        Guarantee::Proven
    } else {
        Guarantee::Unproven
    };
    AuditReport::new(
        Property::A,
        AuditParams::of(table, grid),
        guarantee,
        format!("{intervals} policy intervals for n = 1..={}", table.n_max()),
        witnesses,
    )
}

/// `K(n,t) <= K(n+1,t)`, on the exact overlay of consecutive policies.
pub fn audit_b(table: &ValueTable, grid: Option<TimeGrid>) -> AuditReport {
    let mut witnesses = Vec::new();
    let mut pieces = 0;
    for n in 1..table.n_max() {
        for (lo, hi, k, k_prime) in table.policy(n).overlay(table.policy(n + 1)) {
            pieces += 1;
            if k > k_prime {
                witnesses.push(Witness::B {
                    n,
                    n_prime: n + 1,
                    t: witness_time(grid.as_ref(), lo, hi),
                    t_lo: lo,
                    t_hi: hi,
                    k,
                    k_prime,
                });
            }
        }
    }
    let guarantee = if table.sequence().is_invincible() {
        Guarantee::Proven
    } else if is_q_half_frail(table) && table.n_max() >= 5 {
        Guarantee::KnownCounterexample
    } else {
        Guarantee::Unproven
    };
    AuditReport::new(
        Property::B,
        AuditParams::of(table, grid),
        guarantee,
        format!("{pieces} overlay intervals for n = 1..{}", table.n_max()),
        witnesses,
    )
}

/// `K(n+1,t) <= K(n,t) + 1`, on the exact overlay of consecutive policies.
pub fn audit_c(table: &ValueTable) -> AuditReport {
    let mut witnesses = Vec::new();
    let mut pieces = 0;
    for n in 1..table.n_max() {
        for (lo, hi, k, k_next) in table.policy(n).overlay(table.policy(n + 1)) {
            pieces += 1;
            if k_next > k + 1 {
                witnesses.push(Witness::C {
                    n,
                    t: 0.5 * (lo + hi),
                    t_lo: lo,
                    t_hi: hi,
                    k,
                    k_next,
                });
            }
        }
    }
    AuditReport::new(
        Property::C,
        AuditParams::of(table, None),
        Guarantee::Proven,
        format!("{pieces} overlay intervals for n = 1..{}", table.n_max()),
        witnesses,
    )
}

fn require_invincible(table: &ValueTable, property: Property) -> Result<(), AuditError> {
    if table.sequence().is_invincible() {
        Ok(())
    } else {
        Err(AuditError::NotApplicable {
            property,
            reason: format!("requires u = 1, got u = {}", table.sequence().u()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeInterlaceReport {
    pub range: AuditReport,
    pub interlace: AuditReport,
}

/// Every `K(n,·)` visits `n, n-1, ..., 1` in order and consecutive
/// threshold sets interlace strictly.
pub fn audit_range_and_interlace(table: &ValueTable) -> Result<RangeInterlaceReport, AuditError> {
    require_invincible(table, Property::Range)?;
    let n_max = table.n_max();
    let last = table.policy(n_max).labels();
    let smallest_k = *last.last().expect("non-empty policy");
    if smallest_k != 1 {
        return Err(AuditError::HorizonTooShort {
            n: n_max,
            smallest_k,
        });
    }

    let mut range_witnesses = Vec::new();
    for n in 1..=n_max {
        let visited = table.policy(n).labels();
        let expected: Vec<usize> = (1..=n).rev().collect();
        if visited != expected {
            range_witnesses.push(Witness::Range { n, visited });
        }
    }

    let sets = (1..=n_max)
        .map(|n| table.thresholds(n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut interlace_witnesses = Vec::new();
    let mut comparisons = 0;
    for n in 1..n_max {
        let (cur, next) = (&sets[n - 1], &sets[n]);
        for j in 0..n {
            comparisons += 1;
            let lower = cur.t(j + 1);
            let middle = next.t(j + 1);
            let upper = cur.t(j);
            let ok = middle - lower > INTERLACE_MARGIN
                && (upper == f64::INFINITY || upper - middle > INTERLACE_MARGIN);
            if !ok {
                interlace_witnesses.push(Witness::Interlace {
                    n,
                    j,
                    lower,
                    middle,
                    upper,
                });
            }
        }
    }

    Ok(RangeInterlaceReport {
        range: AuditReport::new(
            Property::Range,
            AuditParams::of(table, None),
            Guarantee::Proven,
            format!("label sequences of policy(n), n = 1..={n_max}"),
            range_witnesses,
        ),
        interlace: AuditReport::new(
            Property::Interlace,
            AuditParams::of(table, None),
            Guarantee::Proven,
            format!("{comparisons} threshold triples, margin {INTERLACE_MARGIN:e}"),
            interlace_witnesses,
        ),
    })
}

/// `N(n,t) - N(n-1,t)` non-increasing in `n` at every grid time.
pub fn audit_concave_n(table: &ValueTable, grid: TimeGrid) -> Result<AuditReport, AuditError> {
    let points = grid.points();
    let mut witnesses = Vec::new();
    for &t in &points {
        let vals = (0..=table.n_max())
            .map(|n| table.value(n).evaluate(t))
            .collect::<Result<Vec<_>, _>>()
            .map_err(SolveError::from)?;
        for n in 2..=table.n_max() {
            let increment = vals[n] - vals[n - 1];
            let previous_increment = vals[n - 1] - vals[n - 2];
            if increment > previous_increment + VALUE_SLACK * vals[n].abs().max(1.0) {
                witnesses.push(Witness::ConcaveN {
                    n,
                    t,
                    increment,
                    previous_increment,
                });
            }
        }
    }
    let guarantee = if table.sequence().is_invincible() {
        Guarantee::Proven
    } else {
        Guarantee::Unproven
    };
    Ok(AuditReport::new(
        Property::ConcaveN,
        AuditParams::of(table, Some(grid)),
        guarantee,
        format!("{} grid times, n = 2..={}", points.len(), table.n_max()),
        witnesses,
    ))
}

/// `N(k,t)/N(k-1,t)` non-decreasing in `t` for `k = 2..n_max-1`.
pub fn audit_tp2(table: &ValueTable, grid: TimeGrid) -> Result<AuditReport, AuditError> {
    let points = grid.points();
    let mut witnesses = Vec::new();
    let top = table.n_max().saturating_sub(1);
    for k in 2..=top {
        let ratios = points
            .iter()
            .map(|&t| Ok(table.value(k).evaluate(t)? / table.value(k - 1).evaluate(t)?))
            .collect::<Result<Vec<f64>, crate::exppoly::ExpPolyError>>()
            .map_err(SolveError::from)?;
        for i in 1..points.len() {
            if ratios[i] < ratios[i - 1] - VALUE_SLACK * ratios[i - 1].abs() {
                witnesses.push(Witness::Tp2 {
                    k,
                    t_lo: points[i - 1],
                    t_hi: points[i],
                    ratio_lo: ratios[i - 1],
                    ratio_hi: ratios[i],
                });
            }
        }
    }
    let guarantee = if table.sequence().is_frail() {
        Guarantee::Proven
    } else {
        Guarantee::Unproven
    };
    Ok(AuditReport::new(
        Property::Tp2,
        AuditParams::of(table, Some(grid)),
        guarantee,
        format!("{} grid times, k = 2..={top}", points.len()),
        witnesses,
    ))
}

/// Long-horizon behaviour of the invincible fighter: `D*(s,·)` runs from 0
/// to `a(1)` and `N*(s,t) -> s a(1)`.
pub fn audit_limits(table: &ValueTable) -> Result<AuditReport, AuditError> {
    require_invincible(table, Property::Limits)?;
    let t_max = table.t_max();
    if t_max < LONG_HORIZON {
        return Err(AuditError::HorizonBelow {
            t_max,
            required: LONG_HORIZON,
        });
    }
    let a1 = table.sequence().a(1);
    // absolute small time: D*(s,t) ~ a(1) t near zero, so a horizon-relative
    // probe would exceed the tolerance for any t_max >= 50
    let t_small = SMALL_TIME;
    let mut witnesses = Vec::new();
    let mut push = |s: usize, quantity: &str, t: f64, value: f64, expected: f64, ok: bool| {
        if !ok {
            witnesses.push(Witness::Limits {
                s,
                quantity: quantity.to_string(),
                t,
                value,
                expected,
            });
        }
    };
    for s in 1..table.n_max() {
        let near_zero = table.d_star(s, t_small)?;
        push(s, "D*", t_small, near_zero, 0.0, near_zero <= LIMIT_TOL);
        let far = table.d_star(s, t_max)?;
        push(s, "D*", t_max, far, a1, (far - a1).abs() <= LIMIT_TOL);
        let star = table
            .smoothed(s)
            .evaluate(t_max)
            .map_err(SolveError::from)?;
        let expected = s as f64 * a1;
        push(
            s,
            "N*",
            t_max,
            star,
            expected,
            (star - expected).abs() <= LIMIT_TOL,
        );
    }
    Ok(AuditReport::new(
        Property::Limits,
        AuditParams::of(table, None),
        Guarantee::Proven,
        format!(
            "s = 1..{}: D*(s,{t_small:e}) <= {LIMIT_TOL:e}, |D*(s,{t_max}) - a(1)|, |N*(s,{t_max}) - s a(1)| <= {LIMIT_TOL:e}",
            table.n_max()
        ),
        witnesses,
    ))
}

/// Threshold `(1/2)^(1/(n-1))` above which the frail geometric fighter
/// always spends all `n` missiles.
pub fn all_in_threshold(n: usize) -> f64 {
    0.5f64.powf(1.0 / (n as f64 - 1.0))
}

/// For frail geometric tables over a grid of `q`: `K(n,·) ≡ n` on the whole
/// horizon exactly when `q > (1/2)^(1/(n-1))`. Tables with `q` within
/// `1e-9` of the threshold are skipped.
pub fn audit_all_in_regime(tables: &[ValueTable], n: usize) -> Result<AuditReport, AuditError> {
    if n < 2 {
        return Err(AuditError::NotApplicable {
            property: Property::AllIn,
            reason: "needs n >= 2".into(),
        });
    }
    let threshold = all_in_threshold(n);
    let mut witnesses = Vec::new();
    let mut checked = Vec::new();
    let mut skipped = Vec::new();
    for table in tables {
        let seq = table.sequence();
        let q = match (seq.is_frail(), seq.q()) {
            (true, Some(q)) => q,
            _ => {
                return Err(AuditError::NotApplicable {
                    property: Property::AllIn,
                    reason: "requires frail (u = 0) geometric tables".into(),
                })
            }
        };
        if table.t_max() < LONG_HORIZON {
            return Err(AuditError::HorizonBelow {
                t_max: table.t_max(),
                required: LONG_HORIZON,
            });
        }
        if table.n_max() < n {
            return Err(SolveError::MissilesOutOfRange {
                n,
                n_max: table.n_max(),
            }
            .into());
        }
        if (q - threshold).abs() < 1e-9 {
            skipped.push(q);
            continue;
        }
        checked.push(q);
        let predicted_all_in = q > threshold;
        let observed_all_in = table.policy(n).labels() == vec![n];
        if predicted_all_in != observed_all_in {
            witnesses.push(Witness::AllIn {
                q,
                n,
                predicted_all_in,
                observed_all_in,
            });
        }
    }
    let params = tables
        .first()
        .map(|t| AuditParams::of(t, None))
        .unwrap_or(AuditParams {
            u: 0.0,
            q: None,
            a: Vec::new(),
            n_max: n,
            t_max: LONG_HORIZON,
            grid: None,
        });
    Ok(AuditReport::new(
        Property::AllIn,
        params,
        Guarantee::Proven,
        format!(
            "n = {n}, threshold {threshold:.10}, q grid {checked:?}, boundary skipped {skipped:?}"
        ),
        witnesses,
    ))
}

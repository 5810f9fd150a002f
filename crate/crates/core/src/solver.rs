//! Exact value and policy tables for the Fighter problem.
//!
//! For every `n` the solver smooths `N(n-1, ·)` into `N*(n-1, ·)`, forms the
//! candidates `N_n(j, ·) = a(j) + c(j) N*(n-j, ·)` for `j = 1..=n`, and takes
//! their upper envelope. The envelope's argmax partition is the policy
//! `K(n, ·)`, with ties resolved towards the smaller allocation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ammo::KillSequence;
use crate::exppoly::{self, EnvelopeOptions, ExpPolyError, PiecewiseExpPoly};
use crate::policy::{PiecewisePolicy, PolicyInterval};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("n_max must be at least 1")]
    NoMissiles,
    #[error("t_max must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("kill sequence has j_max = {j_max} < n_max = {n_max}")]
    SequenceTooShort { j_max: usize, n_max: usize },
    #[error("polynomial degree {degree} exceeds cap {cap} at n = {n}")]
    DegreeOverflow { n: usize, degree: usize, cap: usize },
    #[error("n = {n} out of range 1..={n_max}")]
    MissilesOutOfRange { n: usize, n_max: usize },
    #[error("s = {s} out of range 1..={max}")]
    StockOutOfRange { s: usize, max: usize },
    #[error("t = {t} out of range [0, {t_max}]")]
    TimeOutOfRange { t: f64, t_max: f64 },
    #[error("thresholds are only defined for the invincible fighter (u = 1), got u = {0}")]
    NotInvincible(f64),
    #[error(transparent)]
    Representation(#[from] ExpPolyError),
}

/// Numerical settings for [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub scan_step: f64,
    pub root_tol: f64,
    pub max_degree: usize,
}

impl SolverOptions {
    pub fn defaults(n_max: usize, t_max: f64) -> Self {
        Self {
            scan_step: exppoly::default_scan_step(t_max),
            root_tol: exppoly::ROOT_TOL,
            max_degree: n_max + 4,
        }
    }
}

/// Solved value functions, smoothed values, candidates and policies.
#[derive(Debug, Clone)]
pub struct ValueTable {
    seq: KillSequence,
    n_max: usize,
    t_max: f64,
    options: SolverOptions,
    values: Vec<PiecewiseExpPoly>,
    smoothed: Vec<PiecewiseExpPoly>,
    candidates: Vec<Vec<PiecewiseExpPoly>>,
    policies: Vec<PiecewisePolicy>,
}

/// Solves with default options.
pub fn solve(seq: &KillSequence, n_max: usize, t_max: f64) -> Result<ValueTable, SolveError> {
    solve_with(seq, n_max, t_max, SolverOptions::defaults(n_max, t_max))
}

pub fn solve_with(
    seq: &KillSequence,
    n_max: usize,
    t_max: f64,
    options: SolverOptions,
) -> Result<ValueTable, SolveError> {
    if n_max < 1 {
        return Err(SolveError::NoMissiles);
    }
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(SolveError::BadHorizon(t_max));
    }
    if seq.j_max() < n_max {
        return Err(SolveError::SequenceTooShort {
            j_max: seq.j_max(),
            n_max,
        });
    }
    let envelope_opts = EnvelopeOptions {
        scan_step: options.scan_step,
        root_tol: options.root_tol,
    };

    let mut values = vec![PiecewiseExpPoly::constant(0.0, t_max)?];
    let mut smoothed: Vec<PiecewiseExpPoly> = Vec::with_capacity(n_max);
    let mut candidates = vec![Vec::new()];
    let mut policies = vec![PiecewisePolicy::constant(0, t_max)];

    for n in 1..=n_max {
        let star = values[n - 1].smooth();
        if let Some(degree) = star.max_degree() {
            if degree > options.max_degree {
                return Err(SolveError::DegreeOverflow {
                    n,
                    degree,
                    cap: options.max_degree,
                });
            }
        }
        smoothed.push(star);

        let cands: Vec<PiecewiseExpPoly> = (1..=n)
            .map(|j| smoothed[n - j].linear_combine(seq.survival_unchecked(j), seq.a(j)))
            .collect();
        let labels: Vec<usize> = (1..=n).collect();
        let (value, policy) = exppoly::upper_envelope(&cands, &labels, envelope_opts)?;
        values.push(value);
        policies.push(policy);
        candidates.push(cands);
    }

    Ok(ValueTable {
        seq: seq.clone(),
        n_max,
        t_max,
        options,
        values,
        smoothed,
        candidates,
        policies,
    })
}

/// Switch time `t(n, j)` between spending `j + 1` and `j` missiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub j: usize,
    /// `None` when the switch lies beyond the solved horizon.
    pub time: Option<f64>,
}

/// All thresholds of one `n`, with the conventions `t(n, n) = 0` and
/// `t(n, 0) = ∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub n: usize,
    /// Ordered `j = n-1, ..., 1`, i.e. by increasing time.
    pub thresholds: Vec<Threshold>,
}

impl ThresholdSet {
    /// `t(n, j)` for `0 <= j <= n`; unreached thresholds read as `+∞`.
    pub fn t(&self, j: usize) -> f64 {
        if j == 0 {
            return f64::INFINITY;
        }
        if j >= self.n {
            return 0.0;
        }
        self.thresholds
            .iter()
            .find(|th| th.j == j)
            .and_then(|th| th.time)
            .unwrap_or(f64::INFINITY)
    }

    pub fn all_reached(&self) -> bool {
        self.thresholds.iter().all(|th| th.time.is_some())
    }
}

impl ValueTable {
    pub fn sequence(&self) -> &KillSequence {
        &self.seq
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    fn check_n(&self, n: usize) -> Result<(), SolveError> {
        if n >= 1 && n <= self.n_max {
            Ok(())
        } else {
            Err(SolveError::MissilesOutOfRange {
                n,
                n_max: self.n_max,
            })
        }
    }

    fn check_t(&self, t: f64) -> Result<(), SolveError> {
        if t >= 0.0 && t <= self.t_max {
            Ok(())
        } else {
            Err(SolveError::TimeOutOfRange {
                t,
                t_max: self.t_max,
            })
        }
    }

    /// `N(n, ·)` for `0 <= n <= n_max`. Panics beyond `n_max`.
    pub fn value(&self, n: usize) -> &PiecewiseExpPoly {
        &self.values[n]
    }

    /// `N*(r, ·)` for `0 <= r < n_max`. Panics otherwise.
    pub fn smoothed(&self, r: usize) -> &PiecewiseExpPoly {
        &self.smoothed[r]
    }

    /// Candidate `N_n(j, ·)` for `1 <= j <= n <= n_max`. Panics otherwise.
    pub fn candidate(&self, n: usize, j: usize) -> &PiecewiseExpPoly {
        &self.candidates[n][j - 1]
    }

    /// `K(n, ·)` for `1 <= n <= n_max`. Panics otherwise.
    pub fn policy(&self, n: usize) -> &PiecewisePolicy {
        &self.policies[n]
    }

    /// `K(n, t)`.
    pub fn policy_at(&self, n: usize, t: f64) -> Result<usize, SolveError> {
        self.check_n(n)?;
        self.check_t(t)?;
        Ok(self.policies[n].k_at(t).expect("checked domain"))
    }

    /// `N(n, t)`.
    pub fn value_at(&self, n: usize, t: f64) -> Result<f64, SolveError> {
        self.check_n(n)?;
        self.check_t(t)?;
        Ok(self.values[n].evaluate(t)?)
    }

    /// `D*(s, t) = N*(s, t) - N*(s-1, t)` for `1 <= s < n_max`.
    pub fn d_star(&self, s: usize, t: f64) -> Result<f64, SolveError> {
        if s < 1 || s >= self.n_max {
            return Err(SolveError::StockOutOfRange {
                s,
                max: self.n_max.saturating_sub(1),
            });
        }
        self.check_t(t)?;
        Ok(self.smoothed[s].evaluate(t)? - self.smoothed[s - 1].evaluate(t)?)
    }

    /// Thresholds `t(n, j)` solving `N_n(j+1, t) = N_n(j, t)`, invincible
    /// fighter only.
    pub fn thresholds(&self, n: usize) -> Result<ThresholdSet, SolveError> {
        if !self.seq.is_invincible() {
            return Err(SolveError::NotInvincible(self.seq.u()));
        }
        self.check_n(n)?;
        let mut thresholds = Vec::with_capacity(n.saturating_sub(1));
        for j in (1..n).rev() {
            let diff = self.candidate(n, j + 1).sub(self.candidate(n, j))?;
            let time = diff.find_root(0.0, self.t_max, self.options.root_tol)?;
            thresholds.push(Threshold { j, time });
        }
        Ok(ThresholdSet { n, thresholds })
    }

    pub fn export(&self) -> ValueTableExport {
        ValueTableExport {
            params: TableParams {
                a: self.seq.probabilities().to_vec(),
                u: self.seq.u(),
                q: self.seq.q(),
                n_max: self.n_max,
                t_max: self.t_max,
                scan_step: self.options.scan_step,
                root_tol: self.options.root_tol,
            },
            per_n: (1..=self.n_max)
                .map(|n| PerN {
                    n,
                    policy: self.policies[n].intervals().to_vec(),
                    value_pieces: self.values[n].clone(),
                })
                .collect(),
        }
    }

    /// Policy rows `n,t_lo,t_hi,k` with a header line.
    pub fn policy_csv(&self) -> String {
        let mut out = String::from("n,t_lo,t_hi,k\n");
        for n in 1..=self.n_max {
            for iv in self.policies[n].intervals() {
                out.push_str(&format!("{},{},{},{}\n", n, iv.t_lo, iv.t_hi, iv.k));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableParams {
    pub a: Vec<f64>,
    pub u: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    pub n_max: usize,
    pub t_max: f64,
    pub scan_step: f64,
    pub root_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerN {
    pub n: usize,
    pub policy: Vec<PolicyInterval>,
    pub value_pieces: PiecewiseExpPoly,
}

/// JSON shape of a solved table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTableExport {
    pub params: TableParams,
    pub per_n: Vec<PerN>,
}

impl ValueTableExport {
    pub fn policy(&self, n: usize) -> Option<PiecewisePolicy> {
        self.per_n
            .iter()
            .find(|p| p.n == n)
            .map(|p| PiecewisePolicy::from_intervals(p.policy.clone()))
    }
}

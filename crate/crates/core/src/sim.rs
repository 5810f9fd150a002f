//! Monte Carlo play of allocation policies against Poisson encounter streams.
//!
//! Each replication owns its own ChaCha8 stream (`seed`, stream = replication
//! index), and every encounter consumes draws in a fixed order: kill uniform,
//! survival uniform, then the exponential gap to the next encounter. Policies
//! evaluated with the same seed therefore see common random numbers for as
//! long as their trajectories agree. Per-replication kills are integers, so
//! the parallel reduction is exact and results do not depend on scheduling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ammo::KillSequence;
use crate::policy::{PiecewisePolicy, PolicyInterval};
use crate::solver::{ValueTable, ValueTableExport};

/// Identifier of the random source recorded with every estimate.
pub const RNG_ID: &str = "chacha8/stream-per-replication";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("reps must be positive")]
    NonPositiveReps,
    #[error("t must be finite and non-negative, got {0}")]
    BadTime(f64),
    #[error("n = {n} outside 1..={j_max} supported by the kill sequence")]
    BadMissiles { n: usize, j_max: usize },
    #[error("policy {policy} returned k = {k} with {remaining} missiles left at t = {t}")]
    OutOfRange {
        policy: String,
        k: usize,
        remaining: usize,
        t: f64,
    },
    #[error("policy {policy} is undefined at n = {n}, t = {t}")]
    Undefined { policy: String, n: usize, t: f64 },
    #[error("cannot read policy table: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed policy table: {0}")]
    Format(String),
}

/// When the first encounter happens relative to the start of a replication.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstEncounter {
    /// Confronting an enemy at time 0: estimates `N(n,t)`.
    #[default]
    Immediate,
    /// After a unit-exponential wait: estimates `N*(n,t)`.
    AfterWait,
}

/// Policy tables loaded from a solver export.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    per_n: BTreeMap<usize, PiecewisePolicy>,
}

impl PolicyTable {
    pub fn from_export(export: &ValueTableExport) -> Self {
        let per_n = export
            .per_n
            .iter()
            .map(|p| (p.n, PiecewisePolicy::from_intervals(p.policy.clone())))
            .collect();
        Self { per_n }
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let export: ValueTableExport =
            serde_json::from_str(text).map_err(|e| SimError::Format(e.to_string()))?;
        Ok(Self::from_export(&export))
    }

    /// Rows `n,t_lo,t_hi,k` with a header, as written by `policy_csv`.
    pub fn from_csv(text: &str) -> Result<Self, SimError> {
        #[derive(Deserialize)]
        struct Row {
            n: usize,
            t_lo: f64,
            t_hi: f64,
            k: usize,
        }
        let mut rows: BTreeMap<usize, Vec<PolicyInterval>> = BTreeMap::new();
        for rec in csv::Reader::from_reader(text.as_bytes()).deserialize::<Row>() {
            let r = rec.map_err(|e| SimError::Format(e.to_string()))?;
            rows.entry(r.n).or_default().push(PolicyInterval {
                t_lo: r.t_lo,
                t_hi: r.t_hi,
                k: r.k,
            });
        }
        let per_n = rows
            .into_iter()
            .map(|(n, ivs)| (n, PiecewisePolicy::from_intervals(ivs)))
            .collect();
        Ok(Self { per_n })
    }

    /// Reads JSON or CSV, chosen by the first non-blank character.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        if text.trim_start().starts_with('{') {
            Self::from_json(&text)
        } else {
            Self::from_csv(&text)
        }
    }

    pub fn k_at(&self, n: usize, t: f64) -> Option<usize> {
        self.per_n.get(&n)?.k_at(t)
    }
}

pub enum PolicySource<'a> {
    Optimal(&'a ValueTable),
    /// Spend `min(k, remaining)`.
    Const(usize),
    AllIn,
    Table(PolicyTable),
}

impl PolicySource<'_> {
    pub fn label(&self) -> String {
        match self {
            PolicySource::Optimal(_) => "optimal".into(),
            PolicySource::Const(k) => format!("const:{k}"),
            PolicySource::AllIn => "all-in".into(),
            PolicySource::Table(_) => "table".into(),
        }
    }

    fn allocate(&self, n: usize, t: f64) -> Result<usize, SimError> {
        let k = match self {
            PolicySource::Optimal(table) => table.policy_at(n, t).ok(),
            PolicySource::Const(k) => Some((*k).min(n)),
            PolicySource::AllIn => Some(n),
            PolicySource::Table(table) => table.k_at(n, t),
        };
        let k = k.ok_or_else(|| SimError::Undefined {
            policy: self.label(),
            n,
            t,
        })?;
        if k == 0 || k > n {
            return Err(SimError::OutOfRange {
                policy: self.label(),
                k,
                remaining: n,
                t,
            });
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEstimate {
    pub policy: String,
    pub mean_kills: f64,
    pub std_error: f64,
    pub reps: u64,
    pub seed: u64,
    pub rng: String,
    pub first_encounter: FirstEncounter,
}

fn replication(
    seq: &KillSequence,
    n: usize,
    t: f64,
    policy: &PolicySource,
    mut rng: ChaCha8Rng,
    first: FirstEncounter,
) -> Result<u64, SimError> {
    let u = seq.u();
    let mut left = n;
    let mut clock = t;
    if first == FirstEncounter::AfterWait {
        let wait: f64 = rng.sample(Exp1);
        clock -= wait;
    }
    let mut kills = 0;
    while left > 0 && clock >= 0.0 {
        let k = policy.allocate(left, clock)?;
        let kill_draw: f64 = rng.random();
        let survive_draw: f64 = rng.random();
        let gap: f64 = rng.sample(Exp1);
        left -= k;
        if kill_draw < seq.a(k) {
            kills += 1;
        } else if survive_draw >= u {
            break;
        }
        clock -= gap;
    }
    Ok(kills)
}

fn validate(seq: &KillSequence, n: usize, t: f64, reps: u64) -> Result<(), SimError> {
    if reps == 0 {
        return Err(SimError::NonPositiveReps);
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(SimError::BadTime(t));
    }
    if n == 0 || n > seq.j_max() {
        return Err(SimError::BadMissiles {
            n,
            j_max: seq.j_max(),
        });
    }
    Ok(())
}

/// Estimates the expected kills of `policy` from state `(n, t)`.
pub fn simulate(
    seq: &KillSequence,
    n: usize,
    t: f64,
    policy: &PolicySource,
    reps: u64,
    seed: u64,
    first: FirstEncounter,
) -> Result<SimEstimate, SimError> {
    validate(seq, n, t, reps)?;
    let base = ChaCha8Rng::seed_from_u64(seed);
    let (sum, sum_sq) = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = base.clone();
            rng.set_stream(rep);
            replication(seq, n, t, policy, rng, first).map(|k| (k, k * k))
        })
        .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1 + b.1)))?;
    let r = reps as f64;
    let mean = sum as f64 / r;
    let std_error = if reps > 1 {
        let var = (sum_sq as f64 - r * mean * mean) / (r - 1.0);
        (var.max(0.0) / r).sqrt()
    } else {
        0.0
    };
    Ok(SimEstimate {
        policy: policy.label(),
        mean_kills: mean,
        std_error,
        reps,
        seed,
        rng: RNG_ID.into(),
        first_encounter: first,
    })
}

/// Evaluates every policy on the same random streams and sorts by
/// decreasing mean; ties keep input order.
pub fn compare_policies(
    seq: &KillSequence,
    n: usize,
    t: f64,
    policies: &[PolicySource],
    reps: u64,
    seed: u64,
    first: FirstEncounter,
) -> Result<Vec<SimEstimate>, SimError> {
    let mut out = policies
        .iter()
        .map(|p| simulate(seq, n, t, p, reps, seed, first))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| b.mean_kills.total_cmp(&a.mean_kills));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::solve;

    fn frail() -> KillSequence {
        KillSequence::geometric(0.5, 5, 0.0).unwrap()
    }

    #[test]
    fn one_missile_kills_with_a1() {
        let est = simulate(
            &frail(),
            1,
            4.0,
            &PolicySource::Const(1),
            100_000,
            7,
            FirstEncounter::Immediate,
        )
        .unwrap();
        assert!((est.mean_kills - 0.5).abs() <= 3.0 * est.std_error);
    }

    #[test]
    fn always_spend_one_is_suboptimal() {
        // second encounter needed within t = 10: mean = 0.5 (1 + 0.5 (1 - e^-10))
        let est = simulate(
            &frail(),
            2,
            10.0,
            &PolicySource::Const(1),
            200_000,
            3,
            FirstEncounter::Immediate,
        )
        .unwrap();
        let exact = 0.749_988_650_017_559;
        assert!((est.mean_kills - exact).abs() <= 3.0 * est.std_error);
        let table = solve(&frail(), 2, 10.0).unwrap();
        assert!(exact < table.value_at(2, 10.0).unwrap());
    }

    #[test]
    fn deterministic_and_common_numbers() {
        let table = solve(&frail(), 3, 2.0).unwrap();
        let run = || {
            simulate(
                &frail(),
                3,
                2.0,
                &PolicySource::Optimal(&table),
                20_000,
                11,
                FirstEncounter::Immediate,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
        let ranked = compare_policies(
            &frail(),
            3,
            2.0,
            &[PolicySource::AllIn, PolicySource::Optimal(&table)],
            50_000,
            5,
            FirstEncounter::Immediate,
        )
        .unwrap();
        assert_eq!(ranked[0].policy, "optimal");
        assert!((ranked[1].mean_kills - 0.875).abs() <= 3.0 * ranked[1].std_error);
    }

    #[test]
    fn waiting_first_estimates_smoothed_value() {
        let table = solve(&frail(), 4, 2.0).unwrap();
        let est = simulate(
            &frail(),
            3,
            2.0,
            &PolicySource::Optimal(&table),
            200_000,
            9,
            FirstEncounter::AfterWait,
        )
        .unwrap();
        let exact = table.smoothed(3).evaluate(2.0).unwrap();
        assert!((est.mean_kills - exact).abs() <= 3.0 * est.std_error);
    }

    #[test]
    fn invincible_spend_one_approaches_s_a1() {
        let seq = KillSequence::geometric(0.5, 4, 1.0).unwrap();
        let est = simulate(
            &seq,
            4,
            50.0,
            &PolicySource::Const(1),
            50_000,
            1,
            FirstEncounter::Immediate,
        )
        .unwrap();
        assert!((est.mean_kills - 2.0).abs() <= 3.0 * est.std_error + 1e-12);
    }

    #[test]
    fn tables_round_trip_through_files() {
        let table = solve(&frail(), 5, 6.0).unwrap();
        let from_json =
            PolicyTable::from_json(&serde_json::to_string(&table.export()).unwrap()).unwrap();
        let from_csv = PolicyTable::from_csv(&table.policy_csv()).unwrap();
        assert_eq!(from_json, from_csv);
        assert_eq!(from_csv.k_at(5, 3.0), Some(2));
        assert_eq!(from_csv.k_at(4, 3.0), Some(3));
        let a = simulate(
            &frail(),
            5,
            3.0,
            &PolicySource::Table(from_csv),
            10_000,
            2,
            FirstEncounter::Immediate,
        )
        .unwrap();
        let b = simulate(
            &frail(),
            5,
            3.0,
            &PolicySource::Optimal(&table),
            10_000,
            2,
            FirstEncounter::Immediate,
        )
        .unwrap();
        assert_eq!(a.mean_kills, b.mean_kills);
    }

    #[test]
    fn errors() {
        let seq = frail();
        let imm = FirstEncounter::Immediate;
        assert!(matches!(
            simulate(&seq, 2, 1.0, &PolicySource::AllIn, 0, 1, imm),
            Err(SimError::NonPositiveReps)
        ));
        assert!(matches!(
            simulate(&seq, 2, -1.0, &PolicySource::AllIn, 1, 1, imm),
            Err(SimError::BadTime(_))
        ));
        let bad = PolicyTable::from_csv("n,t_lo,t_hi,k\n2,0,5,3\n").unwrap();
        assert!(matches!(
            simulate(&seq, 2, 1.0, &PolicySource::Table(bad), 10, 1, imm),
            Err(SimError::OutOfRange {
                k: 3,
                remaining: 2,
                ..
            })
        ));
        let table = solve(&seq, 2, 1.0).unwrap();
        assert!(matches!(
            simulate(&seq, 2, 2.0, &PolicySource::Optimal(&table), 10, 1, imm),
            Err(SimError::Undefined { .. })
        ));
    }
}

//! Property checks shared by the `properties` and `acceptance` targets.
//! Every check runs a fixed-seed runner so failures reproduce.

use fighter::ammo::KillSequence;
use fighter::exppoly::{upper_envelope, EnvelopeOptions, ExpPoly, PiecewiseExpPoly};
use fighter::solver::solve;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

/// Strictly decreasing positive increments summing to at most one.
fn concave_sequence() -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(0.01f64..1.0, 2..9), 0.2f64..1.0).prop_filter_map(
        "increments must be distinct",
        |(mut d, total)| {
            d.sort_by(|x, y| y.total_cmp(x));
            if d.windows(2).any(|w| w[0] - w[1] < 1e-6) {
                return None;
            }
            let sum: f64 = d.iter().sum();
            let mut a = vec![0.0];
            for inc in d {
                a.push(a.last().unwrap() + inc * total / sum);
            }
            Some(a)
        },
    )
}

fn exppoly() -> impl Strategy<Value = ExpPoly> {
    (-1.0f64..1.0, prop::collection::vec(-1.0f64..1.0, 0..4))
        .prop_map(|(alpha, coeffs)| ExpPoly::new(alpha, coeffs))
}

fn c(seq: &KillSequence, j: usize) -> f64 {
    seq.a(j) * (1.0 - seq.u()) + seq.u()
}

pub type Outcome = Result<(), String>;
pub type Check = (&'static str, fn() -> Outcome);

/// Named checks, in reporting order.
#[allow(dead_code)]
pub const ALL: &[Check] = &[
    (
        "v_ordering_on_the_reference_grid",
        v_ordering_on_the_reference_grid,
    ),
    ("valid_sequences_are_accepted", valid_sequences_are_accepted),
    (
        "broken_sequences_are_rejected",
        broken_sequences_are_rejected,
    ),
    (
        "v_is_non_decreasing_and_non_positive",
        v_is_non_decreasing_and_non_positive,
    ),
    (
        "v_ordering_for_custom_sequences",
        v_ordering_for_custom_sequences,
    ),
    (
        "smoothing_solves_its_differential_equation",
        smoothing_solves_its_differential_equation,
    ),
    (
        "smoothed_values_solve_their_equation",
        smoothed_values_solve_their_equation,
    ),
    (
        "envelope_dominates_and_touches",
        envelope_dominates_and_touches,
    ),
    (
        "candidates_satisfy_the_shift_identity",
        candidates_satisfy_the_shift_identity,
    ),
    ("value_is_max_over_candidates", value_is_max_over_candidates),
];

fn runner() -> TestRunner {
    let config = Config {
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

pub fn valid_sequences_are_accepted() -> Outcome {
    runner()
        .run(&(concave_sequence(), 0.0f64..=1.0), |(a, u)| {
            let seq = KillSequence::new(a.clone(), u).unwrap();
            prop_assert_eq!(seq.j_max(), a.len() - 1);
            for j in 1..=seq.j_max() {
                let s = seq.survival(j).unwrap();
                prop_assert!(s >= seq.a(j) - 1e-15 && s <= 1.0 + 1e-15);
                if j > 1 {
                    prop_assert!(s >= seq.survival(j - 1).unwrap());
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn broken_sequences_are_rejected() -> Outcome {
    runner()
        .run(
            &(concave_sequence(), 0usize..4, 1usize..8),
            |(a, pick, at)| {
                let mut b = a.clone();
                let j = 1 + at % (b.len() - 1);
                match pick {
                    0 => b[0] = 0.01,
                    // flat step breaks strict monotonicity
                    1 => b[j] = b[j - 1],
                    // convex kink: raise a(j+1) so the increment grows
                    2 if j + 1 < b.len() => b[j + 1] = b[j] + 2.0 * (b[j] - b[j - 1]),
                    2 => b[j] = 1.5,
                    _ => b[j] += 1.0 + 1e-6,
                }
                prop_assert!(KillSequence::new(b, 0.5).is_err());
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn v_is_non_decreasing_and_non_positive() -> Outcome {
    runner()
        .run(&(0.1f64..0.9, 0.0f64..=1.0), |(q, u)| {
            let seq = KillSequence::geometric(q, 10, u).unwrap();
            for j in 1..9 {
                let (v, w) = (seq.v(j).unwrap(), seq.v(j + 1).unwrap());
                prop_assert!(v <= w + 1e-15, "v({}) = {} > v({}) = {}", j, v, j + 1, w);
                prop_assert!(w <= 1e-15);
                if u > 0.0 {
                    prop_assert!(v < 0.0);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn v_ordering_for_custom_sequences() -> Outcome {
    runner()
        .run(&(concave_sequence(), 0.0f64..=1.0), |(a, u)| {
            let seq = KillSequence::new(a, u).unwrap();
            for j in 1..seq.j_max().saturating_sub(1) {
                prop_assert!(seq.v(j).unwrap() <= seq.v(j + 1).unwrap() + 1e-15);
                prop_assert!(seq.v(j + 1).unwrap() <= 1e-15);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn smoothing_solves_its_differential_equation() -> Outcome {
    runner()
        .run(&(exppoly(), 1.0f64..8.0, 0.05f64..0.95), |(f, t_max, s)| {
            let pf = PiecewiseExpPoly::single(f, t_max).unwrap();
            let sf = pf.smooth();
            prop_assert_eq!(sf.evaluate(0.0).unwrap(), 0.0);
            let t = s * t_max;
            let h = 1e-6;
            let fd = (sf.evaluate(t + h).unwrap() - sf.evaluate(t - h).unwrap()) / (2.0 * h);
            let exact = pf.evaluate(t).unwrap() - sf.evaluate(t).unwrap();
            prop_assert!(
                (fd - exact).abs() <= 1e-5 * exact.abs().max(1.0),
                "fd {} vs {}",
                fd,
                exact
            );
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn smoothed_values_solve_their_equation() -> Outcome {
    runner()
        .run(&(0.2f64..0.8, 0.0f64..=1.0, 0.02f64..0.98), |(q, u, s)| {
            let seq = KillSequence::geometric(q, 4, u).unwrap();
            let table = solve(&seq, 4, 5.0).unwrap();
            let t = s * 5.0;
            for r in 1..4 {
                let (n, star) = (table.value(r), table.smoothed(r));
                if n.breakpoints().iter().any(|b| (b - t).abs() < 1e-4) {
                    continue;
                }
                let h = 1e-6;
                let fd =
                    (star.evaluate(t + h).unwrap() - star.evaluate(t - h).unwrap()) / (2.0 * h);
                let exact = n.evaluate(t).unwrap() - star.evaluate(t).unwrap();
                prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn envelope_dominates_and_touches() -> Outcome {
    runner()
        .run(
            &(prop::collection::vec(exppoly(), 1..5), 1.0f64..6.0),
            |(fs, t_max)| {
                let pieces: Vec<PiecewiseExpPoly> = fs
                    .iter()
                    .map(|f| PiecewiseExpPoly::single(f.clone(), t_max).unwrap())
                    .collect();
                let labels: Vec<usize> = (1..=fs.len()).collect();
                let (env, policy) =
                    upper_envelope(&pieces, &labels, EnvelopeOptions::for_horizon(t_max)).unwrap();
                for i in 0..=200 {
                    let t = (t_max * i as f64 / 200.0).min(t_max);
                    let e = env.evaluate(t).unwrap();
                    let vals: Vec<f64> = fs.iter().map(|f| f.eval(t)).collect();
                    let best = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(e >= best - 1e-9, "t={} env={} best={}", t, e, best);
                    prop_assert!(vals.iter().any(|v| (v - e).abs() <= 1e-9));
                    let k = policy.k_at(t).unwrap();
                    prop_assert!((vals[k - 1] - e).abs() <= 1e-9);
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn candidates_satisfy_the_shift_identity() -> Outcome {
    runner()
        .run(
            &(
                0.2f64..0.8,
                0.0f64..=1.0,
                1.0f64..8.0,
                prop::collection::vec(0.0f64..=1.0, 20),
            ),
            |(q, u, t_max, ts)| {
                let n_max = 5;
                let seq = KillSequence::geometric(q, n_max, u).unwrap();
                let table = solve(&seq, n_max, t_max).unwrap();
                for n in 1..n_max {
                    for j in 1..=n {
                        for &s in &ts {
                            let t = s * t_max;
                            let lhs = table.candidate(n + 1, j + 1).evaluate(t).unwrap();
                            let rhs = c(&seq, j + 1) / c(&seq, j)
                                * (table.candidate(n, j).evaluate(t).unwrap() - seq.a(j))
                                + seq.a(j + 1);
                            prop_assert!(
                                (lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1e-300),
                                "n={} j={} t={}",
                                n,
                                j,
                                t
                            );
                        }
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn value_is_max_over_candidates() -> Outcome {
    runner()
        .run(
            &(
                0.2f64..0.8,
                0.0f64..=1.0,
                prop::collection::vec(0.0f64..=1.0, 50),
            ),
            |(q, u, ts)| {
                let (n_max, t_max) = (5, 6.0);
                let seq = KillSequence::geometric(q, n_max, u).unwrap();
                let table = solve(&seq, n_max, t_max).unwrap();
                for n in 1..=n_max {
                    for &s in &ts {
                        let t = s * t_max;
                        let best = (1..=n)
                            .map(|j| {
                                seq.a(j) + c(&seq, j) * table.smoothed(n - j).evaluate(t).unwrap()
                            })
                            .fold(f64::NEG_INFINITY, f64::max);
                        prop_assert!((table.value_at(n, t).unwrap() - best).abs() <= 1e-12);
                    }
                }
                Ok(())
            },
        )
        .map_err(|e| e.to_string())
}

pub fn v_ordering_on_the_reference_grid() -> Outcome {
    for qi in 1..=9 {
        for ui in 0..=10 {
            let (q, u) = (qi as f64 / 10.0, ui as f64 / 10.0);
            let seq = KillSequence::geometric(q, 10, u).unwrap();
            for j in 1..9 {
                let (v, w) = (seq.v(j).unwrap(), seq.v(j + 1).unwrap());
                if !(v <= w + 1e-15 && w <= 1e-15) {
                    return Err(format!("q={q} u={u} j={j}"));
                }
                let strict = if u == 0.0 { v.abs() < 1e-15 } else { v < 0.0 };
                if !strict {
                    return Err(format!("equality case fails at q={q} u={u} j={j}"));
                }
            }
        }
    }
    Ok(())
}

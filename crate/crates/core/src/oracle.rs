//! Fixed-step numerical cross-check of the exact engine.
//!
//! Shares nothing with [`crate::exppoly`]: the smoothed values are obtained
//! by integrating `d/dt N*(r,t) = N(r,t) - N*(r,t)` with classical RK4 on a
//! uniform grid, and `N`, `K` are recomputed at every node by direct
//! maximisation over the candidates.
//!
//! Off-node values of `N(r,·)` are the maximum of cubic Hermite interpolants
//! of the candidates, built from node values and node derivatives
//! `c(j) (N - N*)`. When the argmax changes inside a step, the step is split
//! at the crossing of the two interpolants so that each sub-step integrates
//! a smooth function.

use std::fmt::Write as _;

use thiserror::Error;

use crate::ammo::KillSequence;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("step h = {h} must be positive and at most t_max/100 = {limit}")]
    InvalidStep { h: f64, limit: f64 },
    #[error("n_max must be at least 1 and at most j_max = {j_max}")]
    BadMissileCount { j_max: usize },
}

#[derive(Debug, Clone)]
pub struct GridTable {
    h: f64,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    smoothed: Vec<Vec<f64>>,
    policy: Vec<Vec<usize>>,
}

/// Cubic Hermite interpolant on `[t0, t0 + h]`.
#[derive(Debug, Clone, Copy)]
struct Hermite {
    t0: f64,
    h: f64,
    y0: f64,
    y1: f64,
    d0: f64,
    d1: f64,
}

impl Hermite {
    fn at(&self, t: f64) -> f64 {
        let s = (t - self.t0) / self.h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y0 + h10 * self.h * self.d0 + h01 * self.y1 + h11 * self.h * self.d1
    }
}

fn max_of(curves: &[Hermite], t: f64) -> f64 {
    curves
        .iter()
        .map(|c| c.at(t))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn rk4_step(input: impl Fn(f64) -> f64, t: f64, y: f64, h: f64) -> f64 {
    let k1 = input(t) - y;
    let mid = input(t + 0.5 * h);
    let k2 = mid - (y + 0.5 * h * k1);
    let k3 = mid - (y + 0.5 * h * k2);
    let k4 = input(t + h) - (y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Builds the grid table. The actual step is `t_max / round(t_max / h)`.
pub fn solve_grid(
    seq: &KillSequence,
    n_max: usize,
    t_max: f64,
    h: f64,
) -> Result<GridTable, OracleError> {
    let limit = t_max / 100.0;
    if !(h > 0.0 && h <= limit * (1.0 + 1e-12)) {
        return Err(OracleError::InvalidStep { h, limit });
    }
    if n_max < 1 || n_max > seq.j_max() {
        return Err(OracleError::BadMissileCount { j_max: seq.j_max() });
    }
    let steps = (t_max / h).round() as usize;
    let h = t_max / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * h).collect();
    let nodes = times.len();

    let a: Vec<f64> = seq.probabilities().to_vec();
    let u = seq.u();
    let c: Vec<f64> = a.iter().map(|&aj| aj * (1.0 - u) + u).collect();

    let mut values = vec![vec![0.0; nodes]];
    let mut smoothed = vec![vec![0.0; nodes]];
    let mut policy = vec![vec![0usize; nodes]];

    for n in 1..=n_max {
        // candidate values and slopes at every node, j = 1..=n
        let mut cand = vec![vec![0.0; nodes]; n];
        let mut slope = vec![vec![0.0; nodes]; n];
        for j in 1..=n {
            let r = n - j;
            for i in 0..nodes {
                cand[j - 1][i] = a[j] + c[j] * smoothed[r][i];
                slope[j - 1][i] = c[j] * (values[r][i] - smoothed[r][i]);
            }
        }
        let mut v = vec![0.0; nodes];
        let mut k = vec![0usize; nodes];
        for i in 0..nodes {
            let mut best = 0;
            for j in 1..n {
                if cand[j][i] > cand[best][i] {
                    best = j;
                }
            }
            v[i] = cand[best][i];
            k[i] = best + 1;
        }

        let mut star = vec![0.0; nodes];
        for i in 0..steps {
            let t0 = times[i];
            let curves: Vec<Hermite> = (0..n)
                .map(|j| Hermite {
                    t0,
                    h,
                    y0: cand[j][i],
                    y1: cand[j][i + 1],
                    d0: slope[j][i],
                    d1: slope[j][i + 1],
                })
                .collect();
            let input = |t: f64| max_of(&curves, t);
            let y = star[i];
            star[i + 1] = if k[i] == k[i + 1] {
                rk4_step(input, t0, y, h)
            } else {
                let (left, right) = (curves[k[i] - 1], curves[k[i + 1] - 1]);
                let (mut lo, mut hi) = (t0, t0 + h);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if right.at(mid) > left.at(mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let cross = 0.5 * (lo + hi);
                let y_mid = rk4_step(input, t0, y, cross - t0);
                rk4_step(input, cross, y_mid, t0 + h - cross)
            };
        }
        values.push(v);
        policy.push(k);
        smoothed.push(star);
    }

    Ok(GridTable {
        h,
        times,
        values,
        smoothed,
        policy,
    })
}

impl GridTable {
    pub fn step(&self) -> f64 {
        self.h
    }

    pub fn n_max(&self) -> usize {
        self.values.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `N(n, t_i)` for all nodes.
    pub fn values(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    /// `N*(r, t_i)` for all nodes, `0 <= r <= n_max`.
    pub fn smoothed(&self, r: usize) -> &[f64] {
        &self.smoothed[r]
    }

    /// `K(n, t_i)` for all nodes, `1 <= n <= n_max`.
    pub fn policy(&self, n: usize) -> &[usize] {
        &self.policy[n]
    }

    /// Columns `t,n,N,N_star,K`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,n,N,N_star,K\n");
        for n in 1..=self.n_max() {
            for (i, t) in self.times.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    t, n, self.values[n][i], self.smoothed[n][i], self.policy[n][i]
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_has_closed_form() {
        let seq = KillSequence::geometric(0.5, 3, 0.0).unwrap();
        let grid = solve_grid(&seq, 3, 6.0, 1e-3).unwrap();
        for (i, &t) in grid.times().iter().enumerate() {
            let exact = 0.5 * (1.0 - (-t).exp());
            assert!((grid.smoothed(1)[i] - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn single_missile() {
        let seq = KillSequence::geometric(0.3, 2, 0.5).unwrap();
        let grid = solve_grid(&seq, 1, 2.0, 1e-3).unwrap();
        assert!(grid.values(1).iter().all(|&v| v == seq.a(1)));
        assert!(grid.policy(1).iter().all(|&k| k == 1));
    }

    #[test]
    fn frail_transitions_bracket_known_switches() {
        let seq = KillSequence::geometric(0.5, 5, 0.0).unwrap();
        let grid = solve_grid(&seq, 5, 6.0, 1e-3).unwrap();
        let k = grid.policy(5);
        let switches: Vec<(f64, f64)> = (1..k.len())
            .filter(|&i| k[i] != k[i - 1])
            .map(|i| (grid.times()[i - 1], grid.times()[i]))
            .collect();
        let expected = [(15.0f64 / 14.0).ln(), 1.5f64.ln(), 2.694_746_522_671_036];
        assert_eq!(switches.len(), 3);
        for ((lo, hi), t) in switches.iter().zip(expected) {
            assert!(*lo - 1e-3 <= t && t <= *hi + 1e-3, "{lo} {hi} {t}");
        }
    }

    #[test]
    fn rejects_bad_steps() {
        let seq = KillSequence::geometric(0.5, 2, 0.0).unwrap();
        assert!(solve_grid(&seq, 2, 1.0, 0.05).is_err());
        assert!(solve_grid(&seq, 2, 1.0, 0.0).is_err());
        assert!(solve_grid(&seq, 3, 1.0, 1e-3).is_err());
    }

    #[test]
    fn csv_has_header() {
        let seq = KillSequence::geometric(0.5, 2, 1.0).unwrap();
        let grid = solve_grid(&seq, 2, 1.0, 0.01).unwrap();
        let csv = grid.to_csv();
        assert!(csv.starts_with("t,n,N,N_star,K\n0,1,0.5,0,1\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * 101);
    }
}

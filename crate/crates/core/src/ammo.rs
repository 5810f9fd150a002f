//! Kill-probability sequences `a(j)` together with the counterattack
//! survival parameter `u`.
//!
//! A [`KillSequence`] is only ever constructed through validation, so every
//! value of the type satisfies `a(0) = 0`, strict monotonicity and strict
//! concavity. Downstream code relies on this and does not re-check.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum margin by which a strict inequality must hold.
pub const STRICTNESS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SequenceError {
    #[error("sequence is empty")]
    Empty,
    #[error("not starting at zero")]
    NotStartingAtZero,
    #[error("not strictly increasing at {0}")]
    NotIncreasing(usize),
    #[error("not strictly concave at {0}")]
    NotConcave(usize),
    #[error("out of [0,1] at {0}")]
    OutOfRange(usize),
    #[error("u out of [0,1]: {0}")]
    SurvivalOutOfRange(f64),
    #[error("q out of (0,1): {0}")]
    RatioOutOfRange(f64),
    #[error("j_max must be at least 1")]
    TooShort,
    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
}

/// A validated kill-probability sequence `a(0..=j_max)` with survival
/// parameter `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KillSequence {
    a: Vec<f64>,
    u: f64,
    /// Set when the sequence came from the geometric family `1 - q^j`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
}

fn check_u(u: f64) -> Result<(), SequenceError> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(SequenceError::SurvivalOutOfRange(u))
    }
}

impl KillSequence {
    /// Validates a user supplied sequence.
    pub fn new(a: Vec<f64>, u: f64) -> Result<Self, SequenceError> {
        if a.is_empty() {
            return Err(SequenceError::Empty);
        }
        if a[0] != 0.0 {
            return Err(SequenceError::NotStartingAtZero);
        }
        if let Some(j) = a.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(SequenceError::OutOfRange(j));
        }
        if a.len() < 2 {
            return Err(SequenceError::TooShort);
        }
        for j in 0..a.len() - 1 {
            if a[j + 1] - a[j] <= STRICTNESS_SLACK {
                return Err(SequenceError::NotIncreasing(j));
            }
        }
        for j in 0..a.len().saturating_sub(2) {
            let lower = a[j + 1] - a[j];
            let upper = a[j + 2] - a[j + 1];
            if lower - upper <= STRICTNESS_SLACK {
                return Err(SequenceError::NotConcave(j));
            }
        }
        check_u(u)?;
        Ok(Self { a, u, q: None })
    }

    /// `a(j) = 1 - q^j` for `j = 0..=j_max`.
    pub fn geometric(q: f64, j_max: usize, u: f64) -> Result<Self, SequenceError> {
        if !(q > 0.0 && q < 1.0) {
            return Err(SequenceError::RatioOutOfRange(q));
        }
        if j_max < 1 {
            return Err(SequenceError::TooShort);
        }
        let a = (0..=j_max).map(|j| 1.0 - q.powi(j as i32)).collect();
        let mut seq = Self::new(a, u)?;
        seq.q = Some(q);
        Ok(seq)
    }

    /// Parses the comma separated literal used on the command line,
    /// e.g. `0,0.5,0.75,0.875`.
    pub fn parse_literal(s: &str, u: f64) -> Result<Self, ParseSequenceError> {
        let a = s
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<f64>()
                    .map_err(|_| ParseSequenceError::BadNumber(tok.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(a, u)?)
    }

    /// Same sequence with a different survival parameter.
    pub fn with_survival(&self, u: f64) -> Result<Self, SequenceError> {
        check_u(u)?;
        Ok(Self { u, ..self.clone() })
    }

    pub fn j_max(&self) -> usize {
        self.a.len() - 1
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn q(&self) -> Option<f64> {
        self.q
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.a
    }

    /// Kill probability with `j` missiles. Panics if `j > j_max`.
    pub fn a(&self, j: usize) -> f64 {
        self.a[j]
    }

    fn check_index(&self, j: usize, max: usize) -> Result<(), SequenceError> {
        if j >= 1 && j <= max {
            Ok(())
        } else {
            Err(SequenceError::IndexOutOfRange { index: j, max })
        }
    }

    /// Probability of surviving an engagement in which `j` missiles are
    /// spent: `c(j) = a(j)(1-u) + u`.
    pub fn survival(&self, j: usize) -> Result<f64, SequenceError> {
        self.check_index(j, self.j_max())?;
        Ok(self.survival_unchecked(j))
    }

    pub(crate) fn survival_unchecked(&self, j: usize) -> f64 {
        self.a[j] * (1.0 - self.u) + self.u
    }

    /// `v(j) = a(j) - c(j)/c(j+1) * a(j+1)`, defined for `1 <= j < j_max`.
    pub fn v(&self, j: usize) -> Result<f64, SequenceError> {
        self.check_index(j, self.j_max() - 1)?;
        let ratio = self.survival_unchecked(j) / self.survival_unchecked(j + 1);
        Ok(self.a[j] - ratio * self.a[j + 1])
    }

    pub fn is_invincible(&self) -> bool {
        self.u == 1.0
    }

    pub fn is_frail(&self) -> bool {
        self.u == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseSequenceError {
    #[error("cannot parse {0:?} as a number")]
    BadNumber(String),
    #[error(transparent)]
    Invalid(#[from] SequenceError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_half() {
        let s = KillSequence::geometric(0.5, 5, 0.0).unwrap();
        assert_eq!(s.probabilities(), &[0.0, 0.5, 0.75, 0.875, 0.9375, 0.96875]);
        let s = KillSequence::geometric(0.5, 1, 0.0).unwrap();
        assert_eq!(s.probabilities(), &[0.0, 0.5]);
        let s = KillSequence::geometric(0.4, 2, 0.0).unwrap();
        assert!((s.a(1) - 0.6).abs() < 1e-15);
        assert!((s.a(2) - 0.84).abs() < 1e-15);
    }

    #[test]
    fn geometric_rejects_bad_inputs() {
        assert_eq!(
            KillSequence::geometric(1.5, 3, 0.0),
            Err(SequenceError::RatioOutOfRange(1.5))
        );
        assert_eq!(
            KillSequence::geometric(0.0, 3, 0.0),
            Err(SequenceError::RatioOutOfRange(0.0))
        );
        assert_eq!(
            KillSequence::geometric(0.5, 0, 0.0),
            Err(SequenceError::TooShort)
        );
        assert_eq!(
            KillSequence::geometric(0.5, 3, 1.2),
            Err(SequenceError::SurvivalOutOfRange(1.2))
        );
    }

    #[test]
    fn validation_messages() {
        assert!(KillSequence::new(vec![0.0, 0.5, 0.75], 0.0).is_ok());
        let err = KillSequence::new(vec![0.0, 0.3, 0.6], 0.0).unwrap_err();
        assert_eq!(err, SequenceError::NotConcave(0));
        assert_eq!(err.to_string(), "not strictly concave at 0");
        let err = KillSequence::new(vec![0.1, 0.5], 0.0).unwrap_err();
        assert_eq!(err.to_string(), "not starting at zero");
        let err = KillSequence::new(vec![0.0, 0.5, 0.5], 0.0).unwrap_err();
        assert_eq!(err.to_string(), "not strictly increasing at 1");
        let err = KillSequence::new(vec![0.0, 0.8, 1.2], 0.0).unwrap_err();
        assert_eq!(err.to_string(), "out of [0,1] at 2");
    }

    #[test]
    fn literal_parsing() {
        let s = KillSequence::parse_literal("0, 0.5,0.75,0.875", 1.0).unwrap();
        assert_eq!(s.j_max(), 3);
        assert!(matches!(
            KillSequence::parse_literal("0,x", 1.0),
            Err(ParseSequenceError::BadNumber(_))
        ));
    }

    #[test]
    fn survival_values() {
        let frail = KillSequence::geometric(0.5, 5, 0.0).unwrap();
        assert_eq!(frail.survival(2).unwrap(), 0.75);
        let invincible = frail.with_survival(1.0).unwrap();
        assert_eq!(invincible.survival(2).unwrap(), 1.0);
        let half = frail.with_survival(0.5).unwrap();
        assert_eq!(half.survival(1).unwrap(), 0.75);
        assert!(frail.survival(0).is_err());
        assert!(frail.survival(6).is_err());
    }

    #[test]
    fn v_values() {
        let frail = KillSequence::geometric(0.5, 5, 0.0).unwrap();
        assert_eq!(frail.v(1).unwrap(), 0.0);
        let invincible = frail.with_survival(1.0).unwrap();
        assert_eq!(invincible.v(1).unwrap(), -0.25);
        let half = frail.with_survival(0.5).unwrap();
        for j in 1..4 {
            let (lo, hi) = (half.v(j).unwrap(), half.v(j + 1).unwrap());
            assert!(lo <= hi && hi < 0.0, "j={j}: {lo} {hi}");
        }
        assert!(frail.v(5).is_err());
        assert!(frail.v(0).is_err());
    }

    #[test]
    fn survival_is_monotone_and_dominates_a() {
        for &u in &[0.0, 0.3, 1.0] {
            let s = KillSequence::geometric(0.7, 8, u).unwrap();
            for j in 1..8 {
                let (c0, c1) = (s.survival(j).unwrap(), s.survival(j + 1).unwrap());
                assert!(c0 <= c1);
                assert!(c0 >= s.a(j));
                assert_eq!(c0 == s.a(j), u == 0.0);
            }
        }
    }
}

//! Exact solver, auditor, oracle and simulator for the discrete-ammunition
//! fighter allocation problem.

// `!(a < b)` is used on purpose so that NaN inputs are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ammo;
pub mod audit;
pub mod cli;
pub mod exppoly;
pub mod oracle;
pub mod policy;
pub mod sim;
pub mod solver;

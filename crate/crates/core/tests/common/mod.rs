//! Checks shared by the focused test targets and the acceptance run. Each
//! check panics on failure and returns a one-line summary.

#![allow(dead_code)]

pub mod cert;
pub mod moments;
pub mod solver;
pub mod soundness;

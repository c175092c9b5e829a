//! Simulation and key-distribution pipeline for an entanglement-based QKD
//! link whose photons carry polarization on one side and time-bin on the
//! other.

// failures carry the partial report agreed so far
#![allow(clippy::result_large_err)]
// `!(x > 0.0)` style checks are meant to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod optics;
pub mod protocol;
pub mod harness;
pub mod par;
pub mod quantum;
pub mod tags;

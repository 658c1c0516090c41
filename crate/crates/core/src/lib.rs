//! Simulation and verification lab for the seven-phase secure transmission scheme over the
//! `(M, M, N, N)` MIMO X channel with confidential messages and delayed CSIT.
//!
//! - [`params`]: exact closed forms (regimes, optimal phase durations, SDoF lower bound).
//! - [`channel`]: channel traces, per-phase block-diagonal matrices, delayed-CSI auditing.
//! - [`precoding`]: the pre-assigned mixing matrices.
//! - [`scheme`]: end-to-end runs of the seven phases.
//! - [`analysis`]: decoding and security matrices, their rank formulas, leakage evaluation.
//! - [`decoder`]: receiver-1 AN cancellation and least-squares recovery.
//! - [`simulation`]: seeded Monte Carlo trials and SNR sweeps.
//! - [`cli`]: the `xsdof` command line.

pub mod analysis;
pub mod channel;
pub mod cli;
pub mod decoder;
pub mod numerics;
pub mod params;
pub mod precoding;
pub mod scheme;
pub mod simulation;

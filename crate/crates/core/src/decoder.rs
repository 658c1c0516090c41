//! Receiver-1 decoding: form the combined observation, cancel the AN contribution using the
//! received phase I/II signals, and solve against `H1` in the least-squares sense.
//! Receiver 2 is handled by swapping roles first.

use thiserror::Error;

use crate::analysis::{assemble_h1, AnalysisError, DecodingSystem};
use crate::channel::Receiver;
use crate::numerics::{least_squares, vstack, CVector, NumericsError, ToleranceConfig};
use crate::params::Phase;
use crate::scheme::{swap_roles, SchemeError, TransmissionRecord};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error("H1 has rank {rank} but {columns} columns; {} symbols are not decodable", columns - rank)]
    RankDeficient { rank: usize, columns: usize },
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub a1a: CVector,
    pub a1b: CVector,
    pub a2: CVector,
    /// `|lhs - an_mixing [y1^I; y1^II] - H1 x_hat|`.
    pub residual_norm: f64,
    /// Mean of `|x_hat - x|^2` over every decoded symbol.
    pub mse: f64,
    /// Smallest singular value of `H1` kept by the solve.
    pub h1_condition: f64,
}

impl DecodeResult {
    pub fn symbol_count(&self) -> usize {
        self.a1a.len() + self.a1b.len() + self.a2.len()
    }
}

fn y1(record: &TransmissionRecord, phase: Phase) -> &CVector {
    record.y(phase, Receiver::One)
}

/// `[y1^III; y1^IV; y1^VII - H21^VII Theta (H11^VI Gamma y1^V - y1^VI)]` from the noisy
/// observations, together with the matrices it was built against.
pub fn build_lhs(record: &TransmissionRecord) -> Result<(CVector, DecodingSystem), DecodeError> {
    let system = assemble_h1(record.trace(), record.precoders(), record.plan())?;
    let lhs = system.lhs(
        y1(record, Phase::III),
        y1(record, Phase::IV),
        y1(record, Phase::V),
        y1(record, Phase::VI),
        y1(record, Phase::VII),
    );
    Ok((lhs, system))
}

/// `lhs - an_mixing [y1^I; y1^II]`, the observation left for the data symbols.
pub fn cancel_an(record: &TransmissionRecord) -> Result<(CVector, DecodingSystem), DecodeError> {
    let (lhs, system) = build_lhs(record)?;
    let an = vstack(&[y1(record, Phase::I), y1(record, Phase::II)]);
    Ok((lhs - &system.an_mixing * an, system))
}

pub fn decode(record: &TransmissionRecord, tol: &ToleranceConfig) -> Result<DecodeResult, DecodeError> {
    let (obs, system) = cancel_an(record)?;
    let ls = least_squares(&system.h1, &obs, tol)?;
    let columns = system.h1.ncols();
    if ls.rank < columns {
        return Err(DecodeError::RankDeficient {
            rank: ls.rank,
            columns,
        });
    }
    let plan = record.plan();
    let m = record.config().m_usize();
    let (n_a, n_b) = (plan.tau2 * m, plan.tau3 * m);
    let x = &ls.solution;
    let truth = record.symbols().receiver1_data();
    let mse = if columns == 0 {
        0.0
    } else {
        (x - &truth).norm_squared() / columns as f64
    };
    Ok(DecodeResult {
        a1a: x.rows(0, n_a).into_owned(),
        a1b: x.rows(n_a, n_b).into_owned(),
        a2: x.rows(n_a + n_b, n_a).into_owned(),
        residual_norm: ls.residual_norm,
        mse,
        h1_condition: ls.smallest_retained,
    })
}

/// Decode receiver 2's symbols. In the result `a1a`, `a1b`, `a2` hold the estimates of
/// `b2a`, `b2b`, `b1`.
pub fn decode_receiver2(
    record: &TransmissionRecord,
    tol: &ToleranceConfig,
) -> Result<DecodeResult, DecodeError> {
    decode(&swap_roles(record)?, tol)
}

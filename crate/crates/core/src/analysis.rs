//! Receiver-1 decoding matrix, the security matrices `A` and `B`, their closed-form ranks,
//! and the Gaussian leakage proxy
//! `log2 det(I + snr A A^H) - log2 det(I + snr B B^H)`.
//!
//! `H1` acts on `[a1a; a1b; a2]`. Block rows are phase III, phase IV and the phase-VII
//! recurrence combination:
//!
//! ```text
//! [ H11^III                  0               H21^III          ]
//! [ 0                        H11^IV          H21^IV G H22^III ]
//! [ H11^VII T H22^IV G H12^III   -H11^VII T H12^IV   0        ]
//! ```
//!
//! `A` has block columns of widths `(N tau1, N tau1, N tau2, N tau3)` and seven block rows;
//! `B` has block columns of width `M tau1` (for `u1`, `u2`) and seven block rows.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::channel::{phase_block, ChannelError, ChannelTrace, Receiver, Transmitter};
use crate::numerics::{
    logdet_capacity, numeric_rank, BlockGrid, CMatrix, CVector, NumericsError, ToleranceConfig,
};
use crate::params::{AntennaConfig, IntegerPlan, Phase};
use crate::precoding::PrecoderSet;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("rank closed forms need N < M, got M = {m}, N = {n}")]
    RegimeViolation { m: u32, n: u32 },
    #[error("precoder shapes do not match the plan: {0}")]
    Dimension(String),
    #[error("snr values must be positive, finite and distinct, got {lo} and {hi}")]
    InvalidSnrPair { lo: f64, hi: f64 },
    #[error("cannot write dump: {0}")]
    Io(#[from] std::io::Error),
}

/// Phase-block lookup for one trace and plan.
struct Blocks<'a> {
    trace: &'a ChannelTrace,
    plan: &'a IntegerPlan,
}

impl Blocks<'_> {
    fn h(&self, tx: Transmitter, rx: Receiver, phase: Phase) -> Result<CMatrix, ChannelError> {
        phase_block(self.trace, tx, rx, phase, self.plan)
    }
}

fn check_shapes(
    cfg: AntennaConfig,
    plan: &IntegerPlan,
    p: &PrecoderSet,
) -> Result<(), AnalysisError> {
    let (m, n) = (cfg.m_usize(), cfg.n_usize());
    let expected = [
        ("phi", p.phi.shape(), (plan.tau2 * m, plan.tau1 * n)),
        ("omega", p.omega.shape(), (plan.tau3 * m, plan.tau1 * n)),
        ("gamma", p.gamma.shape(), (plan.tau3 * m, plan.tau2 * n)),
        ("theta", p.theta.shape(), (plan.tau4 * n, plan.tau3 * n)),
    ];
    for (name, got, want) in expected {
        if got != want {
            return Err(AnalysisError::Dimension(format!(
                "{name} is {}x{}, expected {}x{}",
                got.0, got.1, want.0, want.1
            )));
        }
    }
    Ok(())
}

/// `H1`, the matrix mapping `[y1^I; y1^II]` into the combined observation, and the two
/// filters receiver 1 uses to form the phase-VII recurrence combination.
#[derive(Debug, Clone)]
pub struct DecodingSystem {
    pub h1: CMatrix,
    pub an_mixing: CMatrix,
    /// `H21^VII Theta`.
    pub recurrence_filter: CMatrix,
    /// `H11^VI Gamma`.
    pub replica_filter: CMatrix,
    /// Row count of the `[phase III; phase IV]` part of `H1`.
    pub leading_rows: usize,
}

impl DecodingSystem {
    /// `[y3; y4; y7 - recurrence_filter (replica_filter y5 - y6)]`.
    pub fn lhs(
        &self,
        y3: &CVector,
        y4: &CVector,
        y5: &CVector,
        y6: &CVector,
        y7: &CVector,
    ) -> CVector {
        let combined = y7 - &self.recurrence_filter * (&self.replica_filter * y5 - y6);
        crate::numerics::vstack(&[y3, y4, &combined])
    }

    /// The `N(tau2 + tau3)` rows coming from phases III and IV.
    pub fn l_block(&self) -> CMatrix {
        self.h1.rows(0, self.leading_rows).into_owned()
    }

    /// The `N tau4` rows of the recurrence combination.
    pub fn u_block(&self) -> CMatrix {
        self.h1
            .rows(self.leading_rows, self.h1.nrows() - self.leading_rows)
            .into_owned()
    }
}

pub fn assemble_h1(
    trace: &ChannelTrace,
    precoders: &PrecoderSet,
    plan: &IntegerPlan,
) -> Result<DecodingSystem, AnalysisError> {
    let cfg = trace.config();
    check_shapes(cfg, plan, precoders)?;
    let (m, n) = (cfg.m_usize(), cfg.n_usize());
    let b = Blocks { trace, plan };
    use Phase::*;
    use Receiver as R;
    use Transmitter as T;
    let (phi, omega, gamma, theta) = (
        &precoders.phi,
        &precoders.omega,
        &precoders.gamma,
        &precoders.theta,
    );

    let h11_3 = b.h(T::One, R::One, III)?;
    let h21_3 = b.h(T::Two, R::One, III)?;
    let h12_3 = b.h(T::One, R::Two, III)?;
    let h22_3 = b.h(T::Two, R::Two, III)?;
    let h11_4 = b.h(T::One, R::One, IV)?;
    let h21_4 = b.h(T::Two, R::One, IV)?;
    let h12_4 = b.h(T::One, R::Two, IV)?;
    let h22_4 = b.h(T::Two, R::Two, IV)?;
    let h11_6 = b.h(T::One, R::One, VI)?;
    let h11_7 = b.h(T::One, R::One, VII)?;
    let h21_7 = b.h(T::Two, R::One, VII)?;

    let rows = [plan.tau2 * n, plan.tau3 * n, plan.tau4 * n];
    let cols = [plan.tau2 * m, plan.tau3 * m, plan.tau2 * m];
    let mut h1 = BlockGrid::new(&rows, &cols);
    h1.set(0, 0, &h11_3)?;
    h1.set(0, 2, &h21_3)?;
    h1.set(1, 1, &h11_4)?;
    h1.set(1, 2, &(&h21_4 * gamma * &h22_3))?;
    let recur = &h11_7 * theta;
    h1.set(2, 0, &(&recur * &h22_4 * gamma * &h12_3))?;
    h1.set(2, 1, &(-(&recur * &h12_4)))?;

    let w = plan.tau1 * n;
    let mut an = BlockGrid::new(&rows, &[w, w]);
    an.set(0, 0, &(&h11_3 * phi))?;
    an.set(0, 1, &(&h21_3 * phi))?;
    an.set(1, 0, &(&h11_4 * omega))?;
    an.set(1, 1, &(&h21_4 * gamma * &h22_3 * phi))?;
    an.set(2, 0, &(&recur * (&h22_4 * gamma * &h12_3 * phi - &h12_4 * omega)))?;

    Ok(DecodingSystem {
        h1: h1.into_matrix(),
        an_mixing: an.into_matrix(),
        recurrence_filter: &h21_7 * theta,
        replica_filter: &h11_6 * gamma,
        leading_rows: rows[0] + rows[1],
    })
}

fn require_scheme_side(cfg: AntennaConfig) -> Result<(usize, usize), AnalysisError> {
    if cfg.m() <= cfg.n() {
        return Err(AnalysisError::RegimeViolation {
            m: cfg.m(),
            n: cfg.n(),
        });
    }
    Ok((cfg.m_usize(), cfg.n_usize()))
}

/// `min{N(tau2 + tau3 + min(tau3, tau4)), M(2 tau2 + tau3)}`.
pub fn rank_h1_formula(plan: &IntegerPlan, cfg: AntennaConfig) -> Result<usize, AnalysisError> {
    let (m, n) = require_scheme_side(cfg)?;
    let (t2, t3, t4) = (plan.tau2, plan.tau3, plan.tau4);
    Ok((n * (t2 + t3 + t3.min(t4))).min(m * (2 * t2 + t3)))
}

/// Generic rank of `H1` as actually assembled. The columns of `a1a` and `a2` reach at most
/// `3 N tau2` dimensions (phase III rows, `H12^III a1a`, `H22^III a2`), so the column side
/// loses `tau2 (2M - 3N)` when `2M > 3N`.
pub fn rank_h1_structural(
    plan: &IntegerPlan,
    cfg: AntennaConfig,
) -> Result<usize, AnalysisError> {
    let (m, n) = require_scheme_side(cfg)?;
    let (t2, t3, t4) = (plan.tau2, plan.tau3, plan.tau4);
    let defect = t2 * (2 * m).saturating_sub(3 * n);
    Ok((n * (t2 + t3 + t3.min(t4))).min(m * (2 * t2 + t3) - defect))
}

/// `N(2 tau1 + tau2 + tau3)`.
pub fn rank_a_formula(plan: &IntegerPlan, cfg: AntennaConfig) -> Result<usize, AnalysisError> {
    let (_, n) = require_scheme_side(cfg)?;
    Ok(n * (2 * plan.tau1 + plan.tau2 + plan.tau3))
}

/// `min{N(2 tau1 + min(tau1, tau2) + min(tau1, tau3)), 2 M tau1}`.
pub fn rank_b_formula(plan: &IntegerPlan, cfg: AntennaConfig) -> Result<usize, AnalysisError> {
    let (m, n) = require_scheme_side(cfg)?;
    let t1 = plan.tau1;
    Ok((n * (2 * t1 + t1.min(plan.tau2) + t1.min(plan.tau3))).min(2 * m * t1))
}

/// Generic rank of `B` as actually assembled. The row `H21^VI Omega H22^II` and the row
/// `[H11^V Phi H12^I, H21^V Phi H22^II]` both have to fit in the `2(M - N) tau1`
/// dimensions left by the first two block rows, and the first of them only sees the
/// `(M - N) tau1` directions in the `u2` half.
pub fn rank_b_structural(
    plan: &IntegerPlan,
    cfg: AntennaConfig,
) -> Result<usize, AnalysisError> {
    let (m, n) = require_scheme_side(cfg)?;
    let t1 = plan.tau1;
    let k = (n * plan.tau3).min((m - n) * t1);
    let rest = (n * plan.tau2).min(2 * (m - n) * t1 - k);
    Ok((2 * n * t1 + k + rest).min(2 * m * t1))
}

#[derive(Debug, Clone)]
pub struct SecuritySystem {
    pub a: CMatrix,
    pub b: CMatrix,
}

/// Assemble `A` and `B`. Only the receiver-1 side is built; receiver 2 goes through a
/// role swap.
pub fn assemble_security(
    trace: &ChannelTrace,
    precoders: &PrecoderSet,
    plan: &IntegerPlan,
) -> Result<SecuritySystem, AnalysisError> {
    let cfg = trace.config();
    check_shapes(cfg, plan, precoders)?;
    let (m, n) = (cfg.m_usize(), cfg.n_usize());
    let b = Blocks { trace, plan };
    use Phase::*;
    use Receiver as R;
    use Transmitter as T;
    let (phi, omega, gamma, theta) = (
        &precoders.phi,
        &precoders.omega,
        &precoders.gamma,
        &precoders.theta,
    );
    let (t1, t2, t3, t4) = (plan.tau1, plan.tau2, plan.tau3, plan.tau4);

    let h11_1 = b.h(T::One, R::One, I)?;
    let h12_1 = b.h(T::One, R::Two, I)?;
    let h21_2 = b.h(T::Two, R::One, II)?;
    let h22_2 = b.h(T::Two, R::Two, II)?;
    let h11_3 = b.h(T::One, R::One, III)?;
    let h21_3 = b.h(T::Two, R::One, III)?;
    let h12_3 = b.h(T::One, R::Two, III)?;
    let h22_3 = b.h(T::Two, R::Two, III)?;
    let h11_4 = b.h(T::One, R::One, IV)?;
    let h21_4 = b.h(T::Two, R::One, IV)?;
    let h12_4 = b.h(T::One, R::Two, IV)?;
    let h22_4 = b.h(T::Two, R::Two, IV)?;
    let h11_5 = b.h(T::One, R::One, V)?;
    let h21_5 = b.h(T::Two, R::One, V)?;
    let h11_6 = b.h(T::One, R::One, VI)?;
    let h21_6 = b.h(T::Two, R::One, VI)?;
    let h11_7 = b.h(T::One, R::One, VII)?;
    let h21_7 = b.h(T::Two, R::One, VII)?;

    let rows = [t1 * n, t1 * n, t2 * n, t3 * n, t2 * n, t3 * n, t4 * n];
    let x7 = &h11_7 * theta * (&h22_4 * gamma * &h12_3 * phi - &h12_4 * omega);
    let iv_u2 = &h21_4 * gamma * &h22_3 * phi;
    let recur2 = &h21_7 * theta;

    let mut a = BlockGrid::new(&rows, &[t1 * n, t1 * n, t2 * n, t3 * n]);
    a.set_identity(0, 0)?;
    a.set_identity(1, 1)?;
    a.set(2, 0, &(&h11_3 * phi))?;
    a.set(2, 1, &(&h21_3 * phi))?;
    a.set(3, 0, &(&h11_4 * omega))?;
    a.set(3, 1, &iv_u2)?;
    a.set_identity(4, 2)?;
    a.set_identity(5, 3)?;
    a.set(6, 0, &x7)?;
    a.set(6, 2, &(&recur2 * &h11_6 * gamma))?;
    a.set(6, 3, &(-&recur2))?;

    let mut bm = BlockGrid::new(&rows, &[t1 * m, t1 * m]);
    bm.set(0, 0, &h11_1)?;
    bm.set(1, 1, &h21_2)?;
    bm.set(2, 0, &(&h11_3 * phi * &h11_1))?;
    bm.set(2, 1, &(&h21_3 * phi * &h21_2))?;
    bm.set(3, 0, &(&h11_4 * omega * &h11_1))?;
    bm.set(3, 1, &(&iv_u2 * &h21_2))?;
    bm.set(4, 0, &(&h11_5 * phi * &h12_1))?;
    bm.set(4, 1, &(&h21_5 * phi * &h22_2))?;
    bm.set(5, 0, &(&h11_6 * gamma * &h11_5 * phi * &h12_1))?;
    bm.set(5, 1, &(&h21_6 * omega * &h22_2))?;
    bm.set(6, 0, &(&x7 * &h11_1))?;
    bm.set(
        6,
        1,
        &(&recur2 * (&h11_6 * gamma * &h21_5 * phi - &h21_6 * omega) * &h22_2),
    )?;

    Ok(SecuritySystem {
        a: a.into_matrix(),
        b: bm.into_matrix(),
    })
}

/// The four-block-row matrix `[H11^I, 0; 0, H21^II; H11^V Phi H12^I, H21^V Phi H22^II;
/// 0, H21^VI Omega H22^II]`, whose row space matches that of `B`.
pub fn reduced_b(
    trace: &ChannelTrace,
    precoders: &PrecoderSet,
    plan: &IntegerPlan,
) -> Result<CMatrix, AnalysisError> {
    let cfg = trace.config();
    check_shapes(cfg, plan, precoders)?;
    let (m, n) = (cfg.m_usize(), cfg.n_usize());
    let b = Blocks { trace, plan };
    use Phase::*;
    use Receiver as R;
    use Transmitter as T;
    let (t1, t2, t3) = (plan.tau1, plan.tau2, plan.tau3);
    let (phi, omega) = (&precoders.phi, &precoders.omega);
    let mut grid = BlockGrid::new(&[t1 * n, t1 * n, t2 * n, t3 * n], &[t1 * m, t1 * m]);
    let h22_2 = b.h(T::Two, R::Two, II)?;
    grid.set(0, 0, &b.h(T::One, R::One, I)?)?;
    grid.set(1, 1, &b.h(T::Two, R::One, II)?)?;
    grid.set(2, 0, &(b.h(T::One, R::One, V)? * phi * b.h(T::One, R::Two, I)?))?;
    grid.set(2, 1, &(b.h(T::Two, R::One, V)? * phi * &h22_2))?;
    grid.set(3, 1, &(b.h(T::Two, R::One, VI)? * omega * &h22_2))?;
    Ok(grid.into_matrix())
}

/// Numeric ranks of the assembled matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankReport {
    pub h1: usize,
    pub a: usize,
    pub b: usize,
}

pub fn numeric_ranks(
    decoding: &DecodingSystem,
    security: &SecuritySystem,
    tol: &ToleranceConfig,
) -> Result<RankReport, AnalysisError> {
    Ok(RankReport {
        h1: numeric_rank(&decoding.h1, tol)?,
        a: numeric_rank(&security.a, tol)?,
        b: numeric_rank(&security.b, tol)?,
    })
}

/// Leakage proxy in bits.
pub fn leakage_logdet(security: &SecuritySystem, snr: f64) -> Result<f64, AnalysisError> {
    Ok(logdet_capacity(&security.a, snr)? - logdet_capacity(&security.b, snr)?)
}

/// Growth of the leakage per unit of `log2 snr` between two SNR points.
pub fn leakage_slope(security: &SecuritySystem, snr_lo: f64, snr_hi: f64) -> Result<f64, AnalysisError> {
    let ok = |s: f64| s.is_finite() && s > 0.0;
    if !ok(snr_lo) || !ok(snr_hi) || snr_lo == snr_hi {
        return Err(AnalysisError::InvalidSnrPair {
            lo: snr_lo,
            hi: snr_hi,
        });
    }
    let lo = leakage_logdet(security, snr_lo)?;
    let hi = leakage_logdet(security, snr_hi)?;
    Ok((hi - lo) / (snr_hi.log2() - snr_lo.log2()))
}

/// Text dump: for each matrix a `# name rows cols` header, then one line per row of
/// space-separated `re,im` pairs.
pub fn write_dump(path: &Path, matrices: &[(&str, &CMatrix)]) -> Result<(), AnalysisError> {
    let mut out = String::new();
    for (name, mat) in matrices {
        // Writing into a String cannot fail.
        let _ = writeln!(out, "# {name} {} {}", mat.nrows(), mat.ncols());
        for r in 0..mat.nrows() {
            let line: Vec<String> = (0..mat.ncols())
                .map(|c| {
                    let z = mat[(r, c)];
                    format!("{:e},{:e}", z.re, z.im)
                })
                .collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

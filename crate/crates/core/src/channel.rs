//! Time-varying channel realisations, per-phase block-diagonal channel matrices and the
//! delayed-CSI access audit.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    block_diagonal, complex_gaussian_matrix, derive_seed, numeric_rank, seeded_rng, CMatrix,
    ToleranceConfig, C64,
};
use crate::params::{AntennaConfig, IntegerPlan, Phase};

/// Regeneration attempts before a degenerate draw is treated as a fault.
pub const GENERICITY_RETRY_LIMIT: u32 = 8;

/// Above this many column subsets per slot matrix, only the `M` cyclic windows are certified.
pub const MAX_EXHAUSTIVE_SUBSETS: usize = 64;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("a trace needs at least one time slot")]
    NoSlots,
    #[error("no generic draw after {attempts} attempts (seed {seed})")]
    GenericityFault { seed: u64, attempts: u32 },
    #[error("slot {slot} outside trace of {slots} slots")]
    SlotOutOfRange { slot: usize, slots: usize },
    #[error("plan needs {needed} slots but the trace has {slots}")]
    PlanMismatch { needed: usize, slots: usize },
    #[error("transmitter {accessor} requested CSI of slot {requested} at slot {now}; only slots < {now} are available")]
    CausalityViolation {
        accessor: Transmitter,
        requested: usize,
        now: usize,
    },
    #[error("current slot {now} outside 1..={max}")]
    InvalidCurrentSlot { now: usize, max: usize },
    #[error("trace file: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("trace file is inconsistent: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transmitter {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Receiver {
    One,
    Two,
}

impl Transmitter {
    pub const BOTH: [Transmitter; 2] = [Transmitter::One, Transmitter::Two];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Self {
        match self {
            Transmitter::One => Transmitter::Two,
            Transmitter::Two => Transmitter::One,
        }
    }

    fn from_number(k: u8) -> Option<Self> {
        match k {
            1 => Some(Transmitter::One),
            2 => Some(Transmitter::Two),
            _ => None,
        }
    }
}

impl Receiver {
    pub const BOTH: [Receiver; 2] = [Receiver::One, Receiver::Two];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Self {
        match self {
            Receiver::One => Receiver::Two,
            Receiver::Two => Receiver::One,
        }
    }

    fn from_number(k: u8) -> Option<Self> {
        match k {
            1 => Some(Receiver::One),
            2 => Some(Receiver::Two),
            _ => None,
        }
    }
}

impl fmt::Display for Transmitter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

impl fmt::Display for Receiver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

/// Per-slot `N x M` channel matrices `H_{i,j}[t]` for both transmitters and receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    cfg: AntennaConfig,
    slots: usize,
    seed: u64,
    attempts: u32,
    // index: (tx * 2 + rx) * slots + (t - 1)
    matrices: Vec<CMatrix>,
}

impl ChannelTrace {
    pub fn config(&self) -> AntennaConfig {
        self.cfg
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of draws needed to pass certification (1 when the first draw was generic).
    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    fn offset(&self, tx: Transmitter, rx: Receiver, t: usize) -> usize {
        (tx.index() * 2 + rx.index()) * self.slots + (t - 1)
    }

    /// `H_{tx,rx}[t]`, with `t` 1-based.
    pub fn get(&self, tx: Transmitter, rx: Receiver, t: usize) -> Result<&CMatrix, ChannelError> {
        if t == 0 || t > self.slots {
            return Err(ChannelError::SlotOutOfRange {
                slot: t,
                slots: self.slots,
            });
        }
        Ok(&self.matrices[self.offset(tx, rx, t)])
    }

    fn check_plan(&self, plan: &IntegerPlan) -> Result<(), ChannelError> {
        if plan.total_slots() > self.slots {
            return Err(ChannelError::PlanMismatch {
                needed: plan.total_slots(),
                slots: self.slots,
            });
        }
        Ok(())
    }

    /// The trace seen with transmitter and receiver labels swapped: phase I's slots trade
    /// places with phase II's, III with V, IV with VI, and `H'_{i,j} = H_{other i, other j}`.
    pub fn mirror_roles(&self, plan: &IntegerPlan) -> Result<ChannelTrace, ChannelError> {
        self.check_plan(plan)?;
        let mut slot_map: Vec<usize> = (1..=self.slots).collect();
        for phase in Phase::ALL {
            for (dst, src) in plan.slots(phase).zip(plan.slots(phase.mirrored())) {
                slot_map[dst - 1] = src;
            }
        }
        let mut matrices = Vec::with_capacity(self.matrices.len());
        for tx in Transmitter::BOTH {
            for rx in Receiver::BOTH {
                for &src in &slot_map {
                    matrices.push(self.get(tx.other(), rx.other(), src)?.clone());
                }
            }
        }
        Ok(ChannelTrace {
            matrices,
            ..*self
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<(), ChannelError> {
        fs::write(path, serde_json::to_string(&TraceFile::from(self))?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, ChannelError> {
        let file: TraceFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        file.try_into()
    }
}

fn column_subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn count(m: usize, k: usize) -> usize {
        (0..k).fold(1usize, |acc, i| acc.saturating_mul(m - i) / (i + 1))
    }
    if count(m, k) > MAX_EXHAUSTIVE_SUBSETS {
        return (0..m).map(|s| (0..k).map(|i| (s + i) % m).collect()).collect();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let Some(pos) = (0..k).rev().find(|&i| idx[i] != i + m - k) else {
            return out;
        };
        idx[pos] += 1;
        for i in pos + 1..k {
            idx[i] = idx[i - 1] + 1;
        }
    }
}

/// Every `min(N, M)`-square submatrix (by column choice when `M >= N`, row choice otherwise)
/// must be numerically invertible.
fn is_generic(h: &CMatrix, subsets: &[Vec<usize>], tol: &ToleranceConfig) -> bool {
    let (n, m) = h.shape();
    let k = n.min(m);
    if numeric_rank(h, tol).map_or(true, |r| r < k) {
        return false;
    }
    subsets.iter().all(|subset| {
        let sub = if m >= n {
            h.select_columns(subset.iter())
        } else {
            h.select_rows(subset.iter())
        };
        numeric_rank(&sub, tol).is_ok_and(|r| r == k)
    })
}

fn draw(cfg: AntennaConfig, slots: usize, seed: u64) -> Vec<CMatrix> {
    let mut rng = seeded_rng(seed);
    let mut by_slot: Vec<[CMatrix; 4]> = Vec::with_capacity(slots);
    for _ in 0..slots {
        by_slot.push(std::array::from_fn(|_| {
            complex_gaussian_matrix(&mut rng, cfg.n_usize(), cfg.m_usize())
        }));
    }
    let mut matrices = Vec::with_capacity(4 * slots);
    for link in 0..4 {
        for slot in &by_slot {
            matrices.push(slot[link].clone());
        }
    }
    matrices
}

/// I.i.d. unit-variance circularly-symmetric complex Gaussian channels, certified generic.
///
/// Draw order is slot-major (slot 1: H11, H12, H21, H22; slot 2: ...). A draw that fails
/// certification is replaced wholesale by one from a derived seed.
pub fn generate_trace(
    cfg: AntennaConfig,
    total_slots: usize,
    seed: u64,
) -> Result<ChannelTrace, ChannelError> {
    if total_slots == 0 {
        return Err(ChannelError::NoSlots);
    }
    let tol = ToleranceConfig::default();
    let (n, m) = (cfg.n_usize(), cfg.m_usize());
    let subsets = column_subsets(m.max(n), m.min(n));
    for attempt in 0..GENERICITY_RETRY_LIMIT {
        let draw_seed = if attempt == 0 {
            seed
        } else {
            derive_seed(seed, 100 + u64::from(attempt))
        };
        let matrices = draw(cfg, total_slots, draw_seed);
        if matrices.iter().all(|h| is_generic(h, &subsets, &tol)) {
            return Ok(ChannelTrace {
                cfg,
                slots: total_slots,
                seed,
                attempts: attempt + 1,
                matrices,
            });
        }
    }
    Err(ChannelError::GenericityFault {
        seed,
        attempts: GENERICITY_RETRY_LIMIT,
    })
}

fn phase_slot_matrices(
    trace: &ChannelTrace,
    tx: Transmitter,
    rx: Receiver,
    phase: Phase,
    plan: &IntegerPlan,
) -> Result<Vec<CMatrix>, ChannelError> {
    trace.check_plan(plan)?;
    let n = trace.cfg.n_usize();
    plan.slots(phase)
        .map(|t| {
            let h = trace.get(tx, rx, t)?;
            Ok(if phase == Phase::VII {
                // transmitters use only their first N antennas in the recurrence phase
                h.columns(0, n.min(h.ncols())).into_owned()
            } else {
                h.clone()
            })
        })
        .collect()
}

/// `bd{H_{tx,rx}[t] : t in phase}`; `(d N) x (d M)` for phases I-VI and `(d N) x (d N)` for VII.
pub fn phase_block(
    trace: &ChannelTrace,
    tx: Transmitter,
    rx: Receiver,
    phase: Phase,
    plan: &IntegerPlan,
) -> Result<CMatrix, ChannelError> {
    Ok(block_diagonal(&phase_slot_matrices(trace, tx, rx, phase, plan)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsiAccess {
    pub requested: usize,
    pub now: usize,
    pub accessor: Transmitter,
}

impl CsiAccess {
    pub fn is_violation(&self) -> bool {
        self.requested >= self.now
    }
}

/// Log of every transmitter-side CSI lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsiAudit {
    pub accesses: Vec<CsiAccess>,
}

impl CsiAudit {
    pub fn violations(&self) -> impl Iterator<Item = &CsiAccess> {
        self.accesses.iter().filter(|a| a.is_violation())
    }

    pub fn is_clean(&self) -> bool {
        self.violations().next().is_none()
    }

    pub fn len(&self) -> usize {
        self.accesses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accesses.is_empty()
    }
}

/// Read access to the slots strictly before `t_now`, on behalf of one transmitter.
#[derive(Debug)]
pub struct DelayedCsiView<'a> {
    trace: &'a ChannelTrace,
    accessor: Transmitter,
    t_now: usize,
    audit: &'a mut CsiAudit,
}

pub fn delayed_csi_view<'a>(
    trace: &'a ChannelTrace,
    accessor: Transmitter,
    t_now: usize,
    audit: &'a mut CsiAudit,
) -> Result<DelayedCsiView<'a>, ChannelError> {
    if t_now == 0 || t_now > trace.slots + 1 {
        return Err(ChannelError::InvalidCurrentSlot {
            now: t_now,
            max: trace.slots + 1,
        });
    }
    Ok(DelayedCsiView {
        trace,
        accessor,
        t_now,
        audit,
    })
}

impl<'a> DelayedCsiView<'a> {
    pub fn now(&self) -> usize {
        self.t_now
    }

    pub fn accessor(&self) -> Transmitter {
        self.accessor
    }

    pub fn slot(
        &mut self,
        tx: Transmitter,
        rx: Receiver,
        t: usize,
    ) -> Result<&'a CMatrix, ChannelError> {
        let access = CsiAccess {
            requested: t,
            now: self.t_now,
            accessor: self.accessor,
        };
        self.audit.accesses.push(access);
        if access.is_violation() {
            return Err(ChannelError::CausalityViolation {
                accessor: self.accessor,
                requested: t,
                now: self.t_now,
            });
        }
        self.trace.get(tx, rx, t)
    }

    /// Same as [`phase_block`], with every slot lookup audited.
    pub fn phase_block(
        &mut self,
        tx: Transmitter,
        rx: Receiver,
        phase: Phase,
        plan: &IntegerPlan,
    ) -> Result<CMatrix, ChannelError> {
        for t in plan.slots(phase) {
            self.slot(tx, rx, t)?;
        }
        phase_block(self.trace, tx, rx, phase, plan)
    }
}

/// JSON dump keyed by `(m, n, slots, seed)`; matrices are stored row-major as separate real
/// and imaginary arrays.
#[derive(Debug, Serialize, Deserialize)]
pub struct TraceFile {
    pub m: u32,
    pub n: u32,
    pub slots: usize,
    pub seed: u64,
    pub attempts: u32,
    pub entries: Vec<TraceEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TraceEntry {
    pub tx: u8,
    pub rx: u8,
    pub t: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&ChannelTrace> for TraceFile {
    fn from(trace: &ChannelTrace) -> Self {
        let mut entries = Vec::with_capacity(trace.matrices.len());
        for tx in Transmitter::BOTH {
            for rx in Receiver::BOTH {
                for t in 1..=trace.slots {
                    let h = &trace.matrices[trace.offset(tx, rx, t)];
                    let row_major: Vec<C64> = h.transpose().iter().copied().collect();
                    entries.push(TraceEntry {
                        tx: tx.index() as u8 + 1,
                        rx: rx.index() as u8 + 1,
                        t,
                        re: row_major.iter().map(|z| z.re).collect(),
                        im: row_major.iter().map(|z| z.im).collect(),
                    });
                }
            }
        }
        TraceFile {
            m: trace.cfg.m(),
            n: trace.cfg.n(),
            slots: trace.slots,
            seed: trace.seed,
            attempts: trace.attempts,
            entries,
        }
    }
}

impl TryFrom<TraceFile> for ChannelTrace {
    type Error = ChannelError;

    fn try_from(file: TraceFile) -> Result<Self, Self::Error> {
        let cfg = AntennaConfig::new(file.m, file.n)
            .map_err(|e| ChannelError::Malformed(e.to_string()))?;
        if file.slots == 0 {
            return Err(ChannelError::NoSlots);
        }
        let (n, m) = (cfg.n_usize(), cfg.m_usize());
        let mut slots: Vec<Option<CMatrix>> = vec![None; 4 * file.slots];
        for e in file.entries {
            let (Some(tx), Some(rx)) = (Transmitter::from_number(e.tx), Receiver::from_number(e.rx))
            else {
                return Err(ChannelError::Malformed(format!("bad link ({}, {})", e.tx, e.rx)));
            };
            if e.t == 0 || e.t > file.slots || e.re.len() != n * m || e.im.len() != n * m {
                return Err(ChannelError::Malformed(format!("bad entry at slot {}", e.t)));
            }
            let data: Vec<C64> = e.re.iter().zip(&e.im).map(|(&re, &im)| C64::new(re, im)).collect();
            let idx = (tx.index() * 2 + rx.index()) * file.slots + (e.t - 1);
            slots[idx] = Some(CMatrix::from_row_slice(n, m, &data));
        }
        let matrices = slots
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| ChannelError::Malformed("missing entries".into()))?;
        Ok(ChannelTrace {
            cfg,
            slots: file.slots,
            seed: file.seed,
            attempts: file.attempts,
            matrices,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(m: u32, n: u32) -> AntennaConfig {
        AntennaConfig::new(m, n).unwrap()
    }

    #[test]
    fn shapes_and_count() {
        let tr = generate_trace(cfg(3, 2), 24, 7).unwrap();
        assert_eq!(tr.matrices.len(), 4 * 24);
        for tx in Transmitter::BOTH {
            for rx in Receiver::BOTH {
                for t in 1..=24 {
                    assert_eq!(tr.get(tx, rx, t).unwrap().shape(), (2, 3));
                }
            }
        }
        assert!(tr.get(Transmitter::One, Receiver::One, 0).is_err());
        assert!(tr.get(Transmitter::One, Receiver::One, 25).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_trace(cfg(3, 2), 24, 7).unwrap();
        let b = generate_trace(cfg(3, 2), 24, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_trace(cfg(3, 2), 24, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn many_seeds_certify() {
        let tol = ToleranceConfig::default();
        let subsets = column_subsets(3, 2);
        for seed in 1..=50 {
            let tr = generate_trace(cfg(3, 2), 24, seed).unwrap();
            assert!(tr.matrices.iter().all(|h| is_generic(h, &subsets, &tol)));
        }
    }

    #[test]
    fn zero_slots_rejected() {
        assert!(matches!(generate_trace(cfg(3, 2), 0, 1), Err(ChannelError::NoSlots)));
    }

    #[test]
    fn degenerate_matrix_fails_certification() {
        let tol = ToleranceConfig::default();
        let mut h = CMatrix::from_element(2, 3, C64::new(1.0, 0.0));
        h[(1, 2)] = C64::new(2.0, 0.0);
        // columns 0 and 1 are equal, so that 2x2 submatrix is singular
        assert!(!is_generic(&h, &column_subsets(3, 2), &tol));
    }

    #[test]
    fn subset_enumeration() {
        assert_eq!(column_subsets(4, 2).len(), 6);
        assert_eq!(column_subsets(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(column_subsets(16, 8).len(), 16);
    }

    #[test]
    fn phase_block_shapes() {
        let plan = IntegerPlan::new(5, 1, 4, 4);
        let tr = generate_trace(cfg(3, 2), plan.total_slots(), 3).unwrap();
        let b = phase_block(&tr, Transmitter::One, Receiver::Two, Phase::I, &plan).unwrap();
        assert_eq!(b.shape(), (10, 15));
        for r in 0..10 {
            for c in 0..15 {
                if r / 2 != c / 3 {
                    assert_eq!(b[(r, c)], C64::new(0.0, 0.0));
                }
            }
        }
        let b7 = phase_block(&tr, Transmitter::Two, Receiver::One, Phase::VII, &plan).unwrap();
        assert_eq!(b7.shape(), (8, 8));
        let h = tr.get(Transmitter::Two, Receiver::One, 21).unwrap();
        assert_eq!(b7.view((0, 0), (2, 2)), h.columns(0, 2));
    }

    #[test]
    fn phase_three_uses_slots_after_the_an_phases() {
        let plan = IntegerPlan::new(5, 1, 4, 4);
        let tr = generate_trace(cfg(3, 2), plan.total_slots(), 3).unwrap();
        let b = phase_block(&tr, Transmitter::Two, Receiver::One, Phase::III, &plan).unwrap();
        assert_eq!(&b, tr.get(Transmitter::Two, Receiver::One, 2 * 5 + 1).unwrap());
        let b = phase_block(&tr, Transmitter::Two, Receiver::One, Phase::IV, &plan).unwrap();
        for k in 0..4 {
            assert_eq!(
                b.view((2 * k, 3 * k), (2, 3)),
                *tr.get(Transmitter::Two, Receiver::One, 2 * 5 + 1 + 1 + k).unwrap()
            );
        }
    }

    #[test]
    fn phase_block_rejects_oversized_plan() {
        let tr = generate_trace(cfg(3, 2), 10, 3).unwrap();
        let plan = IntegerPlan::new(5, 1, 4, 4);
        assert!(matches!(
            phase_block(&tr, Transmitter::One, Receiver::One, Phase::I, &plan),
            Err(ChannelError::PlanMismatch { needed: 24, slots: 10 })
        ));
    }

    #[test]
    fn empty_phase_gives_empty_block() {
        let plan = IntegerPlan::new(6, 0, 6, 6);
        let tr = generate_trace(cfg(4, 2), plan.total_slots(), 3).unwrap();
        let b = phase_block(&tr, Transmitter::One, Receiver::One, Phase::III, &plan).unwrap();
        assert_eq!(b.shape(), (0, 0));
    }

    #[test]
    fn delayed_view_enforces_strict_past() {
        let tr = generate_trace(cfg(3, 2), 24, 1).unwrap();
        let mut audit = CsiAudit::default();
        {
            let mut view = delayed_csi_view(&tr, Transmitter::One, 4, &mut audit).unwrap();
            assert!(view.slot(Transmitter::One, Receiver::One, 3).is_ok());
            assert!(matches!(
                view.slot(Transmitter::One, Receiver::One, 4),
                Err(ChannelError::CausalityViolation { requested: 4, now: 4, .. })
            ));
        }
        assert_eq!(audit.len(), 2);
        assert_eq!(audit.violations().count(), 1);
        assert!(!audit.is_clean());
        assert!(delayed_csi_view(&tr, Transmitter::Two, 0, &mut audit).is_err());
        assert!(delayed_csi_view(&tr, Transmitter::Two, 26, &mut audit).is_err());
        assert!(delayed_csi_view(&tr, Transmitter::Two, 25, &mut audit).is_ok());
    }

    #[test]
    fn mirror_is_an_involution() {
        let plan = IntegerPlan::new(5, 1, 4, 4);
        let tr = generate_trace(cfg(3, 2), plan.total_slots(), 9).unwrap();
        let once = tr.mirror_roles(&plan).unwrap();
        assert_ne!(once, tr);
        assert_eq!(once.mirror_roles(&plan).unwrap(), tr);
        // phase I of the mirrored trace is phase II of the original, links swapped
        let a = phase_block(&once, Transmitter::One, Receiver::Two, Phase::I, &plan).unwrap();
        let b = phase_block(&tr, Transmitter::Two, Receiver::One, Phase::II, &plan).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip() {
        let tr = generate_trace(cfg(3, 2), 6, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.json");
        tr.save_json(&path).unwrap();
        assert_eq!(ChannelTrace::load_json(&path).unwrap(), tr);
    }

    #[test]
    fn malformed_json_is_rejected() {
        let tr = generate_trace(cfg(3, 2), 2, 5).unwrap();
        let mut file = TraceFile::from(&tr);
        file.entries.pop();
        assert!(matches!(ChannelTrace::try_from(file), Err(ChannelError::Malformed(_))));
    }
}

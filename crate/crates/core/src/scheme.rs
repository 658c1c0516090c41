//! End-to-end execution of the seven-phase scheme.
//!
//! Transmit signals are built slot by slot. Whenever a transmitter needs channel state it
//! goes through a [`DelayedCsiView`] opened at the current slot, so every lookup is checked
//! against the strict-past rule and logged in the record's [`CsiAudit`]. Transmitters
//! rebuild past received signals from their own AN symbols without noise; receivers see
//! the noisy signals.
//!
//! Phase summary (`k` is the slot index within the phase):
//!
//! | phase | transmitter 1                              | transmitter 2                              |
//! |-------|--------------------------------------------|--------------------------------------------|
//! | I     | `u1[k]`                                    | silent                                     |
//! | II    | silent                                     | `u2[k]`                                    |
//! | III   | `a1a[k] + phi[k] H11^I u1`                 | `a2[k] + phi[k] H21^II u2`                 |
//! | IV    | `a1b[k] + omega[k] H11^I u1`               | `gamma[k] H22^III x2^III`                  |
//! | V     | `b1[k] + phi[k] H12^I u1`                  | `b2a[k] + phi[k] H22^II u2`                |
//! | VI    | `gamma[k] H11^V x1^V`                      | `b2b[k] + omega[k] H22^II u2`              |
//! | VII   | `theta[k](H22^IV G H12^III x1^III - H12^IV x1^IV)` | `theta[k](H11^VI G H21^V x2^V - H21^VI x2^VI)` |

use std::sync::Arc;

use thiserror::Error;

use crate::channel::{
    delayed_csi_view, phase_block, ChannelError, ChannelTrace, CsiAccess, CsiAudit, Receiver,
    Transmitter,
};
use crate::numerics::{complex_gaussian_vector, seeded_rng, vstack, CMatrix, CVector, C64};
use crate::params::{AntennaConfig, IntegerPlan, Phase};
use crate::precoding::PrecoderSet;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("noise power must be finite and nonnegative, got {0}")]
    InvalidNoisePower(f64),
}

/// AN symbols and the data symbols for both receivers.
///
/// Receiver 1 gets `a1a`, `a2` (phase III) and `a1b` (phase IV); receiver 2 gets `b1`,
/// `b2a` (phase V) and `b2b` (phase VI).
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSet {
    pub u1: CVector,
    pub u2: CVector,
    pub a1a: CVector,
    pub a1b: CVector,
    pub a2: CVector,
    pub b1: CVector,
    pub b2a: CVector,
    pub b2b: CVector,
}

impl SymbolSet {
    /// Unit-variance circularly-symmetric complex Gaussian symbols, drawn in field order.
    pub fn generate(plan: &IntegerPlan, cfg: AntennaConfig, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let m = cfg.m_usize();
        let mut draw = |len: usize| complex_gaussian_vector(&mut rng, len);
        SymbolSet {
            u1: draw(plan.tau1 * m),
            u2: draw(plan.tau1 * m),
            a1a: draw(plan.tau2 * m),
            a1b: draw(plan.tau3 * m),
            a2: draw(plan.tau2 * m),
            b1: draw(plan.tau2 * m),
            b2a: draw(plan.tau2 * m),
            b2b: draw(plan.tau3 * m),
        }
    }

    /// Same AN symbols, every data symbol zero.
    pub fn with_zero_data(&self) -> Self {
        let z = |v: &CVector| CVector::zeros(v.len());
        SymbolSet {
            u1: self.u1.clone(),
            u2: self.u2.clone(),
            a1a: z(&self.a1a),
            a1b: z(&self.a1b),
            a2: z(&self.a2),
            b1: z(&self.b1),
            b2a: z(&self.b2a),
            b2b: z(&self.b2b),
        }
    }

    pub fn validate(&self, plan: &IntegerPlan, cfg: AntennaConfig) -> Result<(), SchemeError> {
        let m = cfg.m_usize();
        let expected = [
            ("u1", &self.u1, plan.tau1 * m),
            ("u2", &self.u2, plan.tau1 * m),
            ("a1a", &self.a1a, plan.tau2 * m),
            ("a1b", &self.a1b, plan.tau3 * m),
            ("a2", &self.a2, plan.tau2 * m),
            ("b1", &self.b1, plan.tau2 * m),
            ("b2a", &self.b2a, plan.tau2 * m),
            ("b2b", &self.b2b, plan.tau3 * m),
        ];
        for (name, v, len) in expected {
            if v.len() != len {
                return Err(SchemeError::Dimension(format!(
                    "symbol vector {name} has length {}, expected {len}",
                    v.len()
                )));
            }
        }
        Ok(())
    }

    /// `[a1a; a1b; a2]`, the unknowns of receiver 1's decoding system.
    pub fn receiver1_data(&self) -> CVector {
        vstack(&[&self.a1a, &self.a1b, &self.a2])
    }

    /// `[b2a; b2b; b1]`, receiver 2's data in the order the swapped system decodes it.
    pub fn receiver2_data(&self) -> CVector {
        vstack(&[&self.b2a, &self.b2b, &self.b1])
    }

    /// Relabel for swapped roles: `u1<->u2`, `a1a<->b2a`, `a1b<->b2b`, `a2<->b1`.
    pub fn swapped(&self) -> Self {
        SymbolSet {
            u1: self.u2.clone(),
            u2: self.u1.clone(),
            a1a: self.b2a.clone(),
            a1b: self.b2b.clone(),
            a2: self.b1.clone(),
            b1: self.a2.clone(),
            b2a: self.a1a.clone(),
            b2b: self.a1b.clone(),
        }
    }
}

/// Receiver noise: unit-variance draws from `seed`, scaled by `sqrt(power)`. SNR is `1 / power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub power: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self { power: 0.0, seed: 0 }
    }

    pub fn from_snr(snr: f64, seed: u64) -> Self {
        Self {
            power: 1.0 / snr,
            seed,
        }
    }
}

type PerPhase = [[CVector; 2]; 7];

fn empty_per_phase() -> PerPhase {
    std::array::from_fn(|_| std::array::from_fn(|_| CVector::zeros(0)))
}

/// Every transmitted, received and noise vector of one run, indexed by phase and node.
#[derive(Debug, Clone)]
pub struct TransmissionRecord {
    cfg: AntennaConfig,
    plan: IntegerPlan,
    trace: Arc<ChannelTrace>,
    precoders: Arc<PrecoderSet>,
    symbols: SymbolSet,
    noise_power: f64,
    x: PerPhase,
    y: PerPhase,
    z: PerPhase,
    audit: CsiAudit,
}

impl TransmissionRecord {
    pub fn config(&self) -> AntennaConfig {
        self.cfg
    }

    pub fn plan(&self) -> &IntegerPlan {
        &self.plan
    }

    pub fn trace(&self) -> &ChannelTrace {
        &self.trace
    }

    pub fn precoders(&self) -> &PrecoderSet {
        &self.precoders
    }

    pub fn symbols(&self) -> &SymbolSet {
        &self.symbols
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    pub fn audit(&self) -> &CsiAudit {
        &self.audit
    }

    pub fn x(&self, phase: Phase, tx: Transmitter) -> &CVector {
        &self.x[phase.index()][tx.index()]
    }

    pub fn y(&self, phase: Phase, rx: Receiver) -> &CVector {
        &self.y[phase.index()][rx.index()]
    }

    pub fn z(&self, phase: Phase, rx: Receiver) -> &CVector {
        &self.z[phase.index()][rx.index()]
    }

    /// Largest entry of `|y - (H1 x1 + H2 x2 + z)|` over all phases and receivers, using the
    /// holistic block-diagonal channels.
    pub fn replay_residual(&self) -> Result<f64, SchemeError> {
        let mut worst = 0.0f64;
        for phase in Phase::ALL {
            for rx in Receiver::BOTH {
                let mut expected = self.z(phase, rx).clone();
                for tx in Transmitter::BOTH {
                    let h = phase_block(&self.trace, tx, rx, phase, &self.plan)?;
                    expected += &h * self.x(phase, tx);
                }
                let diff = self.y(phase, rx) - expected;
                worst = diff.iter().map(|d| d.norm()).fold(worst, f64::max);
            }
        }
        Ok(worst)
    }
}

fn check_dimensions(
    trace: &ChannelTrace,
    precoders: &PrecoderSet,
    symbols: &SymbolSet,
    plan: &IntegerPlan,
) -> Result<(), SchemeError> {
    let cfg = trace.config();
    let (m, n) = (cfg.m_usize(), cfg.n_usize());
    if !cfg.in_scheme_regime() {
        return Err(SchemeError::Dimension(format!(
            "{cfg} is outside the scheme regime N < M <= 2N"
        )));
    }
    if plan.total_slots() > trace.slots() {
        return Err(ChannelError::PlanMismatch {
            needed: plan.total_slots(),
            slots: trace.slots(),
        }
        .into());
    }
    let expected = [
        ("Phi", &precoders.phi, (plan.tau2 * m, plan.tau1 * n)),
        ("Omega", &precoders.omega, (plan.tau3 * m, plan.tau1 * n)),
        ("Gamma", &precoders.gamma, (plan.tau3 * m, plan.tau2 * n)),
        ("Theta", &precoders.theta, (plan.tau4 * n, plan.tau3 * n)),
    ];
    for (name, mat, shape) in expected {
        if mat.shape() != shape {
            return Err(SchemeError::Dimension(format!(
                "{name} is {:?}, plan needs {shape:?}",
                mat.shape()
            )));
        }
    }
    symbols.validate(plan, cfg)
}

fn segment(v: &CVector, k: usize, len: usize) -> CVector {
    v.rows(k * len, len).into_owned()
}

fn concat(parts: Vec<CVector>) -> CVector {
    vstack(&parts.iter().collect::<Vec<_>>())
}

struct Runner<'a> {
    trace: &'a ChannelTrace,
    plan: &'a IntegerPlan,
    audit: CsiAudit,
    m: usize,
}

impl<'a> Runner<'a> {
    /// Channel block of a past phase as seen by `accessor` at the first slot of `at`.
    fn csi(
        &mut self,
        accessor: Transmitter,
        at: Phase,
        tx: Transmitter,
        rx: Receiver,
        phase: Phase,
    ) -> Result<CMatrix, SchemeError> {
        let now = self.plan.first_slot(at);
        let mut view = delayed_csi_view(self.trace, accessor, now, &mut self.audit)?;
        Ok(view.phase_block(tx, rx, phase, self.plan)?)
    }

    /// Per-slot signals for a phase: `f(k)` gives the slot-`k` vector.
    fn per_slot(&self, phase: Phase, f: impl Fn(usize) -> CVector) -> CVector {
        concat((0..self.plan.duration(phase)).map(f).collect())
    }

    fn silent(&self, phase: Phase) -> CVector {
        CVector::zeros(self.plan.duration(phase) * self.m)
    }
}

/// Run all seven phases. `noise.power == 0` gives the noiseless analysis mode.
pub fn run_scheme(
    trace: Arc<ChannelTrace>,
    precoders: Arc<PrecoderSet>,
    symbols: SymbolSet,
    plan: &IntegerPlan,
    noise: NoiseSpec,
) -> Result<TransmissionRecord, SchemeError> {
    if !(noise.power.is_finite() && noise.power >= 0.0) {
        return Err(SchemeError::InvalidNoisePower(noise.power));
    }
    check_dimensions(&trace, &precoders, &symbols, plan)?;
    let cfg = trace.config();
    let (m, n) = (cfg.m_usize(), cfg.n_usize());
    let (one, two) = (Transmitter::One, Transmitter::Two);
    let (r1, r2) = (Receiver::One, Receiver::Two);
    let s = &symbols;
    let p = &*precoders;

    let mut run = Runner {
        trace: &trace,
        plan,
        audit: CsiAudit::default(),
        m,
    };
    let mut x = empty_per_phase();

    // I, II: AN only
    x[Phase::I.index()] = [s.u1.clone(), run.silent(Phase::I)];
    x[Phase::II.index()] = [run.silent(Phase::II), s.u2.clone()];

    // III: receiver-1 data masked by the AN each transmitter caused at receiver 1
    let y1_i = run.csi(one, Phase::III, one, r1, Phase::I)? * &s.u1;
    let y1_ii = run.csi(two, Phase::III, two, r1, Phase::II)? * &s.u2;
    x[Phase::III.index()] = [
        run.per_slot(Phase::III, |k| segment(&s.a1a, k, m) + p.phi_slot(k) * &y1_i),
        run.per_slot(Phase::III, |k| segment(&s.a2, k, m) + p.phi_slot(k) * &y1_ii),
    ];

    // IV: transmitter 1 continues, transmitter 2 re-sends what receiver 2 heard from it in III
    let heard_at_r2 = run.csi(two, Phase::IV, two, r2, Phase::III)? * &x[Phase::III.index()][1];
    x[Phase::IV.index()] = [
        run.per_slot(Phase::IV, |k| segment(&s.a1b, k, m) + p.omega_slot(k) * &y1_i),
        run.per_slot(Phase::IV, |k| p.gamma_slot(k) * &heard_at_r2),
    ];

    // V: receiver-2 data masked by the AN each transmitter caused at receiver 2
    let y2_i = run.csi(one, Phase::V, one, r2, Phase::I)? * &s.u1;
    let y2_ii = run.csi(two, Phase::V, two, r2, Phase::II)? * &s.u2;
    x[Phase::V.index()] = [
        run.per_slot(Phase::V, |k| segment(&s.b1, k, m) + p.phi_slot(k) * &y2_i),
        run.per_slot(Phase::V, |k| segment(&s.b2a, k, m) + p.phi_slot(k) * &y2_ii),
    ];

    // VI: mirror of IV
    let heard_at_r1 = run.csi(one, Phase::VI, one, r1, Phase::V)? * &x[Phase::V.index()][0];
    x[Phase::VI.index()] = [
        run.per_slot(Phase::VI, |k| p.gamma_slot(k) * &heard_at_r1),
        run.per_slot(Phase::VI, |k| segment(&s.b2b, k, m) + p.omega_slot(k) * &y2_ii),
    ];

    // VII: interference recurrence over N antennas
    let comb1 = {
        let h22_iv = run.csi(one, Phase::VII, two, r2, Phase::IV)?;
        let h12_iii = run.csi(one, Phase::VII, one, r2, Phase::III)?;
        let h12_iv = run.csi(one, Phase::VII, one, r2, Phase::IV)?;
        h22_iv * (&p.gamma * (h12_iii * &x[Phase::III.index()][0])) - h12_iv * &x[Phase::IV.index()][0]
    };
    let comb2 = {
        let h11_vi = run.csi(two, Phase::VII, one, r1, Phase::VI)?;
        let h21_v = run.csi(two, Phase::VII, two, r1, Phase::V)?;
        let h21_vi = run.csi(two, Phase::VII, two, r1, Phase::VI)?;
        h11_vi * (&p.gamma * (h21_v * &x[Phase::V.index()][1])) - h21_vi * &x[Phase::VI.index()][1]
    };
    x[Phase::VII.index()] = [
        run.per_slot(Phase::VII, |k| p.theta_slot(k) * &comb1),
        run.per_slot(Phase::VII, |k| p.theta_slot(k) * &comb2),
    ];
    let audit = std::mem::take(&mut run.audit);
    drop(run);

    // propagate slot by slot; noise draw order is phase, slot, receiver 1 then 2
    let mut rng = seeded_rng(noise.seed);
    let amplitude = noise.power.sqrt();
    let mut y = empty_per_phase();
    let mut z = empty_per_phase();
    for phase in Phase::ALL {
        let width = if phase == Phase::VII { n } else { m };
        let mut ys: [Vec<CVector>; 2] = Default::default();
        let mut zs: [Vec<CVector>; 2] = Default::default();
        for (k, t) in plan.slots(phase).enumerate() {
            let noise_k: [CVector; 2] = std::array::from_fn(|_| complex_gaussian_vector(&mut rng, n) * C64::new(amplitude, 0.0));
            for rx in Receiver::BOTH {
                let mut received = noise_k[rx.index()].clone();
                for tx in Transmitter::BOTH {
                    let h = trace.get(tx, rx, t)?.columns(0, width);
                    received += h * segment(&x[phase.index()][tx.index()], k, width);
                }
                ys[rx.index()].push(received);
                zs[rx.index()].push(noise_k[rx.index()].clone());
            }
        }
        let [y1s, y2s] = ys;
        let [z1s, z2s] = zs;
        y[phase.index()] = [concat(y1s), concat(y2s)];
        z[phase.index()] = [concat(z1s), concat(z2s)];
    }

    Ok(TransmissionRecord {
        cfg,
        plan: *plan,
        trace,
        precoders,
        symbols,
        noise_power: noise.power,
        x,
        y,
        z,
        audit,
    })
}

/// The same run described with transmitter and receiver labels swapped, so that receiver 2
/// can be analysed with receiver-1 machinery. Applying it twice gives the original record.
pub fn swap_roles(record: &TransmissionRecord) -> Result<TransmissionRecord, SchemeError> {
    let trace = Arc::new(record.trace.mirror_roles(&record.plan)?);
    let relabel = |per: &PerPhase| -> PerPhase {
        std::array::from_fn(|p| {
            let src = Phase::ALL[p].mirrored().index();
            [per[src][1].clone(), per[src][0].clone()]
        })
    };
    let audit = CsiAudit {
        accesses: record
            .audit
            .accesses
            .iter()
            .map(|a| CsiAccess {
                accessor: a.accessor.other(),
                ..*a
            })
            .collect(),
    };
    Ok(TransmissionRecord {
        cfg: record.cfg,
        plan: record.plan,
        trace,
        precoders: Arc::clone(&record.precoders),
        symbols: record.symbols.swapped(),
        noise_power: record.noise_power,
        x: relabel(&record.x),
        y: relabel(&record.y),
        z: relabel(&record.z),
        audit,
    })
}

impl PartialEq for TransmissionRecord {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg
            && self.plan == other.plan
            && *self.trace == *other.trace
            && *self.precoders == *other.precoders
            && self.symbols == other.symbols
            && self.noise_power == other.noise_power
            && self.x == other.x
            && self.y == other.y
            && self.z == other.z
    }
}

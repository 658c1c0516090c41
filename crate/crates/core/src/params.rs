//! Closed-form layer: regime classification, optimal phase durations, the sum-SDoF
//! lower bound, the security constraints on the AN phase, and the antenna threshold.
//!
//! Everything here is exact. The irrational ratio `theta = (7 + sqrt 33) / 8` is never
//! materialised for decisions; `M / N` is compared against it through the sign of
//! `4M^2 - 7MN + N^2`, whose larger root in `M / N` is `theta`.

use std::fmt;
use std::ops::Range;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Rational = Ratio<i64>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParamsError {
    #[error("antenna counts must be positive (got M={m}, N={n})")]
    InvalidAntennas { m: u32, n: u32 },
    #[error("the seven-phase scheme needs N < M <= 2N; (M={m}, N={n}) is in the {regime} regime")]
    OutsideSchemeRegime { m: u32, n: u32, regime: Regime },
    #[error("phase durations must be nonnegative")]
    NegativeDuration,
    #[error("plan has zero total duration")]
    ZeroDuration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AntennaConfig {
    m: u32,
    n: u32,
}

impl AntennaConfig {
    pub fn new(m: u32, n: u32) -> Result<Self, ParamsError> {
        if m == 0 || n == 0 {
            return Err(ParamsError::InvalidAntennas { m, n });
        }
        Ok(Self { m, n })
    }

    /// Transmit antennas per transmitter.
    pub fn m(&self) -> u32 {
        self.m
    }

    /// Receive antennas per receiver.
    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn m_usize(&self) -> usize {
        self.m as usize
    }

    pub fn n_usize(&self) -> usize {
        self.n as usize
    }

    pub fn regime(&self) -> Regime {
        classify_regime(*self)
    }

    /// `N < M <= 2N`, where the seven-phase scheme is used.
    pub fn in_scheme_regime(&self) -> bool {
        matches!(self.regime(), Regime::LowRatio | Regime::HighRatio)
    }
}

impl fmt::Display for AntennaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(M={}, N={})", self.m, self.n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `M <= N`: both transmitters stay silent.
    Silent,
    /// `N < M <= theta N`.
    LowRatio,
    /// `theta N < M <= 2N`.
    HighRatio,
    /// `2N < M`: a different scheme applies and is not simulated here.
    Saturated,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Silent => "silent",
            Regime::LowRatio => "low-ratio",
            Regime::HighRatio => "high-ratio",
            Regime::Saturated => "saturated",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `4M^2 - 7MN + N^2`. For `M > N` it is nonpositive exactly when `M / N <= theta`.
pub fn threshold_quadratic(cfg: AntennaConfig) -> i64 {
    let (m, n) = (i64::from(cfg.m), i64::from(cfg.n));
    4 * m * m - 7 * m * n + n * n
}

pub fn classify_regime(cfg: AntennaConfig) -> Regime {
    let (m, n) = (cfg.m, cfg.n);
    if m <= n {
        Regime::Silent
    } else if m > 2 * n {
        Regime::Saturated
    } else if threshold_quadratic(cfg) <= 0 {
        Regime::LowRatio
    } else {
        Regime::HighRatio
    }
}

pub fn sdof_lower_bound(cfg: AntennaConfig) -> Rational {
    let (m, n) = (i64::from(cfg.m), i64::from(cfg.n));
    match classify_regime(cfg) {
        Regime::Silent => Rational::zero(),
        Regime::LowRatio => Rational::new(3 * n * (m - n), 2 * m - n),
        Regime::HighRatio => Rational::new(6 * m * n, 8 * m - n),
        Regime::Saturated => Rational::new(4 * n, 5),
    }
}

/// Phase durations `(tau1, tau2, tau3, tau4)` in time slots, possibly fractional.
///
/// Phases I and II last `tau1`, III and V last `tau2`, IV and VI last `tau3`, VII lasts `tau4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhasePlan {
    pub tau1: Rational,
    pub tau2: Rational,
    pub tau3: Rational,
    pub tau4: Rational,
}

impl PhasePlan {
    pub fn new(
        tau1: Rational,
        tau2: Rational,
        tau3: Rational,
        tau4: Rational,
    ) -> Result<Self, ParamsError> {
        if [tau1, tau2, tau3, tau4].iter().any(|t| *t < Rational::zero()) {
            return Err(ParamsError::NegativeDuration);
        }
        Ok(Self {
            tau1,
            tau2,
            tau3,
            tau4,
        })
    }

    pub fn from_integers(tau1: i64, tau2: i64, tau3: i64, tau4: i64) -> Result<Self, ParamsError> {
        Self::new(tau1.into(), tau2.into(), tau3.into(), tau4.into())
    }

    pub fn taus(&self) -> [Rational; 4] {
        [self.tau1, self.tau2, self.tau3, self.tau4]
    }

    /// Smallest positive `L` with every `L * tau_k` integral.
    pub fn scale(&self) -> i64 {
        self.taus().iter().fold(1, |acc, t| acc.lcm(t.denom()))
    }

    /// The plan with every duration multiplied by `factor`.
    pub fn scaled_by(&self, factor: Rational) -> Result<Self, ParamsError> {
        Self::new(
            self.tau1 * factor,
            self.tau2 * factor,
            self.tau3 * factor,
            self.tau4 * factor,
        )
    }

    /// The minimal integer instantiation used for simulation.
    pub fn integerize(&self) -> IntegerPlan {
        let l = self.scale();
        let scaled = |t: Rational| (t * l).to_integer() as usize;
        IntegerPlan {
            tau1: scaled(self.tau1),
            tau2: scaled(self.tau2),
            tau3: scaled(self.tau3),
            tau4: scaled(self.tau4),
            scale: l as usize,
        }
    }
}

impl fmt::Display for PhasePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.tau1, self.tau2, self.tau3, self.tau4)
    }
}

/// The seven transmission phases in time order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    I,
    II,
    III,
    IV,
    V,
    VI,
    VII,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::I,
        Phase::II,
        Phase::III,
        Phase::IV,
        Phase::V,
        Phase::VI,
        Phase::VII,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The phase that plays this one's role when the two transmitter/receiver labels are swapped.
    pub fn mirrored(self) -> Phase {
        match self {
            Phase::I => Phase::II,
            Phase::II => Phase::I,
            Phase::III => Phase::V,
            Phase::IV => Phase::VI,
            Phase::V => Phase::III,
            Phase::VI => Phase::IV,
            Phase::VII => Phase::VII,
        }
    }

    pub fn name(self) -> &'static str {
        ["I", "II", "III", "IV", "V", "VI", "VII"][self.index()]
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Integer phase durations together with the factor `L` they were scaled by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntegerPlan {
    pub tau1: usize,
    pub tau2: usize,
    pub tau3: usize,
    pub tau4: usize,
    pub scale: usize,
}

impl IntegerPlan {
    /// An already-integral plan with `L = 1`.
    pub fn new(tau1: usize, tau2: usize, tau3: usize, tau4: usize) -> Self {
        Self {
            tau1,
            tau2,
            tau3,
            tau4,
            scale: 1,
        }
    }

    pub fn duration(&self, phase: Phase) -> usize {
        match phase {
            Phase::I | Phase::II => self.tau1,
            Phase::III | Phase::V => self.tau2,
            Phase::IV | Phase::VI => self.tau3,
            Phase::VII => self.tau4,
        }
    }

    /// 1-based index of the first slot of `phase`.
    pub fn first_slot(&self, phase: Phase) -> usize {
        1 + Phase::ALL[..phase.index()]
            .iter()
            .map(|&p| self.duration(p))
            .sum::<usize>()
    }

    /// 1-based slot range `[first, first + duration)`.
    pub fn slots(&self, phase: Phase) -> Range<usize> {
        let first = self.first_slot(phase);
        first..first + self.duration(phase)
    }

    /// `2 tau1 + 2 tau2 + 2 tau3 + tau4`.
    pub fn total_slots(&self) -> usize {
        2 * self.tau1 + 2 * self.tau2 + 2 * self.tau3 + self.tau4
    }

    pub fn to_phase_plan(&self) -> PhasePlan {
        let r = |t: usize| Rational::from_integer(t as i64);
        PhasePlan {
            tau1: r(self.tau1),
            tau2: r(self.tau2),
            tau3: r(self.tau3),
            tau4: r(self.tau4),
        }
    }
}

impl fmt::Display for IntegerPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}) at L={}",
            self.tau1, self.tau2, self.tau3, self.tau4, self.scale
        )
    }
}

fn require_scheme_regime(cfg: AntennaConfig) -> Result<Regime, ParamsError> {
    let regime = classify_regime(cfg);
    match regime {
        Regime::LowRatio | Regime::HighRatio => Ok(regime),
        _ => Err(ParamsError::OutsideSchemeRegime {
            m: cfg.m,
            n: cfg.n,
            regime,
        }),
    }
}

/// `tau2 = 2N - M`, `tau3 = tau4 = 2M - N`, and the smallest `tau1` meeting the security
/// constraints: `N(M+N) / (2(M-N))` below the threshold ratio, `2M - N` above it.
pub fn optimal_phase_plan(cfg: AntennaConfig) -> Result<PhasePlan, ParamsError> {
    let regime = require_scheme_regime(cfg)?;
    let (m, n) = (i64::from(cfg.m), i64::from(cfg.n));
    let tau1 = match regime {
        Regime::LowRatio => Rational::new(n * (m + n), 2 * (m - n)),
        _ => Rational::from_integer(2 * m - n),
    };
    PhasePlan::new(
        tau1,
        Rational::from_integer(2 * n - m),
        Rational::from_integer(2 * m - n),
        Rational::from_integer(2 * m - n),
    )
}

/// Data symbols delivered per time slot: `2M(2 tau2 + tau3) / (2 tau1 + 2 tau2 + 2 tau3 + tau4)`.
pub fn scheme_sdof(plan: &PhasePlan, cfg: AntennaConfig) -> Result<Rational, ParamsError> {
    let two = Rational::from_integer(2);
    let slots = two * plan.tau1 + two * plan.tau2 + two * plan.tau3 + plan.tau4;
    if slots.is_zero() {
        return Err(ParamsError::ZeroDuration);
    }
    let symbols = two * Rational::from_integer(i64::from(cfg.m)) * (two * plan.tau2 + plan.tau3);
    Ok(symbols / slots)
}

/// Status of each of the three AN-duration constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// `tau2 <= tau1`.
    pub joint_phase_covered: bool,
    /// `tau3 <= tau1`.
    pub single_phase_covered: bool,
    /// `N(2 tau1 + tau2 + tau3) <= 2 M tau1`.
    pub dimension_budget: bool,
}

impl ConstraintReport {
    pub fn all_hold(&self) -> bool {
        self.joint_phase_covered && self.single_phase_covered && self.dimension_budget
    }

    pub fn lines(&self) -> [(&'static str, bool); 3] {
        [
            ("tau2 <= tau1", self.joint_phase_covered),
            ("tau3 <= tau1", self.single_phase_covered),
            ("N(2tau1+tau2+tau3) <= 2M tau1", self.dimension_budget),
        ]
    }
}

pub fn security_constraints(plan: &PhasePlan, cfg: AntennaConfig) -> ConstraintReport {
    let m = Rational::from_integer(i64::from(cfg.m));
    let n = Rational::from_integer(i64::from(cfg.n));
    let two = Rational::from_integer(2);
    ConstraintReport {
        joint_phase_covered: plan.tau2 <= plan.tau1,
        single_phase_covered: plan.tau3 <= plan.tau1,
        dimension_budget: n * (two * plan.tau1 + plan.tau2 + plan.tau3) <= two * m * plan.tau1,
    }
}

pub fn security_constraints_ok(plan: &PhasePlan, cfg: AntennaConfig) -> bool {
    security_constraints(plan, cfg).all_hold()
}

/// `(7 + sqrt 33) / 8`.
pub fn theta() -> f64 {
    (7.0 + 33f64.sqrt()) / 8.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntennaThreshold {
    /// Continuous threshold `theta * N`.
    pub theta_n: f64,
    /// Smallest integer `M` in `(N, 2N]` maximising the bound.
    pub argmax_m: u32,
    pub max_bound: Rational,
}

pub fn antenna_threshold(n: u32) -> Result<AntennaThreshold, ParamsError> {
    if n == 0 {
        return Err(ParamsError::InvalidAntennas { m: 0, n });
    }
    let mut best: Option<(u32, Rational)> = None;
    for m in n + 1..=2 * n {
        let bound = sdof_lower_bound(AntennaConfig { m, n });
        // strict comparison keeps the smaller M on ties
        if best.is_none_or(|(_, b)| bound > b) {
            best = Some((m, bound));
        }
    }
    let (argmax_m, max_bound) = best.expect("(N, 2N] is nonempty for N >= 1");
    Ok(AntennaThreshold {
        theta_n: theta() * f64::from(n),
        argmax_m,
        max_bound,
    })
}

pub fn rational_to_f64(r: Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

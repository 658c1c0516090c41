//! The pre-assigned, publicly known matrices that mix fed-back AN observations into the
//! data phases (`Phi`, `Omega`), re-send phase-III interference (`Gamma`) and form the
//! recurrence combinations (`Theta`).

use thiserror::Error;

use crate::numerics::{
    complex_gaussian_matrix, derive_seed, numeric_rank, seeded_rng, vstack_rows, CMatrix,
    NumericsError, ToleranceConfig,
};
use crate::params::{AntennaConfig, IntegerPlan, ParamsError};

pub const PRECODER_RETRY_LIMIT: u32 = 8;

#[derive(Debug, Error)]
pub enum PrecodingError {
    #[error(transparent)]
    Regime(#[from] ParamsError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("no full-rank precoder draw after {attempts} attempts (seed {seed})")]
    RankFault { seed: u64, attempts: u32 },
}

/// `Phi: (tau2 M) x (tau1 N)`, `Omega: (tau3 M) x (tau1 N)`, `Gamma: (tau3 M) x (tau2 N)`,
/// `Theta: (tau4 N) x (tau3 N)`. Per-slot slices are consecutive row blocks of `M` rows
/// (`N` rows for `Theta`).
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub phi: CMatrix,
    pub omega: CMatrix,
    pub gamma: CMatrix,
    pub theta: CMatrix,
    m: usize,
    n: usize,
}

impl PrecoderSet {
    pub fn from_parts(
        cfg: AntennaConfig,
        phi: CMatrix,
        omega: CMatrix,
        gamma: CMatrix,
        theta: CMatrix,
    ) -> Self {
        Self {
            phi,
            omega,
            gamma,
            theta,
            m: cfg.m_usize(),
            n: cfg.n_usize(),
        }
    }

    fn slice(m: &CMatrix, height: usize, k: usize) -> CMatrix {
        m.rows(k * height, height).into_owned()
    }

    /// `phi[k]`, 0-based.
    pub fn phi_slot(&self, k: usize) -> CMatrix {
        Self::slice(&self.phi, self.m, k)
    }

    pub fn omega_slot(&self, k: usize) -> CMatrix {
        Self::slice(&self.omega, self.m, k)
    }

    pub fn gamma_slot(&self, k: usize) -> CMatrix {
        Self::slice(&self.gamma, self.m, k)
    }

    pub fn theta_slot(&self, k: usize) -> CMatrix {
        Self::slice(&self.theta, self.n, k)
    }

    pub fn slot_counts(&self) -> [usize; 4] {
        [
            self.phi.nrows() / self.m,
            self.omega.nrows() / self.m,
            self.gamma.nrows() / self.m,
            self.theta.nrows() / self.n,
        ]
    }

    /// Rebuild the stacked matrices from their per-slot slices.
    pub fn restacked(&self) -> PrecoderSet {
        let [p, o, g, t] = self.slot_counts();
        let stack = |slices: Vec<CMatrix>, cols: usize| vstack_rows(&slices, cols);
        PrecoderSet {
            phi: stack((0..p).map(|k| self.phi_slot(k)).collect(), self.phi.ncols()),
            omega: stack((0..o).map(|k| self.omega_slot(k)).collect(), self.omega.ncols()),
            gamma: stack((0..g).map(|k| self.gamma_slot(k)).collect(), self.gamma.ncols()),
            theta: stack((0..t).map(|k| self.theta_slot(k)).collect(), self.theta.ncols()),
            m: self.m,
            n: self.n,
        }
    }

    fn is_full_rank(&self, tol: &ToleranceConfig) -> Result<bool, NumericsError> {
        let full = |m: &CMatrix| -> Result<bool, NumericsError> {
            Ok(numeric_rank(m, tol)? == m.nrows().min(m.ncols()))
        };
        let [p, o, g, t] = self.slot_counts();
        for stacked in [&self.phi, &self.omega, &self.gamma, &self.theta] {
            if !full(stacked)? {
                return Ok(false);
            }
        }
        for k in 0..p {
            if !full(&self.phi_slot(k))? {
                return Ok(false);
            }
        }
        for k in 0..o {
            if !full(&self.omega_slot(k))? {
                return Ok(false);
            }
        }
        for k in 0..g {
            if !full(&self.gamma_slot(k))? {
                return Ok(false);
            }
        }
        for k in 0..t {
            if !full(&self.theta_slot(k))? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Unit-variance complex Gaussian precoders, rank-certified, deterministic given `seed`.
pub fn generate_precoders(
    plan: &IntegerPlan,
    cfg: AntennaConfig,
    seed: u64,
) -> Result<PrecoderSet, PrecodingError> {
    if !cfg.in_scheme_regime() {
        return Err(ParamsError::OutsideSchemeRegime {
            m: cfg.m(),
            n: cfg.n(),
            regime: cfg.regime(),
        }
        .into());
    }
    let (m, n) = (cfg.m_usize(), cfg.n_usize());
    let tol = ToleranceConfig::default();
    for attempt in 0..PRECODER_RETRY_LIMIT {
        let draw_seed = if attempt == 0 {
            seed
        } else {
            derive_seed(seed, 100 + u64::from(attempt))
        };
        let mut rng = seeded_rng(draw_seed);
        let phi = complex_gaussian_matrix(&mut rng, plan.tau2 * m, plan.tau1 * n);
        let omega = complex_gaussian_matrix(&mut rng, plan.tau3 * m, plan.tau1 * n);
        let gamma = complex_gaussian_matrix(&mut rng, plan.tau3 * m, plan.tau2 * n);
        let theta = complex_gaussian_matrix(&mut rng, plan.tau4 * n, plan.tau3 * n);
        let set = PrecoderSet::from_parts(cfg, phi, omega, gamma, theta);
        if set.is_full_rank(&tol)? {
            return Ok(set);
        }
    }
    Err(PrecodingError::RankFault {
        seed,
        attempts: PRECODER_RETRY_LIMIT,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(m: u32, n: u32) -> AntennaConfig {
        AntennaConfig::new(m, n).unwrap()
    }

    #[test]
    fn dimensions_follow_the_plan() {
        let p = generate_precoders(&IntegerPlan::new(5, 1, 4, 4), cfg(3, 2), 1).unwrap();
        assert_eq!(p.phi.shape(), (3, 10));
        assert_eq!(p.omega.shape(), (12, 10));
        assert_eq!(p.gamma.shape(), (12, 2));
        assert_eq!(p.theta.shape(), (8, 8));
        assert_eq!(p.slot_counts(), [1, 4, 4, 4]);
        assert_eq!(p.theta_slot(3).shape(), (2, 8));
    }

    #[test]
    fn degenerate_phase_gives_empty_factors() {
        let p = generate_precoders(&IntegerPlan::new(6, 0, 6, 6), cfg(4, 2), 1).unwrap();
        assert_eq!(p.phi.shape(), (0, 12));
        assert_eq!(p.gamma.shape(), (24, 0));
        assert_eq!(p.omega.shape(), (24, 12));
        assert_eq!(p.theta.shape(), (12, 12));
    }

    #[test]
    fn deterministic_under_seed() {
        let plan = IntegerPlan::new(5, 1, 4, 4);
        let a = generate_precoders(&plan, cfg(3, 2), 11).unwrap();
        assert_eq!(a, generate_precoders(&plan, cfg(3, 2), 11).unwrap());
        assert_ne!(a, generate_precoders(&plan, cfg(3, 2), 12).unwrap());
    }

    #[test]
    fn ranks_are_full_and_restack_is_exact() {
        let tol = ToleranceConfig::default();
        for (m, n, plan) in [
            (3, 2, IntegerPlan::new(5, 1, 4, 4)),
            (4, 3, IntegerPlan { tau1: 21, tau2: 4, tau3: 10, tau4: 10, scale: 2 }),
            (4, 2, IntegerPlan::new(6, 0, 6, 6)),
        ] {
            for seed in 0..5 {
                let p = generate_precoders(&plan, cfg(m, n), seed).unwrap();
                for mat in [&p.phi, &p.omega, &p.gamma, &p.theta] {
                    assert_eq!(numeric_rank(mat, &tol).unwrap(), mat.nrows().min(mat.ncols()));
                }
                assert_eq!(p.restacked(), p);
            }
        }
    }

    #[test]
    fn rejects_outside_scheme_regime() {
        let plan = IntegerPlan::new(1, 1, 1, 1);
        assert!(matches!(
            generate_precoders(&plan, cfg(2, 2), 0),
            Err(PrecodingError::Regime(_))
        ));
        assert!(generate_precoders(&plan, cfg(5, 2), 0).is_err());
    }
}

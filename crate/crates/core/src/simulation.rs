//! Seeded Monte Carlo runs of the scheme at finite SNR.
//!
//! Seeding: trial `k` gets `derive_seed(master, k)`; within a trial the channel, precoders,
//! symbols and noise use streams 1..=4 of the trial seed. Every SNR point of a trial reuses
//! the same draws (noise is drawn at unit variance and scaled), so differences across SNR
//! come from the noise level alone.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{generate_trace, ChannelError, ChannelTrace};
use crate::decoder::{decode, decode_receiver2, DecodeError};
use crate::numerics::{derive_seed, ToleranceConfig};
use crate::params::{AntennaConfig, IntegerPlan};
use crate::precoding::{generate_precoders, PrecoderSet, PrecodingError};
use crate::scheme::{run_scheme, NoiseSpec, SchemeError, SymbolSet, TransmissionRecord};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Precoding(#[from] PrecodingError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("snr values must be positive and finite, got {0}")]
    InvalidSnr(f64),
    #[error("at least one trial is required")]
    NoTrials,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialSeeds {
    pub channel: u64,
    pub precoders: u64,
    pub symbols: u64,
    pub noise: u64,
}

impl TrialSeeds {
    pub fn for_trial(master: u64, trial: u64) -> Self {
        let s = derive_seed(master, trial);
        Self {
            channel: derive_seed(s, 1),
            precoders: derive_seed(s, 2),
            symbols: derive_seed(s, 3),
            noise: derive_seed(s, 4),
        }
    }
}

/// Channel, precoders and symbols of one trial, ready to be run at any noise level.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub plan: IntegerPlan,
    pub trace: Arc<ChannelTrace>,
    pub precoders: Arc<PrecoderSet>,
    pub symbols: SymbolSet,
    pub noise_seed: u64,
}

impl PreparedTrial {
    pub fn new(
        cfg: AntennaConfig,
        plan: &IntegerPlan,
        seeds: TrialSeeds,
    ) -> Result<Self, SimulationError> {
        Ok(Self {
            plan: *plan,
            trace: Arc::new(generate_trace(cfg, plan.total_slots(), seeds.channel)?),
            precoders: Arc::new(generate_precoders(plan, cfg, seeds.precoders)?),
            symbols: SymbolSet::generate(plan, cfg, seeds.symbols),
            noise_seed: seeds.noise,
        })
    }

    pub fn run(&self, noise_power: f64) -> Result<TransmissionRecord, SimulationError> {
        let noise = NoiseSpec {
            power: noise_power,
            seed: self.noise_seed,
        };
        Ok(run_scheme(
            Arc::clone(&self.trace),
            Arc::clone(&self.precoders),
            self.symbols.clone(),
            &self.plan,
            noise,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnrPoint {
    pub snr: f64,
    pub trials: usize,
    pub mse_rx1: f64,
    pub mse_rx2: f64,
    /// Per-trial MSE is heavy-tailed (it scales with the inverse squared singular values of
    /// `H1`), so the median is reported alongside the mean.
    pub median_rx1: f64,
    pub median_rx2: f64,
    pub csi_violations: usize,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Decoding MSE statistics at both receivers for each SNR. Trials run in parallel; sums are
/// taken in trial order, so the result does not depend on scheduling.
pub fn mse_sweep(
    cfg: AntennaConfig,
    plan: &IntegerPlan,
    snrs: &[f64],
    trials: usize,
    master_seed: u64,
    tol: &ToleranceConfig,
) -> Result<Vec<SnrPoint>, SimulationError> {
    if trials == 0 {
        return Err(SimulationError::NoTrials);
    }
    if let Some(&bad) = snrs.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(SimulationError::InvalidSnr(bad));
    }
    let per_trial: Vec<Vec<(f64, f64, usize)>> = (0..trials as u64)
        .into_par_iter()
        .map(|k| -> Result<_, SimulationError> {
            let trial = PreparedTrial::new(cfg, plan, TrialSeeds::for_trial(master_seed, k))?;
            snrs.iter()
                .map(|&snr| {
                    let rec = trial.run(1.0 / snr)?;
                    let rx1 = decode(&rec, tol)?.mse;
                    let rx2 = decode_receiver2(&rec, tol)?.mse;
                    Ok((rx1, rx2, rec.audit().violations().count()))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    Ok(snrs
        .iter()
        .enumerate()
        .map(|(i, &snr)| {
            let rx1: Vec<f64> = per_trial.iter().map(|row| row[i].0).collect();
            let rx2: Vec<f64> = per_trial.iter().map(|row| row[i].1).collect();
            let violations = per_trial.iter().map(|row| row[i].2).sum();
            SnrPoint {
                snr,
                trials,
                mse_rx1: rx1.iter().sum::<f64>() / trials as f64,
                mse_rx2: rx2.iter().sum::<f64>() / trials as f64,
                median_rx1: median(rx1),
                median_rx2: median(rx2),
                csi_violations: violations,
            }
        })
        .collect())
}

/// Least-squares slope of `log10 y` against `log10 x`. `None` with fewer than two distinct
/// `x` or any nonpositive value.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return None;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.log10(), y.log10())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

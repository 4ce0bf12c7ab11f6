//! Round-by-round orchestration of the hierarchy, the baselines, drift
//! scenarios and communication accounting.

mod comm;
mod config;
mod engine;
mod output;

pub use comm::{CommLedger, Link, RoundTraffic, Transfer};
pub use config::{
    CloudWeights, Clustering, DataConfig, DriftSpec, GlobalSync, Method, Overrides, Protocol, SimConfig, SCHEMA_VERSION,
};
pub use engine::{build_clients, run, run_baseline, sample_participants, Event, RunArtifacts};
pub use output::{read_final_models, write_final_models, write_outputs, ModelRecord, ModelRole, RunSummary};

use serde::Serialize;

use crate::error::{Error, Result};

/// Purposes that key independent random streams.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const SAMPLE: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const REFINE: u64 = 5;
    pub const DRIFT: u64 = 6;
    pub const SPLIT: u64 = 7;
    pub const WARMUP: u64 = 8;
}

/// Points below the pre-drift peak still counted as recovered.
pub const RECOVERY_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftMetrics {
    pub drift_round: usize,
    /// Best accuracy before the drift round.
    pub peak: f64,
    /// Worst accuracy from the drift round on.
    pub trough: f64,
    /// `peak - trough` in percentage points.
    pub drop_pp: f64,
    /// Rounds from the drift until accuracy is back within tolerance of the
    /// peak; `None` when that never happens.
    pub recovery_rounds: Option<usize>,
}

/// Drop and recovery for an accuracy series where `series[r - 1]` belongs to round `r`.
pub fn drift_metrics(series: &[f64], drift_round: usize) -> Result<DriftMetrics> {
    if drift_round < 2 || drift_round > series.len() {
        return Err(Error::Config(format!(
            "drift round {drift_round} needs at least one round on each side within {} rounds",
            series.len()
        )));
    }
    let before = &series[..drift_round - 1];
    let after = &series[drift_round - 1..];
    let peak = before.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let trough = after.iter().cloned().fold(f64::INFINITY, f64::min);
    let recovery_rounds = after.iter().position(|&a| a >= peak - RECOVERY_TOLERANCE);
    Ok(DriftMetrics { drift_round, peak, trough, drop_pp: 100.0 * (peak - trough), recovery_rounds })
}

/// First round whose accuracy reaches `target`.
pub fn rounds_to_target(series: &[f64], target: f64) -> Option<usize> {
    series.iter().position(|&a| a >= target).map(|i| i + 1)
}

/// Runs a configuration with a drift schedule and measures the first drift.
pub fn drift_scenario(cfg: &SimConfig) -> Result<(RunArtifacts, DriftMetrics)> {
    let first = cfg.drift.iter().map(|d| d.round).min().ok_or(Error::Config("drift schedule is empty".into()))?;
    let artifacts = run(cfg)?;
    let metrics = drift_metrics(&artifacts.accuracy_series(), first)?;
    Ok((artifacts, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_metrics_examples() {
        let flat = vec![0.8; 10];
        let m = drift_metrics(&flat, 5).unwrap();
        assert_eq!(m.drop_pp, 0.0);
        assert_eq!(m.recovery_rounds, Some(0));

        let dip = [0.5, 0.7, 0.8, 0.4, 0.6, 0.796, 0.9];
        let m = drift_metrics(&dip, 4).unwrap();
        assert!((m.drop_pp - 40.0).abs() < 1e-9);
        assert_eq!(m.recovery_rounds, Some(2));

        let never = [0.8, 0.8, 0.3, 0.4, 0.5];
        assert_eq!(drift_metrics(&never, 3).unwrap().recovery_rounds, None);
        assert!(drift_metrics(&never, 1).is_err());
        assert!(drift_metrics(&never, 6).is_err());
    }

    #[test]
    fn rounds_to_target_examples() {
        assert_eq!(rounds_to_target(&[0.1, 0.5, 0.9], 0.5), Some(2));
        assert_eq!(rounds_to_target(&[0.1, 0.5], 0.95), None);
    }
}

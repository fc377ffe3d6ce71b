//! Shared fixtures for the benchmarks.

use sps_core::detection::DetectionRecords;
use sps_core::pipeline::{histogram_from_records, simulate};
use sps_core::{CorrelationHistogram, ExperimentConfig};

/// Reference source behind a high-efficiency channel, so that short runs still
/// fill the correlation histogram.
pub fn bright_config(n_pulses: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::reference_defaults();
    cfg.channel.lens = 1.0;
    cfg.channel.detector = 0.35;
    cfg.excitation.n_pulses = n_pulses;
    cfg
}

pub fn records(cfg: &ExperimentConfig) -> DetectionRecords {
    simulate(cfg).expect("valid fixture").records
}

pub fn histogram(cfg: &ExperimentConfig) -> CorrelationHistogram {
    histogram_from_records(&records(cfg), cfg).expect("valid fixture")
}

//! Monte Carlo simulation and analysis of triggered single-photon sources.
//!
//! The crate covers the full chain from a pulsed emitter model to detector
//! timestamps, coincidence histograms, g2(0), device efficiency and cavity
//! figures of merit, plus Gaussian-beam and far-field estimates of the
//! collection optics.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod detection;
pub mod error;
pub mod histogram;
pub mod io;
pub mod optics;
pub mod pipeline;
pub mod rng;
pub mod source;

pub use detection::{
    detect, ChannelEfficiencies, DetectionRecord, DetectionRecords, Detector, DetectorSpec,
};
pub use error::{Error, ErrorKind, Result};
pub use histogram::{build_histogram, CorrelationHistogram, HistogramMode};
pub use source::{
    generate_stream, BackgroundParams, EmissionEvent, EmissionStream, EmitterParams, ExcitationConfig, LaserParams,
    Origin, Polarization, SourceConfig, SourceKind,
};
pub use config::ExperimentConfig;
pub use optics::{FarFieldPattern, FieldGrid, GaussianBeam};
pub use analysis::{EfficiencyPoint, PeakFit, PeakTemplateParams, SpectrumSample};

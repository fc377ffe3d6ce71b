//! End-to-end runs assembled from the individual stages.
//!
//! These functions compute; writing files is left to the caller.

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::cavity::CavityMetrics;
use crate::analysis::efficiency::{
    fit_saturation, mean_photon_number, multiphoton_bound, EfficiencyPoint, SaturationFit,
};
use crate::analysis::lifetime::{fit_lifetime, ArrivalHistogram, LifetimeFit, LifetimeOptions};
use crate::analysis::peaks::{fit_peak_areas_with, peak_basis, PeakFit};
use crate::analysis::spectrum::{fit_lorentzian, LorentzianFit, SpectrumSample};
use crate::analysis::template::PeakTemplateParams;
use crate::config::{ExperimentConfig, OpticsSection};
use crate::detection::{channel_transmission, detect, DetectionRecords};
use crate::error::{Error, Result};
use crate::histogram::{build_histogram, CorrelationHistogram, HistogramMode};
use crate::optics::{
    beam_divergence, far_field_transform, lens_collection_fraction, lens_half_angle_for_fraction,
    mode_waist_estimate, CollectionFraction, Divergence, FarFieldOptions, FarFieldPattern, FieldGrid, GaussianBeam,
    WaistEstimate,
};
use crate::rng::child_seed;
use crate::source::{generate_stream, EmissionEvent, EmissionStream, Origin, Polarization};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_file: Option<String>,
}

impl Provenance {
    pub fn new(cfg: &ExperimentConfig, input_file: Option<String>) -> Self {
        Provenance {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            input_file,
        }
    }
}

pub struct Simulation {
    pub stream: EmissionStream,
    pub records: DetectionRecords,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub n_pulses: u64,
    pub seed: u64,
    pub emitted_photons: u64,
    pub qd_photons: u64,
    pub background_photons: u64,
    pub d1_records: u64,
    pub d2_records: u64,
    pub detected_per_pulse: f64,
    /// Mean detections per pulse predicted from the configuration.
    pub expected_detected_per_pulse: f64,
}

/// Mean detections per pulse implied by the source and channel (dead time
/// and dark counts ignored).
pub fn expected_detections_per_pulse(cfg: &ExperimentConfig) -> Result<f64> {
    let src = cfg.source_config()?;
    let rho = cfg.emitter.polarized_fraction;
    let lin = channel_transmission(&cfg.channel, Polarization::Linear);
    let unpol = channel_transmission(&cfg.channel, Polarization::Unpolarized);
    let poisson_t = if cfg.laser.is_some() { lin } else { unpol };
    Ok(src.qd_probability() * (rho * lin + (1.0 - rho) * unpol) + src.poisson_mean() * poisson_t)
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation> {
    let src = cfg.source_config()?;
    let stream = generate_stream(&src).map_err(|e| e.at_stage("simulate"))?;
    let records = detect(&stream, &cfg.channel, &cfg.detector).map_err(|e| e.at_stage("detect"))?;
    Ok(Simulation { stream, records })
}

impl Simulation {
    pub fn summary(&self, cfg: &ExperimentConfig) -> Result<SimulationSummary> {
        let n = cfg.excitation.n_pulses;
        Ok(SimulationSummary {
            n_pulses: n,
            seed: cfg.seed,
            emitted_photons: self.stream.len() as u64,
            qd_photons: self.stream.count_origin(Origin::QdLine) as u64,
            background_photons: self.stream.count_origin(Origin::Background) as u64,
            d1_records: self.records.d1.len() as u64,
            d2_records: self.records.d2.len() as u64,
            detected_per_pulse: self.records.len() as f64 / n as f64,
            expected_detected_per_pulse: expected_detections_per_pulse(cfg)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramSummary {
    pub bins: usize,
    pub bin_width_ns: f64,
    pub window_ns: f64,
    pub mode: HistogramMode,
    pub total_counts: u64,
    pub total_pulses: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub provenance: Provenance,
    pub histogram: HistogramSummary,
    pub template: PeakTemplateParams,
    pub fit: PeakFit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count_rate_hz: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_n_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<EfficiencyPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multiphoton_bound: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
}

/// Counts entering the rate estimate: total detections over a duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountSummary {
    pub detections: u64,
    pub duration_ns: f64,
}

pub fn histogram_from_records(records: &DetectionRecords, cfg: &ExperimentConfig) -> Result<CorrelationHistogram> {
    let mut hist = build_histogram(records, cfg.analysis.bin_width_ns, cfg.analysis.window_ns, cfg.analysis.mode)?;
    hist.meta.seed = Some(cfg.seed);
    Ok(hist)
}

/// Fits a histogram and, when detection counts are known, derives `<n>`,
/// the efficiency and the multi-photon bound.
pub fn analyze_histogram(
    hist: &CorrelationHistogram,
    cfg: &ExperimentConfig,
    counts: Option<CountSummary>,
    provenance: Provenance,
) -> Result<AnalysisReport> {
    let template = cfg.template_params();
    let fit = fit_peak_areas_with(hist, &template, &cfg.peak_fit_options()).map_err(|e| e.at_stage("fit"))?;
    let mut notices = Vec::new();
    if fit.clamped {
        notices.push(format!(
            "unconstrained central area was negative ({:.4}); clamped to 0",
            fit.unclamped_central
        ));
    }
    let (mut count_rate_hz, mut n_mean, mut sigma_n_mean, mut efficiency, mut bound) = (None, None, None, None, None);
    if let Some(c) = counts.filter(|c| c.duration_ns > 0.0) {
        let rate = c.detections as f64 / (c.duration_ns * 1e-9);
        let rep_rate = 1e9 / cfg.excitation.rep_period_ns;
        let n = mean_photon_number(rate, rep_rate, cfg.detection_efficiency()).map_err(|e| e.at_stage("efficiency"))?;
        let sigma_n = if c.detections > 0 { n / (c.detections as f64).sqrt() } else { 0.0 };
        count_rate_hz = Some(rate);
        n_mean = Some(n);
        sigma_n_mean = Some(sigma_n);
        bound = Some(multiphoton_bound(n, fit.g2_zero));
        match EfficiencyPoint::from_measurement(cfg.excitation.pump_power_uw, n, sigma_n, fit.g2_zero, fit.sigma_g2) {
            Ok(p) => efficiency = Some(p),
            Err(e) => notices.push(format!("efficiency not computed: {e}")),
        }
    }
    Ok(AnalysisReport {
        provenance,
        histogram: HistogramSummary {
            bins: hist.len(),
            bin_width_ns: hist.bin_width_ns,
            window_ns: hist.window_ns,
            mode: hist.mode,
            total_counts: hist.total(),
            total_pulses: hist.total_pulses,
        },
        template,
        fit,
        count_rate_hz,
        n_mean,
        sigma_n_mean,
        efficiency,
        multiphoton_bound: bound,
        notices,
    })
}

pub fn analyze_records(
    records: &DetectionRecords,
    cfg: &ExperimentConfig,
    provenance: Provenance,
) -> Result<(CorrelationHistogram, AnalysisReport)> {
    let hist = histogram_from_records(records, cfg).map_err(|e| e.at_stage("histogram"))?;
    let counts = CountSummary {
        detections: records.len() as u64,
        duration_ns: records.duration_ns,
    };
    let report = analyze_histogram(&hist, cfg, Some(counts), provenance)?;
    Ok((hist, report))
}

/// Fitted model counts per bin, for plotting next to the data.
pub fn model_curve(hist: &CorrelationHistogram, report: &AnalysisReport) -> Vec<f64> {
    peak_basis(hist, &report.template, Some(report.fit.side_peaks)).model_counts(report.fit.area_central, report.fit.area_side)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LifetimeReport {
    pub provenance: Provenance,
    pub events: usize,
    pub bin_width_ns: f64,
    pub fit: LifetimeFit,
}

/// Decay-time fit of the emission delays in a stream.
pub fn analyze_stream_lifetime(
    events: &[EmissionEvent],
    bin_width_ns: f64,
    provenance: Provenance,
) -> Result<LifetimeReport> {
    let delays: Vec<f64> = events.iter().map(|e| e.time_offset_ns).collect();
    let hist = ArrivalHistogram::from_samples(&delays, bin_width_ns).map_err(|e| e.at_stage("lifetime"))?;
    let fit = fit_lifetime(&hist, &LifetimeOptions::default()).map_err(|e| e.at_stage("lifetime"))?;
    Ok(LifetimeReport {
        provenance,
        events: events.len(),
        bin_width_ns,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub provenance: Provenance,
    pub samples: usize,
    pub fit: LorentzianFit,
}

pub fn analyze_spectrum(samples: &[SpectrumSample], provenance: Provenance) -> Result<SpectrumReport> {
    let fit = fit_lorentzian(samples).map_err(|e| e.at_stage("spectrum"))?;
    Ok(SpectrumReport {
        provenance,
        samples: samples.len(),
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerResult {
    pub pump_power_uw: f64,
    pub seed: u64,
    pub detections: u64,
    pub count_rate_hz: f64,
    pub n_mean: f64,
    pub sigma_n_mean: f64,
    pub fit: PeakFit,
    pub point: EfficiencyPoint,
    pub multiphoton_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub provenance: Provenance,
    pub n_pulses_per_power: u64,
    pub powers: Vec<PowerResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saturation: Option<SaturationFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cavity: Option<CavityMetrics>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notices: Vec<String>,
}

/// Configuration of the `index`-th power point: same run with the pump
/// power replaced and an independent derived seed.
pub fn power_point_config(cfg: &ExperimentConfig, index: usize, pump_power_uw: f64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.excitation.pump_power_uw = pump_power_uw;
    c.seed = child_seed(cfg.seed, index as u64);
    c
}

fn run_power(cfg: &ExperimentConfig, index: usize, power: f64) -> Result<PowerResult> {
    let stage = |s: &str| format!("power {index} ({power} µW): {s}");
    let c = power_point_config(cfg, index, power);
    let sim = simulate(&c).map_err(|e| e.at_stage(stage("simulate")))?;
    let (_, report) = analyze_records(&sim.records, &c, Provenance::new(&c, None)).map_err(|e| e.at_stage(stage("analyze")))?;
    let point = match report.efficiency {
        Some(p) => p,
        None => {
            return Err(Error::ModelDomain(report.notices.join("; ")).at_stage(stage("efficiency")));
        }
    };
    Ok(PowerResult {
        pump_power_uw: power,
        seed: c.seed,
        detections: sim.records.len() as u64,
        count_rate_hz: report.count_rate_hz.unwrap_or(0.0),
        n_mean: point.n_mean,
        sigma_n_mean: point.sigma_n_mean,
        fit: report.fit,
        point,
        multiphoton_bound: report.multiphoton_bound.unwrap_or(0.0),
    })
}

/// Simulates and analyzes every power, fits the saturation curve and adds
/// the cavity figures of merit. Power points run in parallel; each has its
/// own derived seed, so the result does not depend on the thread count.
pub fn run_pipeline(cfg: &ExperimentConfig, powers: &[f64]) -> Result<PipelineReport> {
    if powers.is_empty() {
        return Err(Error::invalid("pipeline.powers_uw", "no powers given"));
    }
    let powers_out: Vec<PowerResult> = powers
        .par_iter()
        .enumerate()
        .map(|(i, &p)| run_power(cfg, i, p))
        .collect::<Result<_>>()?;

    let mut notices = Vec::new();
    let mut distinct: Vec<f64> = powers.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let saturation = if distinct.len() >= 3 {
        let pts: Vec<EfficiencyPoint> = powers_out.iter().map(|r| r.point).collect();
        Some(fit_saturation(&pts).map_err(|e| e.at_stage("saturation"))?)
    } else {
        notices.push(format!(
            "saturation fit skipped: needs at least 3 distinct pump powers, got {}",
            distinct.len()
        ));
        None
    };
    if let Some(s) = &saturation {
        if !s.p_sat_identifiable {
            notices.push("saturation power is not constrained by these data".into());
        }
    }
    let cavity = match cfg.cavity_inputs() {
        Some(c) => Some(c.metrics().map_err(|e| e.at_stage("cavity"))?),
        None => None,
    };
    Ok(PipelineReport {
        provenance: Provenance::new(cfg, None),
        n_pulses_per_power: cfg.excitation.n_pulses,
        powers: powers_out,
        saturation,
        cavity,
        notices,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LensCalibration {
    pub target_fraction: f64,
    pub lens_half_angle_rad: f64,
    /// `n sin(theta)` of the implied lens.
    pub numerical_aperture: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FarFieldSummary {
    pub nu: usize,
    pub nv: usize,
    pub du: f64,
    pub dv: f64,
    pub near_field_power: f64,
    pub total_spectral_power: f64,
    pub propagating_power: f64,
    pub parseval_relative_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width_1e2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpticsReport {
    pub waist: WaistEstimate,
    pub beam: GaussianBeam,
    pub divergence: Divergence,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collection: Option<CollectionFraction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration: Option<LensCalibration>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub far_field: Option<FarFieldSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn run_optics(optics: &OpticsSection, grid: Option<&FieldGrid>) -> Result<(OpticsReport, Option<FarFieldPattern>)> {
    let lambda_um = optics.wavelength_nm * 1e-3;
    let waist = mode_waist_estimate(optics.core_radius_um, optics.n_core, optics.n_clad, lambda_um)
        .map_err(|e| e.at_stage("waist"))?;
    let beam = GaussianBeam::new(waist.waist_um, lambda_um, optics.medium_index)?;
    let divergence = beam_divergence(&beam);
    let mut warnings = Vec::new();
    if waist.low_v_warning {
        warnings.push(format!("V = {:.3} is below the validity range of the waist formula", waist.v_number));
    }
    if divergence.non_paraxial {
        warnings.push(format!(
            "divergence {:.3} rad is beyond the paraxial regime; Gaussian-beam results are approximate",
            divergence.theta_rad
        ));
    }
    let collection = match optics.lens_half_angle_rad {
        Some(a) => Some(lens_collection_fraction(divergence.theta_rad, a).map_err(|e| e.at_stage("collection"))?),
        None => None,
    };
    let calibration = match optics.calibrate_collection {
        Some(f) => {
            let a = lens_half_angle_for_fraction(divergence.theta_rad, f).map_err(|e| e.at_stage("calibration"))?;
            Some(LensCalibration {
                target_fraction: f,
                lens_half_angle_rad: a,
                numerical_aperture: optics.medium_index * a.sin(),
            })
        }
        None => None,
    };
    let (far_field, pattern) = match grid {
        Some(g) => {
            let p = far_field_transform(g, lambda_um, FarFieldOptions { padding: optics.padding })
                .map_err(|e| e.at_stage("far field"))?;
            let summary = FarFieldSummary {
                nu: p.nu,
                nv: p.nv,
                du: p.du,
                dv: p.dv,
                near_field_power: p.near_field_power,
                total_spectral_power: p.total_spectral_power,
                propagating_power: p.propagating_power,
                parseval_relative_error: (p.total_spectral_power / p.near_field_power - 1.0).abs(),
                half_width_1e2: p.half_width_1e2_u(),
            };
            (Some(summary), Some(p))
        }
        None => (None, None),
    };
    Ok((
        OpticsReport {
            waist,
            beam,
            divergence,
            collection,
            calibration,
            far_field,
            warnings,
        },
        pattern,
    ))
}

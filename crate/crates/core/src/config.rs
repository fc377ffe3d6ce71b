//! Experiment configuration: one TOML file describing a run.
//!
//! Units are fixed: times in ns (jitter in ps), powers in µW, wavelengths in
//! nm, lengths in µm. Unknown keys are rejected so that typos cannot silently
//! fall back to defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::cavity::{coupling_beta, extraction_efficiency, purcell_factor, CavityInputs, Measured};
use crate::analysis::efficiency::mixture_background_for_g2;
use crate::analysis::peaks::{FitMethod, PeakFitOptions};
use crate::analysis::template::PeakTemplateParams;
use crate::detection::{ChannelEfficiencies, DetectorSpec};
use crate::error::{check_positive, Error, Result};
use crate::histogram::HistogramMode;
use crate::source::{
    excitation_probability, BackgroundParams, EmitterParams, ExcitationConfig, LaserParams, SourceConfig, SourceKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSection {
    pub rep_period_ns: f64,
    pub pump_power_uw: f64,
    pub p_sat_uw: f64,
    pub n_pulses: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub bin_width_ns: f64,
    /// Half-width of the delay window.
    pub window_ns: f64,
    #[serde(default)]
    pub mode: HistogramMode,
    #[serde(default)]
    pub method: FitMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side_peaks: Option<usize>,
    /// Peak decay constant; defaults to the source lifetime.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_decay_ns: Option<f64>,
    /// Sigma of the delay IRF; defaults to sqrt(2) times the detector jitter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_irf_ns: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavitySection {
    pub q_post: f64,
    pub q_planar: f64,
    #[serde(default)]
    pub sigma_q_post: f64,
    #[serde(default)]
    pub sigma_q_planar: f64,
    #[serde(default)]
    pub sigma_tau_on_ns: f64,
    #[serde(default)]
    pub sigma_tau_off_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsSection {
    pub core_radius_um: f64,
    pub n_core: f64,
    #[serde(default = "one")]
    pub n_clad: f64,
    pub wavelength_nm: f64,
    #[serde(default = "one")]
    pub medium_index: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lens_half_angle_rad: Option<f64>,
    /// Collection fraction for which the implied lens half-angle is reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate_collection: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near_field: Option<String>,
    #[serde(default = "default_padding")]
    pub padding: usize,
}

fn one() -> f64 {
    1.0
}

fn default_padding() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    pub powers_uw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub emitter: EmitterParams,
    pub excitation: ExcitationSection,
    pub background: BackgroundParams,
    /// When present the source is an attenuated laser instead of the dot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laser: Option<LaserParams>,
    pub channel: ChannelEfficiencies,
    pub detector: DetectorSpec,
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cavity: Option<CavitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optics: Option<OpticsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineSection>,
}

/// g2(0) targeted by the bundled defaults at their pump power.
pub const DEFAULT_TARGET_G2: f64 = 0.14;

impl ExperimentConfig {
    /// Every parameter the source device measurements fix, plus documented
    /// choices for the rest (repetition period, saturation power, pump power,
    /// background law and lens aperture).
    pub fn reference_defaults() -> Self {
        let tau_on = 4.4;
        let p_sat = 3.0;
        let pump = 10.9;
        let exponent = 2.0;
        let p = excitation_probability(pump, p_sat).expect("valid defaults");
        let mu = mixture_background_for_g2(p, DEFAULT_TARGET_G2).expect("valid target");
        let amplitude = mu / (pump / p_sat).powf(exponent);
        ExperimentConfig {
            seed: 20_021,
            output_dir: None,
            emitter: EmitterParams {
                tau_on_ns: tau_on,
                tau_off_ns: 25.4,
                gamma_c_ratio: 0.0,
                polarized_fraction: 0.331,
            },
            excitation: ExcitationSection {
                rep_period_ns: 13.0,
                pump_power_uw: pump,
                p_sat_uw: p_sat,
                n_pulses: 1_000_000,
            },
            background: BackgroundParams {
                amplitude,
                power_exponent: exponent,
                tau_bg_ns: tau_on,
            },
            laser: None,
            channel: ChannelEfficiencies {
                beta: coupling_beta(purcell_factor(25.4, tau_on), 0.0),
                eta_extract: extraction_efficiency(628.0, 1718.0),
                lens: 0.22,
                polarizer_linear: 1.0,
                polarizer_unpol: 1.0,
                detector: 0.0302,
            },
            detector: DetectorSpec {
                jitter_sigma_ps: DetectorSpec::sigma_from_combined_fwhm_ps(473.0),
                dead_time_ns: 0.0,
                dark_count_rate_hz: 0.0,
            },
            analysis: AnalysisSection {
                bin_width_ns: 0.25,
                window_ns: 8.0 * 13.0,
                mode: HistogramMode::AllPairs,
                method: FitMethod::WeightedLeastSquares,
                side_peaks: None,
                tau_decay_ns: None,
                sigma_irf_ns: None,
            },
            cavity: Some(CavitySection {
                q_post: 628.0,
                q_planar: 1718.0,
                sigma_q_post: 69.0,
                sigma_q_planar: 13.0,
                sigma_tau_on_ns: 1.2,
                sigma_tau_off_ns: 1.4,
            }),
            optics: Some(OpticsSection {
                core_radius_um: 0.3,
                n_core: 3.5,
                n_clad: 1.0,
                wavelength_nm: 855.0,
                medium_index: 1.0,
                lens_half_angle_rad: None,
                calibrate_collection: Some(0.22),
                near_field: None,
                padding: 4,
            }),
            pipeline: Some(PipelineSection {
                powers_uw: vec![0.5, 1.0, 2.0, 3.0, 4.5, 6.0, 8.0, 10.9],
            }),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        self.source_config()?.validate()?;
        self.channel.validate()?;
        self.detector.validate()?;
        check_positive("analysis.bin_width_ns", self.analysis.bin_width_ns)?;
        check_positive("analysis.window_ns", self.analysis.window_ns)?;
        if let Some(t) = self.analysis.tau_decay_ns {
            check_positive("analysis.tau_decay_ns", t)?;
        }
        if let Some(s) = self.analysis.sigma_irf_ns {
            crate::error::check_non_negative("analysis.sigma_irf_ns", s)?;
        }
        if let Some(c) = self.cavity_inputs() {
            c.validate()?;
        }
        if let Some(o) = &self.optics {
            check_positive("optics.core_radius_um", o.core_radius_um)?;
            check_positive("optics.wavelength_nm", o.wavelength_nm)?;
            if o.padding == 0 {
                return Err(Error::invalid("optics.padding", "must be >= 1"));
            }
        }
        if let Some(p) = &self.pipeline {
            if p.powers_uw.is_empty() {
                return Err(Error::invalid("pipeline.powers_uw", "must list at least one power"));
            }
            for &w in &p.powers_uw {
                crate::error::check_non_negative("pipeline.powers_uw", w)?;
            }
        }
        Ok(())
    }

    pub fn source_config(&self) -> Result<SourceConfig> {
        Ok(SourceConfig {
            emitter: self.emitter,
            excitation: ExcitationConfig {
                rep_period_ns: self.excitation.rep_period_ns,
                pump_power_uw: self.excitation.pump_power_uw,
                p_sat_uw: self.excitation.p_sat_uw,
                n_pulses: self.excitation.n_pulses,
                rng_seed: self.seed,
            },
            background: self.background,
            kind: match self.laser {
                Some(l) => SourceKind::Laser(l),
                None => SourceKind::QuantumDot,
            },
        })
    }

    pub fn template_params(&self) -> PeakTemplateParams {
        let default_tau = match self.laser {
            Some(l) => l.pulse_tau_ns,
            None => self.emitter.tau_on_ns,
        };
        PeakTemplateParams {
            tau_decay_ns: self.analysis.tau_decay_ns.unwrap_or(default_tau),
            sigma_irf_ns: self.analysis.sigma_irf_ns.unwrap_or_else(|| self.detector.combined_sigma_ns()),
            rep_period_ns: self.excitation.rep_period_ns,
        }
    }

    pub fn peak_fit_options(&self) -> PeakFitOptions {
        PeakFitOptions {
            method: self.analysis.method,
            side_peaks: self.analysis.side_peaks,
        }
    }

    /// Collection and detection efficiency applied to photons leaving the device.
    pub fn detection_efficiency(&self) -> f64 {
        let rho = if self.laser.is_some() { 0.0 } else { self.emitter.polarized_fraction };
        self.channel.qd_collection_detection(rho)
    }

    pub fn cavity_inputs(&self) -> Option<CavityInputs> {
        self.cavity.map(|c| CavityInputs {
            tau_on_ns: Measured::new(self.emitter.tau_on_ns, c.sigma_tau_on_ns),
            tau_off_ns: Measured::new(self.emitter.tau_off_ns, c.sigma_tau_off_ns),
            gamma_c_ratio: self.emitter.gamma_c_ratio,
            q_post: Measured::new(c.q_post, c.sigma_q_post),
            q_planar: Measured::new(c.q_planar, c.sigma_q_planar),
        })
    }
}

//! Inference chain: correlation-peak fits, efficiency, saturation, lifetime,
//! cavity line width and figures of merit.

pub mod cavity;
pub mod efficiency;
pub mod lifetime;
pub mod lm;
pub mod minimize;
pub mod peaks;
pub mod spectrum;
pub mod template;

pub use cavity::{
    coupling_beta, expected_total_efficiency, extraction_efficiency, purcell_factor, CavityInputs, CavityMetrics,
    Measured,
};
pub use efficiency::{
    fit_saturation, mean_photon_number, mixture_background_for_g2, mixture_g2, multiphoton_bound, saturation_gradient,
    saturation_model, single_photon_efficiency, EfficiencyPoint, SaturationFit,
};
pub use lifetime::{fit_lifetime, ArrivalHistogram, LifetimeFit, LifetimeOptions};
pub use peaks::{
    correlation_model, fit_individual_peak_areas, fit_peak_areas, fit_peak_areas_with, fit_peak_width,
    required_side_peaks, FitMethod, PeakFit, PeakFitOptions, PeakWidthFit,
};
pub use spectrum::{fit_lorentzian, lorentzian, LorentzianFit, LorentzianParams, SpectrumSample};
pub use template::{peak_template, template_cdf, template_mass, PeakTemplateParams};

//! Paraxial Gaussian-beam model of the light leaving the post.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};

/// Below this V number the Gaussian waist approximation is unreliable.
pub const MIN_VALID_V: f64 = 0.8;
/// Divergences above this are outside the paraxial regime.
pub const PARAXIAL_LIMIT_RAD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBeam {
    /// 1/e² field radius, µm.
    pub waist_um: f64,
    /// Vacuum wavelength, µm.
    pub wavelength_um: f64,
    pub medium_index: f64,
}

impl GaussianBeam {
    pub fn new(waist_um: f64, wavelength_um: f64, medium_index: f64) -> Result<Self> {
        let b = GaussianBeam {
            waist_um,
            wavelength_um,
            medium_index,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("waist_um", self.waist_um)?;
        check_positive("wavelength_um", self.wavelength_um)?;
        if !(self.medium_index >= 1.0 && self.medium_index.is_finite()) {
            return Err(Error::invalid("medium_index", format!("must be >= 1, got {}", self.medium_index)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaistEstimate {
    pub waist_um: f64,
    pub v_number: f64,
    /// V is below the range where the approximation holds.
    pub low_v_warning: bool,
}

/// Normalized frequency `(2 pi / lambda) a sqrt(n_core^2 - n_clad^2)`.
pub fn v_number(core_radius_um: f64, n_core: f64, n_clad: f64, wavelength_um: f64) -> f64 {
    2.0 * PI / wavelength_um * core_radius_um * (n_core * n_core - n_clad * n_clad).sqrt()
}

/// Gaussian waist of the fundamental mode of a step-index cylinder,
/// `w0 = a (0.65 + 1.619 V^-3/2 + 2.879 V^-6)`.
pub fn mode_waist_estimate(core_radius_um: f64, n_core: f64, n_clad: f64, wavelength_um: f64) -> Result<WaistEstimate> {
    check_positive("core_radius_um", core_radius_um)?;
    check_positive("wavelength_um", wavelength_um)?;
    if !(n_clad >= 1.0 && n_core > n_clad && n_core.is_finite()) {
        return Err(Error::invalid(
            "n_core",
            format!("need n_core > n_clad >= 1, got n_core = {n_core}, n_clad = {n_clad}"),
        ));
    }
    let v = v_number(core_radius_um, n_core, n_clad, wavelength_um);
    let factor = 0.65 + 1.619 * v.powf(-1.5) + 2.879 * v.powi(-6);
    Ok(WaistEstimate {
        waist_um: core_radius_um * factor,
        v_number: v,
        low_v_warning: v < MIN_VALID_V,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Divergence {
    /// 1/e² far-field half-angle in the exit medium, rad.
    pub theta_rad: f64,
    pub non_paraxial: bool,
}

/// `theta = lambda / (pi w0 n)`.
pub fn beam_divergence(beam: &GaussianBeam) -> Divergence {
    let theta = beam.wavelength_um / (PI * beam.waist_um * beam.medium_index);
    Divergence {
        theta_rad: theta,
        non_paraxial: theta > PARAXIAL_LIMIT_RAD,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollectionFraction {
    pub fraction: f64,
    pub non_paraxial: bool,
}

fn check_angle(name: &str, a: f64) -> Result<()> {
    if !(a > 0.0 && a < FRAC_PI_2) {
        return Err(Error::invalid(name, format!("must be in (0, pi/2), got {a}")));
    }
    Ok(())
}

/// Power fraction of a Gaussian far field inside a cone,
/// `1 - exp(-2 theta_lens^2 / theta^2)`.
pub fn lens_collection_fraction(theta_rad: f64, lens_half_angle_rad: f64) -> Result<CollectionFraction> {
    check_angle("divergence", theta_rad)?;
    check_angle("lens_half_angle", lens_half_angle_rad)?;
    let r = lens_half_angle_rad / theta_rad;
    Ok(CollectionFraction {
        fraction: -(-2.0 * r * r).exp_m1(),
        non_paraxial: theta_rad > PARAXIAL_LIMIT_RAD,
    })
}

/// Lens half-angle that collects `fraction` of the beam; the inverse of
/// [`lens_collection_fraction`].
pub fn lens_half_angle_for_fraction(theta_rad: f64, fraction: f64) -> Result<f64> {
    check_angle("divergence", theta_rad)?;
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid("fraction", format!("must be in (0, 1), got {fraction}")));
    }
    let angle = theta_rad * (-0.5 * (-fraction).ln_1p()).sqrt();
    if angle >= FRAC_PI_2 {
        return Err(Error::Domain(format!(
            "collecting {fraction} of a beam with divergence {theta_rad} rad needs a half-angle beyond pi/2"
        )));
    }
    Ok(angle)
}

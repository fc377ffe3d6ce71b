//! Cavity figures of merit and their first-order error propagation.

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, check_range, Result};

/// `tau_off / tau_on`.
pub fn purcell_factor(tau_off_ns: f64, tau_on_ns: f64) -> f64 {
    tau_off_ns / tau_on_ns
}

/// Fraction of emission into the mode, `1 - (1 - gamma_c/gamma_0) / F_p`.
pub fn coupling_beta(purcell: f64, gamma_c_ratio: f64) -> f64 {
    1.0 - (1.0 - gamma_c_ratio) / purcell
}

/// `Q / Q_0`.
pub fn extraction_efficiency(q_post: f64, q_planar: f64) -> f64 {
    q_post / q_planar
}

pub fn expected_total_efficiency(beta: f64, eta_extract: f64) -> f64 {
    beta * eta_extract
}

/// A value with a 1σ uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    #[serde(default)]
    pub sigma: f64,
}

impl Measured {
    pub fn new(value: f64, sigma: f64) -> Self {
        Measured { value, sigma }
    }
    pub fn exact(value: f64) -> Self {
        Measured { value, sigma: 0.0 }
    }
    fn rel(&self) -> f64 {
        self.sigma / self.value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CavityInputs {
    pub tau_on_ns: Measured,
    pub tau_off_ns: Measured,
    #[serde(default)]
    pub gamma_c_ratio: f64,
    pub q_post: Measured,
    pub q_planar: Measured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityMetrics {
    pub q_post: f64,
    pub q_planar: f64,
    pub purcell: Measured,
    pub beta: Measured,
    pub eta_extract: Measured,
    pub eta_expected: Measured,
}

impl CavityInputs {
    pub fn validate(&self) -> Result<()> {
        check_positive("tau_on_ns", self.tau_on_ns.value)?;
        check_positive("tau_off_ns", self.tau_off_ns.value)?;
        check_positive("q_post", self.q_post.value)?;
        check_positive("q_planar", self.q_planar.value)?;
        check_range("gamma_c_ratio", self.gamma_c_ratio, 0.0, 1.0)?;
        for (name, m) in [
            ("tau_on_ns.sigma", self.tau_on_ns),
            ("tau_off_ns.sigma", self.tau_off_ns),
            ("q_post.sigma", self.q_post),
            ("q_planar.sigma", self.q_planar),
        ] {
            crate::error::check_non_negative(name, m.sigma)?;
        }
        Ok(())
    }

    /// Uncertainties are propagated by linearization, treating the four
    /// inputs as independent.
    pub fn metrics(&self) -> Result<CavityMetrics> {
        self.validate()?;
        let f = purcell_factor(self.tau_off_ns.value, self.tau_on_ns.value);
        let sigma_f = f * self.tau_off_ns.rel().hypot(self.tau_on_ns.rel());
        let beta = coupling_beta(f, self.gamma_c_ratio);
        let sigma_beta = (1.0 - self.gamma_c_ratio) * sigma_f / (f * f);
        let ext = extraction_efficiency(self.q_post.value, self.q_planar.value);
        let sigma_ext = ext * self.q_post.rel().hypot(self.q_planar.rel());
        let eta = expected_total_efficiency(beta, ext);
        let sigma_eta = (ext * sigma_beta).hypot(beta * sigma_ext);
        Ok(CavityMetrics {
            q_post: self.q_post.value,
            q_planar: self.q_planar.value,
            purcell: Measured::new(f, sigma_f),
            beta: Measured::new(beta, sigma_beta),
            eta_extract: Measured::new(ext, sigma_ext),
            eta_expected: Measured::new(eta, sigma_eta),
        })
    }
}

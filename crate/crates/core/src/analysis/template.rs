//! Shape of a single correlation peak.
//!
//! Two photons from one pulse each arrive with an exponential delay, so their
//! difference is a two-sided exponential. The detector jitter convolves that
//! with a Gaussian. Everything below is written in terms of
//!
//! ```text
//! h(t) = exp(s^2/2tau^2 - t/tau) * erfc((s/tau - t/s) / sqrt 2)
//! ```
//!
//! which gives the density `(h(t) + h(-t)) / 4tau` and the CDF
//! `Phi(t/s) + (h(-t) - h(t)) / 4`. `h` is evaluated through the scaled
//! complementary error function where the plain form would overflow.

use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_positive, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakTemplateParams {
    pub tau_decay_ns: f64,
    /// Sigma of the Gaussian instrument response of the time difference.
    pub sigma_irf_ns: f64,
    pub rep_period_ns: f64,
}

impl PeakTemplateParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("tau_decay_ns", self.tau_decay_ns)?;
        check_non_negative("sigma_irf_ns", self.sigma_irf_ns)?;
        check_positive("rep_period_ns", self.rep_period_ns)
    }
}

/// `exp(x^2) * erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 26.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        // Asymptotic series; the first omitted term is below 1e-19 here.
        let inv2x2 = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..8 {
            term *= -((2 * n - 1) as f64) * inv2x2;
            sum += term;
        }
        sum / (x * std::f64::consts::PI.sqrt())
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn h(t: f64, tau: f64, sigma: f64) -> f64 {
    let x = (sigma / tau - t / sigma) / std::f64::consts::SQRT_2;
    if x >= 0.0 {
        erfcx(x) * (-t * t / (2.0 * sigma * sigma)).exp()
    } else {
        (sigma * sigma / (2.0 * tau * tau) - t / tau).exp() * libm::erfc(x)
    }
}

/// Unit-area two-sided exponential convolved with the Gaussian IRF.
pub fn peak_template(t: f64, params: &PeakTemplateParams) -> f64 {
    let tau = params.tau_decay_ns;
    let sigma = params.sigma_irf_ns;
    if sigma == 0.0 {
        return (-t.abs() / tau).exp() / (2.0 * tau);
    }
    (h(t, tau, sigma) + h(-t, tau, sigma)) / (4.0 * tau)
}

/// Integral of the template from -inf to `t`.
pub fn template_cdf(t: f64, params: &PeakTemplateParams) -> f64 {
    let tau = params.tau_decay_ns;
    let sigma = params.sigma_irf_ns;
    if sigma == 0.0 {
        return if t < 0.0 {
            0.5 * (t / tau).exp()
        } else {
            1.0 - 0.5 * (-t / tau).exp()
        };
    }
    std_normal_cdf(t / sigma) + 0.25 * (h(-t, tau, sigma) - h(t, tau, sigma))
}

/// Integral of the template from `t` to +inf.
pub fn template_survival(t: f64, params: &PeakTemplateParams) -> f64 {
    template_cdf(-t, params)
}

/// Template mass in `[lo, hi]`, computed on the side that avoids cancellation.
pub fn template_mass(lo: f64, hi: f64, params: &PeakTemplateParams) -> f64 {
    if lo >= 0.0 {
        template_survival(lo, params) - template_survival(hi, params)
    } else if hi <= 0.0 {
        template_cdf(hi, params) - template_cdf(lo, params)
    } else {
        (0.5 - template_cdf(lo, params)) + (0.5 - template_survival(hi, params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(tau: f64, sigma: f64) -> PeakTemplateParams {
        PeakTemplateParams {
            tau_decay_ns: tau,
            sigma_irf_ns: sigma,
            rep_period_ns: 13.0,
        }
    }

    #[test]
    fn peak_value_without_irf() {
        assert!((peak_template(0.0, &p(4.4, 0.0)) - 0.113_636_36).abs() < 1e-8);
    }

    #[test]
    fn symmetric() {
        for &(tau, s) in &[(0.5, 0.142), (4.4, 0.2), (25.4, 0.5), (4.4, 0.0)] {
            for &t in &[0.1, 0.7, 3.0, 17.0, 60.0] {
                let a = peak_template(t, &p(tau, s));
                let b = peak_template(-t, &p(tau, s));
                assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300));
            }
        }
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn erfcx_reference_values() {
        let refs = [
            (0.5, 0.615_690_344_192_925_87),
            (3.0, 0.179_001_151_181_389_95),
            (10.0, 0.056_140_992_743_822_586),
            (25.9, 0.021_767_181_150_738_627),
            (26.0, 0.021_683_584_850_562_907),
            (40.0, 0.014_100_335_983_377_814),
            (1000.0, 0.000_564_189_301_453_387_65),
        ];
        for (x, v) in refs {
            assert!((erfcx(x) / v - 1.0).abs() < 1e-12, "{x}: {}", erfcx(x));
        }
        assert!((erfcx(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn no_overflow_far_from_peak() {
        for &t in &[-500.0, -50.0, 50.0, 500.0] {
            let v = peak_template(t, &p(0.5, 0.01));
            assert!(v.is_finite() && v >= 0.0);
        }
        let v = peak_template(0.0, &p(0.01, 3.0));
        assert!(v.is_finite() && v > 0.0);
    }

    #[test]
    fn cdf_is_consistent_with_survival() {
        let q = p(4.4, 0.2);
        for &t in &[-30.0, -1.0, 0.0, 0.3, 12.0] {
            assert!((template_cdf(t, &q) + template_survival(t, &q) - 1.0).abs() < 1e-14);
        }
        assert!((template_cdf(0.0, &q) - 0.5).abs() < 1e-15);
        assert!((template_mass(-1e3, 1e3, &q) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mass_matches_cdf_derivative() {
        let q = p(4.4, 0.2);
        let h = 1e-5;
        for &t in &[-7.0, -0.1, 0.05, 2.0, 9.0] {
            let fd = template_mass(t - h, t + h, &q) / (2.0 * h);
            assert!((fd - peak_template(t, &q)).abs() < 1e-8);
        }
    }
}

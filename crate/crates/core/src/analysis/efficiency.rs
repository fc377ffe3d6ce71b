//! From count rates and g2(0) to device efficiency, and the saturation fit.
//!
//! The source is taken to emit a mixture of perfectly regulated single
//! photons (probability `eta` per pulse) and a Poissonian background. For
//! that state `<n> sqrt(1 - g2) = eta` exactly, independent of the background
//! level, and any loss common to both parts leaves g2 unchanged.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LeastSquaresProblem, LmOptions};
use super::minimize::scan_log_then_golden;
use crate::error::{Error, Result};

/// `P(n >= 2) <= n^2 g2 / 2`.
pub fn multiphoton_bound(n_mean: f64, g2_zero: f64) -> f64 {
    0.5 * n_mean * n_mean * g2_zero
}

/// Photons per pulse leaving the device, from the detector count rate.
pub fn mean_photon_number(count_rate_hz: f64, rep_rate_hz: f64, detection_eff: f64) -> Result<f64> {
    if !(rep_rate_hz > 0.0) {
        return Err(Error::Domain(format!("repetition rate must be > 0, got {rep_rate_hz}")));
    }
    if !(detection_eff > 0.0 && detection_eff <= 1.0) {
        return Err(Error::Domain(format!(
            "collection and detection efficiency must be in (0, 1], got {detection_eff}"
        )));
    }
    Ok(count_rate_hz / (rep_rate_hz * detection_eff))
}

/// `eta = <n> sqrt(1 - g2)`.
pub fn single_photon_efficiency(n_mean: f64, g2_zero: f64) -> Result<f64> {
    if g2_zero > 1.0 {
        return Err(Error::ModelDomain(format!(
            "g2(0) = {g2_zero} exceeds 1: a mixture of regulated single photons and Poissonian \
             background cannot produce bunched light, so no efficiency can be assigned"
        )));
    }
    if g2_zero < 0.0 || n_mean < 0.0 {
        return Err(Error::Domain(format!("need n_mean >= 0 and g2 >= 0, got {n_mean}, {g2_zero}")));
    }
    Ok(n_mean * (1.0 - g2_zero).sqrt())
}

/// g2(0) of a single photon with probability `single` plus Poisson(`background`).
pub fn mixture_g2(single: f64, background: f64) -> f64 {
    let n = single + background;
    if n == 0.0 {
        return 0.0;
    }
    (2.0 * single * background + background * background) / (n * n)
}

/// Inverse of [`mixture_g2`] in the background mean.
pub fn mixture_background_for_g2(single: f64, g2_zero: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&g2_zero) {
        return Err(Error::Domain(format!("target g2 must be in [0, 1), got {g2_zero}")));
    }
    Ok(single * (1.0 / (1.0 - g2_zero).sqrt() - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub pump_power_uw: f64,
    pub n_mean: f64,
    pub g2_zero: f64,
    pub eta: f64,
    pub sigma_n_mean: f64,
    pub sigma_g2: f64,
    pub sigma_eta: f64,
}

impl EfficiencyPoint {
    /// Builds a point from measured `<n>` and g2, propagating errors to first order.
    pub fn from_measurement(pump_power_uw: f64, n_mean: f64, sigma_n: f64, g2_zero: f64, sigma_g2: f64) -> Result<Self> {
        let eta = single_photon_efficiency(n_mean, g2_zero.max(0.0))?;
        let root = (1.0 - g2_zero.max(0.0)).sqrt();
        let d_g2 = if root > 0.0 { n_mean / (2.0 * root) } else { f64::INFINITY };
        let sigma_eta = ((root * sigma_n).powi(2) + (d_g2 * sigma_g2).powi(2)).sqrt();
        Ok(EfficiencyPoint {
            pump_power_uw,
            n_mean,
            g2_zero,
            eta,
            sigma_n_mean: sigma_n,
            sigma_g2,
            sigma_eta,
        })
    }

    pub fn exact(pump_power_uw: f64, eta: f64) -> Self {
        EfficiencyPoint {
            pump_power_uw,
            n_mean: eta,
            g2_zero: 0.0,
            eta,
            sigma_n_mean: 0.0,
            sigma_g2: 0.0,
            sigma_eta: 0.0,
        }
    }
}

/// `eta_max (1 - exp(-P / P_sat))`.
pub fn saturation_model(pump_power: f64, eta_max: f64, p_sat: f64) -> f64 {
    -eta_max * (-pump_power / p_sat).exp_m1()
}

/// Gradient of [`saturation_model`] with respect to `(eta_max, p_sat)`.
pub fn saturation_gradient(pump_power: f64, eta_max: f64, p_sat: f64) -> [f64; 2] {
    let e = (-pump_power / p_sat).exp();
    [1.0 - e, -eta_max * pump_power * e / (p_sat * p_sat)]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationFit {
    pub eta_max: f64,
    pub p_sat_uw: f64,
    pub sigma_eta_max: f64,
    pub sigma_p_sat: f64,
    pub covariance: [[f64; 2]; 2],
    pub chi2: f64,
    pub dof: usize,
    /// False when the data do not constrain P_sat (e.g. every point saturated).
    pub p_sat_identifiable: bool,
    /// Whether point uncertainties were used as weights.
    pub weighted: bool,
}

struct SaturationProblem<'a> {
    points: &'a [EfficiencyPoint],
    weights: Vec<f64>,
}

impl LeastSquaresProblem for SaturationProblem<'_> {
    fn n_params(&self) -> usize {
        2
    }
    fn n_residuals(&self) -> usize {
        self.points.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for ((o, pt), w) in out.iter_mut().zip(self.points).zip(&self.weights) {
            *o = w.sqrt() * (saturation_model(pt.pump_power_uw, p[0], p[1]) - pt.eta);
        }
    }
    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        for (i, (pt, w)) in self.points.iter().zip(&self.weights).enumerate() {
            let g = saturation_gradient(pt.pump_power_uw, p[0], p[1]);
            out[(i, 0)] = w.sqrt() * g[0];
            out[(i, 1)] = w.sqrt() * g[1];
        }
    }
}

/// Least-squares fit of the saturation curve.
///
/// For any trial P_sat the best eta_max is linear and solved directly, so the
/// search is one-dimensional: a log scan brackets P_sat, golden section
/// narrows it and a damped Gauss–Newton step polishes both parameters.
pub fn fit_saturation(points: &[EfficiencyPoint]) -> Result<SaturationFit> {
    if points.len() < 3 {
        return Err(Error::Domain(format!("saturation fit needs >= 3 points, got {}", points.len())));
    }
    let mut powers: Vec<f64> = points.iter().map(|p| p.pump_power_uw).collect();
    powers.sort_by(f64::total_cmp);
    powers.dedup();
    if powers.len() < 3 {
        return Err(Error::Domain("saturation fit needs >= 3 distinct pump powers".into()));
    }
    if powers[0] < 0.0 || powers.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("pump powers must be finite and >= 0".into()));
    }
    let weighted = points.iter().all(|p| p.sigma_eta > 0.0 && p.sigma_eta.is_finite());
    let weights: Vec<f64> = if weighted {
        points.iter().map(|p| 1.0 / (p.sigma_eta * p.sigma_eta)).collect()
    } else {
        vec![1.0; points.len()]
    };

    let profile = |p_sat: f64| -> (f64, f64) {
        let (mut sbb, mut sby) = (0.0, 0.0);
        for (pt, w) in points.iter().zip(&weights) {
            let b = saturation_model(pt.pump_power_uw, 1.0, p_sat);
            sbb += w * b * b;
            sby += w * b * pt.eta;
        }
        let eta_max = if sbb > 0.0 { sby / sbb } else { 0.0 };
        let chi2 = points
            .iter()
            .zip(&weights)
            .map(|(pt, w)| w * (pt.eta - saturation_model(pt.pump_power_uw, eta_max, p_sat)).powi(2))
            .sum();
        (eta_max, chi2)
    };

    let p_positive: Vec<f64> = powers.iter().copied().filter(|&p| p > 0.0).collect();
    let (pmin, pmax) = (p_positive[0], *p_positive.last().unwrap_or(&p_positive[0]));
    let best = scan_log_then_golden(|ps| profile(ps).1, pmin * 1e-3, pmax * 1e3, 121);
    let dof = points.len() - 2;

    if best.at_boundary {
        let (eta_max, chi2) = profile(best.x);
        return Ok(SaturationFit {
            eta_max,
            p_sat_uw: best.x,
            sigma_eta_max: f64::NAN,
            sigma_p_sat: f64::INFINITY,
            covariance: [[f64::NAN; 2]; 2],
            chi2,
            dof,
            p_sat_identifiable: false,
            weighted,
        });
    }

    let start = [profile(best.x).0, best.x];
    let problem = SaturationProblem { points, weights };
    let report = levenberg_marquardt(&problem, &start, LmOptions::default()).map_err(|e| {
        Error::Fit(format!("saturation fit: {e}; scan optimum P_sat = {}, chi2 = {}", best.x, best.value))
    })?;
    let scale = if weighted { 1.0 } else { report.chi2 / dof as f64 };
    let c = &report.covariance * scale;
    let covariance = [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]];
    let sigma_p = covariance[1][1].max(0.0).sqrt();
    Ok(SaturationFit {
        eta_max: report.params[0],
        p_sat_uw: report.params[1],
        sigma_eta_max: covariance[0][0].max(0.0).sqrt(),
        sigma_p_sat: sigma_p,
        covariance,
        chi2: report.chi2,
        dof,
        p_sat_identifiable: sigma_p < report.params[1].abs(),
        weighted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_values() {
        assert_eq!(multiphoton_bound(0.7, 0.0), 0.0);
        assert_eq!(multiphoton_bound(1.0, 1.0), 0.5);
        assert!((multiphoton_bound(0.406, 0.14) - 0.011_538_52).abs() < 1e-10);
    }

    #[test]
    fn mean_photon_number_values() {
        assert!((mean_photon_number(7.6e7 * 0.01, 7.6e7, 0.01).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mean_photon_number(0.0, 7.6e7, 0.01).unwrap(), 0.0);
        assert!(mean_photon_number(1.0, 7.6e7, 0.0).is_err());
        assert!(mean_photon_number(1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn efficiency_values() {
        assert_eq!(single_photon_efficiency(0.38, 0.0).unwrap(), 0.38);
        assert_eq!(single_photon_efficiency(0.9, 1.0).unwrap(), 0.0);
        assert!((single_photon_efficiency(0.406, 0.14).unwrap() - 0.3765).abs() < 5e-5);
        let err = single_photon_efficiency(0.4, 1.2).unwrap_err();
        assert!(matches!(err, Error::ModelDomain(_)));
        assert!(err.to_string().contains("Poissonian"));
    }

    #[test]
    fn mixture_identity() {
        for &(p, mu) in &[(0.3, 0.0), (0.3, 0.05), (0.9, 0.4), (0.01, 0.2)] {
            let g2 = mixture_g2(p, mu);
            let n = p + mu;
            assert!((single_photon_efficiency(n, g2).unwrap() - p).abs() < 1e-14);
            if g2 < 1.0 && p > 0.0 {
                assert!((mixture_background_for_g2(p, g2).unwrap() - mu).abs() < 1e-12);
            }
        }
        assert_eq!(mixture_g2(0.0, 0.3), 1.0);
    }

    #[test]
    fn exact_saturation_points_are_recovered() {
        let pts: Vec<_> = [0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 12.0]
            .iter()
            .map(|&p| EfficiencyPoint::exact(p, saturation_model(p, 0.376, 3.0)))
            .collect();
        let fit = fit_saturation(&pts).unwrap();
        assert!((fit.eta_max / 0.376 - 1.0).abs() < 1e-6);
        assert!((fit.p_sat_uw / 3.0 - 1.0).abs() < 1e-6);
        assert!(fit.p_sat_identifiable);
    }

    #[test]
    fn flat_plateau_flags_unidentifiable_p_sat() {
        let pts: Vec<_> = [50.0, 60.0, 80.0, 100.0].iter().map(|&p| EfficiencyPoint::exact(p, 0.3)).collect();
        let fit = fit_saturation(&pts).unwrap();
        assert!((fit.eta_max - 0.3).abs() < 1e-9);
        assert!(!fit.p_sat_identifiable);
        assert!(fit.sigma_p_sat.is_infinite());
    }

    #[test]
    fn too_few_points() {
        let pts = vec![EfficiencyPoint::exact(1.0, 0.1), EfficiencyPoint::exact(1.0, 0.1), EfficiencyPoint::exact(2.0, 0.2)];
        assert!(fit_saturation(&pts).is_err());
        assert!(fit_saturation(&pts[..2]).is_err());
    }

    #[test]
    fn efficiency_point_error_propagation() {
        let p = EfficiencyPoint::from_measurement(10.0, 0.4, 0.004, 0.14, 0.01).unwrap();
        let expected = ((0.86f64.sqrt() * 0.004).powi(2) + (0.4 / (2.0 * 0.86f64.sqrt()) * 0.01).powi(2)).sqrt();
        assert!((p.sigma_eta - expected).abs() < 1e-15);
    }
}

//! Peak-area fit of pulsed correlation histograms.
//!
//! The histogram is modeled as a central peak of area `A0` plus a train of
//! side peaks at multiples of the repetition period that all share one area
//! `A_s`. Peak shape, lifetime, IRF and period are held fixed, so the model
//! is linear in the two areas and `g2(0) = A0 / A_s`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::minimize::scan_log_then_golden;
use super::template::{peak_template, template_mass, PeakTemplateParams};
use crate::error::{Error, Result};
use crate::histogram::CorrelationHistogram;

/// Fits need at least this many side peaks inside the window on each side.
pub const MIN_SIDE_PEAKS_IN_WINDOW: usize = 5;

/// Relative size, at the window edge, of the peaks left out of the model.
const TRUNCATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    /// Weighted least squares with weights `1 / max(counts, 1)`.
    #[default]
    WeightedLeastSquares,
    PoissonLikelihood,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PeakFitOptions {
    pub method: FitMethod,
    /// Side peaks per side in the model; derived from the window when `None`.
    pub side_peaks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakFit {
    pub area_central: f64,
    pub area_side: f64,
    pub g2_zero: f64,
    pub sigma_central: f64,
    pub sigma_side: f64,
    pub sigma_g2: f64,
    /// Covariance of (A0, A_s).
    pub covariance: [[f64; 2]; 2],
    pub chi2_per_dof: f64,
    pub dof: usize,
    pub method: FitMethod,
    pub side_peaks: usize,
    /// Central area before clamping at zero.
    pub unclamped_central: f64,
    pub clamped: bool,
}

/// Expected coincidence density of the full peak train.
pub fn correlation_model(t: f64, a0: f64, a_side: f64, params: &PeakTemplateParams, n_side_peaks: usize) -> f64 {
    let period = params.rep_period_ns;
    let side: f64 = (1..=n_side_peaks)
        .map(|k| {
            let shift = k as f64 * period;
            peak_template(t - shift, params) + peak_template(t + shift, params)
        })
        .sum();
    a0 * peak_template(t, params) + a_side * side
}

/// Side peaks per side needed to model delays up to `half_range`: every peak
/// whose center is in range, two more, and as many as it takes to push the
/// omitted tails below 1e-6 of the peak height.
pub fn required_side_peaks(params: &PeakTemplateParams, half_range: f64) -> usize {
    let period = params.rep_period_ns;
    let tau = params.tau_decay_ns;
    let in_range = (half_range / period).ceil() as usize + 2;
    let geometric = 1.0 - (-period / tau).exp();
    let decay_lengths = (1.0 / (TRUNCATION_TOLERANCE * geometric)).ln();
    let reach = half_range + tau * decay_lengths + 8.0 * params.sigma_irf_ns;
    let tails = (reach / period - 1.0).ceil().max(0.0) as usize;
    in_range.max(tails)
}

/// Bin-integrated central and summed-side-peak templates.
#[derive(Debug, Clone)]
pub struct PeakBasis {
    pub central: Vec<f64>,
    pub side: Vec<f64>,
    pub side_peaks: usize,
}

pub fn peak_basis(hist: &CorrelationHistogram, params: &PeakTemplateParams, side_peaks: Option<usize>) -> PeakBasis {
    let k_max = side_peaks.unwrap_or_else(|| required_side_peaks(params, hist.window_ns));
    let period = params.rep_period_ns;
    let mut central = Vec::with_capacity(hist.len());
    let mut side = Vec::with_capacity(hist.len());
    for i in 0..hist.len() {
        let lo = hist.bin_lower(i);
        let hi = lo + hist.bin_width_ns;
        central.push(template_mass(lo, hi, params));
        let s: f64 = (1..=k_max)
            .map(|k| {
                let shift = k as f64 * period;
                template_mass(lo - shift, hi - shift, params) + template_mass(lo + shift, hi + shift, params)
            })
            .sum();
        side.push(s);
    }
    PeakBasis {
        central,
        side,
        side_peaks: k_max,
    }
}

impl PeakBasis {
    pub fn model_counts(&self, a0: f64, a_side: f64) -> Vec<f64> {
        self.central
            .iter()
            .zip(&self.side)
            .map(|(c, s)| a0 * c + a_side * s)
            .collect()
    }
}

pub fn fit_peak_areas(hist: &CorrelationHistogram, params: &PeakTemplateParams) -> Result<PeakFit> {
    fit_peak_areas_with(hist, params, &PeakFitOptions::default())
}

pub fn fit_peak_areas_with(
    hist: &CorrelationHistogram,
    params: &PeakTemplateParams,
    options: &PeakFitOptions,
) -> Result<PeakFit> {
    params.validate()?;
    let covered = (hist.window_ns / params.rep_period_ns).floor() as usize;
    if covered < MIN_SIDE_PEAKS_IN_WINDOW {
        return Err(Error::Domain(format!(
            "window of ±{} ns covers {covered} side peaks per side, need {MIN_SIDE_PEAKS_IN_WINDOW}",
            hist.window_ns
        )));
    }
    if hist.total() == 0 {
        return Err(Error::Fit("histogram is empty".into()));
    }
    let basis = peak_basis(hist, params, options.side_peaks);
    let counts: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let wls = weighted_fit(&basis, &counts)?;
    match options.method {
        FitMethod::WeightedLeastSquares => Ok(wls),
        FitMethod::PoissonLikelihood => poisson_fit(&basis, &counts, &wls),
    }
}

fn solve_2x2(m: [[f64; 2]; 2], b: [f64; 2]) -> Result<([f64; 2], [[f64; 2]; 2])> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.abs() > 1e-12 * (m[0][0] * m[1][1]).abs()) || !det.is_finite() {
        return Err(Error::Fit("singular design: the central and side-peak templates are degenerate".into()));
    }
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let x = [inv[0][0] * b[0] + inv[0][1] * b[1], inv[1][0] * b[0] + inv[1][1] * b[1]];
    Ok((x, inv))
}

#[allow(clippy::too_many_arguments)]
fn assemble(basis: &PeakBasis, counts: &[f64], ratio: [f64; 2], cov: [[f64; 2]; 2], unclamped: f64, clamped: bool, method: FitMethod, chi2: f64) -> PeakFit {
    let [a0, a_s] = ratio;
    let g2 = a0 / a_s;
    let var_g2 = cov[0][0] / (a_s * a_s) + cov[1][1] * a0 * a0 / a_s.powi(4) - 2.0 * cov[0][1] * a0 / a_s.powi(3);
    let dof = counts.len().saturating_sub(2).max(1);
    PeakFit {
        area_central: a0,
        area_side: a_s,
        g2_zero: g2,
        sigma_central: cov[0][0].max(0.0).sqrt(),
        sigma_side: cov[1][1].max(0.0).sqrt(),
        sigma_g2: var_g2.max(0.0).sqrt(),
        covariance: cov,
        chi2_per_dof: chi2 / dof as f64,
        dof,
        method,
        side_peaks: basis.side_peaks,
        unclamped_central: unclamped,
        clamped,
    }
}

fn weighted_fit(basis: &PeakBasis, counts: &[f64]) -> Result<PeakFit> {
    let mut m = [[0.0; 2]; 2];
    let mut b = [0.0; 2];
    for ((&c, &s), &n) in basis.central.iter().zip(&basis.side).zip(counts) {
        let w = 1.0 / n.max(1.0);
        m[0][0] += w * c * c;
        m[0][1] += w * c * s;
        m[1][1] += w * s * s;
        b[0] += w * c * n;
        b[1] += w * s * n;
    }
    m[1][0] = m[0][1];
    let (x, cov) = solve_2x2(m, b)?;
    let unclamped = x[0];
    let (areas, clamped) = if x[0] < 0.0 { ([0.0, b[1] / m[1][1]], true) } else { (x, false) };
    if !(areas[1] > 0.0) {
        return Err(Error::Fit(format!("side-peak area {} is not positive", areas[1])));
    }
    let chi2 = chi2_weighted(basis, counts, areas);
    Ok(assemble(basis, counts, areas, cov, unclamped, clamped, FitMethod::WeightedLeastSquares, chi2))
}

fn chi2_weighted(basis: &PeakBasis, counts: &[f64], [a0, a_s]: [f64; 2]) -> f64 {
    basis
        .central
        .iter()
        .zip(&basis.side)
        .zip(counts)
        .map(|((c, s), n)| {
            let r = n - (a0 * c + a_s * s);
            r * r / n.max(1.0)
        })
        .sum()
}

fn poisson_log_likelihood(basis: &PeakBasis, counts: &[f64], [a0, a_s]: [f64; 2]) -> f64 {
    basis
        .central
        .iter()
        .zip(&basis.side)
        .zip(counts)
        .map(|((c, s), &n)| {
            let mu = (a0 * c + a_s * s).max(1e-300);
            if n > 0.0 {
                n * mu.ln() - mu
            } else {
                -mu
            }
        })
        .sum()
}

fn poisson_fit(basis: &PeakBasis, counts: &[f64], start: &PeakFit) -> Result<PeakFit> {
    let mut x = [start.area_central.max(1e-9 * start.area_side), start.area_side];
    let mut ll = poisson_log_likelihood(basis, counts, x);
    let mut info_inv = [[0.0; 2]; 2];
    for _ in 0..200 {
        let mut score = [0.0; 2];
        let mut info = [[0.0; 2]; 2];
        for ((&c, &s), &n) in basis.central.iter().zip(&basis.side).zip(counts) {
            let mu = (x[0] * c + x[1] * s).max(1e-300);
            let r = n / mu - 1.0;
            score[0] += r * c;
            score[1] += r * s;
            info[0][0] += c * c / mu;
            info[0][1] += c * s / mu;
            info[1][1] += s * s / mu;
        }
        info[1][0] = info[0][1];
        let (delta, inv) = solve_2x2(info, score)?;
        info_inv = inv;
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-12 {
            let trial = [(x[0] + step * delta[0]).max(0.0), x[1] + step * delta[1]];
            let trial_ll = poisson_log_likelihood(basis, counts, trial);
            if trial[1] > 0.0 && trial_ll >= ll {
                let moved = (trial[0] - x[0]).abs() + (trial[1] - x[1]).abs();
                x = trial;
                let gain = trial_ll - ll;
                ll = trial_ll;
                accepted = true;
                if moved <= 1e-13 * (x[0] + x[1]) || gain <= 1e-15 * ll.abs() {
                    step = 0.0;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || step == 0.0 {
            break;
        }
    }
    let pearson: f64 = basis
        .model_counts(x[0], x[1])
        .iter()
        .zip(counts)
        .map(|(mu, n)| (n - mu).powi(2) / mu.max(1e-300))
        .sum();
    Ok(assemble(
        basis,
        counts,
        x,
        info_inv,
        x[0],
        x[0] == 0.0,
        FitMethod::PoissonLikelihood,
        pearson,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakWidthFit {
    pub tau_decay_ns: f64,
    pub sigma_tau_ns: f64,
    pub areas: PeakFit,
    /// The optimum sat on the edge of the search range.
    pub at_boundary: bool,
}

/// Fits the decay constant of the peaks together with the two areas, with
/// the IRF and period fixed. The areas are profiled out at each trial lifetime.
pub fn fit_peak_width(hist: &CorrelationHistogram, initial: &PeakTemplateParams) -> Result<PeakWidthFit> {
    initial.validate()?;
    let with_tau = |tau: f64| PeakTemplateParams {
        tau_decay_ns: tau,
        ..*initial
    };
    let chi2_at = |tau: f64| -> f64 {
        fit_peak_areas(hist, &with_tau(tau))
            .map(|f| f.chi2_per_dof * f.dof as f64)
            .unwrap_or(f64::INFINITY)
    };
    let tau0 = initial.tau_decay_ns;
    let best = scan_log_then_golden(chi2_at, tau0 / 20.0, tau0 * 20.0, 61);
    let tau = best.x;
    let h = 1e-3 * tau;
    let curvature = (chi2_at(tau + h) - 2.0 * best.value + chi2_at(tau - h)) / (h * h);
    let sigma = if curvature > 0.0 { (2.0 / curvature).sqrt() } else { f64::INFINITY };
    let areas = fit_peak_areas(hist, &with_tau(tau))?;
    Ok(PeakWidthFit {
        tau_decay_ns: tau,
        sigma_tau_ns: sigma,
        areas,
        at_boundary: best.at_boundary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakArea {
    pub index: i64,
    pub area: f64,
    pub sigma: f64,
}

/// Diagnostic fit with one free area per peak inside the window. Peaks
/// beyond the window share a single extra area. Returns peaks in index order.
pub fn fit_individual_peak_areas(hist: &CorrelationHistogram, params: &PeakTemplateParams) -> Result<Vec<PeakArea>> {
    params.validate()?;
    if hist.total() == 0 {
        return Err(Error::Fit("histogram is empty".into()));
    }
    let period = params.rep_period_ns;
    let inner = (hist.window_ns / period).floor() as i64;
    let k_max = required_side_peaks(params, hist.window_ns) as i64;
    let n_free = (2 * inner + 1) as usize;
    let n_cols = n_free + 1;
    let rows = hist.len();
    let mut x = DMatrix::<f64>::zeros(rows, n_cols);
    for i in 0..rows {
        let lo = hist.bin_lower(i);
        let hi = lo + hist.bin_width_ns;
        for k in -k_max..=k_max {
            let shift = k as f64 * period;
            let mass = template_mass(lo - shift, hi - shift, params);
            let col = if k.abs() <= inner { (k + inner) as usize } else { n_free };
            x[(i, col)] += mass;
        }
    }
    let w = DVector::from_iterator(rows, hist.counts.iter().map(|&c| 1.0 / (c as f64).max(1.0)));
    let y = DVector::from_iterator(rows, hist.counts.iter().map(|&c| c as f64));
    let mut xtwx = DMatrix::<f64>::zeros(n_cols, n_cols);
    let mut xtwy = DVector::<f64>::zeros(n_cols);
    for i in 0..rows {
        for a in 0..n_cols {
            let xa = x[(i, a)] * w[i];
            if xa == 0.0 {
                continue;
            }
            xtwy[a] += xa * y[i];
            for b in 0..n_cols {
                xtwx[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    let inv = xtwx
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular design in per-peak fit".into()))?;
    let sol: DVector<f64> = &inv * xtwy;
    Ok((0..n_free)
        .map(|c| PeakArea {
            index: c as i64 - inner,
            area: sol[c],
            sigma: inv[(c, c)].max(0.0).sqrt(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::histogram::HistogramMode;

    fn params() -> PeakTemplateParams {
        PeakTemplateParams {
            tau_decay_ns: 4.4,
            sigma_irf_ns: 0.2,
            rep_period_ns: 13.0,
        }
    }

    fn empty_hist() -> CorrelationHistogram {
        CorrelationHistogram::new(0.25, 104.0, HistogramMode::AllPairs).unwrap()
    }

    #[test]
    fn zero_central_area_leaves_neighbour_tails() {
        let p = PeakTemplateParams {
            tau_decay_ns: 0.5,
            sigma_irf_ns: 0.0,
            rep_period_ns: 13.0,
        };
        let v = correlation_model(0.0, 0.0, 1.0, &p, 20);
        assert!((v - 2.0 * peak_template(13.0, &p)).abs() < 1e-20);
    }

    #[test]
    fn equal_areas_make_the_model_periodic() {
        let p = params();
        let k = required_side_peaks(&p, 60.0);
        for &t in &[0.0, 1.3, 5.0, 6.5] {
            let a = correlation_model(t, 3.0, 3.0, &p, k);
            let b = correlation_model(t + 13.0, 3.0, 3.0, &p, k);
            assert!((a - b).abs() < 1e-6 * a);
        }
    }

    #[test]
    fn required_peaks_cover_window_plus_two() {
        let p = PeakTemplateParams {
            tau_decay_ns: 0.3,
            sigma_irf_ns: 0.0,
            rep_period_ns: 13.0,
        };
        assert_eq!(required_side_peaks(&p, 104.0), 10);
        // long lifetimes reach further
        let long = PeakTemplateParams { tau_decay_ns: 25.4, ..p };
        assert!(required_side_peaks(&long, 104.0) > 30);
    }

    #[test]
    fn empty_histogram_is_a_fit_error() {
        assert!(matches!(fit_peak_areas(&empty_hist(), &params()), Err(Error::Fit(_))));
    }

    #[test]
    fn narrow_window_is_rejected() {
        let h = CorrelationHistogram::new(0.25, 40.0, HistogramMode::AllPairs).unwrap();
        assert!(matches!(fit_peak_areas(&h, &params()), Err(Error::Domain(_))));
    }

    #[test]
    fn negative_central_area_is_clamped_and_flagged() {
        let mut h = empty_hist();
        let basis = peak_basis(&h, &params(), None);
        // side peaks only, with the central bins explicitly emptied
        for (i, m) in basis.model_counts(0.0, 5000.0).iter().enumerate() {
            let c = h.bin_center(i).abs();
            h.counts[i] = if c < 3.0 { 0 } else { m.round() as u64 };
        }
        let fit = fit_peak_areas(&h, &params()).unwrap();
        assert!(fit.clamped);
        assert!(fit.unclamped_central < 0.0);
        assert_eq!(fit.area_central, 0.0);
        assert_eq!(fit.g2_zero, 0.0);
    }
}

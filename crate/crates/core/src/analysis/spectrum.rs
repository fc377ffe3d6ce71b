//! Lorentzian line fit for the cavity quality factor.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LeastSquaresProblem, LmOptions};
use crate::error::{Error, Result};

pub const MIN_SPECTRUM_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSample {
    pub wavelength_nm: f64,
    pub intensity: f64,
}

/// Parameters of `amplitude * (G/2)^2 / ((x - x0)^2 + (G/2)^2) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianParams {
    pub amplitude: f64,
    pub center_nm: f64,
    pub fwhm_nm: f64,
    pub offset: f64,
}

impl LorentzianParams {
    fn to_vec(self) -> [f64; 4] {
        [self.amplitude, self.center_nm, self.fwhm_nm, self.offset]
    }
    fn from_slice(p: &[f64]) -> Self {
        LorentzianParams {
            amplitude: p[0],
            center_nm: p[1],
            fwhm_nm: p[2],
            offset: p[3],
        }
    }
}

pub fn lorentzian(x: f64, p: &LorentzianParams) -> f64 {
    let hw2 = 0.25 * p.fwhm_nm * p.fwhm_nm;
    let d = x - p.center_nm;
    p.amplitude * hw2 / (d * d + hw2) + p.offset
}

/// Gradient with respect to `(amplitude, center, fwhm, offset)`.
pub fn lorentzian_gradient(x: f64, p: &LorentzianParams) -> [f64; 4] {
    let hw2 = 0.25 * p.fwhm_nm * p.fwhm_nm;
    let d = x - p.center_nm;
    let den = d * d + hw2;
    let shape = hw2 / den;
    [
        shape,
        p.amplitude * hw2 * 2.0 * d / (den * den),
        p.amplitude * 0.5 * p.fwhm_nm * d * d / (den * den),
        1.0,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LorentzianFit {
    pub params: LorentzianParams,
    pub sigma_amplitude: f64,
    pub sigma_center_nm: f64,
    pub sigma_fwhm_nm: f64,
    pub sigma_offset: f64,
    pub q: f64,
    pub sigma_q: f64,
    pub chi2_per_dof: f64,
    pub dof: usize,
}

struct Problem<'a> {
    samples: &'a [SpectrumSample],
}

impl LeastSquaresProblem for Problem<'_> {
    fn n_params(&self) -> usize {
        4
    }
    fn n_residuals(&self) -> usize {
        self.samples.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let lp = LorentzianParams::from_slice(p);
        for (o, s) in out.iter_mut().zip(self.samples) {
            *o = lorentzian(s.wavelength_nm, &lp) - s.intensity;
        }
    }
    fn jacobian(&self, p: &[f64], out: &mut DMatrix<f64>) {
        let lp = LorentzianParams::from_slice(p);
        for (i, s) in self.samples.iter().enumerate() {
            let g = lorentzian_gradient(s.wavelength_nm, &lp);
            for (j, v) in g.iter().enumerate() {
                out[(i, j)] = *v;
            }
        }
    }
}

pub fn validate_spectrum(samples: &[SpectrumSample]) -> Result<()> {
    if samples.len() < MIN_SPECTRUM_SAMPLES {
        return Err(Error::Fit(format!(
            "Lorentzian fit needs >= {MIN_SPECTRUM_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    for (i, s) in samples.iter().enumerate() {
        if !(s.wavelength_nm.is_finite() && s.intensity.is_finite()) {
            return Err(Error::invalid("spectrum", format!("sample {i} is not finite")));
        }
        if s.intensity < 0.0 {
            return Err(Error::invalid("spectrum", format!("sample {i} has negative intensity")));
        }
        if i > 0 && s.wavelength_nm <= samples[i - 1].wavelength_nm {
            return Err(Error::invalid("spectrum", format!("wavelengths not strictly increasing at sample {i}")));
        }
    }
    Ok(())
}

/// Moment-free starting point: baseline from the minimum, peak from the
/// maximum, width from the half-maximum crossings.
fn initial_guess(samples: &[SpectrumSample]) -> Result<LorentzianParams> {
    let (mut imax, mut min) = (0, f64::INFINITY);
    for (i, s) in samples.iter().enumerate() {
        if s.intensity > samples[imax].intensity {
            imax = i;
        }
        min = min.min(s.intensity);
    }
    let max = samples[imax].intensity;
    if max - min <= 1e-12 * max.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Fit("flat spectrum: no line to fit".into()));
    }
    let half = min + 0.5 * (max - min);
    let left = samples[..=imax].iter().rposition(|s| s.intensity < half).unwrap_or(0);
    let right = samples[imax..]
        .iter()
        .position(|s| s.intensity < half)
        .map_or(samples.len() - 1, |k| imax + k);
    let span = samples[samples.len() - 1].wavelength_nm - samples[0].wavelength_nm;
    let mut width = samples[right].wavelength_nm - samples[left].wavelength_nm;
    if !(width > 0.0) {
        width = span / samples.len() as f64;
    }
    Ok(LorentzianParams {
        amplitude: max - min,
        center_nm: samples[imax].wavelength_nm,
        fwhm_nm: width.min(span),
        offset: min,
    })
}

/// Unweighted least-squares Lorentzian; `Q = center / fwhm`.
pub fn fit_lorentzian(samples: &[SpectrumSample]) -> Result<LorentzianFit> {
    validate_spectrum(samples)?;
    let init = initial_guess(samples)?;
    let report = levenberg_marquardt(&Problem { samples }, &init.to_vec(), LmOptions::default())
        .map_err(|e| Error::Fit(format!("Lorentzian fit: {e}")))?;
    let mut params = LorentzianParams::from_slice(&report.params);
    params.fwhm_nm = params.fwhm_nm.abs();
    let span = samples[samples.len() - 1].wavelength_nm - samples[0].wavelength_nm;
    if params.fwhm_nm > 10.0 * span || params.amplitude <= 0.0 {
        return Err(Error::Fit(format!(
            "Lorentzian fit found no resolvable line (FWHM {:.4e} nm over a {span:.4} nm span)",
            params.fwhm_nm
        )));
    }
    let dof = samples.len() - 4;
    let chi2_per_dof = report.chi2 / dof.max(1) as f64;
    let c = &report.covariance * chi2_per_dof;
    let sd = |i: usize| c[(i, i)].max(0.0).sqrt();
    let q = params.center_nm / params.fwhm_nm;
    let (l0, g) = (params.center_nm, params.fwhm_nm);
    let var_q = q * q * (c[(1, 1)] / (l0 * l0) + c[(2, 2)] / (g * g) - 2.0 * c[(1, 2)] / (l0 * g));
    Ok(LorentzianFit {
        params,
        sigma_amplitude: sd(0),
        sigma_center_nm: sd(1),
        sigma_fwhm_nm: sd(2),
        sigma_offset: sd(3),
        q,
        sigma_q: var_q.max(0.0).sqrt(),
        chi2_per_dof,
        dof,
    })
}

/// Samples a Lorentzian with quality factor `q` at `n` points over
/// `center ± half_span_fwhm` line widths.
pub fn synthetic_spectrum(center_nm: f64, q: f64, amplitude: f64, offset: f64, n: usize, half_span_fwhm: f64) -> Vec<SpectrumSample> {
    let p = LorentzianParams {
        amplitude,
        center_nm,
        fwhm_nm: center_nm / q,
        offset,
    };
    let half = half_span_fwhm * p.fwhm_nm;
    (0..n)
        .map(|i| {
            let x = center_nm - half + 2.0 * half * i as f64 / (n - 1) as f64;
            SpectrumSample {
                wavelength_nm: x,
                intensity: lorentzian(x, &p),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_lines_are_recovered() {
        for &q in &[628.0, 1718.0] {
            let s = synthetic_spectrum(855.0, q, 100.0, 2.0, 201, 8.0);
            let fit = fit_lorentzian(&s).unwrap();
            assert!((fit.q / q - 1.0).abs() < 1e-6, "{}", fit.q);
            assert!((fit.params.center_nm - 855.0).abs() < 1e-6);
        }
        let fit = fit_lorentzian(&synthetic_spectrum(855.0, 628.0, 1.0, 0.0, 101, 6.0)).unwrap();
        assert!((fit.params.fwhm_nm - 1.361_464_97).abs() < 1e-6);
    }

    #[test]
    fn flat_spectrum_is_an_error() {
        let s: Vec<_> = (0..20)
            .map(|i| SpectrumSample {
                wavelength_nm: 850.0 + i as f64,
                intensity: 3.0,
            })
            .collect();
        assert!(matches!(fit_lorentzian(&s), Err(Error::Fit(_))));
    }

    #[test]
    fn rejects_unsorted_and_short_input() {
        let mut s = synthetic_spectrum(855.0, 628.0, 1.0, 0.0, 20, 5.0);
        s.swap(3, 4);
        assert!(fit_lorentzian(&s).is_err());
        assert!(fit_lorentzian(&synthetic_spectrum(855.0, 628.0, 1.0, 0.0, 4, 5.0)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = LorentzianParams {
            amplitude: 3.0,
            center_nm: 855.0,
            fwhm_nm: 1.3,
            offset: 0.2,
        };
        for &x in &[853.1, 854.6, 855.0, 856.2] {
            let g = lorentzian_gradient(x, &p);
            let base = p.to_vec();
            for j in 0..4 {
                let h = 1e-6 * if j == 1 { p.fwhm_nm } else { base[j].abs() };
                let mut a = base;
                let mut b = base;
                a[j] += h;
                b[j] -= h;
                let fd = (lorentzian(x, &LorentzianParams::from_slice(&a)) - lorentzian(x, &LorentzianParams::from_slice(&b))) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1e-6), "{j} {fd} {}", g[j]);
            }
        }
    }
}

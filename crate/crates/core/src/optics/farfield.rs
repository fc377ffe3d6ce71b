//! Far field of a sampled scalar near field by zero-padded 2-D FFT.
//!
//! The continuous angular spectrum `E^(fx, fy) = ∫∫ E e^{-2πi(fx x + fy y)}`
//! is approximated by `dx dy · DFT`. Directions are expressed as direction
//! cosines `u = λ fx`, `v = λ fy`; the reported intensity is power per unit
//! `du dv`, i.e. `|E^|² / λ²`, so that its sum times `du dv` is the radiated
//! power. Samples with `u² + v² > 1` are evanescent and are flagged rather
//! than reported.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{check_positive, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub nx: usize,
    pub ny: usize,
    pub dx_um: f64,
    pub dy_um: f64,
    /// Row-major: sample `(ix, iy)` is at `iy * nx + ix`.
    pub amplitudes: Vec<Complex64>,
}

impl FieldGrid {
    pub fn new(nx: usize, ny: usize, dx_um: f64, dy_um: f64, amplitudes: Vec<Complex64>) -> Result<Self> {
        let g = FieldGrid {
            nx,
            ny,
            dx_um,
            dy_um,
            amplitudes,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::invalid("grid", format!("need nx, ny >= 2, got {} x {}", self.nx, self.ny)));
        }
        check_positive("dx_um", self.dx_um)?;
        check_positive("dy_um", self.dy_um)?;
        if self.amplitudes.len() != self.nx * self.ny {
            return Err(Error::invalid(
                "amplitudes",
                format!("expected {} samples, got {}", self.nx * self.ny, self.amplitudes.len()),
            ));
        }
        let p = self.power();
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::invalid("amplitudes", format!("total power must be finite and > 0, got {p}")));
        }
        Ok(())
    }

    /// Sample position with the grid centred on the origin.
    pub fn x(&self, ix: usize) -> f64 {
        (ix as f64 - 0.5 * (self.nx - 1) as f64) * self.dx_um
    }

    pub fn y(&self, iy: usize) -> f64 {
        (iy as f64 - 0.5 * (self.ny - 1) as f64) * self.dy_um
    }

    /// Samples `f(x, y)` on a centred grid.
    pub fn from_fn(nx: usize, ny: usize, dx_um: f64, dy_um: f64, f: impl Fn(f64, f64) -> Complex64) -> Result<Self> {
        let mut amplitudes = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            let y = (iy as f64 - 0.5 * (ny as f64 - 1.0)) * dy_um;
            for ix in 0..nx {
                let x = (ix as f64 - 0.5 * (nx as f64 - 1.0)) * dx_um;
                amplitudes.push(f(x, y));
            }
        }
        FieldGrid::new(nx, ny, dx_um, dy_um, amplitudes)
    }

    /// `Σ |E|² dx dy`.
    pub fn power(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.dx_um * self.dy_um
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct FarFieldOptions {
    /// Each dimension is zero-padded to `padding ×` its length (then rounded
    /// up to a power of two).
    pub padding: usize,
}

impl Default for FarFieldOptions {
    fn default() -> Self {
        FarFieldOptions { padding: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldPattern {
    pub wavelength_um: f64,
    /// Padded transform size.
    pub nu: usize,
    pub nv: usize,
    /// Direction-cosine spacing.
    pub du: f64,
    pub dv: f64,
    /// Centred (fft-shifted) angular spectrum `E^`, row-major over `(iu, iv)`
    /// as `iv * nu + iu`.
    pub spectrum: Vec<Complex64>,
    pub near_field_power: f64,
    /// `Σ |E^|² dfx dfy` over all samples.
    pub total_spectral_power: f64,
    /// The same sum restricted to `u² + v² <= 1`.
    pub propagating_power: f64,
}

impl FarFieldPattern {
    pub fn u(&self, iu: usize) -> f64 {
        (iu as f64 - (self.nu / 2) as f64) * self.du
    }

    pub fn v(&self, iv: usize) -> f64 {
        (iv as f64 - (self.nv / 2) as f64) * self.dv
    }

    pub fn is_propagating(&self, iu: usize, iv: usize) -> bool {
        let (u, v) = (self.u(iu), self.v(iv));
        u * u + v * v <= 1.0
    }

    /// Power per unit `du dv`; zero for evanescent samples.
    pub fn intensity(&self, iu: usize, iv: usize) -> f64 {
        if !self.is_propagating(iu, iv) {
            return 0.0;
        }
        self.spectrum[iv * self.nu + iu].norm_sqr() / (self.wavelength_um * self.wavelength_um)
    }

    /// `(u, v, intensity)` for every propagating sample, row by row.
    pub fn propagating_samples(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.nv).flat_map(move |iv| {
            (0..self.nu)
                .filter(move |&iu| self.is_propagating(iu, iv))
                .map(move |iu| (self.u(iu), self.v(iv), self.intensity(iu, iv)))
        })
    }

    /// Intensity along the `v = 0` row.
    pub fn u_cut(&self) -> Vec<(f64, f64)> {
        let iv = self.nv / 2;
        (0..self.nu).map(|iu| (self.u(iu), self.intensity(iu, iv))).collect()
    }

    /// Direction cosine on the `+u` axis where the intensity first falls to
    /// `1/e²` of its on-axis value, interpolated in log intensity.
    pub fn half_width_1e2_u(&self) -> Option<f64> {
        let cut = self.u_cut();
        let c = self.nu / 2;
        let peak = cut[c].1;
        if !(peak > 0.0) {
            return None;
        }
        let level = peak * (-2.0f64).exp();
        for i in c + 1..cut.len() {
            let (u1, i1) = cut[i];
            if i1 <= level {
                let (u0, i0) = cut[i - 1];
                if i1 <= 0.0 {
                    return Some(u0 + (u1 - u0) * (i0 - level) / (i0 - i1));
                }
                let (l0, l1, ll) = (i0.ln(), i1.ln(), level.ln());
                return Some(u0 + (u1 - u0) * (l0 - ll) / (l0 - l1));
            }
        }
        None
    }

    /// First local minimum of the `v = 0` intensity on the `+u` axis, refined by
    /// a parabola through the three samples around it.
    pub fn first_minimum_u(&self) -> Option<f64> {
        let cut = self.u_cut();
        let c = self.nu / 2;
        for i in c + 1..cut.len() - 1 {
            let (a, b, d) = (cut[i - 1].1, cut[i].1, cut[i + 1].1);
            if b <= a && b < d {
                let denom = a - 2.0 * b + d;
                let shift = if denom > 0.0 { 0.5 * (a - d) / denom } else { 0.0 };
                return Some(cut[i].0 + shift * self.du);
            }
        }
        None
    }
}

fn fft_rows(data: &mut [Complex64], row_len: usize, planner: &mut FftPlanner<f64>) {
    let fft = planner.plan_fft_forward(row_len);
    fft.process(data);
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Far-field pattern of `grid` at vacuum wavelength `wavelength_um`.
pub fn far_field_transform(grid: &FieldGrid, wavelength_um: f64, options: FarFieldOptions) -> Result<FarFieldPattern> {
    grid.validate()?;
    check_positive("wavelength_um", wavelength_um)?;
    if grid.dx_um >= 0.5 * wavelength_um || grid.dy_um >= 0.5 * wavelength_um {
        return Err(Error::Domain(format!(
            "grid undersampled: dx = {} µm, dy = {} µm must both be below λ/2 = {} µm",
            grid.dx_um,
            grid.dy_um,
            0.5 * wavelength_um
        )));
    }
    if options.padding == 0 {
        return Err(Error::invalid("padding", "must be >= 1"));
    }
    let nu = (grid.nx * options.padding).next_power_of_two();
    let nv = (grid.ny * options.padding).next_power_of_two();

    // Place the samples so that the grid centre lands on index 0 modulo the
    // padded length; this keeps the spectrum phase referenced to the centre.
    let mut data = vec![Complex64::new(0.0, 0.0); nu * nv];
    let (hx, hy) = (grid.nx / 2, grid.ny / 2);
    for iy in 0..grid.ny {
        let ry = (iy + nv - hy) % nv;
        for ix in 0..grid.nx {
            let rx = (ix + nu - hx) % nu;
            data[ry * nu + rx] = grid.amplitudes[iy * grid.nx + ix];
        }
    }

    let mut planner = FftPlanner::new();
    fft_rows(&mut data, nu, &mut planner);
    let mut t = transpose(&data, nv, nu);
    fft_rows(&mut t, nv, &mut planner);
    let data = transpose(&t, nu, nv);

    let scale = grid.dx_um * grid.dy_um;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); nu * nv];
    for kv in 0..nv {
        let iv = (kv + nv / 2) % nv;
        for ku in 0..nu {
            let iu = (ku + nu / 2) % nu;
            spectrum[iv * nu + iu] = data[kv * nu + ku] * scale;
        }
    }

    let dfx = 1.0 / (nu as f64 * grid.dx_um);
    let dfy = 1.0 / (nv as f64 * grid.dy_um);
    let mut pattern = FarFieldPattern {
        wavelength_um,
        nu,
        nv,
        du: wavelength_um * dfx,
        dv: wavelength_um * dfy,
        spectrum,
        near_field_power: grid.power(),
        total_spectral_power: 0.0,
        propagating_power: 0.0,
    };
    let (mut total, mut propagating) = (0.0, 0.0);
    for iv in 0..nv {
        for iu in 0..nu {
            let p = pattern.spectrum[iv * nu + iu].norm_sqr();
            total += p;
            if pattern.is_propagating(iu, iv) {
                propagating += p;
            }
        }
    }
    pattern.total_spectral_power = total * dfx * dfy;
    pattern.propagating_power = propagating * dfx * dfy;
    Ok(pattern)
}

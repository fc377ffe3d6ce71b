//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls the closed forms under test; each oracle is obtained
//! by a different route (brute-force counting, direct quadrature, naive
//! summation, finite differences).

#![allow(dead_code)]

use std::collections::HashMap;

use sps_core::detection::{channel_transmission, ChannelEfficiencies};
use sps_core::source::EmissionEvent;

/// g2(0) as the transmission-weighted pair count per pulse:
/// `sum_pulses sum_{a != b} t_a t_b / (N <n>^2)`, where an emitted photon is
/// detected with probability `t`. This is the expectation the histogram fit
/// estimates, computed on the emission stream itself.
pub fn brute_force_g2(events: &[EmissionEvent], n_pulses: u64, eff: &ChannelEfficiencies) -> f64 {
    let mut per_pulse: HashMap<u64, (f64, f64)> = HashMap::new();
    for e in events {
        let t = channel_transmission(eff, e.polarization);
        let entry = per_pulse.entry(e.pulse_index).or_insert((0.0, 0.0));
        entry.0 += t;
        entry.1 += t * t;
    }
    let (mut pairs, mut singles) = (0.0, 0.0);
    for (s, s2) in per_pulse.values() {
        pairs += s * s - s2;
        singles += s;
    }
    let mean = singles / n_pulses as f64;
    pairs / (n_pulses as f64 * mean * mean)
}

/// Two-sided exponential convolved with a Gaussian by composite Simpson
/// quadrature, split at the kink of the exponential.
pub fn numerical_convolution(t: f64, tau: f64, sigma: f64) -> f64 {
    let expo = |s: f64| (-s.abs() / tau).exp() / (2.0 * tau);
    if sigma == 0.0 {
        return expo(t);
    }
    let gauss = |u: f64| (-0.5 * (u / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let f = |s: f64| expo(s) * gauss(t - s);
    let lo = t - 14.0 * sigma;
    let hi = t + 14.0 * sigma;
    let mut total = 0.0;
    let mut pieces = vec![];
    if lo < 0.0 && hi > 0.0 {
        pieces.push((lo, 0.0));
        pieces.push((0.0, hi));
    } else {
        pieces.push((lo, hi));
    }
    for (a, b) in pieces {
        total += simpson(&f, a, b, 20_000);
    }
    total
}

pub fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + h * i as f64;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}

/// Correlation model by explicit summation over peaks, each evaluated from
/// the numerical convolution.
pub fn naive_correlation_model(t: f64, a0: f64, a_side: f64, tau: f64, sigma: f64, period: f64, k_max: i64) -> f64 {
    let mut v = a0 * numerical_convolution(t, tau, sigma);
    for k in 1..=k_max {
        v += a_side * numerical_convolution(t - k as f64 * period, tau, sigma);
        v += a_side * numerical_convolution(t + k as f64 * period, tau, sigma);
    }
    v
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Mean and sample standard deviation.
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

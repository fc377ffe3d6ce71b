//! Radiative lifetime from a histogram of emission-time offsets.
//!
//! The fit is a binned maximum-likelihood estimate of an exponential
//! restricted to the tail `[start, end)` of the histogram. With uniform bins of
//! width `w` the log-likelihood in the rate `l = 1/tau` reduces to
//!
//! ```text
//! LL(l) = -l S + N ln(1 - e^{-l w}) - N ln(1 - e^{-l L})
//! ```
//!
//! where `S = sum n_j u_j`, `u_j` is the offset of bin `j` from the tail
//! start and `L` is the tail length. It is strictly concave, so the stationary
//! point is found by safeguarded Newton iteration.

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};

pub const MIN_LIFETIME_COUNTS: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalHistogram {
    pub start_ns: f64,
    pub bin_width_ns: f64,
    pub counts: Vec<f64>,
}

impl ArrivalHistogram {
    pub fn new(start_ns: f64, bin_width_ns: f64, counts: Vec<f64>) -> Result<Self> {
        check_positive("bin_width_ns", bin_width_ns)?;
        if !start_ns.is_finite() {
            return Err(Error::invalid("start_ns", "must be finite"));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::invalid("counts", "must be finite and >= 0"));
        }
        Ok(ArrivalHistogram {
            start_ns,
            bin_width_ns,
            counts,
        })
    }

    /// Bins samples starting at the earliest one, so a uniform shift of all
    /// samples yields the same counts.
    pub fn from_samples(samples: &[f64], bin_width_ns: f64) -> Result<Self> {
        check_positive("bin_width_ns", bin_width_ns)?;
        if samples.is_empty() {
            return Err(Error::Fit("no samples".into()));
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &s in samples {
            if !s.is_finite() {
                return Err(Error::invalid("samples", "must be finite"));
            }
            lo = lo.min(s);
            hi = hi.max(s);
        }
        let n_bins = (((hi - lo) / bin_width_ns).floor() as usize + 1).max(1);
        let mut counts = vec![0.0; n_bins];
        for &s in samples {
            let i = (((s - lo) / bin_width_ns) as usize).min(n_bins - 1);
            counts[i] += 1.0;
        }
        Ok(ArrivalHistogram {
            start_ns: lo,
            bin_width_ns,
            counts,
        })
    }

    pub fn bin_lower(&self, i: usize) -> f64 {
        self.start_ns + i as f64 * self.bin_width_ns
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Index of the fullest bin (the first one on ties).
    pub fn peak_bin(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LifetimeOptions {
    /// Time at which the tail fit starts; the first bin whose lower edge is
    /// at or after it is used. Defaults to the fullest bin.
    pub tail_start_ns: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LifetimeFit {
    pub tau_ns: f64,
    pub sigma_tau_ns: f64,
    pub tail_start_ns: f64,
    pub tail_counts: f64,
    pub log_likelihood: f64,
}

/// Sufficient statistics of the tail used by the likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailStatistics {
    pub n: f64,
    pub weighted_offset: f64,
    pub bin_width: f64,
    pub length: f64,
    pub start: f64,
}

impl TailStatistics {
    pub fn from_histogram(hist: &ArrivalHistogram, options: &LifetimeOptions) -> Result<Self> {
        if hist.counts.iter().all(|&c| c <= 0.0) {
            return Err(Error::Fit("lifetime histogram has no counts".into()));
        }
        let first = match options.tail_start_ns {
            None => hist.peak_bin(),
            Some(t) => {
                let k = ((t - hist.start_ns) / hist.bin_width_ns - 1e-9).ceil().max(0.0) as usize;
                if k >= hist.counts.len() {
                    return Err(Error::Fit(format!("tail start {t} ns lies beyond the histogram")));
                }
                k
            }
        };
        let tail = &hist.counts[first..];
        let n: f64 = tail.iter().sum();
        let weighted_offset = tail
            .iter()
            .enumerate()
            .map(|(j, c)| c * j as f64 * hist.bin_width_ns)
            .sum();
        Ok(TailStatistics {
            n,
            weighted_offset,
            bin_width: hist.bin_width_ns,
            length: tail.len() as f64 * hist.bin_width_ns,
            start: hist.bin_lower(first),
        })
    }

    /// `(LL, dLL/dl, d2LL/dl2)` at rate `l > 0`.
    pub fn log_likelihood(&self, rate: f64) -> (f64, f64, f64) {
        let (w, l, n) = (self.bin_width, self.length, self.n);
        let ew = (rate * w).exp_m1();
        let el = (rate * l).exp_m1();
        let ll = -rate * self.weighted_offset + n * (-(-rate * w).exp_m1()).ln() - n * (-(-rate * l).exp_m1()).ln();
        let d1 = -self.weighted_offset + n * w / ew - n * l / el;
        let d2 = -n * w * w * (ew + 1.0) / (ew * ew) + n * l * l * (el + 1.0) / (el * el);
        (ll, d1, d2)
    }
}

/// Maximum-likelihood exponential lifetime on the histogram tail.
pub fn fit_lifetime(hist: &ArrivalHistogram, options: &LifetimeOptions) -> Result<LifetimeFit> {
    let total = hist.total();
    if total < MIN_LIFETIME_COUNTS {
        if total <= 0.0 {
            return Err(Error::Fit("lifetime histogram has no counts".into()));
        }
        return Err(Error::Fit(format!(
            "lifetime fit needs >= {MIN_LIFETIME_COUNTS} counts, histogram has {total}"
        )));
    }
    let stats = TailStatistics::from_histogram(hist, options)?;
    if stats.n <= 0.0 {
        return Err(Error::Fit("no counts in the fitted tail".into()));
    }
    if stats.length <= stats.bin_width {
        return Err(Error::Fit("tail spans a single bin; the decay is not constrained".into()));
    }
    // As l -> 0 the tail becomes flat with mean offset (L - w)/2; a sample
    // mean at or above that has no decaying solution.
    let mean = stats.weighted_offset / stats.n;
    if mean >= 0.5 * (stats.length - stats.bin_width) * (1.0 - 1e-12) {
        return Err(Error::Fit(format!(
            "tail is not decaying (mean offset {mean:.4} ns over a {:.4} ns window)",
            stats.length
        )));
    }

    // Bracket the root of dLL/dl, which decreases monotonically.
    let mut lo = 1e-9 / stats.length;
    let mut hi = 1.0 / stats.bin_width;
    while stats.log_likelihood(hi).1 > 0.0 {
        lo = hi;
        hi *= 4.0;
        if hi > 1e12 / stats.bin_width {
            // All counts in the first bin: the lifetime is far below the bin
            // width and cannot be resolved.
            return Err(Error::Fit("all tail counts in the first bin; lifetime below resolution".into()));
        }
    }
    let mut rate = if mean > 0.0 { (1.0 / mean).clamp(lo, hi) } else { 0.5 * (lo + hi) };
    for _ in 0..200 {
        let (_, d1, d2) = stats.log_likelihood(rate);
        if d1 > 0.0 {
            lo = rate;
        } else {
            hi = rate;
        }
        let newton = rate - d1 / d2;
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - rate).abs() <= 1e-15 * rate {
            rate = next;
            break;
        }
        rate = next;
    }
    let (ll, _, d2) = stats.log_likelihood(rate);
    let sigma_rate = 1.0 / (-d2).sqrt();
    let tau = 1.0 / rate;
    Ok(LifetimeFit {
        tau_ns: tau,
        sigma_tau_ns: tau * tau * sigma_rate,
        tail_start_ns: stats.start,
        tail_counts: stats.n,
        log_likelihood: ll,
    })
}

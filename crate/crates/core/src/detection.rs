//! Lossy optical channel and Hanbury Brown–Twiss detection.
//!
//! Every emitted photon survives the channel independently with the product
//! of the device, collection, polarizer and detector efficiencies. Survivors
//! are split 50/50 between two detectors, their timestamps are blurred by
//! Gaussian jitter and finally a non-paralyzable dead time is applied per
//! detector.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_range, Result};
use crate::rng::{substream, Domain};
use crate::source::{EmissionEvent, EmissionStream, Polarization};

/// Events per detection random substream.
pub const DETECT_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelEfficiencies {
    /// Spontaneous-emission coupling into the cavity mode.
    pub beta: f64,
    /// Escape from the cavity mode into the output beam.
    pub eta_extract: f64,
    /// Collection by the first lens.
    pub lens: f64,
    pub polarizer_linear: f64,
    pub polarizer_unpol: f64,
    /// Everything after the lens (detector QE, filters) for polarizer-aligned light.
    pub detector: f64,
}

impl ChannelEfficiencies {
    pub fn ideal() -> Self {
        ChannelEfficiencies {
            beta: 1.0,
            eta_extract: 1.0,
            lens: 1.0,
            polarizer_linear: 1.0,
            polarizer_unpol: 1.0,
            detector: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("channel.beta", self.beta, 0.0, 1.0)?;
        check_range("channel.eta_extract", self.eta_extract, 0.0, 1.0)?;
        check_range("channel.lens", self.lens, 0.0, 1.0)?;
        check_range("channel.polarizer_linear", self.polarizer_linear, 0.0, 1.0)?;
        check_range("channel.polarizer_unpol", self.polarizer_unpol, 0.0, 1.0)?;
        check_range("channel.detector", self.detector, 0.0, 1.0)
    }

    /// Probability that an emitted photon ends up in the output mode.
    pub fn device_efficiency(&self) -> f64 {
        self.beta * self.eta_extract
    }

    pub fn polarizer(&self, polarization: Polarization) -> f64 {
        match polarization {
            Polarization::Linear => self.polarizer_linear,
            Polarization::Unpolarized => self.polarizer_unpol,
        }
    }

    /// Collection and detection efficiency for dot-line photons, whose
    /// linear fraction is `polarized_fraction`.
    pub fn qd_collection_detection(&self, polarized_fraction: f64) -> f64 {
        let pol = polarized_fraction * self.polarizer_linear
            + (1.0 - polarized_fraction) * self.polarizer_unpol;
        self.lens * self.detector * pol
    }
}

pub fn channel_transmission(eff: &ChannelEfficiencies, polarization: Polarization) -> f64 {
    eff.beta * eff.eta_extract * eff.lens * eff.detector * eff.polarizer(polarization)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizerTransmission {
    /// Applied to Linear-tagged photons, polarizer aligned.
    pub linear: f64,
    /// Applied to Unpolarized-tagged photons.
    pub unpolarized: f64,
    /// Transmission of the partially polarized dot emission as a whole.
    pub ensemble: f64,
}

/// Ideal polarizer aligned with the linear part of a partially polarized source.
pub fn polarizer_transmission(polarized_fraction: f64) -> Result<PolarizerTransmission> {
    check_range("polarized_fraction", polarized_fraction, 0.0, 1.0)?;
    Ok(PolarizerTransmission {
        linear: 1.0,
        unpolarized: 0.5,
        ensemble: (1.0 + polarized_fraction) / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    /// Gaussian timing jitter of one detector.
    pub jitter_sigma_ps: f64,
    pub dead_time_ns: f64,
    #[serde(default)]
    pub dark_count_rate_hz: f64,
}

impl DetectorSpec {
    pub fn ideal() -> Self {
        DetectorSpec {
            jitter_sigma_ps: 0.0,
            dead_time_ns: 0.0,
            dark_count_rate_hz: 0.0,
        }
    }

    /// Per-detector sigma for a measured FWHM of the two-detector response.
    pub fn sigma_from_combined_fwhm_ps(fwhm_ps: f64) -> f64 {
        fwhm_ps / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt() * std::f64::consts::SQRT_2)
    }

    /// Sigma of the start-stop time difference, in ns.
    pub fn combined_sigma_ns(&self) -> f64 {
        self.jitter_sigma_ps * 1e-3 * std::f64::consts::SQRT_2
    }

    pub fn validate(&self) -> Result<()> {
        check_non_negative("detector.jitter_sigma_ps", self.jitter_sigma_ps)?;
        if !(self.dead_time_ns >= 0.0) {
            return Err(crate::Error::invalid("detector.dead_time_ns", "must be >= 0"));
        }
        check_non_negative("detector.dark_count_rate_hz", self.dark_count_rate_hz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Detector {
    D1,
    D2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub detector: Detector,
    pub time_ns: f64,
}

/// Detection timestamps, kept sorted per detector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionRecords {
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub n_pulses: u64,
    pub duration_ns: f64,
}

impl DetectionRecords {
    pub fn len(&self) -> usize {
        self.d1.len() + self.d2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Both detectors merged in time order; D1 first on ties.
    pub fn records(&self) -> Vec<DetectionRecord> {
        let mut out = Vec::with_capacity(self.len());
        let (mut i, mut j) = (0, 0);
        while i < self.d1.len() || j < self.d2.len() {
            let take_d1 = j >= self.d2.len() || (i < self.d1.len() && self.d1[i] <= self.d2[j]);
            if take_d1 {
                out.push(DetectionRecord {
                    detector: Detector::D1,
                    time_ns: self.d1[i],
                });
                i += 1;
            } else {
                out.push(DetectionRecord {
                    detector: Detector::D2,
                    time_ns: self.d2[j],
                });
                j += 1;
            }
        }
        out
    }

    pub fn from_records(records: &[DetectionRecord], n_pulses: u64, duration_ns: f64) -> Self {
        let mut d1 = Vec::new();
        let mut d2 = Vec::new();
        for r in records {
            match r.detector {
                Detector::D1 => d1.push(r.time_ns),
                Detector::D2 => d2.push(r.time_ns),
            }
        }
        d1.sort_by(f64::total_cmp);
        d2.sort_by(f64::total_cmp);
        DetectionRecords {
            d1,
            d2,
            n_pulses,
            duration_ns,
        }
    }
}

/// Independent Bernoulli thinning with the channel transmission of each event.
pub fn thin_events<R: Rng + ?Sized>(
    events: &[EmissionEvent],
    eff: &ChannelEfficiencies,
    rng: &mut R,
) -> Vec<EmissionEvent> {
    let t_lin = channel_transmission(eff, Polarization::Linear);
    let t_unp = channel_transmission(eff, Polarization::Unpolarized);
    events
        .iter()
        .filter(|e| {
            let t = match e.polarization {
                Polarization::Linear => t_lin,
                Polarization::Unpolarized => t_unp,
            };
            rng.random::<f64>() < t
        })
        .copied()
        .collect()
}

/// Runs the stream through the channel and both detectors.
///
/// Randomness comes from the stream's seed, so the result is reproducible.
pub fn detect(stream: &EmissionStream, eff: &ChannelEfficiencies, spec: &DetectorSpec) -> Result<DetectionRecords> {
    let exc = &stream.config.excitation;
    detect_events(
        &stream.events,
        exc.rep_period_ns,
        eff,
        spec,
        exc.rng_seed,
        0,
        (exc.n_pulses, exc.duration_ns()),
    )
}

/// Detection of a slice of events.
///
/// `substream_base` offsets the per-chunk random substreams so that several
/// slices of one long run can be processed separately.
pub fn detect_events(
    events: &[EmissionEvent],
    rep_period_ns: f64,
    eff: &ChannelEfficiencies,
    spec: &DetectorSpec,
    seed: u64,
    substream_base: u64,
    (n_pulses, duration_ns): (u64, f64),
) -> Result<DetectionRecords> {
    eff.validate()?;
    spec.validate()?;
    let sigma_ns = spec.jitter_sigma_ps * 1e-3;
    let jitter = Normal::new(0.0, sigma_ns).map_err(|e| crate::Error::Domain(e.to_string()))?;

    let chunks: Vec<(Vec<f64>, Vec<f64>)> = events
        .par_chunks(DETECT_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut rng = substream(seed, Domain::Detection, substream_base + c as u64);
            let survivors = thin_events(chunk, eff, &mut rng);
            let mut d1 = Vec::new();
            let mut d2 = Vec::new();
            for e in survivors {
                let mut t = e.absolute_time_ns(rep_period_ns);
                let to_d1 = rng.random::<bool>();
                if sigma_ns > 0.0 {
                    t += jitter.sample(&mut rng);
                }
                if to_d1 {
                    d1.push(t);
                } else {
                    d2.push(t);
                }
            }
            (d1, d2)
        })
        .collect();

    let mut d1: Vec<f64> = chunks.iter().flat_map(|c| c.0.iter().copied()).collect();
    let mut d2: Vec<f64> = chunks.iter().flat_map(|c| c.1.iter().copied()).collect();

    if spec.dark_count_rate_hz > 0.0 {
        for (index, list) in [&mut d1, &mut d2].into_iter().enumerate() {
            let mut rng = substream(seed, Domain::DarkCounts, substream_base + index as u64);
            add_dark_counts(list, spec.dark_count_rate_hz, duration_ns, &mut rng);
        }
    }

    d1.par_sort_by(f64::total_cmp);
    d2.par_sort_by(f64::total_cmp);
    apply_dead_time(&mut d1, spec.dead_time_ns);
    apply_dead_time(&mut d2, spec.dead_time_ns);
    Ok(DetectionRecords {
        d1,
        d2,
        n_pulses,
        duration_ns,
    })
}

fn add_dark_counts<R: Rng + ?Sized>(list: &mut Vec<f64>, rate_hz: f64, duration_ns: f64, rng: &mut R) {
    let mean = rate_hz * duration_ns * 1e-9;
    if mean <= 0.0 {
        return;
    }
    let k = Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0);
    list.extend((0..k).map(|_| rng.random::<f64>() * duration_ns));
}

/// Non-paralyzable dead time on a sorted list.
pub fn apply_dead_time(times: &mut Vec<f64>, dead_time_ns: f64) {
    if dead_time_ns <= 0.0 || times.is_empty() {
        return;
    }
    let mut last = times[0];
    let mut keep = 1;
    for i in 1..times.len() {
        if times[i] - last >= dead_time_ns {
            times[keep] = times[i];
            last = times[i];
            keep += 1;
        }
    }
    times.truncate(keep);
}

/// Total rate over both detectors, in counts per second.
pub fn count_rate(records: &DetectionRecords, duration_ns: f64) -> Result<f64> {
    crate::error::check_positive("duration_ns", duration_ns)?;
    Ok(records.len() as f64 / (duration_ns * 1e-9))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{
        generate_stream, BackgroundParams, EmitterParams, ExcitationConfig, LaserParams, Origin, SourceConfig,
        SourceKind,
    };

    fn laser(mean: f64, n: u64, seed: u64) -> SourceConfig {
        SourceConfig {
            emitter: EmitterParams {
                tau_on_ns: 4.4,
                tau_off_ns: 25.4,
                gamma_c_ratio: 0.0,
                polarized_fraction: 0.331,
            },
            excitation: ExcitationConfig {
                rep_period_ns: 13.0,
                pump_power_uw: 0.0,
                p_sat_uw: 3.0,
                n_pulses: n,
                rng_seed: seed,
            },
            background: BackgroundParams::none(4.4),
            kind: SourceKind::Laser(LaserParams {
                mean_photons: mean,
                pulse_tau_ns: 1.0,
            }),
        }
    }

    #[test]
    fn transmission_identity_and_absorption() {
        let ideal = ChannelEfficiencies::ideal();
        assert_eq!(channel_transmission(&ideal, Polarization::Linear), 1.0);
        let lossy = ChannelEfficiencies { lens: 0.0, ..ideal };
        assert_eq!(channel_transmission(&lossy, Polarization::Unpolarized), 0.0);
    }

    #[test]
    fn transmission_with_measured_efficiencies() {
        let eff = ChannelEfficiencies {
            beta: 0.83,
            eta_extract: 0.366,
            lens: 0.22,
            polarizer_linear: 1.0,
            polarizer_unpol: 1.0,
            detector: 0.0302,
        };
        let t = channel_transmission(&eff, Polarization::Linear);
        assert!((t - 0.83 * 0.366 * 0.22 * 0.0302).abs() < 1e-15);
        assert!((t - 2.018e-3).abs() < 1e-6);
    }

    #[test]
    fn polarizer_ensemble() {
        assert_eq!(polarizer_transmission(1.0).unwrap().ensemble, 1.0);
        assert_eq!(polarizer_transmission(0.0).unwrap().ensemble, 0.5);
        assert!((polarizer_transmission(0.331).unwrap().ensemble - 0.6655).abs() < 1e-12);
        let p = polarizer_transmission(0.4).unwrap();
        assert_eq!((p.linear, p.unpolarized), (1.0, 0.5));
        assert!(polarizer_transmission(1.2).is_err());
    }

    #[test]
    fn combined_fwhm_to_detector_sigma() {
        let s = DetectorSpec::sigma_from_combined_fwhm_ps(473.0);
        assert!((s - 142.03).abs() < 0.01);
    }

    #[test]
    fn empty_stream_gives_no_records() {
        let s = generate_stream(&laser(0.0, 10, 1)).unwrap();
        let r = detect(&s, &ChannelEfficiencies::ideal(), &DetectorSpec::ideal()).unwrap();
        assert!(r.is_empty());
    }

    #[test]
    fn lossless_detection_keeps_every_event_and_splits_evenly() {
        let s = generate_stream(&laser(1.0, 100_000, 2)).unwrap();
        let r = detect(&s, &ChannelEfficiencies::ideal(), &DetectorSpec::ideal()).unwrap();
        assert_eq!(r.len(), s.len());
        let n = s.len() as f64;
        let frac = r.d1.len() as f64 / n;
        assert!((frac - 0.5).abs() < 4.0 * (0.25 / n).sqrt());
    }

    #[test]
    fn infinite_dead_time_leaves_one_record_per_detector() {
        let s = generate_stream(&laser(1.0, 1000, 3)).unwrap();
        let spec = DetectorSpec {
            dead_time_ns: f64::INFINITY,
            ..DetectorSpec::ideal()
        };
        let r = detect(&s, &ChannelEfficiencies::ideal(), &spec).unwrap();
        assert!(r.d1.len() <= 1 && r.d2.len() <= 1);
    }

    #[test]
    fn dead_time_is_respected() {
        let s = generate_stream(&laser(2.0, 20_000, 4)).unwrap();
        let spec = DetectorSpec {
            jitter_sigma_ps: 100.0,
            dead_time_ns: 30.0,
            dark_count_rate_hz: 0.0,
        };
        let r = detect(&s, &ChannelEfficiencies::ideal(), &spec).unwrap();
        for list in [&r.d1, &r.d2] {
            assert!(list.windows(2).all(|w| w[1] - w[0] >= 30.0));
        }
    }

    #[test]
    fn jitter_moves_times_but_not_counts() {
        let s = generate_stream(&laser(0.5, 50_000, 5)).unwrap();
        let a = detect(&s, &ChannelEfficiencies::ideal(), &DetectorSpec::ideal()).unwrap();
        let spec = DetectorSpec {
            jitter_sigma_ps: 142.0,
            ..DetectorSpec::ideal()
        };
        let b = detect(&s, &ChannelEfficiencies::ideal(), &spec).unwrap();
        assert_eq!(a.len(), b.len());
        assert_ne!(a.d1, b.d1);
    }

    #[test]
    fn two_thinning_stages_compose() {
        let s = generate_stream(&laser(1.0, 100_000, 6)).unwrap();
        let p = ChannelEfficiencies {
            beta: 0.6,
            ..ChannelEfficiencies::ideal()
        };
        let q = ChannelEfficiencies {
            lens: 0.3,
            ..ChannelEfficiencies::ideal()
        };
        let pq = ChannelEfficiencies {
            beta: 0.18,
            ..ChannelEfficiencies::ideal()
        };
        let mut rng = substream(9, Domain::Synthetic, 0);
        let two = thin_events(&thin_events(&s.events, &p, &mut rng), &q, &mut rng).len() as f64;
        let one = thin_events(&s.events, &pq, &mut rng).len() as f64;
        let n = s.len() as f64;
        let sd = (n * 0.18 * 0.82).sqrt();
        assert!((two - one).abs() < 4.0 * sd * std::f64::consts::SQRT_2);
        assert!((one - 0.18 * n).abs() < 4.0 * sd);
    }

    #[test]
    fn polarization_dependent_survival() {
        let mut src = laser(0.0, 200_000, 7);
        src.kind = SourceKind::QuantumDot;
        src.excitation.pump_power_uw = 1e4;
        let s = generate_stream(&src).unwrap();
        assert_eq!(s.count_origin(Origin::QdLine), 200_000);
        let eff = ChannelEfficiencies {
            polarizer_linear: 1.0,
            polarizer_unpol: 0.5,
            ..ChannelEfficiencies::ideal()
        };
        let r = detect(&s, &eff, &DetectorSpec::ideal()).unwrap();
        let frac = r.len() as f64 / 200_000.0;
        let sd = (0.6655 * 0.3345 / 200_000.0f64).sqrt();
        assert!((frac - 0.6655).abs() < 4.0 * sd, "{frac}");
    }

    #[test]
    fn dark_counts_follow_rate() {
        let s = generate_stream(&laser(0.0, 1_000_000, 8)).unwrap();
        let spec = DetectorSpec {
            dark_count_rate_hz: 1e5,
            ..DetectorSpec::ideal()
        };
        let r = detect(&s, &ChannelEfficiencies::ideal(), &spec).unwrap();
        // 13 ms per detector at 1e5/s
        let expected = 2.0 * 1300.0;
        assert!((r.len() as f64 - expected).abs() < 4.0 * expected.sqrt());
    }

    #[test]
    fn count_rate_arithmetic() {
        let r = DetectionRecords {
            d1: (0..40).map(|i| i as f64).collect(),
            d2: (0..36).map(|i| i as f64).collect(),
            n_pulses: 0,
            duration_ns: 1000.0,
        };
        assert!((count_rate(&r, 1000.0).unwrap() - 7.6e7).abs() < 1e-3);
        assert_eq!(count_rate(&DetectionRecords::default(), 10.0).unwrap(), 0.0);
        assert!(count_rate(&r, 0.0).is_err());
    }

    #[test]
    fn merged_records_are_time_ordered() {
        let r = DetectionRecords {
            d1: vec![1.0, 5.0],
            d2: vec![0.5, 5.0, 7.0],
            n_pulses: 1,
            duration_ns: 10.0,
        };
        let m = r.records();
        assert_eq!(m.len(), 5);
        assert!(m.windows(2).all(|w| w[0].time_ns <= w[1].time_ns));
        assert_eq!(m[2].detector, Detector::D1);
        let back = DetectionRecords::from_records(&m, 1, 10.0);
        assert_eq!(back, r);
    }
}

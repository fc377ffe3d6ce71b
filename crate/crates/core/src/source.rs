//! Forward Monte Carlo model of a pulsed quantum-dot emitter.
//!
//! Each laser pulse excites the dot with probability `1 - exp(-P/P_sat)`. An
//! excited dot emits exactly one photon on the filtered exciton line, delayed
//! by an exponential with the Purcell-enhanced lifetime. On top of that a
//! Poissonian background of unregulated photons is added whose mean grows as
//! a power law of the pump power.
//!
//! Streams are generated in fixed blocks of pulses. Every block draws from
//! its own random substream, so the output does not depend on how blocks are
//! distributed over threads.

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_positive, check_range, Error, Result};
use crate::rng::{substream, Domain};

/// Pulses per random substream block.
pub const BLOCK_PULSES: u64 = 1 << 16;

/// Absolute times are kept in f64 ns; beyond 2^53 ps they lose 1 ps resolution.
pub const MAX_ABSOLUTE_TIME_NS: f64 = 9.007_199_254_740_992e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterParams {
    /// Cavity-enhanced radiative lifetime, 1/gamma.
    pub tau_on_ns: f64,
    /// Lifetime without a cavity, 1/gamma_0.
    pub tau_off_ns: f64,
    /// gamma_c / gamma_0.
    pub gamma_c_ratio: f64,
    /// Fraction of the dot emission that is linearly polarized.
    pub polarized_fraction: f64,
}

impl EmitterParams {
    pub fn validate(&self) -> Result<()> {
        check_positive("emitter.tau_on_ns", self.tau_on_ns)?;
        check_positive("emitter.tau_off_ns", self.tau_off_ns)?;
        check_range("emitter.gamma_c_ratio", self.gamma_c_ratio, 0.0, 1.0)?;
        check_range("emitter.polarized_fraction", self.polarized_fraction, 0.0, 1.0)
    }

    /// tau_off / tau_on; may be below one.
    pub fn purcell_factor(&self) -> f64 {
        self.tau_off_ns / self.tau_on_ns
    }

    /// True when the lifetimes describe an enhancement (F_p >= 1).
    pub fn is_purcell_enhanced(&self) -> bool {
        self.tau_on_ns <= self.tau_off_ns
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationConfig {
    pub rep_period_ns: f64,
    pub pump_power_uw: f64,
    pub p_sat_uw: f64,
    pub n_pulses: u64,
    pub rng_seed: u64,
}

impl ExcitationConfig {
    pub fn validate(&self) -> Result<()> {
        check_positive("excitation.rep_period_ns", self.rep_period_ns)?;
        check_non_negative("excitation.pump_power_uw", self.pump_power_uw)?;
        check_positive("excitation.p_sat_uw", self.p_sat_uw)?;
        if self.n_pulses == 0 {
            return Err(Error::invalid("excitation.n_pulses", "must be >= 1"));
        }
        Ok(())
    }

    pub fn duration_ns(&self) -> f64 {
        self.n_pulses as f64 * self.rep_period_ns
    }

    pub fn rep_rate_hz(&self) -> f64 {
        1e9 / self.rep_period_ns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundParams {
    /// Mean background photons per pulse at P = P_sat.
    pub amplitude: f64,
    pub power_exponent: f64,
    pub tau_bg_ns: f64,
}

impl BackgroundParams {
    pub fn none(tau_bg_ns: f64) -> Self {
        BackgroundParams {
            amplitude: 0.0,
            power_exponent: 2.0,
            tau_bg_ns,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_non_negative("background.amplitude", self.amplitude)?;
        check_non_negative("background.power_exponent", self.power_exponent)?;
        check_positive("background.tau_bg_ns", self.tau_bg_ns)
    }
}

/// Attenuated coherent pulses: Poisson photon number, no regulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserParams {
    pub mean_photons: f64,
    /// Exponential time profile of the pulse.
    pub pulse_tau_ns: f64,
}

impl LaserParams {
    /// Mean photon number giving `p` probability of at least one photon.
    pub fn mean_for_probability(p: f64) -> f64 {
        -(1.0 - p).ln()
    }

    pub fn validate(&self) -> Result<()> {
        check_non_negative("laser.mean_photons", self.mean_photons)?;
        check_positive("laser.pulse_tau_ns", self.pulse_tau_ns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceKind {
    QuantumDot,
    Laser(LaserParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceConfig {
    pub emitter: EmitterParams,
    pub excitation: ExcitationConfig,
    pub background: BackgroundParams,
    pub kind: SourceKind,
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        self.emitter.validate()?;
        self.excitation.validate()?;
        self.background.validate()?;
        if let SourceKind::Laser(laser) = &self.kind {
            laser.validate()?;
        }
        let span = self.excitation.duration_ns();
        if !span.is_finite() || span > MAX_ABSOLUTE_TIME_NS {
            return Err(Error::TimeOverflow {
                pulses: self.excitation.n_pulses,
                period_ns: self.excitation.rep_period_ns,
                limit_ns: MAX_ABSOLUTE_TIME_NS,
            });
        }
        Ok(())
    }

    /// Probability that a pulse carries a dot-line photon.
    pub fn qd_probability(&self) -> f64 {
        match self.kind {
            SourceKind::QuantumDot => {
                excitation_probability(self.excitation.pump_power_uw, self.excitation.p_sat_uw)
                    .unwrap_or(0.0)
            }
            SourceKind::Laser(_) => 0.0,
        }
    }

    /// Mean number of unregulated (Poissonian) photons per pulse.
    pub fn poisson_mean(&self) -> f64 {
        match self.kind {
            SourceKind::QuantumDot => background_mean(
                self.excitation.pump_power_uw,
                &self.background,
                self.excitation.p_sat_uw,
            ),
            SourceKind::Laser(laser) => laser.mean_photons,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    #[serde(rename = "QDLine")]
    QdLine,
    Background,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::QdLine => "QDLine",
            Origin::Background => "Background",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarization {
    Linear,
    Unpolarized,
}

impl Polarization {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarization::Linear => "Linear",
            Polarization::Unpolarized => "Unpolarized",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmissionEvent {
    pub pulse_index: u64,
    /// Delay after the pulse arrival.
    pub time_offset_ns: f64,
    pub origin: Origin,
    pub polarization: Polarization,
}

impl EmissionEvent {
    pub fn absolute_time_ns(&self, rep_period_ns: f64) -> f64 {
        self.pulse_index as f64 * rep_period_ns + self.time_offset_ns
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmissionStream {
    pub config: SourceConfig,
    /// Sorted by absolute time.
    pub events: Vec<EmissionEvent>,
}

impl EmissionStream {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn count_origin(&self, origin: Origin) -> usize {
        self.events.iter().filter(|e| e.origin == origin).count()
    }

    /// Largest number of dot-line photons found in any single pulse.
    pub fn max_qd_multiplicity(&self) -> usize {
        let mut pulses: Vec<u64> = self
            .events
            .iter()
            .filter(|e| e.origin == Origin::QdLine)
            .map(|e| e.pulse_index)
            .collect();
        pulses.sort_unstable();
        pulses
            .chunk_by(|a, b| a == b)
            .map(|run| run.len())
            .max()
            .unwrap_or(0)
    }

    pub fn absolute_times(&self) -> impl Iterator<Item = f64> + '_ {
        let period = self.config.excitation.rep_period_ns;
        self.events.iter().map(move |e| e.absolute_time_ns(period))
    }
}

/// `1 - exp(-P/P_sat)`.
pub fn excitation_probability(pump_power: f64, p_sat: f64) -> Result<f64> {
    if !(p_sat > 0.0) || !p_sat.is_finite() {
        return Err(Error::Domain(format!("saturation power must be > 0, got {p_sat}")));
    }
    if !(pump_power >= 0.0) {
        return Err(Error::Domain(format!("pump power must be >= 0, got {pump_power}")));
    }
    Ok(-(-pump_power / p_sat).exp_m1())
}

/// `b * (P/P_sat)^m`.
pub fn background_mean(pump_power: f64, params: &BackgroundParams, p_sat: f64) -> f64 {
    if params.amplitude == 0.0 {
        return 0.0;
    }
    params.amplitude * (pump_power / p_sat).powf(params.power_exponent)
}

/// Draws the photons emitted after a single pulse.
///
/// This is the per-pulse reference sampler. [`generate_stream`] draws from
/// the same distribution but skips empty pulses in bulk.
pub fn sample_pulse<R: Rng + ?Sized>(
    rng: &mut R,
    pulse_index: u64,
    source: &SourceConfig,
) -> Vec<EmissionEvent> {
    let mut events = Vec::new();
    let p_qd = source.qd_probability();
    if p_qd > 0.0 && rng.random::<f64>() < p_qd {
        events.push(qd_event(rng, pulse_index, &source.emitter));
    }
    let mu = source.poisson_mean();
    if mu > 0.0 {
        let k = Poisson::new(mu).map(|d| d.sample(rng) as u64).unwrap_or(0);
        for _ in 0..k {
            events.push(poisson_event(rng, pulse_index, source));
        }
    }
    events
}

fn qd_event<R: Rng + ?Sized>(rng: &mut R, pulse_index: u64, emitter: &EmitterParams) -> EmissionEvent {
    let offset = exp_sample(rng, emitter.tau_on_ns);
    let polarization = if rng.random::<f64>() < emitter.polarized_fraction {
        Polarization::Linear
    } else {
        Polarization::Unpolarized
    };
    EmissionEvent {
        pulse_index,
        time_offset_ns: offset,
        origin: Origin::QdLine,
        polarization,
    }
}

fn poisson_event<R: Rng + ?Sized>(rng: &mut R, pulse_index: u64, source: &SourceConfig) -> EmissionEvent {
    let (tau, polarization) = match source.kind {
        SourceKind::QuantumDot => (source.background.tau_bg_ns, Polarization::Unpolarized),
        SourceKind::Laser(laser) => (laser.pulse_tau_ns, Polarization::Linear),
    };
    EmissionEvent {
        pulse_index,
        time_offset_ns: exp_sample(rng, tau),
        origin: Origin::Background,
        polarization,
    }
}

fn exp_sample<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    // Exp::new only fails for negative rates, excluded by validation.
    Exp::new(1.0 / mean).map(|d| d.sample(rng)).unwrap_or(0.0)
}

/// Generates and time-sorts the full emission stream of a run.
pub fn generate_stream(source: &SourceConfig) -> Result<EmissionStream> {
    source.validate()?;
    let mut events = generate_pulse_range(source, 0, source.excitation.n_pulses)?;
    sort_events(&mut events, source.excitation.rep_period_ns);
    Ok(EmissionStream {
        config: *source,
        events,
    })
}

/// Generates the unsorted events of pulses `[start, start + count)`.
///
/// `start` must be a multiple of [`BLOCK_PULSES`] so that consecutive ranges
/// reproduce the events of one call over their union.
pub fn generate_pulse_range(source: &SourceConfig, start: u64, count: u64) -> Result<Vec<EmissionEvent>> {
    source.validate()?;
    if !start.is_multiple_of(BLOCK_PULSES) {
        return Err(Error::Domain(format!(
            "pulse range start {start} is not aligned to {BLOCK_PULSES}-pulse blocks"
        )));
    }
    let end = start
        .checked_add(count)
        .filter(|&e| e <= source.excitation.n_pulses)
        .ok_or_else(|| Error::Domain(format!("pulse range {start}+{count} exceeds n_pulses")))?;
    let first_block = start / BLOCK_PULSES;
    let last_block = end.div_ceil(BLOCK_PULSES);
    let blocks: Vec<Vec<EmissionEvent>> = (first_block..last_block)
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK_PULSES;
            let hi = ((b + 1) * BLOCK_PULSES).min(end);
            sample_block(source, b, lo, hi)
        })
        .collect();
    Ok(blocks.concat())
}

fn sample_block(source: &SourceConfig, block: u64, lo: u64, hi: u64) -> Vec<EmissionEvent> {
    let mut rng = substream(source.excitation.rng_seed, Domain::Emission, block);
    let len = hi - lo;
    let mut events = Vec::new();

    let p_qd = source.qd_probability();
    if p_qd > 0.0 {
        if p_qd >= 1.0 {
            for pulse in lo..hi {
                events.push(qd_event(&mut rng, pulse, &source.emitter));
            }
        } else if let Ok(gap) = Geometric::new(p_qd) {
            let mut pulse = lo.saturating_add(gap.sample(&mut rng));
            while pulse < hi {
                events.push(qd_event(&mut rng, pulse, &source.emitter));
                pulse = pulse.saturating_add(1 + gap.sample(&mut rng));
            }
        }
    }

    let mu = source.poisson_mean();
    if mu > 0.0 {
        // A sum of iid Poisson counts, scattered uniformly over the block.
        let k = Poisson::new(mu * len as f64)
            .map(|d| d.sample(&mut rng) as u64)
            .unwrap_or(0);
        for _ in 0..k {
            let pulse = lo + rng.random_range(0..len);
            events.push(poisson_event(&mut rng, pulse, source));
        }
    }
    events
}

/// Stable sort by absolute time, ties broken by pulse index.
pub fn sort_events(events: &mut [EmissionEvent], rep_period_ns: f64) {
    events.par_sort_by(|a, b| {
        a.absolute_time_ns(rep_period_ns)
            .total_cmp(&b.absolute_time_ns(rep_period_ns))
            .then(a.pulse_index.cmp(&b.pulse_index))
    });
}

//! Inter-detection time histograms.
//!
//! `AllPairs` counts every (D1, D2) pair inside the window and is what the
//! peak-area analysis expects. `StartStop` keeps only the first D2 record
//! after each D1 start, like a classic time-to-amplitude converter; it only
//! approximates the correlation function when detections per pulse are rare.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::DetectionRecords;
use crate::error::{Error, Result};

/// D1 records per accumulation shard.
const SHARD_RECORDS: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HistogramMode {
    #[default]
    AllPairs,
    StartStop,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccumulationMeta {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub d1_records: u64,
    #[serde(default)]
    pub d2_records: u64,
    #[serde(default)]
    pub duration_ns: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    pub bin_width_ns: f64,
    /// Half range; bins cover [-window, +window].
    pub window_ns: f64,
    pub counts: Vec<u64>,
    pub mode: HistogramMode,
    pub total_pulses: u64,
    pub meta: AccumulationMeta,
}

pub fn bin_count(bin_width_ns: f64, window_ns: f64) -> usize {
    // Guard against 2W/w landing a hair above an integer.
    ((2.0 * window_ns / bin_width_ns) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

impl CorrelationHistogram {
    pub fn new(bin_width_ns: f64, window_ns: f64, mode: HistogramMode) -> Result<Self> {
        if !(bin_width_ns > 0.0) || !bin_width_ns.is_finite() {
            return Err(Error::Domain(format!("bin width must be > 0, got {bin_width_ns}")));
        }
        if !(window_ns > 0.0) || !window_ns.is_finite() {
            return Err(Error::Domain(format!("window must be > 0, got {window_ns}")));
        }
        Ok(CorrelationHistogram {
            bin_width_ns,
            window_ns,
            counts: vec![0; bin_count(bin_width_ns, window_ns)],
            mode,
            total_pulses: 0,
            meta: AccumulationMeta::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_lower(&self, i: usize) -> f64 {
        -self.window_ns + i as f64 * self.bin_width_ns
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.bin_lower(i) + 0.5 * self.bin_width_ns
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.bin_center(i)).collect()
    }

    /// Bin for a delay; `None` outside `[-window, window]`.
    pub fn bin_index(&self, dt: f64) -> Option<usize> {
        if !(dt.abs() <= self.window_ns) {
            return None;
        }
        let i = ((dt + self.window_ns) / self.bin_width_ns).floor() as usize;
        Some(i.min(self.len() - 1))
    }

    pub fn record(&mut self, dt: f64) -> bool {
        match self.bin_index(dt) {
            Some(i) => {
                self.counts[i] += 1;
                true
            }
            None => false,
        }
    }

    fn same_binning(&self, other: &Self) -> bool {
        self.bin_width_ns == other.bin_width_ns && self.window_ns == other.window_ns && self.mode == other.mode
    }

    /// Bin-wise sum of two histograms with identical binning.
    pub fn merge(&mut self, other: &CorrelationHistogram) -> Result<()> {
        if !self.same_binning(other) {
            return Err(Error::Domain("cannot merge histograms with different binning or mode".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total_pulses += other.total_pulses;
        self.meta.d1_records += other.meta.d1_records;
        self.meta.d2_records += other.meta.d2_records;
        self.meta.duration_ns += other.meta.duration_ns;
        if self.meta.seed != other.meta.seed {
            self.meta.seed = None;
        }
        Ok(())
    }

    /// Sum of counts over bins whose centers lie in `[lo, hi)`.
    pub fn sum_between(&self, lo: f64, hi: f64) -> u64 {
        (0..self.len())
            .filter(|&i| {
                let c = self.bin_center(i);
                c >= lo && c < hi
            })
            .map(|i| self.counts[i])
            .sum()
    }
}

/// Histogram of D2 - D1 delays.
pub fn build_histogram(
    records: &DetectionRecords,
    bin_width_ns: f64,
    window_ns: f64,
    mode: HistogramMode,
) -> Result<CorrelationHistogram> {
    let mut hist = CorrelationHistogram::new(bin_width_ns, window_ns, mode)?;
    let shards: Vec<Vec<u64>> = records
        .d1
        .par_chunks(SHARD_RECORDS)
        .map(|starts| {
            let mut local = CorrelationHistogram {
                counts: vec![0; hist.len()],
                ..hist.clone()
            };
            accumulate(&mut local, starts, &records.d2);
            local.counts
        })
        .collect();
    for shard in shards {
        for (a, b) in hist.counts.iter_mut().zip(shard) {
            *a += b;
        }
    }
    hist.total_pulses = records.n_pulses;
    hist.meta.d1_records = records.d1.len() as u64;
    hist.meta.d2_records = records.d2.len() as u64;
    hist.meta.duration_ns = records.duration_ns;
    Ok(hist)
}

fn accumulate(hist: &mut CorrelationHistogram, starts: &[f64], stops: &[f64]) {
    let Some(&first) = starts.first() else { return };
    let w = hist.window_ns;
    match hist.mode {
        HistogramMode::AllPairs => {
            let mut lo = stops.partition_point(|&t| t < first - w);
            for &t1 in starts {
                while lo < stops.len() && stops[lo] < t1 - w {
                    lo += 1;
                }
                for &t2 in &stops[lo..] {
                    if t2 > t1 + w {
                        break;
                    }
                    hist.record(t2 - t1);
                }
            }
        }
        HistogramMode::StartStop => {
            let mut next = stops.partition_point(|&t| t < first);
            for &t1 in starts {
                while next < stops.len() && stops[next] < t1 {
                    next += 1;
                }
                if let Some(&t2) = stops.get(next) {
                    hist.record(t2 - t1);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(d1: Vec<f64>, d2: Vec<f64>) -> DetectionRecords {
        DetectionRecords {
            d1,
            d2,
            n_pulses: 10,
            duration_ns: 130.0,
        }
    }

    #[test]
    fn domain_errors() {
        let r = records(vec![], vec![]);
        assert!(build_histogram(&r, 0.0, 10.0, HistogramMode::AllPairs).is_err());
        assert!(build_histogram(&r, 0.1, -1.0, HistogramMode::AllPairs).is_err());
    }

    #[test]
    fn empty_records_give_zero_histogram() {
        let h = build_histogram(&records(vec![], vec![]), 0.25, 104.0, HistogramMode::AllPairs).unwrap();
        assert_eq!(h.len(), 832);
        assert_eq!(h.total(), 0);
    }

    #[test]
    fn single_pair_lands_in_its_bin() {
        let h = build_histogram(&records(vec![0.0], vec![5.0]), 0.25, 50.0, HistogramMode::AllPairs).unwrap();
        assert_eq!(h.total(), 1);
        let i = h.counts.iter().position(|&c| c == 1).unwrap();
        assert!(h.bin_lower(i) <= 5.0 && 5.0 < h.bin_lower(i) + 0.25);
    }

    #[test]
    fn bin_count_is_ceiling() {
        assert_eq!(bin_count(0.25, 104.0), 832);
        assert_eq!(bin_count(0.3, 1.0), 7);
        assert_eq!(bin_count(0.1, 0.3), 6);
    }

    #[test]
    fn window_edges_are_inclusive() {
        let h = build_histogram(&records(vec![10.0], vec![0.0, 20.0]), 1.0, 10.0, HistogramMode::AllPairs).unwrap();
        assert_eq!(h.total(), 2);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[19], 1);
    }

    #[test]
    fn start_stop_keeps_only_first_stop() {
        let r = records(vec![0.0, 1.0], vec![0.5, 2.0, 3.0]);
        let all = build_histogram(&r, 0.1, 10.0, HistogramMode::AllPairs).unwrap();
        let ss = build_histogram(&r, 0.1, 10.0, HistogramMode::StartStop).unwrap();
        assert_eq!(all.total(), 6);
        assert_eq!(ss.total(), 2);
        // stops at +0.5 (from 0.0) and +1.0 (from 1.0)
        assert_eq!(ss.counts[ss.bin_index(0.5).unwrap()], 1);
        assert_eq!(ss.counts[ss.bin_index(1.0).unwrap()], 1);
    }

    #[test]
    fn sharded_accumulation_equals_naive_count() {
        // Deterministic pseudo-random records from a simple LCG.
        let mut x: u64 = 12345;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut d1: Vec<f64> = (0..100_000).map(|_| next() * 1e6).collect();
        let mut d2: Vec<f64> = (0..100_000).map(|_| next() * 1e6).collect();
        d1.sort_by(f64::total_cmp);
        d2.sort_by(f64::total_cmp);
        let r = records(d1.clone(), d2.clone());
        let h = build_histogram(&r, 0.5, 30.0, HistogramMode::AllPairs).unwrap();
        let mut naive = CorrelationHistogram::new(0.5, 30.0, HistogramMode::AllPairs).unwrap();
        for &a in &d1 {
            let lo = d2.partition_point(|&t| t < a - 30.0);
            let hi = d2.partition_point(|&t| t <= a + 30.0);
            for &b in &d2[lo..hi] {
                naive.record(b - a);
            }
        }
        assert_eq!(h.counts, naive.counts);
    }

    #[test]
    fn merge_adds_binwise() {
        let r = records(vec![0.0], vec![5.0]);
        let mut a = build_histogram(&r, 0.25, 50.0, HistogramMode::AllPairs).unwrap();
        let b = a.clone();
        a.merge(&b).unwrap();
        assert_eq!(a.total(), 2);
        assert_eq!(a.total_pulses, 20);
        let c = build_histogram(&r, 0.5, 50.0, HistogramMode::AllPairs).unwrap();
        assert!(a.merge(&c).is_err());
    }
}

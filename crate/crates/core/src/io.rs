//! Dataset files: CSV tables with JSON sidecars, and the run manifest.
//!
//! | file               | header                                      |
//! |--------------------|---------------------------------------------|
//! | emission stream    | `pulse_index,time_ns,origin,polarization`   |
//! | detection records  | `detector,time_ns`                          |
//! | histogram          | `bin_center_ns,counts`                      |
//! | fitted histogram   | `bin_center_ns,counts,model`                |
//! | spectrum           | `wavelength_nm,intensity`                   |
//! | far field          | `kx_over_k,ky_over_k,intensity`             |
//!
//! Stream times are offsets from the pulse trigger; record times are absolute.
//! All times are ns, written with six decimals.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::spectrum::SpectrumSample;
use crate::detection::{DetectionRecord, DetectionRecords, Detector};
use crate::error::{Error, Result};
use crate::histogram::{AccumulationMeta, CorrelationHistogram, HistogramMode};
use crate::optics::FarFieldPattern;
use crate::source::{EmissionEvent, EmissionStream, Origin, Polarization};

pub const STREAM_HEADER: &str = "pulse_index,time_ns,origin,polarization";
pub const RECORDS_HEADER: &str = "detector,time_ns";
pub const HISTOGRAM_HEADER: &str = "bin_center_ns,counts";
pub const FIT_CURVE_HEADER: &str = "bin_center_ns,counts,model";
pub const SPECTRUM_HEADER: &str = "wavelength_nm,intensity";
pub const FAR_FIELD_HEADER: &str = "kx_over_k,ky_over_k,intensity";

/// What a CSV file holds, judged by its header line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    Stream,
    Records,
    Histogram,
    Spectrum,
}

pub fn detect_csv_kind(text: &str, source_name: &str) -> Result<CsvKind> {
    let header = text.lines().next().unwrap_or("").trim().replace(' ', "");
    match header.as_str() {
        STREAM_HEADER => Ok(CsvKind::Stream),
        RECORDS_HEADER => Ok(CsvKind::Records),
        HISTOGRAM_HEADER | FIT_CURVE_HEADER => Ok(CsvKind::Histogram),
        SPECTRUM_HEADER => Ok(CsvKind::Spectrum),
        _ => Err(Error::parse(source_name, 1, format!("unrecognized header `{header}`"))),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Domain(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
}

/// Sidecar path: `name.csv` → `name.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Reads data rows, checking the header and the column count. The closure
/// gets 1-based line numbers for error messages.
fn parse_rows<T>(
    text: &str,
    source_name: &str,
    header: &[&str],
    mut row: impl FnMut(&csv::StringRecord, usize) -> Result<T>,
) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
        .clone();
    if found.len() < header.len() || header.iter().zip(found.iter()).any(|(a, b)| *a != b) {
        return Err(Error::parse(
            source_name,
            1,
            format!("expected header `{}`, found `{}`", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(source_name, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push(row(&rec, line)?);
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, source: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(i).ok_or_else(|| Error::parse(source, line, format!("missing column `{name}`")))?;
    raw.parse()
        .map_err(|e| Error::parse(source, line, format!("column `{name}`: `{raw}`: {e}")))
}

// ---------------------------------------------------------------- stream

pub fn encode_stream_csv(stream: &EmissionStream) -> String {
    let mut s = String::with_capacity(40 * stream.events.len() + 64);
    s.push_str(STREAM_HEADER);
    s.push('\n');
    for e in &stream.events {
        let _ = writeln!(
            s,
            "{},{:.6},{},{}",
            e.pulse_index,
            e.time_offset_ns,
            e.origin.as_str(),
            e.polarization.as_str()
        );
    }
    s
}

fn parse_origin(s: &str) -> Option<Origin> {
    [Origin::QdLine, Origin::Background].into_iter().find(|o| o.as_str() == s)
}

fn parse_polarization(s: &str) -> Option<Polarization> {
    [Polarization::Linear, Polarization::Unpolarized].into_iter().find(|p| p.as_str() == s)
}

pub fn decode_stream_csv(text: &str, source_name: &str) -> Result<Vec<EmissionEvent>> {
    parse_rows(text, source_name, &STREAM_HEADER.split(',').collect::<Vec<_>>(), |rec, line| {
        let origin_raw: String = field(rec, 2, "origin", source_name, line)?;
        let pol_raw: String = field(rec, 3, "polarization", source_name, line)?;
        Ok(EmissionEvent {
            pulse_index: field(rec, 0, "pulse_index", source_name, line)?,
            time_offset_ns: field(rec, 1, "time_ns", source_name, line)?,
            origin: parse_origin(&origin_raw)
                .ok_or_else(|| Error::parse(source_name, line, format!("unknown origin `{origin_raw}`")))?,
            polarization: parse_polarization(&pol_raw)
                .ok_or_else(|| Error::parse(source_name, line, format!("unknown polarization `{pol_raw}`")))?,
        })
    })
}

// --------------------------------------------------------------- records

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordsMeta {
    pub n_pulses: u64,
    pub duration_ns: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn encode_records_csv(records: &DetectionRecords) -> String {
    let mut s = String::with_capacity(24 * records.len() + 32);
    s.push_str(RECORDS_HEADER);
    s.push('\n');
    for r in records.records() {
        let name = match r.detector {
            Detector::D1 => "D1",
            Detector::D2 => "D2",
        };
        let _ = writeln!(s, "{name},{:.6}", r.time_ns);
    }
    s
}

pub fn decode_records_csv(text: &str, source_name: &str, meta: Option<RecordsMeta>) -> Result<DetectionRecords> {
    let recs = parse_rows(text, source_name, &["detector", "time_ns"], |rec, line| {
        let det: String = field(rec, 0, "detector", source_name, line)?;
        let detector = match det.as_str() {
            "D1" => Detector::D1,
            "D2" => Detector::D2,
            other => return Err(Error::parse(source_name, line, format!("unknown detector `{other}`"))),
        };
        let time_ns: f64 = field(rec, 1, "time_ns", source_name, line)?;
        if !time_ns.is_finite() {
            return Err(Error::parse(source_name, line, "non-finite time"));
        }
        Ok(DetectionRecord { detector, time_ns })
    })?;
    let (n_pulses, duration_ns) = match meta {
        Some(m) => (m.n_pulses, m.duration_ns),
        None => (0, recs.iter().map(|r| r.time_ns).fold(0.0, f64::max)),
    };
    Ok(DetectionRecords::from_records(&recs, n_pulses, duration_ns))
}

// ------------------------------------------------------------- histogram

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSidecar {
    pub bin_width_ns: f64,
    pub window_ns: f64,
    pub mode: HistogramMode,
    pub total_pulses: u64,
    pub seed: Option<u64>,
    #[serde(default)]
    pub d1_records: u64,
    #[serde(default)]
    pub d2_records: u64,
    #[serde(default)]
    pub duration_ns: f64,
}

impl HistogramSidecar {
    pub fn of(hist: &CorrelationHistogram) -> Self {
        HistogramSidecar {
            bin_width_ns: hist.bin_width_ns,
            window_ns: hist.window_ns,
            mode: hist.mode,
            total_pulses: hist.total_pulses,
            seed: hist.meta.seed,
            d1_records: hist.meta.d1_records,
            d2_records: hist.meta.d2_records,
            duration_ns: hist.meta.duration_ns,
        }
    }
}

pub fn encode_histogram_csv(hist: &CorrelationHistogram) -> String {
    let mut s = String::with_capacity(24 * hist.len() + 32);
    s.push_str(HISTOGRAM_HEADER);
    s.push('\n');
    for (i, c) in hist.counts.iter().enumerate() {
        let _ = writeln!(s, "{:.6},{c}", hist.bin_center(i));
    }
    s
}

pub fn encode_fit_curve_csv(hist: &CorrelationHistogram, model: &[f64]) -> String {
    let mut s = String::with_capacity(40 * hist.len() + 32);
    s.push_str(FIT_CURVE_HEADER);
    s.push('\n');
    for (i, (c, m)) in hist.counts.iter().zip(model).enumerate() {
        let _ = writeln!(s, "{:.6},{c},{m:.6}", hist.bin_center(i));
    }
    s
}

/// Parses a histogram table. Without a sidecar the bin width is taken from
/// the spacing of the bin centres and the remaining metadata is left empty.
pub fn decode_histogram_csv(text: &str, source_name: &str, sidecar: Option<&HistogramSidecar>) -> Result<CorrelationHistogram> {
    let rows = parse_rows(text, source_name, &["bin_center_ns", "counts"], |rec, line| {
        let center: f64 = field(rec, 0, "bin_center_ns", source_name, line)?;
        let raw = rec.get(1).unwrap_or("");
        // Accept integral floats such as `12.0` as well.
        let count = raw.parse::<u64>().or_else(|_| {
            raw.parse::<f64>()
                .ok()
                .filter(|v| *v >= 0.0 && v.fract() == 0.0 && *v < 1.8e19)
                .map(|v| v as u64)
                .ok_or(())
        });
        let count = count.map_err(|_| Error::parse(source_name, line, format!("column `counts`: `{raw}` is not a count")))?;
        Ok((center, count, line))
    })?;
    if rows.is_empty() {
        return Err(Error::parse(source_name, 2, "histogram has no bins"));
    }
    let meta = match sidecar {
        Some(m) => m.clone(),
        None => {
            if rows.len() < 2 {
                return Err(Error::parse(source_name, 2, "cannot infer the bin width from a single bin"));
            }
            let bw = rows[1].0 - rows[0].0;
            HistogramSidecar {
                bin_width_ns: bw,
                window_ns: 0.5 * bw * rows.len() as f64,
                mode: HistogramMode::AllPairs,
                total_pulses: 0,
                seed: None,
                d1_records: 0,
                d2_records: 0,
                duration_ns: 0.0,
            }
        }
    };
    let mut hist = CorrelationHistogram::new(meta.bin_width_ns, meta.window_ns, meta.mode)
        .map_err(|e| Error::parse(source_name, 0, e.to_string()))?;
    if hist.len() != rows.len() {
        return Err(Error::parse(
            source_name,
            0,
            format!("metadata implies {} bins, file has {}", hist.len(), rows.len()),
        ));
    }
    for (i, &(center, count, line)) in rows.iter().enumerate() {
        let tolerance = 1e-3 * meta.bin_width_ns;
        if (center - hist.bin_center(i)).abs() > tolerance.max(2e-6) {
            return Err(Error::parse(
                source_name,
                line,
                format!("bin centre {center} does not match the expected {}", hist.bin_center(i)),
            ));
        }
        hist.counts[i] = count;
    }
    hist.total_pulses = meta.total_pulses;
    hist.meta = AccumulationMeta {
        seed: meta.seed,
        d1_records: meta.d1_records,
        d2_records: meta.d2_records,
        duration_ns: meta.duration_ns,
    };
    Ok(hist)
}

// -------------------------------------------------------------- spectrum

pub fn encode_spectrum_csv(samples: &[SpectrumSample]) -> String {
    let mut s = String::from(SPECTRUM_HEADER);
    s.push('\n');
    for p in samples {
        let _ = writeln!(s, "{:.6},{:e}", p.wavelength_nm, p.intensity);
    }
    s
}

pub fn decode_spectrum_csv(text: &str, source_name: &str) -> Result<Vec<SpectrumSample>> {
    parse_rows(text, source_name, &["wavelength_nm", "intensity"], |rec, line| {
        Ok(SpectrumSample {
            wavelength_nm: field(rec, 0, "wavelength_nm", source_name, line)?,
            intensity: field(rec, 1, "intensity", source_name, line)?,
        })
    })
}

// ------------------------------------------------------------- far field

pub fn encode_far_field_csv(pattern: &FarFieldPattern) -> String {
    let mut s = String::from(FAR_FIELD_HEADER);
    s.push('\n');
    for (u, v, i) in pattern.propagating_samples() {
        let _ = writeln!(s, "{u:.8},{v:.8},{i:.10e}");
    }
    s
}

// -------------------------------------------------------------- manifest

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    /// Relative to the manifest's directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub files: Vec<ManifestFile>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    /// Hashes `files` (relative to `dir`) and writes `dir/manifest.json`.
    pub fn write(
        dir: &Path,
        command: &str,
        config_hash: &str,
        seed: u64,
        started_unix: u64,
        files: &[String],
    ) -> Result<RunManifest> {
        let mut entries = Vec::with_capacity(files.len());
        for f in files {
            let (bytes, sha256) = sha256_file(&dir.join(f))?;
            entries.push(ManifestFile {
                path: f.clone(),
                bytes,
                sha256,
            });
        }
        let manifest = RunManifest {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            started_unix,
            finished_unix: unix_now(),
            files: entries,
        };
        write_json(&dir.join(MANIFEST_NAME), &manifest)?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<RunManifest> {
        read_json(&dir.join(MANIFEST_NAME))
    }

    /// Problems found when checking the listed files; empty when all match.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        let mut problems = Vec::new();
        for f in &self.files {
            match sha256_file(&dir.join(&f.path)) {
                Err(e) => problems.push(format!("{}: {e}", f.path)),
                Ok((bytes, sha)) => {
                    if bytes != f.bytes {
                        problems.push(format!("{}: size {bytes} != recorded {}", f.path, f.bytes));
                    } else if sha != f.sha256 {
                        problems.push(format!("{}: checksum mismatch", f.path));
                    }
                }
            }
        }
        problems
    }
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;

use sps_core::io::{self, CsvKind, HistogramSidecar, RecordsMeta, RunManifest};
use sps_core::optics::grid_io::read_grid;
use sps_core::pipeline::{
    analyze_histogram, analyze_records, analyze_spectrum, analyze_stream_lifetime, model_curve, run_optics,
    run_pipeline, simulate, CountSummary, PipelineReport, Provenance, SimulationSummary,
};
use sps_core::{Error, ExperimentConfig};

use crate::{Cli, Command};

const DEFAULT_OUT: &str = "sps-out";

/// Files written by one command, relative to the output directory.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn create(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Output { dir, files: Vec::new() })
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        io::write_text(&self.dir.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        io::write_json(&self.dir.join(name), value)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(self, command: &str, cfg: &ExperimentConfig, started: u64) -> Result<()> {
        RunManifest::write(&self.dir, command, &cfg.hash(), cfg.seed, started, &self.files)?;
        println!("wrote {} files to {}", self.files.len() + 1, self.dir.display());
        Ok(())
    }
}

struct RunContext {
    cfg: ExperimentConfig,
    /// Directory relative paths in the config are resolved against.
    base: PathBuf,
    out: PathBuf,
}

fn load_context(cli: &Cli) -> Result<RunContext> {
    let (mut cfg, base) = match &cli.global.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, base)
        }
        None => (ExperimentConfig::reference_defaults(), PathBuf::new()),
    };
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    let out = cli
        .global
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok(RunContext { cfg, base, out })
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut ctx = load_context(cli)?;
    let started = io::unix_now();
    match &cli.command {
        Command::Simulate { pulses, pump } => {
            if let Some(n) = pulses {
                ctx.cfg.excitation.n_pulses = *n;
            }
            if let Some(p) = pump {
                ctx.cfg.excitation.pump_power_uw = *p;
            }
            ctx.cfg.validate()?;
            cmd_simulate(&ctx, started)
        }
        Command::Analyze { input } => cmd_analyze(&ctx, input, started),
        Command::Pipeline { powers, pulses } => {
            if let Some(n) = pulses {
                ctx.cfg.excitation.n_pulses = *n;
            }
            ctx.cfg.validate()?;
            let powers = match powers {
                Some(p) => p.clone(),
                None => ctx
                    .cfg
                    .pipeline
                    .as_ref()
                    .map(|p| p.powers_uw.clone())
                    .ok_or_else(|| Error::Config("no powers: pass --powers or set [pipeline] powers_uw".into()))?,
            };
            cmd_pipeline(&ctx, &powers, started)
        }
        Command::Optics { near_field } => cmd_optics(&ctx, near_field.as_deref(), started),
        Command::Report { dir } => cmd_report(dir.as_deref().unwrap_or(&ctx.out)),
    }
}

#[derive(Serialize)]
struct SimulationReport {
    provenance: Provenance,
    summary: SimulationSummary,
}

fn cmd_simulate(ctx: &RunContext, started: u64) -> Result<()> {
    let cfg = &ctx.cfg;
    let sim = simulate(cfg)?;
    let summary = sim.summary(cfg)?;
    let mut out = Output::create(ctx.out.clone())?;
    out.text("config.toml", &cfg.to_toml_string())?;
    out.text("stream.csv", &io::encode_stream_csv(&sim.stream))?;
    out.text("records.csv", &io::encode_records_csv(&sim.records))?;
    out.json(
        "records.json",
        &RecordsMeta {
            n_pulses: sim.records.n_pulses,
            duration_ns: sim.records.duration_ns,
            seed: Some(cfg.seed),
        },
    )?;
    out.json(
        "simulation.json",
        &SimulationReport {
            provenance: Provenance::new(cfg, None),
            summary: summary.clone(),
        },
    )?;
    println!(
        "{} pulses: {} photons emitted ({} dot, {} background), {} + {} detections ({:.3e} per pulse, expected {:.3e})",
        summary.n_pulses,
        summary.emitted_photons,
        summary.qd_photons,
        summary.background_photons,
        summary.d1_records,
        summary.d2_records,
        summary.detected_per_pulse,
        summary.expected_detected_per_pulse
    );
    out.finish("simulate", cfg, started)
}

fn cmd_analyze(ctx: &RunContext, input: &Path, started: u64) -> Result<()> {
    let cfg = &ctx.cfg;
    let name = input.display().to_string();
    let text = io::read_text(input)?;
    let kind = io::detect_csv_kind(&text, &name)?;
    let sidecar = io::sidecar_path(input);
    let has_sidecar = sidecar.is_file() && sidecar != input;
    let provenance = Provenance::new(cfg, Some(name.clone()));
    let mut out = Output::create(ctx.out.clone())?;
    match kind {
        CsvKind::Records => {
            let meta: Option<RecordsMeta> = if has_sidecar { Some(io::read_json(&sidecar)?) } else { None };
            let mut records = io::decode_records_csv(&text, &name, meta)?;
            let mut extra = Vec::new();
            if meta.is_none() {
                let period = cfg.excitation.rep_period_ns;
                records.n_pulses = (records.duration_ns / period).ceil().max(1.0) as u64;
                records.duration_ns = records.n_pulses as f64 * period;
                extra.push(format!(
                    "no sidecar: run length inferred from the last record ({} pulses)",
                    records.n_pulses
                ));
            }
            let (hist, mut report) = analyze_records(&records, cfg, provenance)?;
            report.notices.extend(extra);
            out.text("histogram.csv", &io::encode_histogram_csv(&hist))?;
            out.json("histogram.json", &HistogramSidecar::of(&hist))?;
            out.text("fit.csv", &io::encode_fit_curve_csv(&hist, &model_curve(&hist, &report)))?;
            out.json("analysis.json", &report)?;
            print_fit(&report);
        }
        CsvKind::Histogram => {
            let side: Option<HistogramSidecar> = if has_sidecar { Some(io::read_json(&sidecar)?) } else { None };
            let hist = io::decode_histogram_csv(&text, &name, side.as_ref())?;
            let counts = side.as_ref().filter(|s| s.duration_ns > 0.0).map(|s| CountSummary {
                detections: s.d1_records + s.d2_records,
                duration_ns: s.duration_ns,
            });
            let report = analyze_histogram(&hist, cfg, counts, provenance)?;
            out.text("fit.csv", &io::encode_fit_curve_csv(&hist, &model_curve(&hist, &report)))?;
            out.json("analysis.json", &report)?;
            print_fit(&report);
        }
        CsvKind::Spectrum => {
            let samples = io::decode_spectrum_csv(&text, &name)?;
            let report = analyze_spectrum(&samples, provenance)?;
            let f = &report.fit;
            println!(
                "center {:.4} nm, FWHM {:.4} ± {:.4} nm, Q = {:.1} ± {:.1}",
                f.params.center_nm, f.params.fwhm_nm, f.sigma_fwhm_nm, f.q, f.sigma_q
            );
            out.json("spectrum.json", &report)?;
        }
        CsvKind::Stream => {
            let events = io::decode_stream_csv(&text, &name)?;
            let report = analyze_stream_lifetime(&events, cfg.analysis.bin_width_ns, provenance)?;
            println!(
                "{} delays: tau = {:.4} ± {:.4} ns",
                report.events, report.fit.tau_ns, report.fit.sigma_tau_ns
            );
            out.json("lifetime.json", &report)?;
        }
    }
    out.finish("analyze", cfg, started)
}

fn print_fit(report: &sps_core::pipeline::AnalysisReport) {
    let f = &report.fit;
    println!(
        "g2(0) = {:.4} ± {:.4} (A0 = {:.1}, A_side = {:.1}, chi2/dof = {:.3})",
        f.g2_zero, f.sigma_g2, f.area_central, f.area_side, f.chi2_per_dof
    );
    if let Some(p) = &report.efficiency {
        println!("<n> = {:.4} ± {:.4}, eta = {:.4} ± {:.4}", p.n_mean, p.sigma_n_mean, p.eta, p.sigma_eta);
    }
    for n in &report.notices {
        println!("note: {n}");
    }
}

fn efficiency_table(report: &PipelineReport) -> String {
    let mut s = String::from("pump_power_uw,n_mean,sigma_n_mean,g2_zero,sigma_g2,eta,sigma_eta,multiphoton_bound\n");
    for r in &report.powers {
        let p = &r.point;
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.pump_power_uw, p.n_mean, p.sigma_n_mean, p.g2_zero, p.sigma_g2, p.eta, p.sigma_eta, r.multiphoton_bound
        );
    }
    s
}

fn cmd_pipeline(ctx: &RunContext, powers: &[f64], started: u64) -> Result<()> {
    let cfg = &ctx.cfg;
    let report = run_pipeline(cfg, powers)?;
    let mut out = Output::create(ctx.out.clone())?;
    out.text("config.toml", &cfg.to_toml_string())?;
    out.text("efficiency.csv", &efficiency_table(&report))?;
    out.json("pipeline.json", &report)?;
    println!("{:>10} {:>10} {:>10} {:>10}", "P (µW)", "<n>", "g2(0)", "eta");
    for r in &report.powers {
        println!(
            "{:>10.3} {:>10.4} {:>10.4} {:>10.4}",
            r.pump_power_uw, r.point.n_mean, r.point.g2_zero, r.point.eta
        );
    }
    if let Some(s) = &report.saturation {
        println!(
            "saturation fit: eta_max = {:.4} ± {:.4}, P_sat = {:.3} ± {:.3} µW",
            s.eta_max, s.sigma_eta_max, s.p_sat_uw, s.sigma_p_sat
        );
    }
    if let Some(c) = &report.cavity {
        println!(
            "cavity: F_p = {:.3} ± {:.3}, beta = {:.3} ± {:.3}, eta_extract = {:.3} ± {:.3}, expected eta = {:.3} ± {:.3}",
            c.purcell.value,
            c.purcell.sigma,
            c.beta.value,
            c.beta.sigma,
            c.eta_extract.value,
            c.eta_extract.sigma,
            c.eta_expected.value,
            c.eta_expected.sigma
        );
    }
    for n in &report.notices {
        println!("note: {n}");
    }
    out.finish("pipeline", cfg, started)
}

fn cmd_optics(ctx: &RunContext, near_field: Option<&Path>, started: u64) -> Result<()> {
    let cfg = &ctx.cfg;
    let optics = cfg
        .optics
        .as_ref()
        .ok_or_else(|| Error::Config("configuration has no [optics] section".into()))?;
    let grid_path = near_field
        .map(Path::to_path_buf)
        .or_else(|| optics.near_field.as_ref().map(|p| ctx.base.join(p)));
    let grid = match &grid_path {
        Some(p) => Some(read_grid(p).map_err(|e| e.at_stage("near field"))?),
        None => None,
    };
    let (report, pattern) = run_optics(optics, grid.as_ref())?;
    let mut out = Output::create(ctx.out.clone())?;
    if let Some(p) = &pattern {
        out.text("far_field.csv", &io::encode_far_field_csv(p))?;
    }
    out.json("optics.json", &report)?;
    println!(
        "V = {:.4}, w0 = {:.5} µm, divergence = {:.4} rad",
        report.waist.v_number, report.waist.waist_um, report.divergence.theta_rad
    );
    if let Some(c) = &report.collection {
        println!("lens collection fraction = {:.4}", c.fraction);
    }
    if let Some(c) = &report.calibration {
        println!(
            "collecting {:.3} needs a lens half-angle of {:.4} rad (NA {:.4})",
            c.target_fraction, c.lens_half_angle_rad, c.numerical_aperture
        );
    }
    if let Some(f) = &report.far_field {
        println!(
            "far field {} x {}: Parseval error {:.2e}, propagating fraction {:.6}",
            f.nu,
            f.nv,
            f.parseval_relative_error,
            f.propagating_power / f.total_spectral_power
        );
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    out.finish("optics", cfg, started)
}

fn cmd_report(dir: &Path) -> Result<()> {
    let manifest = RunManifest::load(dir)?;
    println!(
        "{} run, toolkit {}, seed {}, config {}",
        manifest.command,
        manifest.toolkit_version,
        manifest.seed,
        &manifest.config_hash[..manifest.config_hash.len().min(12)]
    );
    for f in &manifest.files {
        println!("  {:<20} {:>12} bytes  {}", f.path, f.bytes, &f.sha256[..12]);
    }
    let problems = manifest.verify(dir);
    if problems.is_empty() {
        println!("all {} files match the manifest", manifest.files.len());
        Ok(())
    } else {
        for p in &problems {
            println!("mismatch: {p}");
        }
        Err(Error::parse(
            dir.join(io::MANIFEST_NAME).display().to_string(),
            0,
            format!("{} of {} files do not match", problems.len(), manifest.files.len()),
        )
        .into())
    }
}

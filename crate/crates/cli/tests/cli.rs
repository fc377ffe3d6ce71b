use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use num_complex::Complex64;
use serde_json::Value;
use sps_core::optics::grid_io::encode_binary;
use sps_core::{ExperimentConfig, FieldGrid, LaserParams};
use tempfile::TempDir;

fn sps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sps")).args(args).output().expect("run sps")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, cfg.to_toml_string()).unwrap();
    p
}

/// Reference source behind a high-efficiency channel.
fn bright_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::reference_defaults();
    cfg.channel.lens = 1.0;
    cfg.channel.detector = 0.35;
    cfg
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file() && p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn unpumped_single_pulse_writes_header_only_stream() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let r = sps(&["--out", path(&out), "simulate", "--pulses", "1", "--pump", "0"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(std::fs::read_to_string(out.join("stream.csv")).unwrap(), "pulse_index,time_ns,origin,polarization\n");
    assert_eq!(std::fs::read_to_string(out.join("records.csv")).unwrap(), "detector,time_ns\n");
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &bright_config());
    let mut runs = Vec::new();
    for (i, threads) in ["1", "4", "1"].iter().enumerate() {
        let sim = tmp.path().join(format!("sim{i}"));
        let pipe = tmp.path().join(format!("pipe{i}"));
        let c = path(&cfg);
        let r = sps(&["--config", c, "--threads", threads, "--out", path(&sim), "simulate", "--pulses", "100000"]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        let r = sps(&[
            "--config", c, "--threads", threads, "--out", path(&pipe), "pipeline", "--powers", "1,3,10.9", "--pulses", "100000",
        ]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        runs.push((data_files(&sim), data_files(&pipe)));
    }
    assert_eq!(runs[0].0.len(), 5);
    assert_eq!(runs[0].1.len(), 3);
    assert!(runs.iter().all(|r| r == &runs[0]));

    let other = tmp.path().join("other");
    let r = sps(&["--config", path(&cfg), "--seed", "7", "--out", path(&other), "simulate", "--pulses", "100000"]);
    assert_eq!(code(&r), 0);
    assert_ne!(
        std::fs::read(other.join("records.csv")).unwrap(),
        std::fs::read(tmp.path().join("sim0/records.csv")).unwrap()
    );
}

#[test]
fn simulate_then_analyze_recovers_g2() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &bright_config());
    let sim = tmp.path().join("sim");
    let ana = tmp.path().join("ana");
    assert_eq!(code(&sps(&["--config", path(&cfg), "--out", path(&sim), "simulate"])), 0);
    let r = sps(&["--config", path(&cfg), "--out", path(&ana), "analyze", path(&sim.join("records.csv"))]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let report = json(&ana.join("analysis.json"));
    let g2 = report["fit"]["g2_zero"].as_f64().unwrap();
    assert!((g2 - 0.14).abs() <= 0.03, "g2 = {g2}");
    assert!(report["efficiency"]["eta"].as_f64().unwrap() > 0.25);
    assert_eq!(report["provenance"]["seed"].as_u64(), Some(20_021));

    // The written histogram and its sidecar give the same fit.
    let again = tmp.path().join("again");
    let r = sps(&["--config", path(&cfg), "--out", path(&again), "analyze", path(&ana.join("histogram.csv"))]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let report2 = json(&again.join("analysis.json"));
    assert_eq!(report2["fit"], report["fit"]);
    assert_eq!(report2["efficiency"]["n_mean"], report["efficiency"]["n_mean"]);

    // Lifetime from the emission stream.
    let life = tmp.path().join("life");
    let r = sps(&["--config", path(&cfg), "--out", path(&life), "analyze", path(&sim.join("stream.csv"))]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let tau = json(&life.join("lifetime.json"))["fit"]["tau_ns"].as_f64().unwrap();
    assert!((tau - 4.4).abs() < 0.05, "tau = {tau}");
}

#[test]
fn coherent_light_records_give_unit_g2() {
    let tmp = TempDir::new().unwrap();
    let mut c = ExperimentConfig::reference_defaults();
    c.laser = Some(LaserParams {
        mean_photons: LaserParams::mean_for_probability(0.1),
        pulse_tau_ns: 0.5,
    });
    c.channel = sps_core::ChannelEfficiencies::ideal();
    let cfg = write_config(tmp.path(), "laser.toml", &c);
    let sim = tmp.path().join("sim");
    let ana = tmp.path().join("ana");
    assert_eq!(code(&sps(&["--config", path(&cfg), "--out", path(&sim), "simulate"])), 0);
    let r = sps(&["--config", path(&cfg), "--out", path(&ana), "analyze", path(&sim.join("records.csv"))]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let g2 = json(&ana.join("analysis.json"))["fit"]["g2_zero"].as_f64().unwrap();
    assert!((g2 - 1.0).abs() <= 0.05, "g2 = {g2}");
}

#[test]
fn spectrum_analysis_reports_q() {
    let tmp = TempDir::new().unwrap();
    let samples = sps_core::analysis::spectrum::synthetic_spectrum(855.0, 628.0, 100.0, 2.0, 401, 8.0);
    let input = tmp.path().join("spectrum.csv");
    std::fs::write(&input, sps_core::io::encode_spectrum_csv(&samples)).unwrap();
    let out = tmp.path().join("out");
    let r = sps(&["--out", path(&out), "analyze", path(&input)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let q = json(&out.join("spectrum.json"))["fit"]["q"].as_f64().unwrap();
    assert!((q / 628.0 - 1.0).abs() < 1e-4, "Q = {q}");
}

#[test]
fn all_zero_histogram_is_a_fit_error() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::from("bin_center_ns,counts\n");
    for i in 0..832 {
        text.push_str(&format!("{},0\n", -104.0 + 0.125 + 0.25 * i as f64));
    }
    let input = tmp.path().join("zeros.csv");
    std::fs::write(&input, text).unwrap();
    let r = sps(&["--out", path(&tmp.path().join("o")), "analyze", path(&input)]);
    assert_eq!(code(&r), 5);
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.starts_with("error[fit]:") && err.contains("empty"), "{err}");
}

#[test]
fn exit_codes_distinguish_failure_classes() {
    let tmp = TempDir::new().unwrap();
    // usage
    assert_eq!(code(&sps(&["frobnicate"])), 2);
    assert_eq!(code(&sps(&["simulate", "--pulses", "many"])), 2);
    // I/O
    assert_eq!(code(&sps(&["--config", path(&tmp.path().join("missing.toml")), "simulate"])), 4);
    let garbage = tmp.path().join("garbage.csv");
    std::fs::write(&garbage, "what,is,this\n1,2,3\n").unwrap();
    assert_eq!(code(&sps(&["--out", path(&tmp.path().join("o")), "analyze", path(&garbage)])), 4);
    // config: unknown key and out-of-range value
    let text = ExperimentConfig::reference_defaults().to_toml_string();
    let typo = tmp.path().join("typo.toml");
    std::fs::write(&typo, text.replacen("lens =", "lense =", 1)).unwrap();
    let r = sps(&["--config", path(&typo), "simulate"]);
    assert_eq!(code(&r), 3);
    assert!(String::from_utf8_lossy(&r.stderr).contains("lense"));
    let mut bad = ExperimentConfig::reference_defaults();
    bad.channel.lens = 1.5;
    let bad_path = tmp.path().join("bad.toml");
    std::fs::write(&bad_path, toml_with_lens(&text, 1.5)).unwrap();
    let r = sps(&["--config", path(&bad_path), "simulate"]);
    assert_eq!(code(&r), 3);
    assert!(String::from_utf8_lossy(&r.stderr).contains("channel.lens"));
    assert!(bad.validate().is_err());
}

fn toml_with_lens(text: &str, lens: f64) -> String {
    text.lines()
        .map(|l| if l.starts_with("lens =") { format!("lens = {lens}") } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn report_verifies_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(code(&sps(&["--out", path(&out), "simulate", "--pulses", "1000"])), 0);
    let r = sps(&["report", path(&out)]);
    assert_eq!(code(&r), 0);
    assert!(String::from_utf8_lossy(&r.stdout).contains("all 5 files match"));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert!(manifest["started_unix"].as_u64().unwrap() > 0);

    std::fs::write(out.join("records.csv"), "detector,time_ns\nD1,1.0\n").unwrap();
    let r = sps(&["report", path(&out)]);
    assert_eq!(code(&r), 4);
    assert!(String::from_utf8_lossy(&r.stdout).contains("records.csv"));
}

#[test]
fn single_power_pipeline_skips_saturation_fit() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &bright_config());
    let out = tmp.path().join("p");
    let r = sps(&["--config", path(&cfg), "--out", path(&out), "pipeline", "--powers", "10.9", "--pulses", "200000"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let report = json(&out.join("pipeline.json"));
    assert!(report["saturation"].is_null());
    assert_eq!(report["powers"].as_array().unwrap().len(), 1);
    assert!(report["notices"][0].as_str().unwrap().contains("saturation fit skipped"));
    let beta = report["cavity"]["beta"]["value"].as_f64().unwrap();
    assert!((beta - 0.8268).abs() < 1e-4);
    let table = std::fs::read_to_string(out.join("efficiency.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn optics_with_and_without_near_field() {
    let tmp = TempDir::new().unwrap();
    let mut c = ExperimentConfig::reference_defaults();
    c.optics.as_mut().unwrap().calibrate_collection = None;
    let cfg = write_config(tmp.path(), "c.toml", &c);
    let plain = tmp.path().join("plain");
    let r = sps(&["--config", path(&cfg), "--out", path(&plain), "optics"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let report = json(&plain.join("optics.json"));
    assert!((report["waist"]["waist_um"].as_f64().unwrap() - 0.21916).abs() < 1e-5);
    assert!(report["divergence"]["theta_rad"].as_f64().is_some());
    assert!(report.get("far_field").is_none_or(Value::is_null));
    assert!(!plain.join("far_field.csv").exists());

    let w0 = 1.0;
    let grid = FieldGrid::from_fn(64, 64, 0.1, 0.1, |x, y| Complex64::from((-(x * x + y * y) / (w0 * w0)).exp())).unwrap();
    let grid_path = tmp.path().join("nf.bin");
    std::fs::write(&grid_path, encode_binary(&grid)).unwrap();
    let ff = tmp.path().join("ff");
    let r = sps(&["--config", path(&cfg), "--out", path(&ff), "optics", "--near-field", path(&grid_path)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let report = json(&ff.join("optics.json"));
    let u = report["far_field"]["half_width_1e2"].as_f64().unwrap();
    let theta = 0.855 / (std::f64::consts::PI * w0);
    assert!((u / theta - 1.0).abs() < 0.02, "{u} vs {theta}");
    let csv = std::fs::read_to_string(ff.join("far_field.csv")).unwrap();
    assert!(csv.starts_with("kx_over_k,ky_over_k,intensity\n"));

    // The default configuration asks for the lens calibration.
    let cal = tmp.path().join("cal");
    assert_eq!(code(&sps(&["--out", path(&cal), "optics"])), 0);
    let a = json(&cal.join("optics.json"))["calibration"]["lens_half_angle_rad"].as_f64().unwrap();
    assert!(a > 0.0 && a < std::f64::consts::FRAC_PI_2);
}

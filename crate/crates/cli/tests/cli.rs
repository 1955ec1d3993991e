//! End-to-end subcommand behaviour on desk-sized scenarios.

use pbr_cli::iqfile;
use pbr_core::scenario::ArrayGeometry;
use std::path::{Path, PathBuf};
use std::process::Command;

fn pbr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pbr"))
}

fn write_small_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"
[signal]
sample_rate_hz = 20000.0
duration_s = 0.1
fm_deviation_hz = 3750.0
seed = 3

[array]
num_antennas = 4
spacing_m = 1.5
wavelength_m = 3.0

[scenario]
direct_path_angle_deg = 90.0
direct_path_amplitude = 1.0
noise_power = 1e-4
seed = 9
delay_convention = "circular"

[[clutter]]
delay_samples = 3
angle_deg = 40.0
amplitude = 0.4

[[targets]]
delay_samples = 10
doppler_hz = 100.0
angle_deg = 60.0
amplitude = 0.1
phase_deg = 20.0

[cancellation]
delay_taps = 16
doppler_bins = 1
eca_data_window_s = 0.09
strong_delay_margin = 3
strong_doppler_margin = 3
strong_delay_span = "from-zero"

[detector]
max_delay_bins = 24
doppler_span_hz = 200.0
threshold_db = 13.0
guard_bins = 5
max_passes = 4
relative_window_db = 15.0
antenna_sum = "incoherent"

[beamform]
grid_step_deg = 0.5
"#;

#[test]
fn simulate_writes_expected_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path(), SMALL);
    for out in ["a", "b"] {
        let status = pbr()
            .args(["simulate", "--config"])
            .arg(&cfg)
            .args(["--out-dir"])
            .arg(dir.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let bytes_a = std::fs::read(dir.path().join("a/array_data.iq")).unwrap();
    let bytes_b = std::fs::read(dir.path().join("b/array_data.iq")).unwrap();
    assert_eq!(bytes_a, bytes_b, "same seed must give identical captures");
    assert!(dir.path().join("a/truth.json").exists());
    assert!(dir.path().join("a/manifest.json").exists());

    // 2000 samples x 4 antennas at f32 interleaved + 22-byte header
    assert_eq!(bytes_a.len(), 22 + 2000 * 4 * 8);
    assert_eq!(&bytes_a[..6], iqfile::MAGIC);
}

#[test]
fn seed_override_changes_the_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path(), SMALL);
    let mut base = pbr();
    base.args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path().join("a"));
    assert!(base.status().unwrap().success());
    let mut other = pbr();
    other
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--seed", "1234", "--out-dir"])
        .arg(dir.path().join("b"));
    assert!(other.status().unwrap().success());
    let a = std::fs::read(dir.path().join("a/array_data.iq")).unwrap();
    let b = std::fs::read(dir.path().join("b/array_data.iq")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn iq_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path(), SMALL);
    assert!(pbr()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path())
        .status()
        .unwrap()
        .success());
    let iq_path = dir.path().join("array_data.iq");
    let geom = ArrayGeometry::new(4, 1.5, 3.0).unwrap();
    let data = iqfile::read(&iq_path, geom).unwrap();
    let copy_path = dir.path().join("copy.iq");
    iqfile::write(&copy_path, &data).unwrap();
    assert_eq!(
        std::fs::read(&iq_path).unwrap(),
        std::fs::read(&copy_path).unwrap(),
        "write-read-write must reproduce the file bit for bit"
    );
}

#[test]
fn corrupt_config_key_exits_2_without_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    let broken = SMALL.replace("noise_power", "noise_pwoer");
    let cfg = write_small_config(dir.path(), &broken);
    let out_dir = dir.path().join("out");
    let output = pbr()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "schema violations exit 2");
    assert!(!out_dir.exists(), "no partial outputs on config errors");
}

#[test]
fn invalid_enum_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let broken = SMALL.replace("\"circular\"", "\"sideways\"");
    let cfg = write_small_config(dir.path(), &broken);
    let output = pbr()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn process_finds_the_small_target() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path(), SMALL);
    assert!(pbr()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path())
        .status()
        .unwrap()
        .success());
    assert!(pbr()
        .args(["process", "--iq"])
        .arg(dir.path().join("array_data.iq"))
        .args(["--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path())
        .status()
        .unwrap()
        .success());
    let csv = std::fs::read_to_string(dir.path().join("detections.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "pass,range_bin,range_m,doppler_hz,angle_deg,power_db"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1, "exactly the injected target: {csv}");
    let fields: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(fields[0], "1");
    let bin: i64 = fields[1].parse().unwrap();
    let doppler: f64 = fields[3].parse().unwrap();
    let angle: f64 = fields[4].parse().unwrap();
    assert!((bin - 10).abs() <= 1);
    assert!((doppler - 100.0).abs() <= 10.0 + 1e-9); // 0.1 s window resolution
    assert!((angle - 60.0).abs() <= 1.0);
    assert!(dir.path().join("rdmap_pass1.csv").exists());

    // processing the same capture twice is byte-identical
    assert!(pbr()
        .args(["process", "--iq"])
        .arg(dir.path().join("array_data.iq"))
        .args(["--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path().join("again"))
        .status()
        .unwrap()
        .success());
    assert_eq!(
        std::fs::read(dir.path().join("detections.csv")).unwrap(),
        std::fs::read(dir.path().join("again/detections.csv")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.path().join("rdmap_pass1.csv")).unwrap(),
        std::fs::read(dir.path().join("again/rdmap_pass1.csv")).unwrap()
    );
}

#[test]
fn noise_only_capture_yields_no_detections() {
    let dir = tempfile::tempdir().unwrap();
    let noise_cfg = SMALL
        .replace("direct_path_amplitude = 1.0", "direct_path_amplitude = 0.0")
        .replace("amplitude = 0.4", "amplitude = 0.0")
        .replace("amplitude = 0.1", "amplitude = 0.0");
    let cfg = write_small_config(dir.path(), &noise_cfg);
    assert!(pbr()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path())
        .status()
        .unwrap()
        .success());
    assert!(pbr()
        .args(["process", "--iq"])
        .arg(dir.path().join("array_data.iq"))
        .args(["--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path())
        .status()
        .unwrap()
        .success());
    let csv = std::fs::read_to_string(dir.path().join("detections.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "header only, got: {csv}");
}

#[test]
fn manifest_records_outputs_and_positive_timings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path(), SMALL);
    let started = std::time::Instant::now();
    assert!(pbr()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path())
        .status()
        .unwrap()
        .success());
    let wall_ms = started.elapsed().as_secs_f64() * 1000.0;
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    let outputs = manifest["stage_outputs"].as_object().unwrap();
    for (_stage, path) in outputs {
        assert!(
            Path::new(path.as_str().unwrap()).exists(),
            "manifest references a missing file {path}"
        );
    }
    let timings = manifest["timing_ms"].as_object().unwrap();
    assert!(!timings.is_empty());
    let total: f64 = timings.values().map(|v| v.as_f64().unwrap()).sum();
    assert!(total > 0.0);
    assert!(total <= wall_ms, "stage times {total} exceed wall clock {wall_ms}");
    assert_eq!(manifest["library_version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn compare_cancellers_reports_both_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path(), SMALL);
    assert!(pbr()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path())
        .status()
        .unwrap()
        .success());
    assert!(pbr()
        .args(["compare-cancellers", "--iq"])
        .arg(dir.path().join("array_data.iq"))
        .args(["--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path())
        .status()
        .unwrap()
        .success());
    let csv = std::fs::read_to_string(dir.path().join("canceller_report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "header + 2 canceller rows: {csv}");
    assert!(lines[1].starts_with("eca,"));
    assert!(lines[2].starts_with("meca,"));
    let eca: Vec<&str> = lines[1].split(',').collect();
    let meca: Vec<&str> = lines[2].split(',').collect();
    let eca_db: f64 = eca[1].parse().unwrap();
    let meca_db: f64 = meca[1].parse().unwrap();
    assert!(
        meca_db <= eca_db,
        "equal-window canceller must not lose at the clutter bins: {meca_db} vs {eca_db}"
    );
}

#[test]
fn compare_cancellers_agree_without_clutter() {
    let dir = tempfile::tempdir().unwrap();
    let clean = SMALL.replace("amplitude = 0.4", "amplitude = 0.0");
    let cfg = write_small_config(dir.path(), &clean);
    assert!(pbr()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path())
        .status()
        .unwrap()
        .success());
    assert!(pbr()
        .args(["compare-cancellers", "--iq"])
        .arg(dir.path().join("array_data.iq"))
        .args(["--config"])
        .arg(&cfg)
        .args(["--out-dir"])
        .arg(dir.path())
        .status()
        .unwrap()
        .success());
    let csv = std::fs::read_to_string(dir.path().join("canceller_report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let eca_db: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    let meca_db: f64 = lines[2].split(',').nth(1).unwrap().parse().unwrap();
    assert!(
        (eca_db - meca_db).abs() <= 1.0,
        "clutter-free residuals {eca_db} vs {meca_db}"
    );
}

#[test]
fn aaf_on_a_tone_has_flat_zero_doppler_cut() {
    let dir = tempfile::tempdir().unwrap();
    // single-antenna tone capture
    let fs = 20_000.0;
    let n = 2000usize;
    let geom = ArrayGeometry::new(1, 1.5, 3.0).unwrap();
    let mut data = pbr_core::scenario::ArrayData::zeros(n, fs, geom);
    for t in 0..n {
        let ph = 2.0 * std::f64::consts::PI * 500.0 * t as f64 / fs;
        data.matrix[[t, 0]] = num_complex::Complex64::from_polar(1.0, ph);
    }
    let iq = dir.path().join("tone.iq");
    iqfile::write(&iq, &data).unwrap();
    assert!(pbr()
        .args(["aaf", "--iq"])
        .arg(&iq)
        .args(["--out-dir"])
        .arg(dir.path())
        .args(["--max-delay", "16", "--doppler-span-hz", "100", "--mainlobe-guard", "2"])
        .status()
        .unwrap()
        .success());
    let cut = std::fs::read_to_string(dir.path().join("aaf_zero_doppler_cut.csv")).unwrap();
    for line in cut.lines().skip(1) {
        let db: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(db.abs() < 0.1, "tone delay cut should stay at 0 dB, got {db}");
    }
    // grid dims match the request: 17 delays x (2*10+1) Doppler bins
    let grid = std::fs::read_to_string(dir.path().join("aaf_grid.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines.len(), 1 + 17);
    assert_eq!(lines[0].split(',').count(), 1 + 21);
}

#[test]
fn aaf_requires_exactly_one_source() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_small_config(dir.path(), SMALL);
    let output = pbr()
        .args(["aaf", "--config"])
        .arg(&cfg)
        .args(["--iq", "also.iq", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

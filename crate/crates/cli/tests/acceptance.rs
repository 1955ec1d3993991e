//! Acceptance suite, command-line half: the bundled reference scenario scored
//! against its truth sidecar, waveform diagnostics, and byte-identical re-runs
//! (criterion 7).
//!
//! Run with `cargo test -p pbr-cli --test acceptance -- --nocapture`.

use std::path::{Path, PathBuf};
use std::process::Command;

fn pbr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pbr"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str], paths: &[(&str, &Path)]) {
    let mut cmd = pbr();
    cmd.args(args);
    for (flag, path) in paths {
        cmd.arg(flag).arg(path);
    }
    let status = cmd.status().unwrap();
    assert!(status.success(), "pbr {args:?} failed");
}

#[derive(Debug)]
struct DetRow {
    pass: usize,
    range_bin: i64,
    doppler_hz: f64,
    angle_deg: f64,
}

fn read_detections(path: &Path) -> Vec<DetRow> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            DetRow {
                pass: f[0].parse().unwrap(),
                range_bin: f[1].parse().unwrap(),
                doppler_hz: f[3].parse().unwrap(),
                angle_deg: f[4].parse().unwrap(),
            }
        })
        .collect()
}

/// Reference-scenario reproduction: the full chain recovers all four targets
/// within one range bin, one Doppler step and one degree of the truth sidecar,
/// finding the strong pair in pass 1 and the weak pair in pass 2.
#[test]
fn fig3_process_matches_truth_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("fig3.toml");
    run(
        &["simulate"],
        &[("--config", &cfg), ("--out-dir", dir.path())],
    );
    run(
        &["process"],
        &[
            ("--iq", &dir.path().join("array_data.iq")),
            ("--config", &cfg),
            ("--out-dir", dir.path()),
        ],
    );

    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("truth.json")).unwrap())
            .unwrap();
    let targets = truth["targets"].as_array().unwrap();
    let dets = read_detections(&dir.path().join("detections.csv"));
    assert_eq!(dets.len(), 4, "expected all four targets: {dets:?}");

    let mut strong_passes = Vec::new();
    let mut weak_passes = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        let bin = t["delay_samples"].as_i64().unwrap();
        let doppler = t["doppler_hz"].as_f64().unwrap();
        let angle = t["angle_deg"].as_f64().unwrap();
        let hit = dets
            .iter()
            .find(|d| (d.range_bin - bin).abs() <= 1 && (d.doppler_hz - doppler).abs() <= 1.0)
            .unwrap_or_else(|| panic!("target {i} at ({bin}, {doppler}) not detected: {dets:?}"));
        assert!(
            (hit.angle_deg - angle).abs() <= 1.0,
            "target {i}: angle {} vs truth {angle}",
            hit.angle_deg
        );
        if t["amplitude"].as_f64().unwrap() > 0.01 {
            strong_passes.push(hit.pass);
        } else {
            weak_passes.push(hit.pass);
        }
    }
    assert_eq!(strong_passes, vec![1, 1], "strong pair must fall in pass 1");
    assert_eq!(weak_passes, vec![2, 2], "weak pair must fall in pass 2");
    println!("acceptance: fig3 end-to-end truth comparison: PASS");
}

/// Waveform diagnostics: PSLR and strongest-sidelobe location of the bundled
/// illuminator, measured from the generated signal.
#[test]
fn aaf_summary_is_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("fig3.toml");
    run(&["aaf"], &[("--config", &cfg), ("--out-dir", dir.path())]);
    let summary = std::fs::read_to_string(dir.path().join("aaf_summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    let pslr: f64 = row[0].parse().unwrap();
    let sidelobe_hz: f64 = row[1].parse::<f64>().unwrap().abs();
    assert!(
        (15.0..=25.0).contains(&pslr),
        "waveform PSLR {pslr} dB out of range"
    );
    assert!(
        (40.0..=90.0).contains(&sidelobe_hz),
        "strongest sidelobe at {sidelobe_hz} Hz"
    );
    println!("acceptance: AAF diagnostics (PSLR {pslr:.1} dB, sidelobe {sidelobe_hz:.0} Hz): PASS");
}

fn strip_runtime_column(report: &str) -> String {
    report
        .lines()
        .map(|l| l.rsplit_once(',').map(|(head, _)| head).unwrap_or(l))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Criterion 7: re-running every acceptance scenario with the same seed
/// produces byte-identical data exports. Manifests carry wall-clock timings
/// and the comparison report a runtime column; those fields are the only
/// exclusions.
#[test]
fn criterion_7_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let fig3 = fixture("fig3.toml");
    let fig4 = fixture("fig4.toml");

    for sub in ["s1", "s2"] {
        run(
            &["simulate"],
            &[("--config", &fig3), ("--out-dir", &dir.path().join(sub))],
        );
    }
    for file in ["array_data.iq", "truth.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("s1").join(file)).unwrap(),
            std::fs::read(dir.path().join("s2").join(file)).unwrap(),
            "{file} differs between identical simulate runs"
        );
    }

    for sub in ["p1", "p2"] {
        run(
            &["process"],
            &[
                ("--iq", &dir.path().join("s1/array_data.iq")),
                ("--config", &fig3),
                ("--out-dir", &dir.path().join(sub)),
            ],
        );
    }
    for entry in std::fs::read_dir(dir.path().join("p1")).unwrap() {
        let name = entry.unwrap().file_name();
        let name = name.to_str().unwrap();
        if name == "manifest.json" {
            continue;
        }
        assert_eq!(
            std::fs::read(dir.path().join("p1").join(name)).unwrap(),
            std::fs::read(dir.path().join("p2").join(name)).unwrap(),
            "{name} differs between identical process runs"
        );
    }

    for sub in ["a1", "a2"] {
        run(
            &["aaf"],
            &[("--config", &fig3), ("--out-dir", &dir.path().join(sub))],
        );
    }
    for file in [
        "aaf_grid.csv",
        "aaf_zero_range_cut.csv",
        "aaf_zero_doppler_cut.csv",
        "aaf_summary.csv",
    ] {
        assert_eq!(
            std::fs::read(dir.path().join("a1").join(file)).unwrap(),
            std::fs::read(dir.path().join("a2").join(file)).unwrap(),
            "{file} differs between identical aaf runs"
        );
    }

    run(
        &["simulate"],
        &[("--config", &fig4), ("--out-dir", &dir.path().join("c"))],
    );
    for sub in ["c1", "c2"] {
        run(
            &["compare-cancellers"],
            &[
                ("--iq", &dir.path().join("c/array_data.iq")),
                ("--config", &fig4),
                ("--out-dir", &dir.path().join(sub)),
            ],
        );
    }
    let r1 = std::fs::read_to_string(dir.path().join("c1/canceller_report.csv")).unwrap();
    let r2 = std::fs::read_to_string(dir.path().join("c2/canceller_report.csv")).unwrap();
    assert_eq!(strip_runtime_column(&r1), strip_runtime_column(&r2));
    println!("acceptance criterion 7 (byte-identical re-runs): PASS");
}

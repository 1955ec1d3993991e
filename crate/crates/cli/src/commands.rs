//! The four batch commands: simulate, process, compare-cancellers, aaf.
//!
//! Commands validate all inputs before writing anything, so a rejected run
//! leaves no partial files behind.

use crate::config::Config;
use crate::iqfile;
use crate::manifest::{out_path, RunManifest, StageTimer};
use anyhow::{bail, Context};
use num_complex::Complex64;
use pbr_core::beamform::{
    angle_spectrum, estimate_angle, estimate_direct_path, extract_snapshot, DirectPathEstimate,
};
use pbr_core::cancellation::{build_eca_dictionary, build_meca_dictionary, ls_cancel, EcaConfig};
use pbr_core::detection::{sequential_detect, Detection, SequentialDetection};
use pbr_core::scenario::{simulate_array_data, ArrayData};
use pbr_core::signal::{auto_ambiguity, fm_modulate, pslr, synth_modulating_signal, ComplexSignal};
use serde::Serialize;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Canceller {
    Meca,
    Eca,
}

/// Ground-truth sidecar written next to the simulated IQ file so a later
/// processing run can score itself.
#[derive(Debug, Serialize)]
struct TruthSidecar {
    sample_rate_hz: f64,
    duration_s: f64,
    direct_path_angle_deg: f64,
    seed: u64,
    targets: Vec<TruthTarget>,
    clutter: Vec<TruthClutter>,
}

#[derive(Debug, Serialize)]
struct TruthTarget {
    delay_samples: usize,
    doppler_hz: f64,
    angle_deg: f64,
    amplitude: f64,
    phase_deg: f64,
}

#[derive(Debug, Serialize)]
struct TruthClutter {
    delay_samples: usize,
    angle_deg: f64,
    amplitude: f64,
    phase_deg: f64,
}

fn synthesize_waveform(cfg: &Config, duration_s: f64, seed: Option<u64>) -> anyhow::Result<ComplexSignal> {
    let bb = synth_modulating_signal(
        seed.unwrap_or(cfg.signal.seed),
        duration_s,
        cfg.signal.sample_rate_hz,
    )?;
    Ok(fm_modulate(&bb, cfg.signal.fm_deviation_hz)?)
}

pub fn cmd_simulate(
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    window_s: Option<f64>,
) -> anyhow::Result<()> {
    let cfg = Config::load(config_path)?;
    let scenario = cfg.scenario_config(seed, window_s)?;
    let duration = window_s.unwrap_or(cfg.signal.duration_s);

    let mut manifest = RunManifest::new(Some(config_path), Some(scenario.rng_seed));
    let mut timer = StageTimer::start();
    let d = synthesize_waveform(&cfg, duration, None)?;
    timer.lap(&mut manifest, "synthesize_waveform");
    let x = simulate_array_data(&scenario, &d)?;
    timer.lap(&mut manifest, "simulate_array_data");

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let iq_path = out_path(out_dir, "array_data.iq");
    iqfile::write(&iq_path, &x)?;
    manifest.add_output("array_data", &iq_path);

    let truth = TruthSidecar {
        sample_rate_hz: cfg.signal.sample_rate_hz,
        duration_s: duration,
        direct_path_angle_deg: cfg.scenario.direct_path_angle_deg,
        seed: scenario.rng_seed,
        targets: cfg
            .targets
            .iter()
            .map(|t| TruthTarget {
                delay_samples: t.delay_samples,
                doppler_hz: t.doppler_hz,
                angle_deg: t.angle_deg,
                amplitude: t.amplitude,
                phase_deg: t.phase_deg,
            })
            .collect(),
        clutter: cfg
            .clutter
            .iter()
            .map(|c| TruthClutter {
                delay_samples: c.delay_samples,
                angle_deg: c.angle_deg,
                amplitude: c.amplitude,
                phase_deg: c.phase_deg,
            })
            .collect(),
    };
    let truth_path = out_path(out_dir, "truth.json");
    let mut text = serde_json::to_string_pretty(&truth)?;
    text.push('\n');
    std::fs::write(&truth_path, text)?;
    manifest.add_output("truth", &truth_path);
    timer.lap(&mut manifest, "write_outputs");

    manifest.write(&out_path(out_dir, "manifest.json"))?;
    println!(
        "simulated {} samples x {} antennas at {} Hz -> {}",
        x.rows(),
        x.num_antennas(),
        x.sample_rate,
        iq_path.display()
    );
    Ok(())
}

fn format_f(v: f64) -> String {
    format!("{v:.9e}")
}

fn write_map_csv(path: &Path, map: &pbr_core::RangeDopplerMap) -> anyhow::Result<()> {
    let mut text = String::new();
    text.push_str("delay_bin");
    for f in &map.doppler_hz {
        write!(text, ",{f:.3}").unwrap();
    }
    text.push('\n');
    for (i, &bin) in map.delay_bins.iter().enumerate() {
        write!(text, "{bin}").unwrap();
        for j in 0..map.doppler_hz.len() {
            write!(text, ",{}", format_f(map.values[[i, j]].norm())).unwrap();
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_detections_csv(path: &Path, detections: &[Detection]) -> anyhow::Result<()> {
    let mut text = String::from("pass,range_bin,range_m,doppler_hz,angle_deg,power_db\n");
    for d in detections {
        writeln!(
            text,
            "{},{},{:.3},{:.3},{},{:.3}",
            d.pass,
            d.range_bin,
            d.range_m,
            d.doppler_hz,
            d.angle_deg
                .map(|a| format!("{a:.2}"))
                .unwrap_or_else(|| "nan".to_string()),
            d.peak_to_background_db,
        )
        .unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Run one canceller over the array data, returning the cleaned output and
/// the reference used for the downstream stages.
fn run_canceller(
    cfg: &Config,
    x: &ArrayData,
    which: Canceller,
    window_s: Option<f64>,
) -> anyhow::Result<(ArrayData, DirectPathEstimate)> {
    let s_dp = estimate_direct_path(x, cfg.scenario.direct_path_angle_deg)?;
    match which {
        Canceller::Meca => {
            let y = build_meca_dictionary(
                &s_dp,
                cfg.cancellation.delay_taps,
                cfg.cancellation.doppler_bins,
            )?;
            Ok((ls_cancel(x, &y)?.cleaned, s_dp))
        }
        Canceller::Eca => {
            let window = window_s.unwrap_or(cfg.cancellation.eca_data_window_s);
            let rows = (window * x.sample_rate).round() as usize;
            if rows == 0 || rows >= x.rows() {
                bail!(
                    "trimmed window of {window} s does not fit the {}-row capture",
                    x.rows()
                );
            }
            let eca_cfg = EcaConfig {
                delay_taps: cfg.cancellation.delay_taps,
                doppler_bins: cfg.cancellation.doppler_bins,
                extra_reference: x.rows() - rows + 1,
            };
            let y = build_eca_dictionary(&s_dp, &eca_cfg, rows)?;
            let x_trim = x.discard_leading_rows(x.rows() - rows)?;
            let cleaned = ls_cancel(&x_trim, &y)?.cleaned;
            // downstream stages need reference and data windows aligned:
            // keep the last `rows` samples of the beamformed reference
            let trimmed = DirectPathEstimate::from_signal(
                ComplexSignal {
                    samples: s_dp.signal.samples[s_dp.len() - rows..].to_vec(),
                    sample_rate: s_dp.signal.sample_rate,
                },
                s_dp.source_angle_deg,
            );
            Ok((cleaned, trimmed))
        }
    }
}

fn annotate_angles(
    cfg: &Config,
    result: &mut SequentialDetection,
    geometry: &pbr_core::scenario::ArrayGeometry,
) -> anyhow::Result<()> {
    let grid = cfg.angle_grid();
    for det in &mut result.detections {
        let maps = &result.pass_maps[det.pass - 1].per_antenna;
        let z = extract_snapshot(maps, det)?;
        let spec = angle_spectrum(&z, geometry, &grid)?;
        det.angle_deg = Some(estimate_angle(&spec)?);
    }
    Ok(())
}

pub fn cmd_process(
    iq_path: &Path,
    config_path: &Path,
    out_dir: &Path,
    canceller: Canceller,
    window_s: Option<f64>,
) -> anyhow::Result<()> {
    let cfg = Config::load(config_path)?;
    let geometry = cfg.geometry()?;
    let x = iqfile::read(iq_path, geometry.clone())?;

    let mut manifest = RunManifest::new(Some(config_path), None);
    let mut timer = StageTimer::start();
    timer.lap(&mut manifest, "read_inputs");

    let (cleaned, s_dp) = run_canceller(&cfg, &x, canceller, window_s)?;
    timer.lap(&mut manifest, "disturbance_cancellation");

    let det_cfg = cfg.detector_config()?;
    let mut result = sequential_detect(&cleaned, &s_dp, &det_cfg)?;
    timer.lap(&mut manifest, "sequential_detection");
    annotate_angles(&cfg, &mut result, &geometry)?;
    timer.lap(&mut manifest, "angle_estimation");

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let det_path = out_path(out_dir, "detections.csv");
    write_detections_csv(&det_path, &result.detections)?;
    manifest.add_output("detections", &det_path);
    for (i, maps) in result.pass_maps.iter().enumerate() {
        let name = format!("rdmap_pass{}.csv", i + 1);
        let map_path = out_path(out_dir, &name);
        write_map_csv(&map_path, &maps.summed)?;
        manifest.add_output(&format!("rdmap_pass{}", i + 1), &map_path);
    }
    timer.lap(&mut manifest, "write_outputs");
    manifest.write(&out_path(out_dir, "manifest.json"))?;

    println!(
        "{} detections over {} passes{}",
        result.detections.len(),
        result.pass_maps.len(),
        if result.truncated {
            " (pass limit hit)"
        } else {
            ""
        }
    );
    for d in &result.detections {
        println!(
            "  pass {} range_bin {} ({:.0} m) doppler {:+.1} Hz angle {} power {:.1} dB",
            d.pass,
            d.range_bin,
            d.range_m,
            d.doppler_hz,
            d.angle_deg
                .map(|a| format!("{a:.1} deg"))
                .unwrap_or_else(|| "n/a".to_string()),
            d.peak_to_background_db
        );
    }
    Ok(())
}

/// Normalised residual amplitude at the disturbance bins: |CCF| divided by
/// the in-window reference energy, power-averaged over the clutter delays at
/// 0 Hz (`sidelobes = false`) or at the non-zero around-clutter bins of the
/// batch-window Doppler grid (`sidelobes = true`). `doppler_step_hz` is the
/// resolution of the full batch window, so a trimmed-window canceller is
/// scored against the same physical frequencies it fails to align with.
fn disturbance_bin_residual(
    x: &ArrayData,
    s_dp: &DirectPathEstimate,
    taps: &[usize],
    doppler_bins: usize,
    doppler_step_hz: f64,
    sidelobes: bool,
) -> f64 {
    let rows = x.rows();
    let offset = s_dp.len() - rows;
    let reference = &s_dp.signal.samples;
    let energy: f64 = reference[offset..].iter().map(|v| v.norm_sqr()).sum();
    let bins: Vec<f64> = if sidelobes {
        (1..=doppler_bins.max(1) as i64)
            .flat_map(|b| [-(b as f64) * doppler_step_hz, b as f64 * doppler_step_hz])
            .collect()
    } else {
        vec![0.0]
    };
    let mut acc = 0.0;
    let mut count = 0usize;
    for &tau in taps {
        for &hz in &bins {
            let mut sum = 0.0;
            for l in 0..x.num_antennas() {
                let col = x.antenna(l);
                let mut ip = Complex64::ZERO;
                for t in 0..rows {
                    let idx = offset + t;
                    let r = if idx >= tau {
                        reference[idx - tau]
                    } else {
                        Complex64::ZERO
                    };
                    let w =
                        Complex64::from_polar(1.0, -2.0 * PI * hz * t as f64 / x.sample_rate);
                    ip += col[t] * r.conj() * w;
                }
                sum += ip.norm_sqr();
            }
            acc += sum / (energy * energy);
            count += 1;
        }
    }
    10.0 * (acc / count as f64).log10()
}

pub fn cmd_compare_cancellers(
    iq_path: &Path,
    config_path: &Path,
    out_dir: &Path,
    window_s: Option<f64>,
) -> anyhow::Result<()> {
    let cfg = Config::load(config_path)?;
    let geometry = cfg.geometry()?;
    let x = iqfile::read(iq_path, geometry)?;
    let taps: Vec<usize> = if cfg.clutter.is_empty() {
        (1..=5).collect()
    } else {
        cfg.clutter.iter().map(|c| c.delay_samples).collect()
    };

    let mut manifest = RunManifest::new(Some(config_path), None);
    let mut rows_csv = String::from("canceller,clutter_residual_db,doppler_sidelobe_residual_db,runtime_ms\n");
    let p = cfg.cancellation.doppler_bins;
    // sidelobe bins on the full batch window's Doppler grid
    let step = x.sample_rate / x.rows() as f64;
    for which in [Canceller::Eca, Canceller::Meca] {
        let started = std::time::Instant::now();
        let (cleaned, s_dp) = run_canceller(&cfg, &x, which, window_s)?;
        let runtime_ms = started.elapsed().as_secs_f64() * 1000.0;
        let clutter_db = disturbance_bin_residual(&cleaned, &s_dp, &taps, p, step, false);
        let side_db = disturbance_bin_residual(&cleaned, &s_dp, &taps, p, step, true);
        let name = match which {
            Canceller::Eca => "eca",
            Canceller::Meca => "meca",
        };
        writeln!(
            rows_csv,
            "{name},{clutter_db:.3},{side_db:.3},{runtime_ms:.3}"
        )
        .unwrap();
        manifest
            .timing_ms
            .insert(format!("cancel_{name}"), runtime_ms.max(1e-3));
        println!(
            "{name}: clutter bins {clutter_db:.1} dB, Doppler sidelobes {side_db:.1} dB ({runtime_ms:.0} ms)"
        );
    }

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let report_path = out_path(out_dir, "canceller_report.csv");
    std::fs::write(&report_path, rows_csv)?;
    manifest.add_output("canceller_report", &report_path);
    manifest.write(&out_path(out_dir, "manifest.json"))?;
    Ok(())
}

pub fn cmd_aaf(
    config_path: Option<&Path>,
    iq_path: Option<&Path>,
    out_dir: &Path,
    seed: Option<u64>,
    max_delay: usize,
    doppler_span_hz: f64,
    mainlobe_guard: usize,
) -> anyhow::Result<()> {
    let signal: ComplexSignal = match (config_path, iq_path) {
        (Some(cfg_path), None) => {
            let cfg = Config::load(cfg_path)?;
            synthesize_waveform(&cfg, cfg.signal.duration_s, seed)?
        }
        (None, Some(iq)) => {
            let geom = pbr_core::scenario::ArrayGeometry::new(1, 1.0, 2.0)
                .expect("single-antenna geometry");
            let data = iqfile::read(iq, geom)?;
            ComplexSignal {
                samples: data.antenna(0).to_vec(),
                sample_rate: data.sample_rate,
            }
        }
        _ => bail!("aaf needs exactly one of --config or --iq"),
    };

    let mut manifest = RunManifest::new(config_path, seed);
    let mut timer = StageTimer::start();
    let resolution = signal.sample_rate / signal.len() as f64;
    let half_bins = (doppler_span_hz / resolution).floor() as i64;
    if half_bins < 1 {
        bail!("Doppler span {doppler_span_hz} Hz is below the window resolution {resolution} Hz");
    }
    let dopplers: Vec<f64> = (-half_bins..=half_bins)
        .map(|b| b as f64 * resolution)
        .collect();
    let map = auto_ambiguity(&signal, max_delay, &dopplers)?;
    let ratio_db = pslr(&map, mainlobe_guard)?;
    timer.lap(&mut manifest, "auto_ambiguity");

    // strongest sidelobe location outside the mainlobe guard
    let (pi, pj, peak) = map.peak();
    let mut side = (0usize, 0usize, -1.0f64);
    for ((i, j), v) in map.values.indexed_iter() {
        let guarded = i.abs_diff(pi) <= mainlobe_guard && j.abs_diff(pj) <= mainlobe_guard;
        if !guarded && v.norm() > side.2 {
            side = (i, j, v.norm());
        }
    }

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;

    // full grid, normalised to the peak, in dB
    let grid_path = out_path(out_dir, "aaf_grid.csv");
    {
        let mut text = String::from("delay_bin");
        for f in &map.doppler_hz {
            write!(text, ",{f:.3}").unwrap();
        }
        text.push('\n');
        for (i, &bin) in map.delay_bins.iter().enumerate() {
            write!(text, "{bin}").unwrap();
            for j in 0..map.doppler_hz.len() {
                let db = 20.0 * (map.values[[i, j]].norm() / peak).max(1e-300).log10();
                write!(text, ",{db:.3}").unwrap();
            }
            text.push('\n');
        }
        std::fs::write(&grid_path, text)?;
    }
    manifest.add_output("aaf_grid", &grid_path);

    let zr_path = out_path(out_dir, "aaf_zero_range_cut.csv");
    {
        let mut text = String::from("doppler_hz,magnitude_db\n");
        let zero_delay = map.delay_index(0).unwrap();
        for (j, f) in map.doppler_hz.iter().enumerate() {
            let db = 20.0 * (map.values[[zero_delay, j]].norm() / peak).max(1e-300).log10();
            writeln!(text, "{f:.3},{db:.3}").unwrap();
        }
        std::fs::write(&zr_path, text)?;
    }
    manifest.add_output("aaf_zero_range_cut", &zr_path);

    let zd_path = out_path(out_dir, "aaf_zero_doppler_cut.csv");
    {
        let mut text = String::from("delay_bin,magnitude_db\n");
        let zero_dop = map.doppler_index(0.0).unwrap();
        for (i, &bin) in map.delay_bins.iter().enumerate() {
            let db = 20.0 * (map.values[[i, zero_dop]].norm() / peak).max(1e-300).log10();
            writeln!(text, "{bin},{db:.3}").unwrap();
        }
        std::fs::write(&zd_path, text)?;
    }
    manifest.add_output("aaf_zero_doppler_cut", &zd_path);

    let summary_path = out_path(out_dir, "aaf_summary.csv");
    {
        let mut text = String::from(
            "pslr_db,strongest_sidelobe_doppler_hz,strongest_sidelobe_delay_bin,mainlobe_guard_bins\n",
        );
        writeln!(
            text,
            "{:.3},{:.3},{},{}",
            ratio_db, map.doppler_hz[side.1], map.delay_bins[side.0], mainlobe_guard
        )
        .unwrap();
        std::fs::write(&summary_path, text)?;
    }
    manifest.add_output("aaf_summary", &summary_path);
    timer.lap(&mut manifest, "write_outputs");
    manifest.write(&out_path(out_dir, "manifest.json"))?;

    println!(
        "PSLR {ratio_db:.1} dB; strongest sidelobe at delay bin {}, {:+.1} Hz",
        map.delay_bins[side.0], map.doppler_hz[side.1]
    );
    Ok(())
}

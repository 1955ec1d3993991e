//! Range-Doppler cross-ambiguity maps, peak extraction, and the sequential
//! strong-then-weak detection loop.
//!
//! Each pass correlates the cancelled array data against the direct-path
//! reference over a delay/Doppler grid, detects the dominant peaks, projects
//! the detected echoes out of the data and repeats until the map drops below
//! threshold or the pass limit is reached. Weak targets hidden under the
//! self-ambiguity sidelobes of stronger ones surface in the later passes.

use crate::beamform::DirectPathEstimate;
use crate::cancellation::{
    build_meca_dictionary, build_strong_target_dictionary, cancel_strong_targets, StrongDelaySpan,
};
use crate::error::{invalid, mismatch, Result};
use crate::fft::FftPair;
use crate::rdmap::{DelayConvention, RangeDopplerMap, SPEED_OF_LIGHT_M_S};
use crate::scenario::ArrayData;
use ndarray::Array2;
use num_complex::Complex64;

/// How the per-antenna maps are combined into the detection statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AntennaSum {
    /// Sum of magnitudes. Robust to the inter-antenna steering phases, which
    /// would partially cancel an off-broadside target under a coherent sum.
    Incoherent,
    /// Plain complex sum across antennas.
    Coherent,
}

/// One target hypothesis pulled from a range-Doppler map.
#[derive(Debug, Clone)]
pub struct Detection {
    /// 1-based index of the detection pass that produced this target.
    pub pass: usize,
    pub range_bin: usize,
    pub range_m: f64,
    pub doppler_hz: f64,
    /// Summed-map value at the peak divided by (reference energy x antenna
    /// count): an amplitude estimate relative to the reference.
    pub amplitude: Complex64,
    pub peak_to_background_db: f64,
    /// Filled by the beamforming stage.
    pub angle_deg: Option<f64>,
}

/// Detector and sequential-loop tuning.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    /// Largest delay tap of the map (inclusive).
    pub max_delay: usize,
    /// Doppler coverage: all window-resolution bins within +/- this many Hz.
    pub doppler_span_hz: f64,
    /// Detection threshold in dB over the map's median background.
    pub threshold_db: f64,
    /// Chebyshev guard radius (bins) around an accepted peak.
    pub guard_bins: usize,
    /// Upper bound on detection passes.
    pub max_passes: usize,
    /// Delay margin r_0 of the strong-target canceller.
    pub strong_delay_margin: usize,
    /// Doppler margin f_0 (grid steps) of the strong-target canceller.
    pub strong_doppler_margin: usize,
    /// Peaks more than this far below a pass's strongest peak are deferred to
    /// a later pass instead of being accepted alongside it.
    pub relative_window_db: f64,
    /// Size (delay taps, one-sided Doppler bins) of the disturbance
    /// dictionary the input was cancelled with. When set, strong-target
    /// removal is solved jointly with that dictionary so the disturbance bins
    /// stay nulled instead of being repopulated by the sidelobes of whatever
    /// each pass subtracts.
    pub disturbance: Option<(usize, usize)>,
    pub antenna_sum: AntennaSum,
    pub delay_convention: DelayConvention,
    pub strong_delay_span: StrongDelaySpan,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            max_delay: 64,
            doppler_span_hz: 150.0,
            threshold_db: 13.0,
            guard_bins: 5,
            max_passes: 4,
            strong_delay_margin: 3,
            strong_doppler_margin: 3,
            relative_window_db: 15.0,
            disturbance: None,
            antenna_sum: AntennaSum::Incoherent,
            delay_convention: DelayConvention::Circular,
            strong_delay_span: StrongDelaySpan::FromZero,
        }
    }
}

/// Per-antenna maps plus their across-antenna sum for one detection pass.
#[derive(Debug, Clone)]
pub struct CcfMaps {
    pub per_antenna: Vec<RangeDopplerMap>,
    pub summed: RangeDopplerMap,
}

/// Result of the sequential detection loop.
#[derive(Debug, Clone)]
pub struct SequentialDetection {
    pub detections: Vec<Detection>,
    /// Maps of every computed pass; detection `d` came from
    /// `pass_maps[d.pass - 1]`.
    pub pass_maps: Vec<CcfMaps>,
    /// True when the pass limit stopped the loop while targets were still
    /// being found.
    pub truncated: bool,
}

/// Delay/Doppler cross-correlation of every antenna against the reference:
/// `xi_l(tau, f) = sum_t X[t, l] conj(s_dp[t - tau]) e^{-j 2 pi f t / rows}`,
/// computed with one FFT over t per delay tap and decimated to the requested
/// Doppler span. Returns the per-antenna maps and their summed map.
///
/// A reference longer than the data is indexed linearly from its tail
/// (trimmed-window processing); an equal-length reference follows
/// `cfg.delay_convention`.
pub fn cross_ambiguity(
    x: &ArrayData,
    s_dp: &DirectPathEstimate,
    cfg: &DetectorConfig,
) -> Result<CcfMaps> {
    let rows = x.rows();
    if rows == 0 {
        return Err(invalid("array data is empty"));
    }
    if s_dp.len() < rows {
        return Err(mismatch(format!(
            "reference has {} samples but the data has {rows} rows",
            s_dp.len()
        )));
    }
    if cfg.max_delay >= rows {
        return Err(invalid(format!(
            "max_delay {} must be below the {rows}-row window",
            cfg.max_delay
        )));
    }
    let fs = x.sample_rate;
    let res = fs / rows as f64;
    let half_bins = (cfg.doppler_span_hz / res).floor() as i64;
    if half_bins < 0 || half_bins as usize > rows / 2 {
        return Err(invalid(format!(
            "Doppler span {} Hz does not fit a {rows}-row window at {fs} Hz",
            cfg.doppler_span_hz
        )));
    }
    let offset = s_dp.len() - rows;
    let reference = &s_dp.signal.samples;

    // write product[t] = col[t] * conj(reference delayed by tau) without
    // per-sample branching: the delayed reference is one or two contiguous
    // slices of the reference buffer
    let fill_product = |product: &mut [Complex64], col: &[Complex64], tau: usize| {
        if offset > 0 {
            // trimmed-window reference: sample offset + t - tau, zero before
            // the reference start
            if tau <= offset {
                let base = offset - tau;
                for t in 0..rows {
                    product[t] = col[t] * reference[base + t].conj();
                }
            } else {
                let skip = tau - offset;
                for t in 0..skip {
                    product[t] = Complex64::ZERO;
                }
                for t in skip..rows {
                    product[t] = col[t] * reference[t - skip].conj();
                }
            }
        } else {
            match cfg.delay_convention {
                DelayConvention::Circular => {
                    // rows [0, tau): reference wraps from the window tail
                    let wrap = &reference[rows - tau..];
                    for t in 0..tau {
                        product[t] = col[t] * wrap[t].conj();
                    }
                    for t in tau..rows {
                        product[t] = col[t] * reference[t - tau].conj();
                    }
                }
                DelayConvention::LinearZeroFill => {
                    for t in 0..tau {
                        product[t] = Complex64::ZERO;
                    }
                    for t in tau..rows {
                        product[t] = col[t] * reference[t - tau].conj();
                    }
                }
            }
        }
    };

    let doppler_hz: Vec<f64> = (-half_bins..=half_bins).map(|b| b as f64 * res).collect();
    let delay_bins: Vec<usize> = (0..=cfg.max_delay).collect();
    let meters = SPEED_OF_LIGHT_M_S / fs;

    let fft = FftPair::new(rows);
    let mut scratch = fft.scratch();
    let mut product = vec![Complex64::ZERO; rows];

    let mut per_antenna = Vec::with_capacity(x.num_antennas());
    let mut summed = Array2::<Complex64>::zeros((delay_bins.len(), doppler_hz.len()));
    for l in 0..x.num_antennas() {
        let col_view = x.antenna(l);
        let col = col_view
            .as_slice_memory_order()
            .expect("antenna columns are stored contiguously");
        let mut values = Array2::<Complex64>::zeros((delay_bins.len(), doppler_hz.len()));
        for tau in 0..=cfg.max_delay {
            fill_product(&mut product, col, tau);
            fft.forward(&mut product, &mut scratch);
            for (j, b) in (-half_bins..=half_bins).enumerate() {
                let k = b.rem_euclid(rows as i64) as usize;
                values[[tau, j]] = product[k];
            }
        }
        match cfg.antenna_sum {
            AntennaSum::Incoherent => {
                for (s, v) in summed.iter_mut().zip(values.iter()) {
                    *s += Complex64::new(v.norm(), 0.0);
                }
            }
            AntennaSum::Coherent => {
                for (s, v) in summed.iter_mut().zip(values.iter()) {
                    *s += v;
                }
            }
        }
        per_antenna.push(RangeDopplerMap::new(
            values,
            delay_bins.clone(),
            doppler_hz.clone(),
            meters,
        )?);
    }

    let summed = RangeDopplerMap::new(summed, delay_bins, doppler_hz, meters)?;
    Ok(CcfMaps {
        per_antenna,
        summed,
    })
}

/// Local maxima of the map exceeding its median background by the configured
/// threshold, strongest first, with weaker peaks inside the Chebyshev guard of
/// an accepted peak suppressed.
pub fn detect_peaks(map: &RangeDopplerMap, cfg: &DetectorConfig) -> Vec<Detection> {
    let mags = map.values.mapv(|v| v.norm());
    let (nd, nf) = mags.dim();
    if nd == 0 || nf == 0 {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = mags.iter().copied().collect();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let threshold = median * 10f64.powf(cfg.threshold_db / 20.0);

    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..nd {
        for j in 0..nf {
            let v = mags[[i, j]];
            if v <= threshold || v <= 0.0 {
                continue;
            }
            let mut is_peak = true;
            'neigh: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let ni = i as i64 + di;
                    let nj = j as i64 + dj;
                    if ni < 0 || nj < 0 || ni >= nd as i64 || nj >= nf as i64 {
                        continue;
                    }
                    if mags[[ni as usize, nj as usize]] >= v {
                        is_peak = false;
                        break 'neigh;
                    }
                }
            }
            if is_peak {
                candidates.push((i, j, v));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let mut accepted: Vec<(usize, usize, f64)> = Vec::new();
    'cand: for (i, j, v) in candidates {
        for &(ai, aj, _) in &accepted {
            if i.abs_diff(ai) <= cfg.guard_bins && j.abs_diff(aj) <= cfg.guard_bins {
                continue 'cand;
            }
        }
        accepted.push((i, j, v));
    }

    accepted
        .into_iter()
        .map(|(i, j, v)| Detection {
            pass: 0,
            range_bin: map.delay_bins[i],
            range_m: map.range_m(i),
            doppler_hz: map.doppler_hz[j],
            amplitude: map.values[[i, j]],
            peak_to_background_db: if median > 0.0 {
                20.0 * (v / median).log10()
            } else {
                f64::INFINITY
            },
            angle_deg: None,
        })
        .collect()
}

/// Sequential strong-then-weak detection: correlate, take the peaks within
/// `relative_window_db` of the pass maximum, project the detected echoes out
/// and repeat on the residual until nothing clears the threshold or the pass
/// limit is hit.
///
/// Each pass projects the *input* onto the orthogonal complement of every
/// detection so far (jointly with the disturbance dictionary when
/// `cfg.disturbance` is set). Chaining one projection after another instead
/// would re-inject each removed echo's ambiguity sidelobes into the bins the
/// previous projections had nulled, and those ghosts snowball from pass to
/// pass.
pub fn sequential_detect(
    x: &ArrayData,
    s_dp: &DirectPathEstimate,
    cfg: &DetectorConfig,
) -> Result<SequentialDetection> {
    if cfg.max_passes == 0 {
        return Err(invalid("max_passes must be at least 1"));
    }
    let mut current = x.clone();
    let mut detections: Vec<Detection> = Vec::new();
    let mut pass_maps: Vec<CcfMaps> = Vec::new();
    let mut truncated = false;

    // amplitude normalisation: reference energy over the correlated window
    let offset = s_dp.len() - x.rows().min(s_dp.len());
    let ref_energy: f64 = s_dp.signal.samples[offset..]
        .iter()
        .map(|v| v.norm_sqr())
        .sum();
    let amp_scale = 1.0 / (ref_energy * x.num_antennas() as f64);

    let disturbance = cfg
        .disturbance
        .map(|(taps, bins)| build_meca_dictionary(s_dp, taps, bins))
        .transpose()?;

    for pass in 1..=cfg.max_passes {
        let maps = cross_ambiguity(&current, s_dp, cfg)?;
        let mut peaks = detect_peaks(&maps.summed, cfg);
        pass_maps.push(maps);
        if peaks.is_empty() {
            break;
        }
        let window = 10f64.powf(-cfg.relative_window_db / 20.0);
        let strongest = peaks[0].amplitude.norm();
        peaks.retain(|p| p.amplitude.norm() >= strongest * window);
        for p in &mut peaks {
            p.pass = pass;
            p.amplitude *= amp_scale;
        }
        detections.extend(peaks);

        if pass == cfg.max_passes {
            truncated = true;
            break;
        }

        let step = current.sample_rate / current.rows() as f64;
        let y_s = build_strong_target_dictionary(
            s_dp,
            &detections,
            cfg.strong_delay_margin,
            cfg.strong_doppler_margin,
            step,
            cfg.strong_delay_span,
        )?;
        let joint = match &disturbance {
            Some(y_d) => y_d.concat(&y_s)?,
            None => y_s,
        };
        current = cancel_strong_targets(x, &joint)?;
    }

    Ok(SequentialDetection {
        detections,
        pass_maps,
        truncated,
    })
}

//! FM illuminator waveform synthesis and its delay-Doppler diagnostics.
//!
//! The modulating signal is band-limited coloured noise shaped to look like
//! broadcast audio (high-pass below ~20 Hz, a bass resonance near 65 Hz, a 1/f
//! tilt and a 15 kHz low-pass edge), frequency-modulated onto a constant-envelope
//! complex baseband carrier. The auto-ambiguity function of that waveform sets
//! the sidelobe floor that masks weak targets downstream.

use crate::error::{invalid, Result};
use crate::fft::FftPair;
use crate::rdmap::{RangeDopplerMap, SPEED_OF_LIGHT_M_S};
use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

/// Real-valued modulating signal, normalised to unit peak amplitude.
#[derive(Debug, Clone)]
pub struct BasebandSignal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl BasebandSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_complex(&self) -> ComplexSignal {
        ComplexSignal {
            samples: self
                .samples
                .iter()
                .map(|&x| Complex64::new(x, 0.0))
                .collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Uniformly sampled complex baseband time series.
#[derive(Debug, Clone)]
pub struct ComplexSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl ComplexSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Sum of |x[t]|^2 over the whole window.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Normalised power spectrum in dB relative to its peak (peak is exactly 0 dB).
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub freq_hz: Vec<f64>,
    pub power_db: Vec<f64>,
}

impl Spectrum {
    /// Frequency of the strongest bin.
    pub fn peak_freq_hz(&self) -> f64 {
        let mut best = 0;
        for (i, &p) in self.power_db.iter().enumerate() {
            if p > self.power_db[best] {
                best = i;
            }
        }
        self.freq_hz[best]
    }
}

// Audio shaping constants for the synthesised modulating signal. The bass
// resonance concentrates low-frequency energy the way recorded music does,
// which is what puts the strongest ambiguity sidelobes at a few tens of Hz.
const HIGHPASS_EDGE_HZ: f64 = 20.0;
const HIGHPASS_WIDTH_HZ: f64 = 15.0;
const BASS_CENTER_HZ: f64 = 65.0;
const BASS_WIDTH_HZ: f64 = 12.0;
const BASS_GAIN: f64 = 2.5;
const TILT_KNEE_HZ: f64 = 250.0;
const LOWPASS_EDGE_HZ: f64 = 15_000.0;

fn audio_mask(freq_hz: f64) -> f64 {
    let fa = freq_hz.abs();
    let hp = if fa < HIGHPASS_EDGE_HZ {
        0.0
    } else {
        1.0 - (-((fa - HIGHPASS_EDGE_HZ) / HIGHPASS_WIDTH_HZ).powi(2)).exp()
    };
    let lp = if fa > LOWPASS_EDGE_HZ {
        0.0
    } else {
        (0.5 * (1.0 + (PI * fa / LOWPASS_EDGE_HZ).cos())).sqrt()
    };
    let tilt = 1.0 / (1.0 + fa / TILT_KNEE_HZ).sqrt();
    let bass = BASS_GAIN * (-((fa - BASS_CENTER_HZ) / BASS_WIDTH_HZ).powi(2)).exp();
    hp * lp * (tilt + bass)
}

/// Generate the audio-like modulating signal: seeded white Gaussian noise,
/// spectrally shaped and normalised to unit peak. Deterministic per seed.
pub fn synth_modulating_signal(
    seed: u64,
    duration_s: f64,
    sample_rate_hz: f64,
) -> Result<BasebandSignal> {
    if !(duration_s > 0.0) || !(sample_rate_hz > 0.0) {
        return Err(invalid("duration and sample rate must be positive"));
    }
    let n = (duration_s * sample_rate_hz).round() as usize;
    if n < 2 {
        return Err(invalid("duration x sample_rate must be at least 2 samples"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();

    let fft = FftPair::new(n);
    let mut scratch = fft.scratch();
    fft.forward(&mut buf, &mut scratch);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        } * sample_rate_hz
            / n as f64;
        *v *= audio_mask(f);
    }
    fft.inverse(&mut buf, &mut scratch);

    let mut samples: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let peak = samples.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    if peak <= 0.0 {
        return Err(invalid(
            "sample rate too low to carry the audio band of the modulating signal",
        ));
    }
    for s in &mut samples {
        *s /= peak;
    }
    Ok(BasebandSignal {
        samples,
        sample_rate: sample_rate_hz,
    })
}

/// Frequency-modulate a baseband signal onto a unit-modulus complex carrier:
/// `s[n] = exp(j 2 pi f_dev sum_{k<=n} m[k] / f_s)`.
pub fn fm_modulate(bb: &BasebandSignal, freq_deviation_hz: f64) -> Result<ComplexSignal> {
    if bb.is_empty() {
        return Err(invalid("modulating signal is empty"));
    }
    if freq_deviation_hz < 0.0 || freq_deviation_hz >= bb.sample_rate / 2.0 {
        return Err(invalid(format!(
            "deviation {freq_deviation_hz} Hz does not fit below Nyquist at {} Hz",
            bb.sample_rate
        )));
    }
    let scale = 2.0 * PI * freq_deviation_hz / bb.sample_rate;
    let mut acc = 0.0_f64;
    let samples = bb
        .samples
        .iter()
        .map(|&m| {
            acc += m;
            Complex64::from_polar(1.0, scale * acc)
        })
        .collect();
    Ok(ComplexSignal {
        samples,
        sample_rate: bb.sample_rate,
    })
}

const WELCH_SEGMENT: usize = 4096;

/// Welch-style averaged power spectrum: 4096-point segments, 50% overlap,
/// Hann window, peak-normalised to 0 dB. Frequency axis is two-sided.
pub fn power_spectrum(sig: &ComplexSignal) -> Result<Spectrum> {
    if sig.is_empty() {
        return Err(invalid("cannot estimate a spectrum from an empty signal"));
    }
    let seg = WELCH_SEGMENT.min(sig.len());
    let hop = (seg / 2).max(1);
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / seg as f64).cos()))
        .collect();

    let fft = FftPair::new(seg);
    let mut scratch = fft.scratch();
    let mut acc = vec![0.0_f64; seg];
    let mut count = 0usize;
    let mut start = 0usize;
    while start + seg <= sig.len() {
        let mut buf: Vec<Complex64> = (0..seg)
            .map(|i| sig.samples[start + i] * window[i])
            .collect();
        fft.forward(&mut buf, &mut scratch);
        for (a, v) in acc.iter_mut().zip(&buf) {
            *a += v.norm_sqr();
        }
        count += 1;
        start += hop;
        if count > 0 && start + seg > sig.len() {
            break;
        }
    }
    if count == 0 {
        // signal shorter than one segment was already handled by seg = len
        return Err(invalid("signal too short for spectrum estimation"));
    }

    // fftshift so the axis runs -fs/2 .. fs/2
    let half = seg / 2;
    let mut freq_hz = Vec::with_capacity(seg);
    let mut power = Vec::with_capacity(seg);
    for i in 0..seg {
        let k = (i + half) % seg;
        let f = (i as f64 - half as f64) * sig.sample_rate / seg as f64;
        freq_hz.push(f);
        power.push(acc[k] / count as f64);
    }
    let peak = power.iter().fold(f64::MIN, |a, &b| a.max(b));
    if peak <= 0.0 {
        return Err(invalid("all-zero signal has no spectrum peak"));
    }
    let power_db = power
        .iter()
        .map(|&p| 10.0 * (p / peak).max(1e-300).log10())
        .collect();
    Ok(Spectrum { freq_hz, power_db })
}

/// Delay-Doppler auto-ambiguity over a finite window with zero-filled delays:
/// `xi0(tau, f) = sum_t s[t] conj(s[t - tau]) exp(-j 2 pi f t / f_s)`.
///
/// Doppler values landing on the window's natural 1/T grid are evaluated with
/// one FFT per delay tap; off-grid values fall back to direct summation.
pub fn auto_ambiguity(
    sig: &ComplexSignal,
    max_delay: usize,
    doppler_hz: &[f64],
) -> Result<RangeDopplerMap> {
    if doppler_hz.is_empty() {
        return Err(invalid("Doppler grid is empty"));
    }
    let n = sig.len();
    if n == 0 || max_delay >= n {
        return Err(invalid(format!(
            "max_delay {max_delay} must be smaller than the {n}-sample window"
        )));
    }
    if doppler_hz.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("Doppler grid must be strictly increasing"));
    }
    let nyquist = sig.sample_rate / 2.0;
    if doppler_hz.iter().any(|f| f.abs() > nyquist) {
        return Err(invalid("Doppler grid exceeds +/- sample_rate/2"));
    }

    let res = sig.sample_rate / n as f64;
    let bins: Vec<f64> = doppler_hz.iter().map(|f| f / res).collect();
    let on_grid = bins
        .iter()
        .all(|b| (b - b.round()).abs() <= 1e-9 * b.abs().max(1.0));

    let mut values = Array2::<Complex64>::zeros((max_delay + 1, doppler_hz.len()));
    let mut product = vec![Complex64::ZERO; n];
    let fft = if on_grid { Some(FftPair::new(n)) } else { None };
    let mut scratch = fft.as_ref().map(|f| f.scratch()).unwrap_or_default();

    for tau in 0..=max_delay {
        for t in 0..n {
            product[t] = if t >= tau {
                sig.samples[t] * sig.samples[t - tau].conj()
            } else {
                Complex64::ZERO
            };
        }
        if let Some(fft) = &fft {
            fft.forward(&mut product, &mut scratch);
            for (j, b) in bins.iter().enumerate() {
                let k = (b.round() as i64).rem_euclid(n as i64) as usize;
                values[[tau, j]] = product[k];
            }
        } else {
            for (j, &f) in doppler_hz.iter().enumerate() {
                let step = Complex64::from_polar(1.0, -2.0 * PI * f / sig.sample_rate);
                let mut rot = Complex64::new(1.0, 0.0);
                let mut sum = Complex64::ZERO;
                for &p in product.iter() {
                    sum += p * rot;
                    rot *= step;
                }
                values[[tau, j]] = sum;
            }
        }
    }

    RangeDopplerMap::new(
        values,
        (0..=max_delay).collect(),
        doppler_hz.to_vec(),
        SPEED_OF_LIGHT_M_S / sig.sample_rate,
    )
}

/// Peak-to-sidelobe ratio in dB: global peak magnitude against the largest
/// magnitude outside a square guard of `mainlobe_guard` bins around the peak.
/// A map with no energy outside the guard reports `f64::INFINITY` (unbounded).
pub fn pslr(map: &RangeDopplerMap, mainlobe_guard: usize) -> Result<f64> {
    if map.values.is_empty() {
        return Err(invalid("map is empty"));
    }
    let (pi, pj, peak) = map.peak();
    let mut side = -1.0_f64;
    for ((i, j), v) in map.values.indexed_iter() {
        let within_guard =
            i.abs_diff(pi) <= mainlobe_guard && j.abs_diff(pj) <= mainlobe_guard;
        if !within_guard {
            side = side.max(v.norm());
        }
    }
    if side < 0.0 {
        return Err(invalid("guard region covers the whole map"));
    }
    if side == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (peak / side).log10())
}

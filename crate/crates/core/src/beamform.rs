//! Conventional beamforming: direct-path extraction by steering the array at
//! the illuminator, and target angle estimation from per-antenna map snapshots.

use crate::detection::Detection;
use crate::error::{invalid, mismatch, Result};
use crate::rdmap::RangeDopplerMap;
use crate::scenario::{steering_vector, ArrayData, ArrayGeometry};
use crate::signal::ComplexSignal;
use num_complex::Complex64;

/// Beamformed estimate of the illuminator's direct-path signal.
#[derive(Debug, Clone)]
pub struct DirectPathEstimate {
    pub signal: ComplexSignal,
    pub source_angle_deg: f64,
}

impl DirectPathEstimate {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    /// Wrap an existing reference waveform, e.g. for self-ambiguity checks.
    pub fn from_signal(signal: ComplexSignal, source_angle_deg: f64) -> Self {
        DirectPathEstimate {
            signal,
            source_angle_deg,
        }
    }
}

/// Conventional beamformer spectrum P(theta) = |a(theta)^H z|^2 over a grid.
#[derive(Debug, Clone)]
pub struct AngleSpectrum {
    pub angles_deg: Vec<f64>,
    pub values: Vec<f64>,
}

/// Steer the array at the (known) illuminator direction and collapse the
/// array data to one channel: `s_dp = X conj(a(theta_DA))`. The direct-path
/// component picks up the full coherent gain of the array.
pub fn estimate_direct_path(x: &ArrayData, theta_da_deg: f64) -> Result<DirectPathEstimate> {
    if x.rows() == 0 {
        return Err(invalid("array data is empty"));
    }
    let a = steering_vector(&x.geometry, theta_da_deg)?;
    let mut samples = vec![Complex64::ZERO; x.rows()];
    for l in 0..x.num_antennas() {
        let w = a[l].conj();
        let col = x.antenna(l);
        for (s, v) in samples.iter_mut().zip(col.iter()) {
            *s += w * v;
        }
    }
    Ok(DirectPathEstimate {
        signal: ComplexSignal {
            samples,
            sample_rate: x.sample_rate,
        },
        source_angle_deg: theta_da_deg,
    })
}

/// Read the complex map value of every antenna at one detection's
/// (range bin, Doppler) cell. The resulting length-L_A vector carries the
/// target's steering phases.
pub fn extract_snapshot(
    per_antenna: &[RangeDopplerMap],
    det: &Detection,
) -> Result<Vec<Complex64>> {
    if per_antenna.is_empty() {
        return Err(invalid("no per-antenna maps supplied"));
    }
    per_antenna
        .iter()
        .enumerate()
        .map(|(l, map)| {
            map.value_at(det.range_bin, det.doppler_hz).ok_or_else(|| {
                mismatch(format!(
                    "detection at bin ({}, {} Hz) is outside antenna {l}'s map",
                    det.range_bin, det.doppler_hz
                ))
            })
        })
        .collect()
}

/// Evaluate P(theta) = |a(theta)^H z|^2 on an angle grid.
pub fn angle_spectrum(
    z: &[Complex64],
    geom: &ArrayGeometry,
    grid_deg: &[f64],
) -> Result<AngleSpectrum> {
    if z.len() != geom.num_antennas {
        return Err(mismatch(format!(
            "snapshot has {} entries for {} antennas",
            z.len(),
            geom.num_antennas
        )));
    }
    if grid_deg.is_empty() {
        return Err(invalid("angle grid is empty"));
    }
    let values = grid_deg
        .iter()
        .map(|&theta| {
            let a = steering_vector(geom, theta)?;
            let ip: Complex64 = a.iter().zip(z).map(|(av, zv)| av.conj() * zv).sum();
            Ok(ip.norm_sqr())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(AngleSpectrum {
        angles_deg: grid_deg.to_vec(),
        values,
    })
}

/// Grid angle of the spectrum maximum; ties resolve toward the smaller angle.
pub fn estimate_angle(spec: &AngleSpectrum) -> Result<f64> {
    if spec.values.is_empty() {
        return Err(invalid("angle spectrum is empty"));
    }
    let mut best = 0usize;
    for (i, &v) in spec.values.iter().enumerate() {
        if v > spec.values[best] {
            best = i;
        }
    }
    Ok(spec.angles_deg[best])
}

/// Default search grid: 0 to 180 degrees in 0.5 degree steps.
pub fn default_angle_grid() -> Vec<f64> {
    (0..=360).map(|k| k as f64 * 0.5).collect()
}

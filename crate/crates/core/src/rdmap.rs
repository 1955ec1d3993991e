//! Range-Doppler grids shared by the ambiguity, cancellation and detection stages.

use crate::error::{invalid, mismatch, Result};
use ndarray::Array2;
use num_complex::Complex64;

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// How delayed reference samples outside the observation window are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayConvention {
    /// Delays wrap around the window, matching circulant dictionary columns.
    Circular,
    /// Samples before the window start are treated as zero.
    LinearZeroFill,
}

/// Complex correlation surface over delay bins (rows) and Doppler bins (columns).
///
/// Delay bins are in samples; one bin spans `c / f_s` metres of bistatic range.
#[derive(Debug, Clone)]
pub struct RangeDopplerMap {
    pub values: Array2<Complex64>,
    pub delay_bins: Vec<usize>,
    pub doppler_hz: Vec<f64>,
    pub meters_per_bin: f64,
}

impl RangeDopplerMap {
    pub fn new(
        values: Array2<Complex64>,
        delay_bins: Vec<usize>,
        doppler_hz: Vec<f64>,
        meters_per_bin: f64,
    ) -> Result<Self> {
        if values.nrows() != delay_bins.len() || values.ncols() != doppler_hz.len() {
            return Err(mismatch(format!(
                "map is {}x{} but axes are {} delay bins x {} Doppler bins",
                values.nrows(),
                values.ncols(),
                delay_bins.len(),
                doppler_hz.len()
            )));
        }
        if delay_bins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("delay axis must be strictly increasing"));
        }
        if doppler_hz.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("Doppler axis must be strictly increasing"));
        }
        Ok(RangeDopplerMap {
            values,
            delay_bins,
            doppler_hz,
            meters_per_bin,
        })
    }

    pub fn n_delays(&self) -> usize {
        self.delay_bins.len()
    }

    pub fn n_dopplers(&self) -> usize {
        self.doppler_hz.len()
    }

    /// Index of the given delay bin on the delay axis.
    pub fn delay_index(&self, bin: usize) -> Option<usize> {
        self.delay_bins.binary_search(&bin).ok()
    }

    /// Index of the Doppler-axis entry closest to `hz`, if within half a grid step.
    pub fn doppler_index(&self, hz: f64) -> Option<usize> {
        let mut best = None;
        let mut best_err = f64::INFINITY;
        for (i, &f) in self.doppler_hz.iter().enumerate() {
            let err = (f - hz).abs();
            if err < best_err {
                best_err = err;
                best = Some(i);
            }
        }
        let step = if self.doppler_hz.len() > 1 {
            self.doppler_hz[1] - self.doppler_hz[0]
        } else {
            f64::INFINITY
        };
        best.filter(|_| best_err <= 0.5 * step + 1e-9)
    }

    /// Complex value at an absolute (delay bin, Doppler Hz) coordinate.
    pub fn value_at(&self, delay_bin: usize, doppler_hz: f64) -> Option<Complex64> {
        let di = self.delay_index(delay_bin)?;
        let fi = self.doppler_index(doppler_hz)?;
        Some(self.values[[di, fi]])
    }

    /// Location and magnitude of the largest cell: (delay index, Doppler index, |value|).
    pub fn peak(&self) -> (usize, usize, f64) {
        let mut loc = (0, 0);
        let mut best = -1.0;
        for ((i, j), v) in self.values.indexed_iter() {
            let m = v.norm();
            if m > best {
                best = m;
                loc = (i, j);
            }
        }
        (loc.0, loc.1, best)
    }

    /// Bistatic range in metres of the delay-axis entry at `delay_index`.
    pub fn range_m(&self, delay_index: usize) -> f64 {
        self.delay_bins[delay_index] as f64 * self.meters_per_bin
    }
}

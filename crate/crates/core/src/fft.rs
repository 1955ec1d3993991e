//! Thin wrappers around rustfft plans shared by the signal and detection paths.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub(crate) struct FftPair {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl FftPair {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPair {
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            scale: 1.0 / n as f64,
        }
    }

    pub fn scratch(&self) -> Vec<Complex64> {
        let len = self
            .fwd
            .get_inplace_scratch_len()
            .max(self.inv.get_inplace_scratch_len());
        vec![Complex64::ZERO; len]
    }

    pub fn forward(&self, data: &mut [Complex64], scratch: &mut [Complex64]) {
        self.fwd.process_with_scratch(data, scratch);
    }

    /// Inverse transform including the 1/N normalisation.
    pub fn inverse(&self, data: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inv.process_with_scratch(data, scratch);
        for v in data.iter_mut() {
            *v *= self.scale;
        }
    }
}

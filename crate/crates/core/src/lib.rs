//! Passive bistatic radar toolkit: FM illuminator synthesis, uniform-linear-array
//! data simulation, beamformed direct-path estimation, least-squares disturbance
//! cancellation, range-Doppler cross-ambiguity detection and beamforming angle
//! estimation.
//!
//! The processing chain mirrors a batch passive-radar receiver that exploits a
//! commercial FM station: [`signal`] synthesises the illuminator waveform,
//! [`scenario`] builds surveillance-array data from a declarative description,
//! [`beamform`] extracts the direct-path reference and target angles,
//! [`cancellation`] projects direct path, clutter and already-detected strong
//! targets out of the data, and [`detection`] runs the sequential range-Doppler
//! estimation loop over the cross-ambiguity maps.

pub mod beamform;
pub mod cancellation;
pub mod detection;
pub mod error;
mod fft;
pub mod rdmap;
pub mod scenario;
pub mod signal;

pub use error::{Error, Result};
pub use rdmap::{DelayConvention, RangeDopplerMap, SPEED_OF_LIGHT_M_S};

//! TOML scenario/processing configuration and its mapping onto library types.
//!
//! Every section has sensible defaults; unknown keys are rejected so a typo
//! fails the run instead of being silently ignored.

use anyhow::{bail, Context};
use num_complex::Complex64;
use pbr_core::cancellation::StrongDelaySpan;
use pbr_core::detection::{AntennaSum, DetectorConfig};
use pbr_core::scenario::{ArrayGeometry, ClutterParam, ScenarioConfig, TargetParam};
use pbr_core::DelayConvention;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub signal: SignalSection,
    #[serde(default)]
    pub array: ArraySection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub clutter: Vec<ClutterSection>,
    #[serde(default)]
    pub targets: Vec<TargetSection>,
    #[serde(default)]
    pub cancellation: CancellationSection,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub beamform: BeamformSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSection {
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// FM peak deviation; the default puts the 99%-power bandwidth near 100 kHz.
    pub fm_deviation_hz: f64,
    pub seed: u64,
}

impl Default for SignalSection {
    fn default() -> Self {
        SignalSection {
            sample_rate_hz: 400_000.0,
            duration_s: 1.0,
            fm_deviation_hz: 85_000.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub num_antennas: usize,
    pub spacing_m: f64,
    pub wavelength_m: f64,
    /// Allow spacing beyond half a wavelength (grating lobes become possible).
    #[serde(default)]
    pub allow_wide_spacing: bool,
}

impl Default for ArraySection {
    fn default() -> Self {
        ArraySection {
            num_antennas: 8,
            spacing_m: 1.5,
            wavelength_m: 3.0,
            allow_wide_spacing: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub direct_path_angle_deg: f64,
    pub direct_path_amplitude: f64,
    #[serde(default)]
    pub direct_path_phase_deg: f64,
    pub noise_power: f64,
    pub seed: u64,
    /// "circular" or "linear"
    pub delay_convention: String,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            direct_path_angle_deg: 90.0,
            direct_path_amplitude: 1.0,
            direct_path_phase_deg: 0.0,
            noise_power: 1e-4,
            seed: 42,
            delay_convention: "circular".to_string(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterSection {
    pub delay_samples: usize,
    pub angle_deg: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub delay_samples: usize,
    pub doppler_hz: f64,
    pub angle_deg: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CancellationSection {
    /// Delay taps of the disturbance dictionary (Q).
    pub delay_taps: usize,
    /// One-sided Doppler bins of the disturbance dictionary (P).
    pub doppler_bins: usize,
    /// Usable data duration for the trimmed-window canceller, in seconds.
    pub eca_data_window_s: f64,
    /// r_0: extra delay margin of the strong-target canceller.
    pub strong_delay_margin: usize,
    /// f_0: extra Doppler-grid margin of the strong-target canceller.
    pub strong_doppler_margin: usize,
    /// "from-zero" (all taps up to the detection) or "windowed".
    pub strong_delay_span: String,
}

impl Default for CancellationSection {
    fn default() -> Self {
        CancellationSection {
            delay_taps: 50,
            doppler_bins: 2,
            eca_data_window_s: 0.99,
            strong_delay_margin: 3,
            strong_doppler_margin: 3,
            strong_delay_span: "from-zero".to_string(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub max_delay_bins: usize,
    pub doppler_span_hz: f64,
    pub threshold_db: f64,
    pub guard_bins: usize,
    pub max_passes: usize,
    pub relative_window_db: f64,
    /// "incoherent" (magnitude sum) or "coherent".
    pub antenna_sum: String,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection {
            max_delay_bins: 96,
            doppler_span_hz: 120.0,
            threshold_db: 13.0,
            guard_bins: 5,
            max_passes: 4,
            relative_window_db: 15.0,
            antenna_sum: "incoherent".to_string(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeamformSection {
    pub grid_step_deg: f64,
}

impl Default for BeamformSection {
    fn default() -> Self {
        BeamformSection {
            grid_step_deg: 0.5,
        }
    }
}

fn polar(amplitude: f64, phase_deg: f64) -> Complex64 {
    Complex64::from_polar(amplitude, phase_deg.to_radians())
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: Config = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if !(self.signal.sample_rate_hz > 0.0) || !(self.signal.duration_s > 0.0) {
            bail!("signal.sample_rate_hz and signal.duration_s must be positive");
        }
        self.delay_convention()?;
        self.antenna_sum()?;
        self.strong_delay_span()?;
        if !(self.beamform.grid_step_deg > 0.0) {
            bail!("beamform.grid_step_deg must be positive");
        }
        if !(self.cancellation.eca_data_window_s > 0.0)
            || self.cancellation.eca_data_window_s >= self.signal.duration_s
        {
            bail!("cancellation.eca_data_window_s must lie in (0, signal.duration_s)");
        }
        Ok(())
    }

    pub fn geometry(&self) -> anyhow::Result<ArrayGeometry> {
        let a = &self.array;
        let geom = if a.allow_wide_spacing {
            ArrayGeometry::with_wide_spacing(a.num_antennas, a.spacing_m, a.wavelength_m)
        } else {
            ArrayGeometry::new(a.num_antennas, a.spacing_m, a.wavelength_m)
        };
        geom.map_err(|e| anyhow::anyhow!("array geometry: {e}"))
    }

    pub fn delay_convention(&self) -> anyhow::Result<DelayConvention> {
        match self.scenario.delay_convention.as_str() {
            "circular" => Ok(DelayConvention::Circular),
            "linear" => Ok(DelayConvention::LinearZeroFill),
            other => bail!("scenario.delay_convention must be \"circular\" or \"linear\", got {other:?}"),
        }
    }

    pub fn antenna_sum(&self) -> anyhow::Result<AntennaSum> {
        match self.detector.antenna_sum.as_str() {
            "incoherent" => Ok(AntennaSum::Incoherent),
            "coherent" => Ok(AntennaSum::Coherent),
            other => bail!("detector.antenna_sum must be \"incoherent\" or \"coherent\", got {other:?}"),
        }
    }

    pub fn strong_delay_span(&self) -> anyhow::Result<StrongDelaySpan> {
        match self.cancellation.strong_delay_span.as_str() {
            "from-zero" => Ok(StrongDelaySpan::FromZero),
            "windowed" => Ok(StrongDelaySpan::Windowed),
            other => bail!(
                "cancellation.strong_delay_span must be \"from-zero\" or \"windowed\", got {other:?}"
            ),
        }
    }

    /// Assemble the simulation description, optionally overriding the noise
    /// seed and the window duration.
    pub fn scenario_config(
        &self,
        seed_override: Option<u64>,
        window_override_s: Option<f64>,
    ) -> anyhow::Result<ScenarioConfig> {
        let mut cfg = ScenarioConfig::new(
            self.geometry()?,
            window_override_s.unwrap_or(self.signal.duration_s),
            self.signal.sample_rate_hz,
        );
        cfg.direct_path_angle_deg = self.scenario.direct_path_angle_deg;
        cfg.direct_path_amplitude = polar(
            self.scenario.direct_path_amplitude,
            self.scenario.direct_path_phase_deg,
        );
        cfg.noise_power = self.scenario.noise_power;
        cfg.rng_seed = seed_override.unwrap_or(self.scenario.seed);
        cfg.delay_convention = self.delay_convention()?;
        cfg.clutter = self
            .clutter
            .iter()
            .map(|c| ClutterParam {
                delay_samples: c.delay_samples,
                angle_deg: c.angle_deg,
                amplitude: polar(c.amplitude, c.phase_deg),
            })
            .collect();
        cfg.targets = self
            .targets
            .iter()
            .map(|t| TargetParam {
                delay_samples: t.delay_samples,
                doppler_hz: t.doppler_hz,
                angle_deg: t.angle_deg,
                amplitude: polar(t.amplitude, t.phase_deg),
            })
            .collect();
        Ok(cfg)
    }

    pub fn detector_config(&self) -> anyhow::Result<DetectorConfig> {
        Ok(DetectorConfig {
            max_delay: self.detector.max_delay_bins,
            doppler_span_hz: self.detector.doppler_span_hz,
            threshold_db: self.detector.threshold_db,
            guard_bins: self.detector.guard_bins,
            max_passes: self.detector.max_passes,
            strong_delay_margin: self.cancellation.strong_delay_margin,
            strong_doppler_margin: self.cancellation.strong_doppler_margin,
            relative_window_db: self.detector.relative_window_db,
            disturbance: Some((
                self.cancellation.delay_taps,
                self.cancellation.doppler_bins,
            )),
            antenna_sum: self.antenna_sum()?,
            delay_convention: self.delay_convention()?,
            strong_delay_span: self.strong_delay_span()?,
        })
    }

    pub fn angle_grid(&self) -> Vec<f64> {
        let step = self.beamform.grid_step_deg;
        let n = (180.0 / step).floor() as usize;
        (0..=n).map(|k| k as f64 * step).collect()
    }
}

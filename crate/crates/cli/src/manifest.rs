//! Run manifest: what a command produced, from which inputs, and how long
//! each stage took. Timing fields vary run to run, so the manifest is not
//! covered by byte-identical reproducibility (the data exports are).

use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config_path: Option<String>,
    pub seed: Option<u64>,
    pub library_version: String,
    pub stage_outputs: BTreeMap<String, String>,
    pub timing_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(config_path: Option<&Path>, seed: Option<u64>) -> Self {
        RunManifest {
            config_path: config_path.map(|p| p.display().to_string()),
            seed,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            stage_outputs: BTreeMap::new(),
            timing_ms: BTreeMap::new(),
        }
    }

    pub fn add_output(&mut self, stage: &str, path: &Path) {
        self.stage_outputs
            .insert(stage.to_string(), path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Stopwatch for manifest stage timings.
pub struct StageTimer {
    started: Instant,
}

impl StageTimer {
    pub fn start() -> Self {
        StageTimer {
            started: Instant::now(),
        }
    }

    /// Record the elapsed time under `stage` and restart the clock.
    pub fn lap(&mut self, manifest: &mut RunManifest, stage: &str) {
        let ms = self.started.elapsed().as_secs_f64() * 1000.0;
        manifest.timing_ms.insert(stage.to_string(), ms.max(1e-3));
        self.started = Instant::now();
    }
}

/// Resolve an output path inside the run directory.
pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

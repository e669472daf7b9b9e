//! Scene manifest: the resolved spec plus derived facts, written next to
//! the WAV so downstream commands can reconstruct ground truth exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use seldkit_core::scene::SceneSpec;
use seldkit_core::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEvent {
    pub class_id: usize,
    pub track_id: u32,
    pub t_start: f64,
    pub t_end: f64,
    pub band: (f64, f64),
    pub delays: Vec<f64>,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub sample_rate: u32,
    pub channels: usize,
    pub duration: f64,
    pub noise_floor: f64,
    pub frame_duration: f64,
    pub num_frames: usize,
    pub num_classes: usize,
    pub events: Vec<ManifestEvent>,
    /// The resolved input spec, echoed verbatim.
    pub spec: SceneSpec,
}

impl Manifest {
    pub fn new(spec: &SceneSpec, tracks: &[u32]) -> Self {
        let num_classes = spec
            .events
            .iter()
            .map(|e| e.class_id + 1)
            .max()
            .unwrap_or(1);
        let events = spec
            .events
            .iter()
            .zip(tracks.iter())
            .map(|(e, &track_id)| ManifestEvent {
                class_id: e.class_id,
                track_id,
                t_start: e.t_start,
                t_end: e.t_end,
                band: e.band,
                delays: e.delays.clone(),
                amplitude: e.amplitude,
            })
            .collect();
        Manifest {
            seed: spec.rng_seed,
            sample_rate: spec.sample_rate,
            channels: spec.channels,
            duration: spec.duration,
            noise_floor: spec.noise_floor,
            frame_duration: spec.frame_duration,
            num_frames: spec.num_frames(),
            num_classes,
            events,
            spec: spec.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Parse a TOML scene spec file.
pub fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let spec: SceneSpec =
        toml::from_str(&text).map_err(|e| Error::InvalidScene(e.to_string()))?;
    Ok(spec)
}

//! `seldkit synth`: render a TOML scene spec into scene.wav, labels.csv,
//! and manifest.json. Byte-identical outputs for one spec and seed.

use std::path::PathBuf;

use clap::Args;

use seldkit_core::labels::{events_to_labels, write_metadata};
use seldkit_core::scene::synth_scene;
use seldkit_core::wave::write_wav;
use seldkit_core::{Error, Result};

use crate::manifest::{read_scene_spec, Manifest};

const WAV_BITS: u16 = 32;

#[derive(Args)]
pub struct SynthArgs {
    /// Scene spec TOML file.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory (created if absent).
    #[arg(long)]
    pub out: PathBuf,
    /// Override the spec's rng_seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let mut spec = read_scene_spec(&args.spec)?;
    if let Some(seed) = args.seed {
        spec.rng_seed = seed;
    }
    spec.validate()?;
    let tracks = spec.resolve_tracks()?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;

    let (waveform, events) = synth_scene(&spec)?;
    // snap to the PCM grid so the file read back equals the data written
    let waveform = waveform.quantized(WAV_BITS)?;
    write_wav(&waveform, args.out.join("scene.wav"), WAV_BITS)?;

    let labels = events_to_labels(&events, spec.frame_duration, spec.num_frames())?;
    write_metadata(&labels, args.out.join("labels.csv"))?;

    Manifest::new(&spec, &tracks).write(&args.out.join("manifest.json"))?;
    Ok(())
}

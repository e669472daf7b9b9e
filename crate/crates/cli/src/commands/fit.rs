//! `seldkit fit-filters`: fit one filter to a synthesized scene directory
//! and write a round-trippable checkpoint plus the per-iteration trace.
//! On divergence the trace is still written and the exit code is 3.

use std::path::PathBuf;

use clap::Args;

use seldkit_core::filterbank::fit::{fit_filters, FitConfig, FitTraceRow};
use seldkit_core::filterbank::{FilterBank, WindowKind};
use seldkit_core::labels::SoundEvent;
use seldkit_core::wave::read_wav;
use seldkit_core::{Error, Result};

use crate::manifest::Manifest;

#[derive(Args)]
pub struct FitArgs {
    /// Scene directory produced by `seldkit synth`.
    #[arg(long)]
    pub scene: PathBuf,
    /// Output directory for checkpoint.txt and trace.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file of parameter defaults; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub band_phase: Option<usize>,
    #[arg(long)]
    pub shift_phase: Option<usize>,
    #[arg(long)]
    pub lr_freq: Option<f64>,
    #[arg(long)]
    pub lr_shift: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub decay_every: Option<usize>,
    /// Kernel length of the fitted filter (odd, default 251).
    #[arg(long)]
    pub kernel_length: Option<usize>,
    /// Stride recorded in the checkpoint for bank application (default 75).
    #[arg(long)]
    pub stride: Option<usize>,
    /// Frame hop used inside the fitting objective (default 10).
    #[arg(long)]
    pub fit_stride: Option<usize>,
    /// Kernel taper: none | hamming (default hamming).
    #[arg(long)]
    pub window: Option<String>,
    #[arg(long)]
    pub tau_max: Option<f64>,
    #[arg(long)]
    pub init_f1: Option<f64>,
    #[arg(long)]
    pub init_f2: Option<f64>,
}

/// `--config` file schema for `fit-filters`.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfigFile {
    iterations: Option<usize>,
    band_phase: Option<usize>,
    shift_phase: Option<usize>,
    lr_freq: Option<f64>,
    lr_shift: Option<f64>,
    lr_decay: Option<f64>,
    decay_every: Option<usize>,
    kernel_length: Option<usize>,
    stride: Option<usize>,
    fit_stride: Option<usize>,
    window: Option<String>,
    tau_max: Option<f64>,
    init_f1: Option<f64>,
    init_f2: Option<f64>,
}

fn write_trace(trace: &[FitTraceRow], channels: usize, path: &std::path::Path) -> Result<()> {
    let mut out = String::from("iteration,objective,f1,f2");
    for ch in 2..=channels {
        out.push_str(&format!(",t{ch}"));
    }
    out.push('\n');
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{}",
            row.iteration, row.objective, row.f1, row.f2
        ));
        for t in row.shifts.iter().skip(1) {
            out.push_str(&format!(",{t}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn run(args: FitArgs) -> Result<()> {
    let manifest = Manifest::read(&args.scene.join("manifest.json"))?;
    let waveform = read_wav(args.scene.join("scene.wav"))?;
    let events: Vec<SoundEvent> = manifest
        .events
        .iter()
        .map(|e| SoundEvent {
            t_start: e.t_start,
            t_end: e.t_end,
            class_id: e.class_id,
            track_id: e.track_id,
            trajectory: vec![
                [1.0, 0.0, 0.0];
                seldkit_core::labels::frame_count(e.t_start, e.t_end, manifest.frame_duration)
            ],
        })
        .collect();

    let file: FitConfigFile = crate::config::load(args.config.as_deref())?;
    use crate::config::pick;
    let base = FitConfig::default();
    let window: WindowKind = pick(args.window, file.window, "hamming".into()).parse()?;
    let kernel_length = pick(args.kernel_length, file.kernel_length, base.kernel_length);
    let bank_stride = pick(args.stride, file.stride, 75);
    let config = FitConfig {
        iterations: pick(args.iterations, file.iterations, base.iterations),
        band_phase: pick(args.band_phase, file.band_phase, base.band_phase),
        shift_phase: pick(args.shift_phase, file.shift_phase, base.shift_phase),
        lr_freq: pick(args.lr_freq, file.lr_freq, base.lr_freq),
        lr_shift: pick(args.lr_shift, file.lr_shift, base.lr_shift),
        lr_decay: pick(args.lr_decay, file.lr_decay, base.lr_decay),
        decay_every: pick(args.decay_every, file.decay_every, base.decay_every),
        kernel_length,
        stride: pick(args.fit_stride, file.fit_stride, base.stride),
        window,
        tau_max: pick(args.tau_max, file.tau_max, base.tau_max),
        init_f1: pick(args.init_f1, file.init_f1, base.init_f1),
        init_f2: pick(args.init_f2, file.init_f2, base.init_f2),
    };

    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    let trace_path = args.out.join("trace.csv");

    match fit_filters(&waveform, &events, &config) {
        Ok(fit) => {
            write_trace(&fit.trace, waveform.channels(), &trace_path)?;
            let bank = FilterBank::new(vec![fit.filter], kernel_length, bank_stride, window)?;
            seldkit_core::filterbank::write_checkpoint(&bank, args.out.join("checkpoint.txt"))?;
            Ok(())
        }
        Err(Error::TrainingDiverged { iteration, trace }) => {
            write_trace(&trace, waveform.channels(), &trace_path)?;
            Err(Error::TrainingDiverged { iteration, trace })
        }
        Err(other) => Err(other),
    }
}

//! Toy gradient-descent fitting of a single filter to a labelled scene.
//!
//! The objective is log-contrastive band energy: with `A` the mean squared
//! filter output over frames inside events and `B` the same over silence
//! frames, ascent maximizes `ln A - ln B`. Two normalizations keep the
//! problem well posed: the kernel is scaled to unit Frobenius norm
//! (otherwise the objective is flat in any cutoff that already covers the
//! source band and the cutoffs are unidentifiable), and the log form makes
//! the gradient scale independent of signal level without saturating once
//! the band is found.
//!
//! Band and shifts are estimated as a curriculum because the joint landscape
//! traps plain gradient ascent: while the shifts are unresolved,
//! inter-channel coherence leaves oscillations along the cutoff axes (period
//! set by the channel delays), and while the passband is wide the shift axes
//! oscillate at the band's center frequency. The schedule therefore runs
//! three phases, stepping `(f1, f2)` under projection onto
//! `0 <= f1 < f2 <= 0.5` together with the free shifts `t_2..t_C`:
//!
//! 1. cutoffs only, on the per-channel (incoherent) energy contrast, which
//!    is independent of the shifts by construction;
//! 2. shifts only, on the channel-summed (coherent) contrast at the settled
//!    band, where the alignment basin is widest;
//! 3. joint fine-tune of everything on the coherent contrast.
//!
//! Shift semantics: the filter aligns channels when `t_i = -delay_i`, so the
//! implied per-channel arrival delay of a fitted filter is `-t_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filterbank::{
    kernel_gradients, maxcorr_kernel, MaxCorrFilter, SincParams, WindowKind, DEFAULT_KERNEL_LENGTH,
    DEFAULT_TAU_MAX,
};
use crate::labels::SoundEvent;
use crate::wave::MultichannelWaveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Total iterations across all three phases.
    pub iterations: usize,
    /// Iterations of phase 1 (cutoffs only, incoherent energy).
    pub band_phase: usize,
    /// Iterations of phase 2 (shifts only, coherent energy).
    pub shift_phase: usize,
    /// Per-iteration step length along the cutoff axes, cycles/sample.
    /// Updates are sign-gradient steps: the objective's gradient magnitude
    /// swings over an order of magnitude along the descent path, so the
    /// direction is trusted and the length comes from the schedule alone.
    pub lr_freq: f64,
    /// Per-iteration step length for the shifts, samples.
    pub lr_shift: f64,
    /// Multiplicative step decay applied every `decay_every` iterations.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub kernel_length: usize,
    pub stride: usize,
    pub window: WindowKind,
    pub tau_max: f64,
    pub init_f1: f64,
    pub init_f2: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 450,
            band_phase: 150,
            shift_phase: 150,
            lr_freq: 4e-3,
            lr_shift: 0.1,
            lr_decay: 0.5,
            decay_every: 50,
            kernel_length: DEFAULT_KERNEL_LENGTH,
            // denser than the production hop: a coarse frame grid aliases
            // the band's carrier phase and biases the shift objective
            stride: 10,
            window: WindowKind::Hamming,
            tau_max: DEFAULT_TAU_MAX,
            init_f1: 0.05,
            init_f2: 0.45,
        }
    }
}

/// How channel responses combine into frame energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyMode {
    /// Square of the channel-summed response (shift sensitive).
    Coherent,
    /// Sum of per-channel squared responses (shift independent).
    PerChannel,
}

/// One training-trace entry: parameters and objective before the update of
/// the given iteration (the final row holds the fitted state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub f1: f64,
    pub f2: f64,
    pub shifts: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub filter: MaxCorrFilter,
    pub trace: Vec<FitTraceRow>,
    pub final_objective: f64,
}

impl FitResult {
    /// Per-channel arrival delays implied by the fitted shifts (`-t_i`).
    pub fn implied_delays(&self) -> Vec<f64> {
        self.filter.shifts().iter().map(|t| -t).collect()
    }
}

/// Gradient of the contrastive objective with respect to the filter
/// parameters, in both cutoff space and the raw parameterization.
#[derive(Debug, Clone)]
pub struct ObjectiveGradients {
    pub objective: f64,
    pub d_f1: f64,
    pub d_f2: f64,
    pub d_theta1: f64,
    pub d_theta2: f64,
    /// One entry per channel; entry 0 belongs to the gauge-fixed shift and
    /// is reported for diagnostics only.
    pub d_shifts: Vec<f64>,
}

fn frame_is_event(center: usize, event_spans: &[(usize, usize)]) -> bool {
    event_spans.iter().any(|&(s, e)| center >= s && center < e)
}

/// Evaluate the log-contrast objective and its raw-parameter gradients at
/// the given filter state, under the chosen energy mode.
pub fn contrast_objective(
    waveform: &MultichannelWaveform,
    events: &[SoundEvent],
    filter: &MaxCorrFilter,
    config: &FitConfig,
    mode: EnergyMode,
) -> Result<ObjectiveGradients> {
    if waveform.channels() != filter.channels() {
        return Err(Error::ChannelMismatch {
            expected: filter.channels(),
            got: waveform.channels(),
        });
    }
    let length = config.kernel_length;
    let stride = config.stride;
    if waveform.len() < length {
        return Err(Error::InvalidShape(
            "waveform shorter than the fitting kernel".into(),
        ));
    }
    let sr = waveform.sample_rate() as f64;
    let spans: Vec<(usize, usize)> = events
        .iter()
        .map(|ev| {
            (
                (ev.t_start * sr).round() as usize,
                (ev.t_end * sr).round() as usize,
            )
        })
        .collect();

    let kernel = maxcorr_kernel(filter, length, config.window)?;
    let norm = kernel
        .iter()
        .flat_map(|r| r.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    let c = filter.channels();
    if norm < 1e-12 {
        // degenerate zero kernel: flat objective
        return Ok(ObjectiveGradients {
            objective: 0.0,
            d_f1: 0.0,
            d_f2: 0.0,
            d_theta1: 0.0,
            d_theta2: 0.0,
            d_shifts: vec![0.0; c],
        });
    }
    let unit: Vec<Vec<f64>> = kernel
        .iter()
        .map(|r| r.iter().map(|v| v / norm).collect())
        .collect();

    let frames = (waveform.len() - length) / stride + 1;
    let channels: Vec<&[f64]> = waveform.channels_iter().collect();
    let half = (length - 1) / 2;

    let mut n_event = 0usize;
    let mut n_silence = 0usize;
    let mut labels = Vec::with_capacity(frames);
    for f in 0..frames {
        let is_event = frame_is_event(f * stride + half, &spans);
        if is_event {
            n_event += 1;
        } else {
            n_silence += 1;
        }
        labels.push(is_event);
    }

    // forward pass: per-channel responses, then frame energy per mode
    let mut responses = vec![0.0f64; frames * c];
    for f in 0..frames {
        let start = f * stride;
        for (i, (ch, row)) in channels.iter().zip(unit.iter()).enumerate() {
            let mut acc = 0.0;
            for (s, k) in ch[start..start + length].iter().zip(row.iter()) {
                acc += s * k;
            }
            responses[f * c + i] = acc;
        }
    }
    let frame_energy = |f: usize| -> f64 {
        let row = &responses[f * c..(f + 1) * c];
        match mode {
            EnergyMode::Coherent => {
                let y: f64 = row.iter().sum();
                y * y
            }
            EnergyMode::PerChannel => row.iter().map(|y| y * y).sum(),
        }
    };

    let mut event_energy = 0.0;
    let mut silence_energy = 0.0;
    for (f, &is_event) in labels.iter().enumerate() {
        if is_event {
            event_energy += frame_energy(f);
        } else {
            silence_energy += frame_energy(f);
        }
    }
    if n_event > 0 {
        event_energy /= n_event as f64;
    }
    if n_silence > 0 {
        silence_energy /= n_silence as f64;
    }
    const TINY: f64 = 1e-30;
    // empty frame sets contribute a constant 0 instead of ln(TINY)
    let objective = if n_event == 0 { 0.0 } else { (event_energy + TINY).ln() }
        - if n_silence == 0 { 0.0 } else { (silence_energy + TINY).ln() };

    // backward pass: dJ/d(unit kernel) for J = ln A - ln B
    let event_coef = 1.0 / (event_energy + TINY);
    let silence_coef = 1.0 / (silence_energy + TINY);
    let mut grad_unit = vec![vec![0.0f64; length]; c];
    for f in 0..frames {
        let base = if labels[f] {
            if n_event == 0 {
                continue;
            }
            event_coef / n_event as f64
        } else {
            if n_silence == 0 {
                continue;
            }
            -silence_coef / n_silence as f64
        };
        let row = &responses[f * c..(f + 1) * c];
        let y_sum: f64 = row.iter().sum();
        let start = f * stride;
        for (i, (ch, grow)) in channels.iter().zip(grad_unit.iter_mut()).enumerate() {
            // dE/dy_i is 2*y_sum (coherent) or 2*y_i (per channel)
            let coef = match mode {
                EnergyMode::Coherent => base * 2.0 * y_sum,
                EnergyMode::PerChannel => base * 2.0 * row[i],
            };
            if coef == 0.0 {
                continue;
            }
            for (s, g) in ch[start..start + length].iter().zip(grow.iter_mut()) {
                *g += coef * s;
            }
        }
    }

    // chain through the normalization: dJ/dK = (G - <G, u> u) / norm
    let dot = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(ra, rb)| ra.iter().zip(rb.iter()).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    };
    let g_dot_u = dot(&grad_unit, &unit);

    let grads = kernel_gradients(filter, length, config.window)?;
    let (d_theta1_k, d_theta2_k) = grads.raw_param_gradients(&filter.sinc);
    let project = |d_k: &[Vec<f64>]| (dot(&grad_unit, d_k) - g_dot_u * dot(&unit, d_k)) / norm;

    let d_f1 = project(&grads.d_f1);
    let d_f2 = project(&grads.d_f2);
    let d_theta1 = project(&d_theta1_k);
    let d_theta2 = project(&d_theta2_k);
    let mut d_shifts = vec![0.0; c];
    for i in 0..c {
        let row_dot = |a: &[Vec<f64>]| -> f64 {
            a[i].iter()
                .zip(grads.d_shifts[i].iter())
                .map(|(x, y)| x * y)
                .sum::<f64>()
        };
        d_shifts[i] = (row_dot(&grad_unit) - g_dot_u * row_dot(&unit)) / norm;
    }

    Ok(ObjectiveGradients {
        objective,
        d_f1,
        d_f2,
        d_theta1,
        d_theta2,
        d_shifts,
    })
}

/// Coherent-mode objective and gradients (the objective the fitter reports).
pub fn objective_and_gradients(
    waveform: &MultichannelWaveform,
    events: &[SoundEvent],
    filter: &MaxCorrFilter,
    config: &FitConfig,
) -> Result<ObjectiveGradients> {
    contrast_objective(waveform, events, filter, config, EnergyMode::Coherent)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Band,
    Shift,
    Joint,
}

/// Fit one filter to a synthesized scene by staged gradient ascent on the
/// log-contrast objective. Deterministic given the scene.
pub fn fit_filters(
    waveform: &MultichannelWaveform,
    events: &[SoundEvent],
    config: &FitConfig,
) -> Result<FitResult> {
    // minimum band width kept during projection
    const MIN_WIDTH: f64 = 1e-3;
    SincParams::from_cutoffs(config.init_f1, config.init_f2)?;
    let mut cutoffs = (config.init_f1, config.init_f2);
    let mut shifts = vec![0.0f64; waveform.channels()];
    let mut trace = Vec::with_capacity(config.iterations + 1);

    let make_filter = |cutoffs: (f64, f64), shifts: &[f64]| {
        MaxCorrFilter::new(
            SincParams::from_cutoffs(cutoffs.0, cutoffs.1)?,
            shifts.to_vec(),
            config.tau_max,
        )
    };

    for iteration in 0..config.iterations {
        let (phase, phase_iter) = if iteration < config.band_phase {
            (Phase::Band, iteration)
        } else if iteration < config.band_phase + config.shift_phase {
            (Phase::Shift, iteration - config.band_phase)
        } else {
            (Phase::Joint, iteration - config.band_phase - config.shift_phase)
        };
        let mode = match phase {
            Phase::Band => EnergyMode::PerChannel,
            _ => EnergyMode::Coherent,
        };
        let filter = make_filter(cutoffs, &shifts)?;
        let g = contrast_objective(waveform, events, &filter, config, mode)?;
        trace.push(FitTraceRow {
            iteration,
            objective: g.objective,
            f1: cutoffs.0,
            f2: cutoffs.1,
            shifts: shifts.clone(),
        });
        let finite = g.objective.is_finite()
            && g.d_f1.is_finite()
            && g.d_f2.is_finite()
            && g.d_shifts.iter().all(|d| d.is_finite());
        if !finite {
            return Err(Error::TrainingDiverged { iteration, trace });
        }

        // step lengths decay within each phase
        let decays = phase_iter.checked_div(config.decay_every).unwrap_or(0) as i32;
        let lr_freq = config.lr_freq * config.lr_decay.powi(decays);
        let lr_shift = config.lr_shift * config.lr_decay.powi(decays);

        // sign-gradient steps: direction from the gradient, length purely
        // from the schedule, so flat spots and sub-step ripple in the
        // objective cannot stall or trap the walk
        if phase != Phase::Shift {
            cutoffs.0 += lr_freq * g.d_f1.signum();
            cutoffs.1 += lr_freq * g.d_f2.signum();
            // project back onto 0 <= f1 < f2 <= 0.5
            cutoffs.0 = cutoffs.0.clamp(0.0, 0.5 - MIN_WIDTH);
            cutoffs.1 = cutoffs.1.clamp(cutoffs.0 + MIN_WIDTH, 0.5);
        }
        if phase != Phase::Band {
            for (t, d) in shifts.iter_mut().zip(g.d_shifts.iter()).skip(1) {
                *t = (*t + lr_shift * d.signum()).clamp(-config.tau_max, config.tau_max);
            }
        }
    }

    let filter = make_filter(cutoffs, &shifts)?;
    let g = objective_and_gradients(waveform, events, &filter, config)?;
    trace.push(FitTraceRow {
        iteration: config.iterations,
        objective: g.objective,
        f1: cutoffs.0,
        f2: cutoffs.1,
        shifts: shifts.clone(),
    });
    Ok(FitResult {
        filter,
        trace,
        final_objective: g.objective,
    })
}

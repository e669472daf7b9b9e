//! Learnable multi-channel band-pass filter bank.
//!
//! A filter is a sinc band-pass kernel
//! `k[n] = 2 f2 sinc(2 pi f2 n) - 2 f1 sinc(2 pi f1 n)`
//! replicated across channels with per-channel real-valued time shifts:
//! row i evaluates the kernel at the shifted abscissa `n + t_i`. Because the
//! kernel is a closed-form function of a real argument, fractional shifts are
//! evaluated exactly and every parameter has an analytic derivative; the
//! sigmoid soft-rounding of the shift is kept as a compatibility variant in
//! [`soft_round`].
//!
//! Cutoffs are stored in a raw parameterization `f1 = |theta1|`,
//! `f2 = min(f1 + |theta2|, 0.5)` so any real pair maps to a valid band.

pub mod fit;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wave::MultichannelWaveform;

/// Default kernel length in taps (odd).
pub const DEFAULT_KERNEL_LENGTH: usize = 251;
/// Default hop between output frames, in samples.
pub const DEFAULT_STRIDE: usize = 75;
/// Default bound on per-channel shifts, in samples.
pub const DEFAULT_TAU_MAX: f64 = 8.0;

/// Kernel taper applied on top of the sinc difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    None,
    Hamming,
}

impl WindowKind {
    /// Window value at (possibly fractional) tap offset `x` from center,
    /// for a kernel of `length` taps. The Hamming taper is evaluated as a
    /// continuous function so shifted kernels stay differentiable.
    fn value(&self, x: f64, length: usize) -> f64 {
        match self {
            WindowKind::None => 1.0,
            WindowKind::Hamming => {
                0.54 + 0.46 * (2.0 * std::f64::consts::PI * x / (length as f64 - 1.0)).cos()
            }
        }
    }

    fn derivative(&self, x: f64, length: usize) -> f64 {
        match self {
            WindowKind::None => 0.0,
            WindowKind::Hamming => {
                let c = 2.0 * std::f64::consts::PI / (length as f64 - 1.0);
                -0.46 * c * (c * x).sin()
            }
        }
    }
}

impl std::str::FromStr for WindowKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(WindowKind::None),
            "hamming" => Ok(WindowKind::Hamming),
            other => Err(Error::InvalidDomain(format!("unknown window '{other}'"))),
        }
    }
}

impl std::fmt::Display for WindowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WindowKind::None => write!(f, "none"),
            WindowKind::Hamming => write!(f, "hamming"),
        }
    }
}

/// Band cutoffs in raw form: `f1 = |theta1|`, `f2 = min(f1 + |theta2|, 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SincParams {
    theta1: f64,
    theta2: f64,
}

impl SincParams {
    pub fn from_raw(theta1: f64, theta2: f64) -> Self {
        Self { theta1, theta2 }
    }

    /// Build from explicit cutoffs `0 <= f1 < f2 <= 0.5`.
    pub fn from_cutoffs(f1: f64, f2: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&f1) || !(0.0..=0.5).contains(&f2) || f1 >= f2 {
            return Err(Error::InvalidConstraint(format!(
                "cutoffs ({f1}, {f2}) must satisfy 0 <= f1 < f2 <= 0.5"
            )));
        }
        Ok(Self {
            theta1: f1,
            theta2: f2 - f1,
        })
    }

    pub fn raw(&self) -> (f64, f64) {
        (self.theta1, self.theta2)
    }

    /// Lower cutoff after the constraint map.
    pub fn f1(&self) -> f64 {
        self.theta1.abs().min(0.5)
    }

    /// Upper cutoff after the constraint map.
    pub fn f2(&self) -> f64 {
        (self.f1() + self.theta2.abs()).min(0.5)
    }

    /// Whether the upper cutoff is pinned at the Nyquist clamp (gradient
    /// through `theta2` vanishes there).
    pub fn f2_clamped(&self) -> bool {
        self.f1() + self.theta2.abs() > 0.5
    }
}

/// A sinc band-pass kernel with per-channel time shifts. `shifts[0]` is
/// fixed at 0 (gauge fixing: a common shift only translates the output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxCorrFilter {
    pub sinc: SincParams,
    shifts: Vec<f64>,
    pub tau_max: f64,
}

impl MaxCorrFilter {
    pub fn new(sinc: SincParams, shifts: Vec<f64>, tau_max: f64) -> Result<Self> {
        if shifts.is_empty() {
            return Err(Error::InvalidShape("need at least one channel".into()));
        }
        if shifts[0] != 0.0 {
            return Err(Error::InvalidConstraint(
                "first channel shift is gauge-fixed to 0".into(),
            ));
        }
        if shifts.iter().any(|t| t.abs() > tau_max) {
            return Err(Error::InvalidConstraint(format!(
                "shifts exceed the +-{tau_max} sample bound"
            )));
        }
        Ok(Self {
            sinc,
            shifts,
            tau_max,
        })
    }

    /// Build from the free shifts of channels 2..C (channel 1 is pinned at 0).
    pub fn from_free_shifts(sinc: SincParams, free: &[f64], tau_max: f64) -> Result<Self> {
        let mut shifts = Vec::with_capacity(free.len() + 1);
        shifts.push(0.0);
        shifts.extend_from_slice(free);
        Self::new(sinc, shifts, tau_max)
    }

    pub fn channels(&self) -> usize {
        self.shifts.len()
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    /// Stored scalar parameters: two cutoffs plus one shift per channel.
    pub fn num_params(&self) -> usize {
        2 + self.channels()
    }

    /// Learnable scalars: the gauge-fixed first shift is not free.
    pub fn num_free_params(&self) -> usize {
        2 + self.channels() - 1
    }
}

/// A bank of filters applied with one kernel length, stride, and window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub filters: Vec<MaxCorrFilter>,
    pub kernel_length: usize,
    pub stride: usize,
    pub window: WindowKind,
}

impl FilterBank {
    pub fn new(
        filters: Vec<MaxCorrFilter>,
        kernel_length: usize,
        stride: usize,
        window: WindowKind,
    ) -> Result<Self> {
        if kernel_length.is_multiple_of(2) || kernel_length < 3 {
            return Err(Error::InvalidShape(format!(
                "kernel_length {kernel_length} must be odd and >= 3"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidShape("stride must be >= 1".into()));
        }
        if filters.is_empty() {
            return Err(Error::InvalidShape("bank needs at least one filter".into()));
        }
        let c = filters[0].channels();
        if filters.iter().any(|f| f.channels() != c) {
            return Err(Error::InvalidShape(
                "all filters must share one channel count".into(),
            ));
        }
        Ok(Self {
            filters,
            kernel_length,
            stride,
            window,
        })
    }

    pub fn channels(&self) -> usize {
        self.filters[0].channels()
    }
}

/// `2 f sinc(2 pi f x)` with `sinc(u) = sin(u)/u`, `sinc(0) = 1`.
fn sinc_term(f: f64, x: f64) -> f64 {
    if x == 0.0 {
        2.0 * f
    } else {
        (2.0 * std::f64::consts::PI * f * x).sin() / (std::f64::consts::PI * x)
    }
}

/// d/df of [`sinc_term`]: `2 cos(2 pi f x)` everywhere.
fn sinc_term_df(f: f64, x: f64) -> f64 {
    2.0 * (2.0 * std::f64::consts::PI * f * x).cos()
}

/// d/dx of [`sinc_term`], with a series fallback near `x = 0` where the
/// closed form cancels catastrophically.
fn sinc_term_dx(f: f64, x: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let u = 2.0 * pi * f * x;
    if u.abs() < 1e-4 {
        // u cos u - sin u = -u^3/3 + u^5/30 - ...
        let w = 2.0 * pi * f;
        -w * w * w * x / (3.0 * pi) + w * w * w * w * w * x * x * x / (30.0 * pi)
    } else {
        (u * u.cos() - u.sin()) / (pi * x * x)
    }
}

/// Unwindowed kernel value at continuous offset `x`.
fn kernel_value(f1: f64, f2: f64, x: f64) -> f64 {
    sinc_term(f2, x) - sinc_term(f1, x)
}

/// Evaluate the band-pass kernel at `length` integer taps centered on 0.
pub fn sinc_kernel(params: &SincParams, length: usize, window: WindowKind) -> Result<Vec<f64>> {
    check_kernel_shape(length)?;
    let (f1, f2) = (params.f1(), params.f2());
    if f1 > f2 {
        return Err(Error::InvalidConstraint(format!(
            "f1 {f1} exceeds f2 {f2}"
        )));
    }
    let half = (length as i64 - 1) / 2;
    Ok((-half..=half)
        .map(|n| {
            let x = n as f64;
            window.value(x, length) * kernel_value(f1, f2, x)
        })
        .collect())
}

fn check_kernel_shape(length: usize) -> Result<()> {
    if length.is_multiple_of(2) || length < 3 {
        return Err(Error::InvalidShape(format!(
            "kernel length {length} must be odd and >= 3"
        )));
    }
    Ok(())
}

/// Emit the C x L kernel matrix: row i is the continuous kernel evaluated at
/// the shifted abscissa `n + t_i` (exact fractional evaluation, no rounding).
pub fn maxcorr_kernel(
    filter: &MaxCorrFilter,
    length: usize,
    window: WindowKind,
) -> Result<Vec<Vec<f64>>> {
    check_kernel_shape(length)?;
    let (f1, f2) = (filter.sinc.f1(), filter.sinc.f2());
    if f1 > f2 {
        return Err(Error::InvalidConstraint(format!("f1 {f1} exceeds f2 {f2}")));
    }
    if filter.shifts.iter().any(|t| t.abs() > filter.tau_max) {
        return Err(Error::InvalidConstraint(format!(
            "shifts exceed the +-{} sample bound",
            filter.tau_max
        )));
    }
    let half = (length as i64 - 1) / 2;
    Ok(filter
        .shifts
        .iter()
        .map(|&t| {
            (-half..=half)
                .map(|n| {
                    let x = n as f64 + t;
                    window.value(x, length) * kernel_value(f1, f2, x)
                })
                .collect()
        })
        .collect())
}

/// Differentiable approximation of half-up rounding:
/// `floor(x) + sigmoid(beta (frac(x) - 0.5))`. Approaches `round(x)` as
/// `beta` grows.
pub fn soft_round(x: f64, beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    let floor = x.floor();
    let frac = x - floor;
    floor + sigmoid(beta * (frac - 0.5))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Analytic partials of the emitted kernel matrix. All fields are C x L;
/// `d_shifts[i]` holds the partial of row i with respect to its own shift
/// (cross-channel partials vanish).
#[derive(Debug, Clone)]
pub struct KernelGradients {
    pub d_f1: Vec<Vec<f64>>,
    pub d_f2: Vec<Vec<f64>>,
    pub d_shifts: Vec<Vec<f64>>,
}

/// Partials of [`maxcorr_kernel`] with respect to the cutoffs and each
/// channel's shift, evaluated analytically at every tap.
pub fn kernel_gradients(
    filter: &MaxCorrFilter,
    length: usize,
    window: WindowKind,
) -> Result<KernelGradients> {
    check_kernel_shape(length)?;
    let (f1, f2) = (filter.sinc.f1(), filter.sinc.f2());
    let half = (length as i64 - 1) / 2;
    let c = filter.channels();
    let mut d_f1 = vec![vec![0.0; length]; c];
    let mut d_f2 = vec![vec![0.0; length]; c];
    let mut d_shifts = vec![vec![0.0; length]; c];
    for (i, &t) in filter.shifts.iter().enumerate() {
        for (m, n) in (-half..=half).enumerate() {
            let x = n as f64 + t;
            let w = window.value(x, length);
            d_f1[i][m] = -w * sinc_term_df(f1, x);
            d_f2[i][m] = w * sinc_term_df(f2, x);
            // product rule through the shifted abscissa
            d_shifts[i][m] = window.derivative(x, length) * kernel_value(f1, f2, x)
                + w * (sinc_term_dx(f2, x) - sinc_term_dx(f1, x));
        }
    }
    Ok(KernelGradients {
        d_f1,
        d_f2,
        d_shifts,
    })
}

impl KernelGradients {
    /// Chain the cutoff partials through the constraint map
    /// `f1 = |theta1|`, `f2 = min(f1 + |theta2|, 0.5)`, yielding partials
    /// with respect to the raw parameters.
    pub fn raw_param_gradients(&self, params: &SincParams) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (theta1, theta2) = params.raw();
        let s1 = sign(theta1);
        let s2 = if params.f2_clamped() { 0.0 } else { sign(theta2) };
        let f2_from_theta1 = if params.f2_clamped() { 0.0 } else { s1 };
        let d_theta1 = self
            .d_f1
            .iter()
            .zip(self.d_f2.iter())
            .map(|(r1, r2)| {
                r1.iter()
                    .zip(r2.iter())
                    .map(|(a, b)| s1 * a + f2_from_theta1 * b)
                    .collect()
            })
            .collect();
        let d_theta2 = self
            .d_f2
            .iter()
            .map(|r| r.iter().map(|b| s2 * b).collect())
            .collect();
        (d_theta1, d_theta2)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Frame-major feature map produced by [`apply_filterbank`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub frames: usize,
    pub filters: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn at(&self, frame: usize, filter: usize) -> f64 {
        self.data[frame * self.filters + filter]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.data[frame * self.filters..(frame + 1) * self.filters]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Number of output frames for a waveform of `samples` with the given
/// kernel length and stride: `floor((T - L) / stride) + 1`.
pub fn output_frames(samples: usize, kernel_length: usize, stride: usize) -> usize {
    (samples - kernel_length) / stride + 1
}

/// Channel-summed strided cross-correlation of the waveform with every
/// filter kernel:
/// `out[frame][q] = sum_i sum_m wav[i][frame*stride + m] * kernel_q[i][m]`.
///
/// Filters are processed in parallel; each output element is a single
/// fixed-order summation, so results are bitwise independent of the
/// schedule.
pub fn apply_filterbank(waveform: &MultichannelWaveform, bank: &FilterBank) -> Result<FeatureMap> {
    if waveform.channels() != bank.channels() {
        return Err(Error::ChannelMismatch {
            expected: bank.channels(),
            got: waveform.channels(),
        });
    }
    let samples = waveform.len();
    let length = bank.kernel_length;
    if samples < length {
        return Err(Error::InvalidShape(format!(
            "waveform of {samples} samples is shorter than the {length}-tap kernel"
        )));
    }
    let frames = output_frames(samples, length, bank.stride);
    let kernels: Vec<Vec<Vec<f64>>> = bank
        .filters
        .iter()
        .map(|f| maxcorr_kernel(f, length, bank.window))
        .collect::<Result<_>>()?;

    let channels: Vec<&[f64]> = waveform.channels_iter().collect();
    let columns: Vec<Vec<f64>> = kernels
        .par_iter()
        .map(|kernel| {
            (0..frames)
                .map(|frame| {
                    let start = frame * bank.stride;
                    let mut acc = 0.0;
                    for (ch, row) in channels.iter().zip(kernel.iter()) {
                        let window = &ch[start..start + length];
                        for (s, k) in window.iter().zip(row.iter()) {
                            acc += s * k;
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();

    let num_filters = bank.filters.len();
    let mut data = vec![0.0; frames * num_filters];
    for (q, col) in columns.iter().enumerate() {
        for (frame, &v) in col.iter().enumerate() {
            data[frame * num_filters + q] = v;
        }
    }
    Ok(FeatureMap {
        frames,
        filters: num_filters,
        data,
    })
}

/// Write a bank as a flat key-value checkpoint (round-trippable).
pub fn write_checkpoint(bank: &FilterBank, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&format!("kernel_length = {}\n", bank.kernel_length));
    out.push_str(&format!("stride = {}\n", bank.stride));
    out.push_str(&format!("window = {}\n", bank.window));
    out.push_str(&format!("filters = {}\n", bank.filters.len()));
    for (idx, f) in bank.filters.iter().enumerate() {
        let (theta1, theta2) = f.sinc.raw();
        out.push_str(&format!("filter{idx}.theta1 = {theta1}\n"));
        out.push_str(&format!("filter{idx}.theta2 = {theta2}\n"));
        out.push_str(&format!("filter{idx}.tau_max = {}\n", f.tau_max));
        for (ch, t) in f.shifts().iter().enumerate().skip(1) {
            out.push_str(&format!("filter{idx}.t{} = {t}\n", ch + 1));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(path: impl AsRef<std::path::Path>) -> Result<FilterBank> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pairs = std::collections::HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Serialization(format!(
            "checkpoint line {} has no '='",
            idx + 1
        )))?;
        pairs.insert(key.trim().to_string(), value.trim().to_string());
    }
    let get = |key: &str| {
        pairs
            .get(key)
            .ok_or_else(|| Error::Serialization(format!("checkpoint missing key '{key}'")))
    };
    let kernel_length: usize = get("kernel_length")?
        .parse()
        .map_err(|_| Error::Serialization("bad kernel_length".into()))?;
    let stride: usize = get("stride")?
        .parse()
        .map_err(|_| Error::Serialization("bad stride".into()))?;
    let window: WindowKind = get("window")?.parse()?;
    let count: usize = get("filters")?
        .parse()
        .map_err(|_| Error::Serialization("bad filter count".into()))?;
    let parse_f64 = |key: &str| -> Result<f64> {
        get(key)?
            .parse()
            .map_err(|_| Error::Serialization(format!("bad float for '{key}'")))
    };
    let mut filters = Vec::with_capacity(count);
    for idx in 0..count {
        let theta1 = parse_f64(&format!("filter{idx}.theta1"))?;
        let theta2 = parse_f64(&format!("filter{idx}.theta2"))?;
        let tau_max = parse_f64(&format!("filter{idx}.tau_max"))?;
        let mut free = Vec::new();
        let mut ch = 2;
        while pairs.contains_key(&format!("filter{idx}.t{ch}")) {
            free.push(parse_f64(&format!("filter{idx}.t{ch}"))?);
            ch += 1;
        }
        filters.push(MaxCorrFilter::from_free_shifts(
            SincParams::from_raw(theta1, theta2),
            &free,
            tau_max,
        )?);
    }
    FilterBank::new(filters, kernel_length, stride, window)
}

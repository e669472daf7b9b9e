//! Raw-waveform polyphonic sound event detection and localization toolkit.
//!
//! The crate treats a sound event as a complete object — start time, end
//! time, class, and framewise direction-of-arrival trajectory — and provides
//! the algorithmic pieces to detect and evaluate such objects:
//!
//! - [`wave`] / [`labels`] / [`scene`]: multi-channel WAV and metadata I/O,
//!   plus a deterministic synthetic scene generator with exact ground truth.
//! - [`filterbank`]: learnable multi-channel sinc band-pass filters with
//!   per-channel time shifts, analytic parameter gradients, strided bank
//!   application, and a toy gradient-descent fitter.
//! - [`proposal`]: the dense H x W event-proposal grid with
//!   boundary-sensitive temporal-overlap targets, motion-smoothness maps,
//!   per-cell feature averaging, and positive/negative balancing.
//! - [`inference`]: two-test gating, multiplicative score fusion,
//!   intra-class temporal NMS, and a class-agnostic simultaneous-event cap.
//! - [`metrics`]: event-based AP/AR/mAP/mAR over tIoU and confidence grids,
//!   segment-based ER/F at an angular gate with localization error/recall,
//!   and Small/Medium/Large length-bucket breakdowns.

pub mod error;
pub mod filterbank;
pub mod inference;
pub mod labels;
pub mod metrics;
pub mod proposal;
pub mod scene;
pub mod wave;

pub use error::{Error, Result};

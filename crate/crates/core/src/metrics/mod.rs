//! Evaluation: event-based AP/AR over tIoU and confidence grids, and
//! segment-based joint detection/localization scores.

pub mod event;
pub mod segment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{vec_norm, DoaVec};

pub use event::{
    average_precision_recall, map_mar, match_events, ClassApAr, EventEvalConfig, EventEvalResult,
    MatchResult,
};
pub use segment::{segment_eval, FramewisePrediction, PredictedEntry, SegmentEvalResult};

/// Great-circle angle between two unit vectors, in degrees.
pub fn angular_distance(u: DoaVec, v: DoaVec) -> Result<f64> {
    for w in [u, v] {
        if (vec_norm(w) - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidDomain(
                "angular distance requires unit vectors".into(),
            ));
        }
    }
    let dot = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).clamp(-1.0, 1.0);
    Ok(dot.acos().to_degrees())
}

/// Event-duration buckets used in reports: Small (0-2 s], Medium (2-7 s],
/// Large (> 7 s). Shared edges close upward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthBucket {
    Small,
    Medium,
    Large,
}

impl LengthBucket {
    pub const ALL: [LengthBucket; 3] =
        [LengthBucket::Small, LengthBucket::Medium, LengthBucket::Large];

    /// Default edges: Small up to 2 s, Medium up to 7 s.
    pub fn of_duration(seconds: f64) -> Self {
        Self::of_duration_with(seconds, 2.0, 7.0)
    }

    pub fn of_duration_with(seconds: f64, small_max: f64, medium_max: f64) -> Self {
        if seconds <= small_max {
            LengthBucket::Small
        } else if seconds <= medium_max {
            LengthBucket::Medium
        } else {
            LengthBucket::Large
        }
    }

    pub fn contains(&self, seconds: f64) -> bool {
        Self::of_duration(seconds) == *self
    }
}

impl std::fmt::Display for LengthBucket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LengthBucket::Small => write!(f, "small"),
            LengthBucket::Medium => write!(f, "medium"),
            LengthBucket::Large => write!(f, "large"),
        }
    }
}

/// Bucket tag per event duration.
pub fn bucketize(durations: impl IntoIterator<Item = f64>) -> Vec<LengthBucket> {
    durations
        .into_iter()
        .map(LengthBucket::of_duration)
        .collect()
}

/// Combined report emitted by the evaluation front end.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event: Option<EventEvalResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segment: Option<SegmentEvalResult>,
}

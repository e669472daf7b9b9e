//! Segment-based joint detection/localization metrics: location-dependent
//! error rate and F-score at an angular gate, plus class-dependent
//! localization error and recall.
//!
//! Predictions and ground truth are compared inside non-overlapping
//! segments (1 s by default). A class predicted in a segment is a true
//! positive only if the class is active in the ground truth and the
//! frame-averaged DoAs agree within the angular threshold.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Detection;
use crate::labels::{DoaVec, FramewiseLabels, SoundEvent};
use crate::metrics::LengthBucket;

/// One active class prediction in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedEntry {
    pub class_id: usize,
    pub doa: DoaVec,
}

/// Framewise binarized predictions with per-frame DoAs.
#[derive(Debug, Clone, PartialEq)]
pub struct FramewisePrediction {
    pub frame_duration: f64,
    pub frames: Vec<Vec<PredictedEntry>>,
}

impl FramewisePrediction {
    pub fn empty(frame_duration: f64, num_frames: usize) -> Self {
        Self {
            frame_duration,
            frames: vec![Vec::new(); num_frames],
        }
    }

    /// Rasterize detections onto the frame grid (active over `[t_start,
    /// t_end)` with the detection's per-frame trajectory, or a zero vector
    /// where no trajectory is available).
    pub fn from_detections(
        detections: &[Detection],
        frame_duration: f64,
        num_frames: usize,
    ) -> Self {
        let mut out = Self::empty(frame_duration, num_frames);
        for det in detections {
            let start = (det.t_start / frame_duration).round() as usize;
            let len = crate::labels::frame_count(det.t_start, det.t_end, frame_duration);
            for k in 0..len {
                let frame = start + k;
                if frame >= num_frames {
                    break;
                }
                let doa = det.trajectory.get(k).copied().unwrap_or([0.0; 3]);
                // one entry per class per frame; keep the first writer
                if !out.frames[frame].iter().any(|e| e.class_id == det.class_id) {
                    out.frames[frame].push(PredictedEntry {
                        class_id: det.class_id,
                        doa,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub gt_active: usize,
    pub class_matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEvalResult {
    pub er: f64,
    pub f_score: f64,
    /// Class-dependent localization error, degrees.
    pub le_cd: f64,
    /// Class-dependent localization recall.
    pub lr_cd: f64,
    pub angular_threshold_deg: f64,
    pub segment_length: f64,
    pub counts: SegmentCounts,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub buckets: BTreeMap<LengthBucket, SegmentEvalResult>,
}

fn mean_doa(doas: &[DoaVec]) -> Option<DoaVec> {
    if doas.is_empty() {
        return None;
    }
    let mut acc = [0.0f64; 3];
    for d in doas {
        for k in 0..3 {
            acc[k] += d[k];
        }
    }
    let norm = (acc[0] * acc[0] + acc[1] * acc[1] + acc[2] * acc[2]).sqrt();
    if norm < 1e-9 {
        return None;
    }
    Some([acc[0] / norm, acc[1] / norm, acc[2] / norm])
}

fn angle_deg(u: DoaVec, v: DoaVec) -> f64 {
    let dot = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).clamp(-1.0, 1.0);
    dot.acos().to_degrees()
}

/// Segment-based evaluation at angular threshold `t_deg` over segments of
/// `segment_length` seconds. Prediction and ground truth must share the
/// frame grid.
pub fn segment_eval(
    pred: &FramewisePrediction,
    gt: &FramewiseLabels,
    t_deg: f64,
    segment_length: f64,
) -> Result<SegmentEvalResult> {
    if (pred.frame_duration - gt.frame_duration).abs() > 1e-12 {
        return Err(Error::InvalidShape(format!(
            "frame grids differ: prediction {} s vs ground truth {} s",
            pred.frame_duration, gt.frame_duration
        )));
    }
    let frames_per_segment = (segment_length / gt.frame_duration).round().max(1.0) as usize;
    let num_frames = pred.frames.len().max(gt.frames.len());
    let num_segments = num_frames.div_ceil(frames_per_segment);

    let mut counts = SegmentCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        gt_active: 0,
        class_matched: 0,
    };
    let mut le_sum = 0.0f64;

    for seg in 0..num_segments {
        let lo = seg * frames_per_segment;
        let hi = ((seg + 1) * frames_per_segment).min(num_frames);
        let mut seg_fp = 0usize;
        let mut seg_fn = 0usize;

        // collect per-class framewise DoAs inside the segment
        let mut pred_doas: BTreeMap<usize, Vec<DoaVec>> = BTreeMap::new();
        for f in lo..hi {
            if let Some(entries) = pred.frames.get(f) {
                for e in entries {
                    pred_doas.entry(e.class_id).or_default().push(e.doa);
                }
            }
        }
        // ground truth split per (class, track) so two same-class tracks can
        // be paired by nearest direction
        let mut gt_doas: BTreeMap<usize, BTreeMap<u32, Vec<DoaVec>>> = BTreeMap::new();
        for f in lo..hi {
            if let Some(entries) = gt.frames.get(f) {
                for e in entries {
                    gt_doas
                        .entry(e.class_id)
                        .or_default()
                        .entry(e.track_id)
                        .or_default()
                        .push(e.doa());
                }
            }
        }

        let classes: BTreeSet<usize> = pred_doas.keys().chain(gt_doas.keys()).copied().collect();
        for class_id in classes {
            let pred_mean = pred_doas.get(&class_id).and_then(|d| mean_doa(d));
            let pred_active = pred_doas.contains_key(&class_id);
            let gt_tracks = gt_doas.get(&class_id);
            let gt_active = gt_tracks.is_some();
            if gt_active {
                counts.gt_active += 1;
            }
            match (pred_active, gt_active) {
                (true, true) => {
                    // pair to the nearest gt track by angular distance
                    let distance = gt_tracks
                        .unwrap()
                        .values()
                        .filter_map(|doas| mean_doa(doas))
                        .map(|gt_mean| match pred_mean {
                            Some(p) => angle_deg(p, gt_mean),
                            None => 180.0,
                        })
                        .min_by(f64::total_cmp)
                        .unwrap_or(180.0);
                    counts.class_matched += 1;
                    le_sum += distance;
                    if distance <= t_deg {
                        counts.tp += 1;
                    } else {
                        counts.fp += 1;
                        counts.fn_ += 1;
                        seg_fp += 1;
                        seg_fn += 1;
                    }
                }
                (true, false) => {
                    counts.fp += 1;
                    seg_fp += 1;
                }
                (false, true) => {
                    counts.fn_ += 1;
                    seg_fn += 1;
                }
                (false, false) => {}
            }
        }
        counts.substitutions += seg_fp.min(seg_fn);
        counts.deletions += seg_fn.saturating_sub(seg_fp);
        counts.insertions += seg_fp.saturating_sub(seg_fn);
    }

    let er = if counts.gt_active == 0 {
        0.0
    } else {
        (counts.substitutions + counts.deletions + counts.insertions) as f64
            / counts.gt_active as f64
    };
    let f_den = 2 * counts.tp + counts.fp + counts.fn_;
    let f_score = if f_den == 0 {
        1.0
    } else {
        2.0 * counts.tp as f64 / f_den as f64
    };
    let le_cd = if counts.class_matched == 0 {
        180.0
    } else {
        le_sum / counts.class_matched as f64
    };
    let lr_cd = if counts.gt_active == 0 {
        1.0
    } else {
        counts.class_matched as f64 / counts.gt_active as f64
    };

    Ok(SegmentEvalResult {
        er,
        f_score,
        le_cd,
        lr_cd,
        angular_threshold_deg: t_deg,
        segment_length,
        counts,
        buckets: BTreeMap::new(),
    })
}

/// Segment evaluation with Small/Medium/Large breakdowns. Each bucket
/// restricts ground truth to events of that length and evaluates only the
/// segments where the restricted ground truth is active.
pub fn segment_eval_bucketed(
    pred: &FramewisePrediction,
    gt_events: &[SoundEvent],
    num_frames: usize,
    t_deg: f64,
    segment_length: f64,
) -> Result<SegmentEvalResult> {
    let gt = crate::labels::events_to_labels(gt_events, pred.frame_duration, num_frames)?;
    let mut overall = segment_eval(pred, &gt, t_deg, segment_length)?;

    let frames_per_segment = (segment_length / pred.frame_duration).round().max(1.0) as usize;
    for bucket in LengthBucket::ALL {
        let bucket_events: Vec<SoundEvent> = gt_events
            .iter()
            .filter(|e| bucket.contains(e.duration()))
            .cloned()
            .collect();
        if bucket_events.is_empty() {
            continue;
        }
        let bucket_gt =
            crate::labels::events_to_labels(&bucket_events, pred.frame_duration, num_frames)?;
        // keep only segments where this bucket's ground truth is active
        let num_segments = num_frames.div_ceil(frames_per_segment);
        let mut pred_masked = FramewisePrediction::empty(pred.frame_duration, num_frames);
        let mut gt_masked = FramewiseLabels::empty(pred.frame_duration, num_frames);
        for seg in 0..num_segments {
            let lo = seg * frames_per_segment;
            let hi = ((seg + 1) * frames_per_segment).min(num_frames);
            let active = (lo..hi).any(|f| !bucket_gt.frames[f].is_empty());
            if !active {
                continue;
            }
            for f in lo..hi {
                if let Some(entries) = pred.frames.get(f) {
                    pred_masked.frames[f] = entries.clone();
                }
                gt_masked.frames[f] = bucket_gt.frames[f].clone();
            }
        }
        overall
            .buckets
            .insert(bucket, segment_eval(&pred_masked, &gt_masked, t_deg, segment_length)?);
    }
    Ok(overall)
}

//! Score-fusion inference: gate cells on the two score maps, fuse scores,
//! then refine with intra-class temporal NMS and a class-agnostic cap on
//! simultaneous events.
//!
//! A cell passes when its overlap score is at least `d_t` AND its smoothness
//! value (max squared step displacement, lower is better) is at most `d_s`.
//! The fused score is `overlap * exp(-smoothness) * class_score`, which maps
//! the unbounded lower-is-better smoothness into [0, 1] monotonically.
//!
//! All orderings use one tie-break — score descending, then earlier start,
//! then smaller class id — so every stage is deterministic and permutation
//! invariant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{DoaVec, FramewiseLabels};
use crate::proposal::{tiou_unchecked, ClassScoreGrid, OverlapMap, SmoothnessMap};

/// A final detection: class, time span, fused confidence, and the per-frame
/// trajectory sliced from the spatial head output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub score: f64,
    pub trajectory: Vec<DoaVec>,
}

impl Detection {
    pub fn interval(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Inference thresholds. `d_t` above 1 is allowed as an "impossible gate"
/// that yields zero detections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Overlap-score gate: cells below this are discarded.
    pub d_t: f64,
    /// Smoothness gate: max squared step displacement allowed.
    pub d_s: f64,
    /// Intra-class suppression threshold.
    pub nms_tiou: f64,
    /// Cap on simultaneously active detections.
    pub max_events: usize,
    /// Minimum per-class score for a cell to emit that class.
    pub class_threshold: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            d_t: 0.5,
            d_s: 0.04,
            nms_tiou: 0.5,
            max_events: 2,
            class_threshold: 0.5,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.d_t.is_finite() || self.d_t <= 0.0 {
            return Err(Error::InvalidDomain("d_t must be positive".into()));
        }
        if self.d_s.is_nan() || self.d_s < 0.0 {
            return Err(Error::InvalidDomain("d_s must be >= 0".into()));
        }
        if !(0.0 < self.nms_tiou && self.nms_tiou < 1.0) {
            return Err(Error::InvalidDomain("nms_tiou must lie in (0, 1)".into()));
        }
        if self.max_events == 0 {
            return Err(Error::InvalidDomain("max_events must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.class_threshold) {
            return Err(Error::InvalidDomain(
                "class_threshold must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

fn canonical_cmp(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.t_start.total_cmp(&b.t_start))
        .then(a.class_id.cmp(&b.class_id))
        .then(a.t_end.total_cmp(&b.t_end))
        .then(a.trajectory.len().cmp(&b.trajectory.len()))
}

/// Emit one raw detection per (valid cell, class) whose class score passes
/// `class_threshold`, overlap passes `d_t`, and smoothness passes `d_s`.
/// Trajectories are sliced per frame from `framewise_doas[frame][class]`.
pub fn gate_and_score(
    overlap: &OverlapMap,
    smooth: &SmoothnessMap,
    class_scores: &ClassScoreGrid,
    framewise_doas: &[Vec<DoaVec>],
    frame_duration: f64,
    config: &InferenceConfig,
) -> Result<Vec<Detection>> {
    config.validate()?;
    let grid = overlap.grid;
    if smooth.grid != grid || class_scores.grid != grid {
        return Err(Error::InvalidShape(
            "overlap, smoothness, and class-score maps must share one grid".into(),
        ));
    }
    let mut detections = Vec::new();
    for (i, j) in grid.valid_cells() {
        let overlap_score = overlap.get(i, j).unwrap();
        let smoothness = smooth.get(i, j).unwrap();
        if overlap_score < config.d_t || smoothness > config.d_s {
            continue;
        }
        let (frame_lo, frame_hi) = grid.cell_to_frames(i, j);
        let (t_start, t_end) = grid.cell_to_seconds(i, j, frame_duration);
        for class_id in 0..class_scores.num_classes {
            let class_score = class_scores.get(i, j, class_id);
            if class_score < config.class_threshold {
                continue;
            }
            let trajectory: Vec<DoaVec> = (frame_lo..frame_hi)
                .map(|f| {
                    framewise_doas
                        .get(f)
                        .and_then(|row| row.get(class_id))
                        .copied()
                        .unwrap_or([0.0; 3])
                })
                .collect();
            detections.push(Detection {
                class_id,
                t_start,
                t_end,
                score: overlap_score * (-smoothness).exp() * class_score,
                trajectory,
            });
        }
    }
    detections.sort_by(canonical_cmp);
    Ok(detections)
}

/// Greedy intra-class temporal NMS: per class, keep the highest-score
/// detection and drop any same-class detection overlapping a kept one with
/// tIoU at or above the threshold. Output stays in canonical order.
pub fn temporal_nms(detections: Vec<Detection>, nms_tiou: f64) -> Vec<Detection> {
    let mut sorted = detections;
    sorted.sort_by(canonical_cmp);
    let mut kept: Vec<Detection> = Vec::with_capacity(sorted.len());
    for det in sorted {
        let suppressed = kept.iter().any(|k| {
            k.class_id == det.class_id
                && tiou_unchecked(k.interval(), det.interval()) >= nms_tiou
        });
        if !suppressed {
            kept.push(det);
        }
    }
    kept
}

/// Count of detections active at time `x` (half-open intervals).
fn active_at(detections: &[Detection], x: f64) -> Vec<usize> {
    detections
        .iter()
        .enumerate()
        .filter(|(_, d)| d.t_start <= x && x < d.t_end)
        .map(|(idx, _)| idx)
        .collect()
}

/// Class-agnostic cap: while any instant has more than `max_events` active
/// detections, drop the lowest-score one among them (earliest violating
/// instant first). Output in canonical order.
pub fn max_event_clip(detections: Vec<Detection>, max_events: usize) -> Vec<Detection> {
    let mut dets = detections;
    dets.sort_by(canonical_cmp);
    loop {
        // overlap counts only change at start boundaries
        let mut starts: Vec<f64> = dets.iter().map(|d| d.t_start).collect();
        starts.sort_by(f64::total_cmp);
        starts.dedup();
        let mut violation: Option<Vec<usize>> = None;
        for &x in &starts {
            let active = active_at(&dets, x);
            if active.len() > max_events {
                violation = Some(active);
                break;
            }
        }
        match violation {
            None => return dets,
            Some(active) => {
                // canonical order makes the last active index the weakest
                let drop_idx = *active.last().unwrap();
                dets.remove(drop_idx);
            }
        }
    }
}

/// Full refinement: NMS then clip, `iterations` times (once by default).
pub fn refine(detections: Vec<Detection>, config: &InferenceConfig, iterations: usize) -> Vec<Detection> {
    let mut dets = detections;
    for _ in 0..iterations.max(1) {
        dets = temporal_nms(dets, config.nms_tiou);
        dets = max_event_clip(dets, config.max_events);
    }
    dets
}

/// Adapt framewise per-class probabilities and DoA regressions into events:
/// maximal runs of frames at or above `activity_threshold` become one event
/// with score `mean_prob * exp(-mean_doa_distance)`. The DoA distance is the
/// per-frame Euclidean gap to the matched ground-truth vector when labels
/// are supplied (evaluation mode), else 0.
pub fn framewise_to_events(
    class_probs: &[Vec<f64>],
    doas: &[Vec<DoaVec>],
    ground_truth: Option<&FramewiseLabels>,
    activity_threshold: f64,
    frame_duration: f64,
) -> Vec<Detection> {
    let num_frames = class_probs.len();
    let num_classes = class_probs.first().map(|r| r.len()).unwrap_or(0);
    let mut detections = Vec::new();
    for class_id in 0..num_classes {
        let mut run_start: Option<usize> = None;
        for frame in 0..=num_frames {
            let active = frame < num_frames && class_probs[frame][class_id] >= activity_threshold;
            match (run_start, active) {
                (None, true) => run_start = Some(frame),
                (Some(start), false) => {
                    detections.push(run_to_detection(
                        class_id,
                        start,
                        frame,
                        class_probs,
                        doas,
                        ground_truth,
                        frame_duration,
                    ));
                    run_start = None;
                }
                _ => {}
            }
        }
    }
    detections.sort_by(canonical_cmp);
    detections
}

fn run_to_detection(
    class_id: usize,
    start: usize,
    end: usize,
    class_probs: &[Vec<f64>],
    doas: &[Vec<DoaVec>],
    ground_truth: Option<&FramewiseLabels>,
    frame_duration: f64,
) -> Detection {
    let len = (end - start) as f64;
    let mean_prob = (start..end)
        .map(|f| class_probs[f][class_id])
        .sum::<f64>()
        / len;
    let trajectory: Vec<DoaVec> = (start..end)
        .map(|f| {
            doas.get(f)
                .and_then(|row| row.get(class_id))
                .copied()
                .unwrap_or([0.0; 3])
        })
        .collect();

    let mut doa_distance = 0.0;
    if let Some(gt) = ground_truth {
        let mut distances = Vec::new();
        for (offset, frame) in (start..end).enumerate() {
            let Some(entries) = gt.frames.get(frame) else {
                continue;
            };
            let pred = trajectory[offset];
            let best = entries
                .iter()
                .filter(|e| e.class_id == class_id)
                .map(|e| {
                    let v = e.doa();
                    ((pred[0] - v[0]).powi(2) + (pred[1] - v[1]).powi(2) + (pred[2] - v[2]).powi(2))
                        .sqrt()
                })
                .min_by(f64::total_cmp);
            if let Some(d) = best {
                distances.push(d);
            }
        }
        if !distances.is_empty() {
            doa_distance = distances.iter().sum::<f64>() / distances.len() as f64;
        }
    }

    Detection {
        class_id,
        t_start: start as f64 * frame_duration,
        t_end: end as f64 * frame_duration,
        score: mean_prob * (-doa_distance).exp(),
        trajectory,
    }
}

/// Serialized form combining detections and their trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsDocument {
    pub frame_duration: f64,
    pub detections: Vec<Detection>,
}

/// Write `class_id,t_start,t_end,score` rows (header included).
pub fn write_detections_csv(
    detections: &[Detection],
    path: impl AsRef<std::path::Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("class_id,t_start,t_end,score\n");
    for d in detections {
        out.push_str(&format!(
            "{},{},{},{}\n",
            d.class_id, d.t_start, d.t_end, d.score
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write the sidecar trajectory rows `detection_index,frame,x,y,z`, with
/// `frame` counted from each detection's first label frame.
pub fn write_trajectories_csv(
    detections: &[Detection],
    frame_duration: f64,
    path: impl AsRef<std::path::Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("detection_index,frame,x,y,z\n");
    for (idx, d) in detections.iter().enumerate() {
        let base = (d.t_start / frame_duration).round() as usize;
        for (k, v) in d.trajectory.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                idx,
                base + k,
                v[0],
                v[1],
                v[2]
            ));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a detections CSV (optionally with its trajectory sidecar).
pub fn read_detections_csv(
    path: impl AsRef<std::path::Path>,
    trajectories: Option<&std::path::Path>,
) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut detections = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with("class_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::MetadataParse {
                line: idx + 1,
                message: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let parse_err = |what: &str| Error::MetadataParse {
            line: idx + 1,
            message: format!("cannot parse {what}"),
        };
        detections.push(Detection {
            class_id: fields[0].trim().parse().map_err(|_| parse_err("class_id"))?,
            t_start: fields[1].trim().parse().map_err(|_| parse_err("t_start"))?,
            t_end: fields[2].trim().parse().map_err(|_| parse_err("t_end"))?,
            score: fields[3].trim().parse().map_err(|_| parse_err("score"))?,
            trajectory: Vec::new(),
        });
    }
    if let Some(traj_path) = trajectories {
        let text = std::fs::read_to_string(traj_path)
            .map_err(|e| Error::io(traj_path.display().to_string(), e))?;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with("detection_index")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::MetadataParse {
                    line: idx + 1,
                    message: format!("expected 5 fields, got {}", fields.len()),
                });
            }
            let parse_err = |what: &str| Error::MetadataParse {
                line: idx + 1,
                message: format!("cannot parse {what}"),
            };
            let det: usize = fields[0].trim().parse().map_err(|_| parse_err("detection_index"))?;
            if det >= detections.len() {
                return Err(Error::MetadataParse {
                    line: idx + 1,
                    message: format!("detection index {det} out of range"),
                });
            }
            let x: f64 = fields[2].trim().parse().map_err(|_| parse_err("x"))?;
            let y: f64 = fields[3].trim().parse().map_err(|_| parse_err("y"))?;
            let z: f64 = fields[4].trim().parse().map_err(|_| parse_err("z"))?;
            detections[det].trajectory.push([x, y, z]);
        }
    }
    Ok(detections)
}

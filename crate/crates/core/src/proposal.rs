//! Dense event-proposal grid and its score maps.
//!
//! Cell `(i, j)` with duration index `i` in `[1, H]` and start index `j` in
//! `[0, W)` denotes the label-frame interval `[j*g, (j+i)*g)` where `g` is
//! the grid unit in frames. A cell is valid iff its interval fits inside the
//! recording. Invalid cells carry a `-1` sentinel in every map and are
//! excluded from reductions.

use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{DoaVec, SoundEvent};

pub const INVALID_CELL: f64 = -1.0;

/// Geometry of the H x W proposal matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalGrid {
    pub height: usize,
    pub width: usize,
    /// Label frames per grid step.
    pub unit: usize,
    pub num_frames: usize,
}

impl ProposalGrid {
    pub fn build(num_frames: usize, height: usize, width: usize, unit: usize) -> Result<Self> {
        if height == 0 || width == 0 || unit == 0 {
            return Err(Error::InvalidShape(
                "grid height, width, and unit must be >= 1".into(),
            ));
        }
        if unit > num_frames {
            return Err(Error::InvalidShape(format!(
                "grid unit {unit} exceeds the {num_frames}-frame recording: no valid cell"
            )));
        }
        Ok(Self {
            height,
            width,
            unit,
            num_frames,
        })
    }

    /// Square grid covering the whole recording with the given unit.
    pub fn square(num_frames: usize, unit: usize) -> Result<Self> {
        let steps = num_frames / unit.max(1);
        Self::build(num_frames, steps, steps, unit)
    }

    pub fn is_valid(&self, i: usize, j: usize) -> bool {
        i >= 1 && i <= self.height && j < self.width && (j + i) * self.unit <= self.num_frames
    }

    /// Frame interval `[j*g, (j+i)*g)` of a cell.
    pub fn cell_to_frames(&self, i: usize, j: usize) -> (usize, usize) {
        (j * self.unit, (j + i) * self.unit)
    }

    pub fn cell_to_seconds(&self, i: usize, j: usize, frame_duration: f64) -> (f64, f64) {
        let (a, b) = self.cell_to_frames(i, j);
        (a as f64 * frame_duration, b as f64 * frame_duration)
    }

    /// Inverse of [`Self::cell_to_frames`]: a frame-aligned interval maps to
    /// exactly one cell.
    pub fn frames_to_cell(&self, start: usize, end: usize) -> Result<(usize, usize)> {
        if end <= start {
            return Err(Error::InvalidDomain("empty interval".into()));
        }
        if !start.is_multiple_of(self.unit) || !end.is_multiple_of(self.unit) {
            return Err(Error::InvalidDomain(format!(
                "interval [{start}, {end}) not aligned to unit {}",
                self.unit
            )));
        }
        let j = start / self.unit;
        let i = (end - start) / self.unit;
        if !self.is_valid(i, j) {
            return Err(Error::InvalidDomain(format!(
                "interval [{start}, {end}) has no valid cell"
            )));
        }
        Ok((i, j))
    }

    pub(crate) fn index(&self, i: usize, j: usize) -> usize {
        (i - 1) * self.width + j
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Iterate valid `(i, j)` cells row-major.
    pub fn valid_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..=self.height)
            .flat_map(move |i| (0..self.width).map(move |j| (i, j)))
            .filter(move |&(i, j)| self.is_valid(i, j))
    }

    pub fn valid_cell_count(&self) -> usize {
        self.valid_cells().count()
    }

    /// Grid steps covered by the recording.
    pub fn num_steps(&self) -> usize {
        self.num_frames / self.unit
    }
}

/// Temporal intersection over union of two intervals (any consistent unit).
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    if a.0 >= a.1 || b.0 >= b.1 {
        return Err(Error::InvalidDomain(
            "tiou requires start < end for both intervals".into(),
        ));
    }
    Ok(tiou_unchecked(a, b))
}

pub(crate) fn tiou_unchecked(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let span = a.1.max(b.1) - a.0.min(b.0);
    inter / span
}

/// Boundary-sensitive tIoU: `t * exp(-w * (1 - t))`. Monotone in `t`,
/// equal to `t` at `w = 0`, and sharper near 1 for `w > 0`.
pub fn tiou_bs(t: f64, w: f64) -> f64 {
    t * (-w * (1.0 - t)).exp()
}

fn dump_matrix(grid: &ProposalGrid, values: &[f64], path: &std::path::Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "{},{},{},{}\n",
        grid.height, grid.width, grid.unit, grid.num_frames
    ));
    for i in 1..=grid.height {
        let row: Vec<String> = (0..grid.width)
            .map(|j| format!("{}", values[grid.index(i, j)]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_matrix(reader: impl BufRead) -> Result<(ProposalGrid, Vec<f64>)> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Serialization("empty map dump".into()))?
        .map_err(|e| Error::Serialization(e.to_string()))?;
    let parts: Vec<&str> = header.trim().split(',').collect();
    if parts.len() != 4 {
        return Err(Error::Serialization(
            "map header must be H,W,unit,num_frames".into(),
        ));
    }
    let parse = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::Serialization(format!("bad header field '{s}'")))
    };
    let grid = ProposalGrid::build(parse(parts[3])?, parse(parts[0])?, parse(parts[1])?, parse(parts[2])?)?;
    let mut values = vec![INVALID_CELL; grid.cells()];
    let mut row = 0usize;
    for line in lines {
        let line = line.map_err(|e| Error::Serialization(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if row >= grid.height {
            return Err(Error::Serialization("too many map rows".into()));
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != grid.width {
            return Err(Error::Serialization(format!(
                "map row {} has {} fields, want {}",
                row + 1,
                fields.len(),
                grid.width
            )));
        }
        for (j, field) in fields.iter().enumerate() {
            values[row * grid.width + j] = field
                .trim()
                .parse()
                .map_err(|_| Error::Serialization(format!("bad map value '{field}'")))?;
        }
        row += 1;
    }
    if row != grid.height {
        return Err(Error::Serialization(format!(
            "map has {row} rows, want {}",
            grid.height
        )));
    }
    Ok((grid, values))
}

macro_rules! cell_map_impl {
    ($name:ident) => {
        impl $name {
            pub fn filled(grid: ProposalGrid, fill: f64) -> Self {
                let mut values = vec![INVALID_CELL; grid.cells()];
                for (i, j) in grid.valid_cells() {
                    values[grid.index(i, j)] = fill;
                }
                Self { grid, values }
            }

            /// Value at a valid cell; `None` on invalid cells.
            pub fn get(&self, i: usize, j: usize) -> Option<f64> {
                if self.grid.is_valid(i, j) {
                    Some(self.values[self.grid.index(i, j)])
                } else {
                    None
                }
            }

            pub fn set(&mut self, i: usize, j: usize, value: f64) {
                debug_assert!(self.grid.is_valid(i, j));
                let idx = self.grid.index(i, j);
                self.values[idx] = value;
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            /// Write as a CSV matrix dump with an `H,W,unit,num_frames`
            /// header line; invalid cells hold the -1 sentinel.
            pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
                dump_matrix(&self.grid, &self.values, path.as_ref())
            }

            pub fn read_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
                let path = path.as_ref();
                let file = std::fs::File::open(path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                let (grid, values) = parse_matrix(std::io::BufReader::new(file))?;
                Ok(Self { grid, values })
            }
        }
    };
}

/// Per-cell boundary-sensitive temporal overlap with ground truth, in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMap {
    pub grid: ProposalGrid,
    values: Vec<f64>,
}
cell_map_impl!(OverlapMap);

/// Per-cell maximum squared step displacement of the source trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessMap {
    pub grid: ProposalGrid,
    values: Vec<f64>,
}
cell_map_impl!(SmoothnessMap);

/// Class-agnostic ground-truth overlap targets: each valid cell holds the
/// max over events of `tiou_bs(tiou(cell, event), w)`.
pub fn ground_truth_overlap_map(
    grid: &ProposalGrid,
    events: &[SoundEvent],
    frame_duration: f64,
    w: f64,
) -> OverlapMap {
    let mut map = OverlapMap::filled(*grid, 0.0);
    for (i, j) in grid.valid_cells() {
        let cell = grid.cell_to_seconds(i, j, frame_duration);
        let mut best = 0.0f64;
        for ev in events {
            let t = tiou_unchecked(cell, ev.interval());
            best = best.max(tiou_bs(t, w));
        }
        map.set(i, j, best);
    }
    map
}

/// Per-cell maximum squared Euclidean displacement between successive
/// per-step locations inside the cell's interval. Cells spanning fewer than
/// two steps score 0. `step_locations` must cover every grid step.
pub fn motion_smoothness_map(
    grid: &ProposalGrid,
    step_locations: &[DoaVec],
) -> Result<SmoothnessMap> {
    if step_locations.len() < grid.num_steps() {
        return Err(Error::InvalidShape(format!(
            "need {} per-step locations, got {}",
            grid.num_steps(),
            step_locations.len()
        )));
    }
    let mut map = SmoothnessMap::filled(*grid, 0.0);
    for (i, j) in grid.valid_cells() {
        // steps j .. j+i, consecutive pairs inside the half-open interval
        let mut worst = 0.0f64;
        for k in j..(j + i).saturating_sub(1) {
            let a = step_locations[k];
            let b = step_locations[k + 1];
            let d = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            worst = worst.max(d);
        }
        map.set(i, j, worst);
    }
    Ok(map)
}

/// Per-class per-step source locations for oracle smoothness maps: the
/// step's location is the class's active-event trajectory at the step's
/// first active frame, held (forward/backward filled) across inactive gaps.
pub fn step_locations_from_events(
    events: &[SoundEvent],
    class_id: usize,
    grid: &ProposalGrid,
    frame_duration: f64,
) -> Vec<DoaVec> {
    let steps = grid.num_steps();
    let mut per_step: Vec<Option<DoaVec>> = vec![None; steps];
    for ev in events.iter().filter(|e| e.class_id == class_id) {
        let start_frame = (ev.t_start / frame_duration).round() as usize;
        for (k, v) in ev.trajectory.iter().enumerate() {
            let frame = start_frame + k;
            let step = frame / grid.unit;
            if step < steps && per_step[step].is_none() {
                per_step[step] = Some(*v);
            }
        }
    }
    // hold the last known location across gaps; backfill the head
    let mut out = vec![[0.0; 3]; steps];
    let mut last: Option<DoaVec> = None;
    for (s, slot) in per_step.iter().enumerate() {
        if let Some(v) = slot {
            last = Some(*v);
        }
        if let Some(v) = last {
            out[s] = v;
        }
    }
    if let Some(first_idx) = per_step.iter().position(|v| v.is_some()) {
        let first = per_step[first_idx].unwrap();
        for slot in out.iter_mut().take(first_idx) {
            *slot = first;
        }
    }
    out
}

/// Per-cell averaged features over the cell's grid steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalFeatures {
    pub grid: ProposalGrid,
    pub dim: usize,
    values: Vec<f64>,
}

impl ProposalFeatures {
    pub fn get(&self, i: usize, j: usize) -> Option<&[f64]> {
        if self.grid.is_valid(i, j) {
            let base = self.grid.index(i, j) * self.dim;
            Some(&self.values[base..base + self.dim])
        } else {
            None
        }
    }
}

/// Mean of per-step feature vectors over each cell's interval `[j, j+i)`.
pub fn proposal_features(step_features: &[Vec<f64>], grid: &ProposalGrid) -> Result<ProposalFeatures> {
    if step_features.len() < grid.num_steps() {
        return Err(Error::InvalidShape(format!(
            "need {} per-step feature rows, got {}",
            grid.num_steps(),
            step_features.len()
        )));
    }
    let dim = step_features.first().map(|f| f.len()).unwrap_or(0);
    if step_features.iter().any(|f| f.len() != dim) {
        return Err(Error::InvalidShape(
            "feature dimension varies across steps".into(),
        ));
    }
    let mut values = vec![0.0; grid.cells() * dim];
    for (i, j) in grid.valid_cells() {
        let base = grid.index(i, j) * dim;
        for row in step_features.iter().skip(j).take(i) {
            for (d, v) in row.iter().enumerate() {
                values[base + d] += v;
            }
        }
        for slot in values[base..base + dim].iter_mut() {
            *slot /= i as f64;
        }
    }
    Ok(ProposalFeatures {
        grid: *grid,
        dim,
        values,
    })
}

/// Per-cell per-class scores attached to a grid, each in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScoreGrid {
    pub grid: ProposalGrid,
    pub num_classes: usize,
    values: Vec<f64>,
}

impl ClassScoreGrid {
    pub fn new(grid: ProposalGrid, num_classes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cells() * num_classes {
            return Err(Error::InvalidShape(format!(
                "class scores have {} entries, want {}",
                values.len(),
                grid.cells() * num_classes
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v) && *v != INVALID_CELL) {
            return Err(Error::InvalidDomain(
                "class scores must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            grid,
            num_classes,
            values,
        })
    }

    pub fn zeros(grid: ProposalGrid, num_classes: usize) -> Self {
        Self {
            grid,
            num_classes,
            values: vec![0.0; grid.cells() * num_classes],
        }
    }

    pub fn get(&self, i: usize, j: usize, class_id: usize) -> f64 {
        self.values[self.grid.index(i, j) * self.num_classes + class_id]
    }

    pub fn set(&mut self, i: usize, j: usize, class_id: usize, value: f64) {
        let idx = self.grid.index(i, j) * self.num_classes + class_id;
        self.values[idx] = value;
    }

    /// Write as a CSV dump: header `H,W,unit,num_frames,num_classes`, then
    /// one H x W block per class.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let g = &self.grid;
        let mut out = String::new();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            g.height, g.width, g.unit, g.num_frames, self.num_classes
        ));
        for class_id in 0..self.num_classes {
            for i in 1..=g.height {
                let row: Vec<String> = (0..g.width)
                    .map(|j| format!("{}", self.get(i, j, class_id)))
                    .collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_csv(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Serialization("empty class-score dump".into()))?;
        let parts: Vec<&str> = header.trim().split(',').collect();
        if parts.len() != 5 {
            return Err(Error::Serialization(
                "class-score header must be H,W,unit,num_frames,num_classes".into(),
            ));
        }
        let parse = |s: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|_| Error::Serialization(format!("bad header field '{s}'")))
        };
        let grid = ProposalGrid::build(parse(parts[3])?, parse(parts[0])?, parse(parts[1])?, parse(parts[2])?)?;
        let num_classes = parse(parts[4])?;
        let mut values = vec![0.0; grid.cells() * num_classes];
        let mut row = 0usize;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let class_id = row / grid.height;
            let i = row % grid.height + 1;
            if class_id >= num_classes {
                return Err(Error::Serialization("too many class-score rows".into()));
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != grid.width {
                return Err(Error::Serialization(format!(
                    "class-score row has {} fields, want {}",
                    fields.len(),
                    grid.width
                )));
            }
            for (j, field) in fields.iter().enumerate() {
                values[grid.index(i, j) * num_classes + class_id] = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Serialization(format!("bad value '{field}'")))?;
            }
            row += 1;
        }
        if row != num_classes * grid.height {
            return Err(Error::Serialization("class-score dump truncated".into()));
        }
        Self::new(grid, num_classes, values)
    }
}

/// Oracle class scores: per cell and class, the max plain tIoU against
/// ground-truth events of that class.
pub fn oracle_class_scores(
    grid: &ProposalGrid,
    events: &[SoundEvent],
    frame_duration: f64,
    num_classes: usize,
) -> ClassScoreGrid {
    let mut scores = ClassScoreGrid::zeros(*grid, num_classes);
    for (i, j) in grid.valid_cells() {
        let cell = grid.cell_to_seconds(i, j, frame_duration);
        for ev in events {
            if ev.class_id >= num_classes {
                continue;
            }
            let t = tiou_unchecked(cell, ev.interval());
            if t > scores.get(i, j, ev.class_id) {
                scores.set(i, j, ev.class_id, t);
            }
        }
    }
    scores
}

/// Reduce per-class smoothness maps to one map: per cell, the minimum over
/// classes whose score passes `class_threshold` (all classes when none
/// pass).
pub fn min_smoothness_over_active(
    per_class: &[SmoothnessMap],
    class_scores: &ClassScoreGrid,
    class_threshold: f64,
) -> Result<SmoothnessMap> {
    if per_class.is_empty() {
        return Err(Error::InvalidShape("no smoothness maps".into()));
    }
    let grid = per_class[0].grid;
    if per_class.iter().any(|m| m.grid != grid) || class_scores.grid != grid {
        return Err(Error::InvalidShape("smoothness maps share no grid".into()));
    }
    let mut out = SmoothnessMap::filled(grid, 0.0);
    for (i, j) in grid.valid_cells() {
        let mut best_active: Option<f64> = None;
        let mut best_any = f64::INFINITY;
        for (class_id, map) in per_class.iter().enumerate() {
            let v = map.get(i, j).unwrap_or(f64::INFINITY);
            best_any = best_any.min(v);
            if class_scores.get(i, j, class_id) >= class_threshold {
                best_active = Some(best_active.map_or(v, |b: f64| b.min(v)));
            }
        }
        out.set(i, j, best_active.unwrap_or(best_any));
    }
    Ok(out)
}

/// Training-mask label of one proposal cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellLabel {
    Invalid,
    Positive,
    NegativeKept,
    NegativeDropped,
}

/// Positive/negative balance mask over an overlap map: cells with overlap
/// `>= t_d` are positive; each negative is dropped independently with
/// probability `p_d` (deterministic for one seed).
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceMask {
    pub grid: ProposalGrid,
    labels: Vec<CellLabel>,
    pub t_d: f64,
    pub p_d: f64,
    pub seed: u64,
    pub positives: usize,
    pub kept_negatives: usize,
    pub dropped_negatives: usize,
    /// True when the mask selects no training cells at all.
    pub degenerate: bool,
}

impl BalanceMask {
    pub fn label(&self, i: usize, j: usize) -> CellLabel {
        if self.grid.is_valid(i, j) {
            self.labels[self.grid.index(i, j)]
        } else {
            CellLabel::Invalid
        }
    }

    /// Positive-to-kept-negative ratio; `None` when no negatives survive.
    pub fn achieved_ratio(&self) -> Option<f64> {
        if self.kept_negatives == 0 {
            None
        } else {
            Some(self.positives as f64 / self.kept_negatives as f64)
        }
    }
}

pub fn balance_labels(map: &OverlapMap, t_d: f64, p_d: f64, seed: u64) -> Result<BalanceMask> {
    if !(0.0 < t_d && t_d <= 1.0) {
        return Err(Error::InvalidDomain(format!("t_d {t_d} outside (0, 1]")));
    }
    if !(0.0..=1.0).contains(&p_d) {
        return Err(Error::InvalidDomain(format!("p_d {p_d} outside [0, 1]")));
    }
    let grid = map.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![CellLabel::Invalid; grid.cells()];
    let (mut positives, mut kept, mut dropped) = (0usize, 0usize, 0usize);
    for (i, j) in grid.valid_cells() {
        let value = map.get(i, j).unwrap();
        let label = if value >= t_d {
            positives += 1;
            CellLabel::Positive
        } else if rng.random::<f64>() < p_d {
            dropped += 1;
            CellLabel::NegativeDropped
        } else {
            kept += 1;
            CellLabel::NegativeKept
        };
        labels[grid.index(i, j)] = label;
    }
    Ok(BalanceMask {
        grid,
        labels,
        t_d,
        p_d,
        seed,
        positives,
        kept_negatives: kept,
        dropped_negatives: dropped,
        degenerate: positives == 0 && kept == 0,
    })
}

//! Sound events, framewise labels, and the metadata CSV format.
//!
//! Labels live on a fixed frame grid (default 100 ms). The CSV layout is
//! `frame_index,class_id,track_id,azimuth_deg,elevation_deg` with no header
//! row and LF line endings. Direction of arrival is stored internally as a
//! Cartesian unit vector to avoid azimuth wraparound in distance math.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit 3-vector pointing from the array toward the source.
pub type DoaVec = [f64; 3];

/// Default label frame length in seconds.
pub const DEFAULT_FRAME_DURATION: f64 = 0.1;

/// Convert azimuth/elevation in degrees to a Cartesian unit vector
/// (x toward az=0, y toward az=90°, z up).
pub fn az_el_to_unit(azimuth_deg: f64, elevation_deg: f64) -> DoaVec {
    let az = azimuth_deg.to_radians();
    let el = elevation_deg.to_radians();
    [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
}

/// Inverse of [`az_el_to_unit`]; azimuth in `[-180, 180)`, elevation in
/// `[-90, 90]`.
pub fn unit_to_az_el(v: DoaVec) -> (f64, f64) {
    let mut az = v[1].atan2(v[0]).to_degrees();
    if az >= 180.0 {
        az = -180.0;
    }
    let el = v[2].clamp(-1.0, 1.0).asin().to_degrees();
    (az, el)
}

pub fn vec_norm(v: DoaVec) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Frame count covered by `[t_start, t_end)` at the given frame length,
/// tolerant of float noise on aligned boundaries.
pub fn frame_count(t_start: f64, t_end: f64, frame_duration: f64) -> usize {
    (((t_end - t_start) / frame_duration) - 1e-9).ceil().max(1.0) as usize
}

/// One active source in one label frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub class_id: usize,
    pub track_id: u32,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl LabelEntry {
    pub fn doa(&self) -> DoaVec {
        az_el_to_unit(self.azimuth_deg, self.elevation_deg)
    }
}

/// Dense per-frame activity labels; absent frames mean silence.
#[derive(Debug, Clone, PartialEq)]
pub struct FramewiseLabels {
    pub frame_duration: f64,
    pub frames: Vec<Vec<LabelEntry>>,
}

impl FramewiseLabels {
    pub fn empty(frame_duration: f64, num_frames: usize) -> Self {
        Self {
            frame_duration,
            frames: vec![Vec::new(); num_frames],
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    /// Total count of (frame, entry) activations.
    pub fn active_count(&self) -> usize {
        self.frames.iter().map(|f| f.len()).sum()
    }

    /// Largest number of simultaneous entries in any frame.
    pub fn max_polyphony(&self) -> usize {
        self.frames.iter().map(|f| f.len()).max().unwrap_or(0)
    }
}

/// A complete "sound object": temporal extent, class, and framewise spatial
/// trajectory. `track_id` disambiguates same-class events that overlap in
/// time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundEvent {
    pub t_start: f64,
    pub t_end: f64,
    pub class_id: usize,
    pub track_id: u32,
    pub trajectory: Vec<DoaVec>,
}

impl SoundEvent {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    /// Check the type invariants against a label frame length.
    pub fn validate(&self, frame_duration: f64) -> Result<()> {
        if self.t_start >= self.t_end {
            return Err(Error::InvalidConstraint(format!(
                "event t_start {} must precede t_end {}",
                self.t_start, self.t_end
            )));
        }
        let want = frame_count(self.t_start, self.t_end, frame_duration);
        if self.trajectory.len() != want {
            return Err(Error::InvalidShape(format!(
                "trajectory length {} != {} frames for [{}, {})",
                self.trajectory.len(),
                want,
                self.t_start,
                self.t_end
            )));
        }
        for (k, v) in self.trajectory.iter().enumerate() {
            if (vec_norm(*v) - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConstraint(format!(
                    "trajectory vector {k} is not unit length"
                )));
            }
        }
        Ok(())
    }
}

/// Parse metadata CSV rows `frame_index,class_id,track_id,azimuth_deg,elevation_deg`.
pub fn parse_metadata(reader: impl BufRead, frame_duration: f64) -> Result<FramewiseLabels> {
    let mut frames: Vec<Vec<LabelEntry>> = Vec::new();
    let mut seen: std::collections::HashSet<(usize, usize, u32)> = std::collections::HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::MetadataParse {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::MetadataParse {
                line: line_no,
                message: format!("expected 5 comma-separated fields, got {}", fields.len()),
            });
        }
        let parse_err = |what: &str| Error::MetadataParse {
            line: line_no,
            message: format!("cannot parse {what}"),
        };
        let frame: usize = fields[0].trim().parse().map_err(|_| parse_err("frame_index"))?;
        let class_id: usize = fields[1].trim().parse().map_err(|_| parse_err("class_id"))?;
        let track_id: u32 = fields[2].trim().parse().map_err(|_| parse_err("track_id"))?;
        let azimuth_deg: f64 = fields[3].trim().parse().map_err(|_| parse_err("azimuth_deg"))?;
        let elevation_deg: f64 = fields[4]
            .trim()
            .parse()
            .map_err(|_| parse_err("elevation_deg"))?;

        if !(-180.0..180.0).contains(&azimuth_deg) {
            return Err(Error::ValueRange {
                line: line_no,
                message: format!("azimuth {azimuth_deg} outside [-180, 180)"),
            });
        }
        if !(-90.0..=90.0).contains(&elevation_deg) {
            return Err(Error::ValueRange {
                line: line_no,
                message: format!("elevation {elevation_deg} outside [-90, 90]"),
            });
        }
        if !seen.insert((frame, class_id, track_id)) {
            return Err(Error::DuplicateRow { line: line_no });
        }
        if frames.len() <= frame {
            frames.resize(frame + 1, Vec::new());
        }
        frames[frame].push(LabelEntry {
            class_id,
            track_id,
            azimuth_deg,
            elevation_deg,
        });
    }
    for frame in &mut frames {
        frame.sort_by_key(|e| (e.class_id, e.track_id));
    }
    Ok(FramewiseLabels {
        frame_duration,
        frames,
    })
}

pub fn read_metadata(path: impl AsRef<Path>, frame_duration: f64) -> Result<FramewiseLabels> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_metadata(std::io::BufReader::new(file), frame_duration)
}

/// Write labels in the metadata CSV format (rows sorted by frame, class,
/// track; LF endings, no header).
pub fn write_metadata(labels: &FramewiseLabels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (frame, entries) in labels.frames.iter().enumerate() {
        let mut sorted: Vec<&LabelEntry> = entries.iter().collect();
        sorted.sort_by_key(|e| (e.class_id, e.track_id));
        for e in sorted {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                frame, e.class_id, e.track_id, e.azimuth_deg, e.elevation_deg
            ));
        }
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Group maximal runs of consecutive frames sharing `(class_id, track_id)`
/// into events. A gap of one or more frames splits an event. Output is
/// sorted by (t_start, class_id, track_id).
pub fn labels_to_events(labels: &FramewiseLabels) -> Vec<SoundEvent> {
    let fd = labels.frame_duration;
    // (class, track) -> (start_frame, trajectory)
    let mut open: BTreeMap<(usize, u32), (usize, Vec<DoaVec>)> = BTreeMap::new();
    let mut events = Vec::new();

    for (frame, entries) in labels.frames.iter().enumerate() {
        let mut active: BTreeMap<(usize, u32), DoaVec> = BTreeMap::new();
        for e in entries {
            active.insert((e.class_id, e.track_id), e.doa());
        }
        // close runs that ended at this frame
        let ended: Vec<(usize, u32)> = open
            .keys()
            .filter(|k| !active.contains_key(*k))
            .copied()
            .collect();
        for key in ended {
            let (start, traj) = open.remove(&key).unwrap();
            events.push(run_to_event(key, start, frame, traj, fd));
        }
        for (key, doa) in active {
            open.entry(key)
                .and_modify(|(_, traj)| traj.push(doa))
                .or_insert_with(|| (frame, vec![doa]));
        }
    }
    let end_frame = labels.frames.len();
    for (key, (start, traj)) in std::mem::take(&mut open) {
        events.push(run_to_event(key, start, end_frame, traj, fd));
    }
    events.sort_by(|a, b| {
        a.t_start
            .total_cmp(&b.t_start)
            .then(a.class_id.cmp(&b.class_id))
            .then(a.track_id.cmp(&b.track_id))
    });
    events
}

fn run_to_event(
    key: (usize, u32),
    start_frame: usize,
    end_frame: usize,
    trajectory: Vec<DoaVec>,
    frame_duration: f64,
) -> SoundEvent {
    SoundEvent {
        t_start: start_frame as f64 * frame_duration,
        t_end: end_frame as f64 * frame_duration,
        class_id: key.0,
        track_id: key.1,
        trajectory,
    }
}

/// Inverse of [`labels_to_events`] for events whose boundaries align to the
/// frame grid. Errors on a (frame, class, track) collision.
pub fn events_to_labels(
    events: &[SoundEvent],
    frame_duration: f64,
    num_frames: usize,
) -> Result<FramewiseLabels> {
    let mut labels = FramewiseLabels::empty(frame_duration, num_frames);
    let mut seen = std::collections::HashSet::new();
    for ev in events {
        let start_frame = (ev.t_start / frame_duration).round() as usize;
        for (k, v) in ev.trajectory.iter().enumerate() {
            let frame = start_frame + k;
            if frame >= num_frames {
                return Err(Error::InvalidShape(format!(
                    "event frame {frame} beyond label grid of {num_frames}"
                )));
            }
            if !seen.insert((frame, ev.class_id, ev.track_id)) {
                return Err(Error::DuplicateRow { line: frame });
            }
            let (azimuth_deg, elevation_deg) = unit_to_az_el(*v);
            labels.frames[frame].push(LabelEntry {
                class_id: ev.class_id,
                track_id: ev.track_id,
                azimuth_deg,
                elevation_deg,
            });
        }
    }
    for frame in &mut labels.frames {
        frame.sort_by_key(|e| (e.class_id, e.track_id));
    }
    Ok(labels)
}

/// Framewise per-class DoA matrix in the spatial regression output format:
/// `out[frame][class]` is the active event's DoA, or the zero vector where
/// the class is inactive. When two tracks of one class coexist the lower
/// track id wins.
pub fn framewise_doa_matrix(
    events: &[SoundEvent],
    num_classes: usize,
    num_frames: usize,
    frame_duration: f64,
) -> Vec<Vec<DoaVec>> {
    let mut out = vec![vec![[0.0; 3]; num_classes]; num_frames];
    let mut owner: Vec<Vec<Option<u32>>> = vec![vec![None; num_classes]; num_frames];
    for ev in events {
        let start_frame = (ev.t_start / frame_duration).round() as usize;
        for (k, v) in ev.trajectory.iter().enumerate() {
            let frame = start_frame + k;
            if frame >= num_frames || ev.class_id >= num_classes {
                continue;
            }
            match owner[frame][ev.class_id] {
                Some(track) if track <= ev.track_id => {}
                _ => {
                    owner[frame][ev.class_id] = Some(ev.track_id);
                    out[frame][ev.class_id] = *v;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stationary_entry(class_id: usize, track_id: u32, az: f64, el: f64) -> LabelEntry {
        LabelEntry {
            class_id,
            track_id,
            azimuth_deg: az,
            elevation_deg: el,
        }
    }

    #[test]
    fn row_maps_to_frame_entry() {
        let labels = parse_metadata("50,3,0,30,-10\n".as_bytes(), 0.1).unwrap();
        assert_eq!(labels.num_frames(), 51);
        assert_eq!(labels.frames[50], vec![stationary_entry(3, 0, 30.0, -10.0)]);
        assert!(labels.frames[49].is_empty());
    }

    #[test]
    fn empty_file_means_silence() {
        let labels = parse_metadata("".as_bytes(), 0.1).unwrap();
        assert_eq!(labels.num_frames(), 0);
        assert_eq!(labels.active_count(), 0);
    }

    #[test]
    fn six_hundred_frames_cover_a_minute() {
        let rows: String = (0..600).map(|f| format!("{f},0,0,10,5\n")).collect();
        let labels = parse_metadata(rows.as_bytes(), 0.1).unwrap();
        assert_eq!(labels.num_frames(), 600);
        assert!((labels.num_frames() as f64 * labels.frame_duration - 60.0).abs() < 1e-12);
    }

    #[test]
    fn range_and_duplicate_errors() {
        assert!(matches!(
            parse_metadata("0,0,0,180,0\n".as_bytes(), 0.1),
            Err(Error::ValueRange { .. })
        ));
        assert!(matches!(
            parse_metadata("0,0,0,0,91\n".as_bytes(), 0.1),
            Err(Error::ValueRange { .. })
        ));
        assert!(matches!(
            parse_metadata("0,0,0,0,0\n0,0,0,10,0\n".as_bytes(), 0.1),
            Err(Error::DuplicateRow { line: 2 })
        ));
    }

    #[test]
    fn single_run_groups_to_one_event() {
        let rows: String = (10..30).map(|f| format!("{f},3,0,45,0\n")).collect();
        let labels = parse_metadata(rows.as_bytes(), 0.1).unwrap();
        let events = labels_to_events(&labels);
        assert_eq!(events.len(), 1);
        let ev = &events[0];
        assert_eq!(ev.class_id, 3);
        assert!((ev.t_start - 1.0).abs() < 1e-12);
        assert!((ev.t_end - 3.0).abs() < 1e-12);
        assert_eq!(ev.trajectory.len(), 20);
        ev.validate(0.1).unwrap();
    }

    #[test]
    fn gap_splits_events() {
        let mut rows = String::new();
        for f in 10..20 {
            rows.push_str(&format!("{f},3,0,45,0\n"));
        }
        for f in 25..30 {
            rows.push_str(&format!("{f},3,0,45,0\n"));
        }
        let labels = parse_metadata(rows.as_bytes(), 0.1).unwrap();
        let events = labels_to_events(&labels);
        assert_eq!(events.len(), 2);
        assert!((events[0].t_end - 2.0).abs() < 1e-12);
        assert!((events[1].t_start - 2.5).abs() < 1e-12);
    }

    #[test]
    fn same_class_overlap_requires_distinct_tracks() {
        let mut rows = String::new();
        for f in 10..=20 {
            rows.push_str(&format!("{f},3,0,45,0\n"));
            rows.push_str(&format!("{f},3,1,-45,10\n"));
        }
        let labels = parse_metadata(rows.as_bytes(), 0.1).unwrap();
        let events = labels_to_events(&labels);
        assert_eq!(events.len(), 2);
        assert!(events.iter().all(|e| e.class_id == 3));
        assert_ne!(events[0].track_id, events[1].track_id);
    }

    #[test]
    fn events_labels_round_trip() {
        let mut rows = String::new();
        for f in 5..15 {
            rows.push_str(&format!("{f},1,0,30,-10\n"));
        }
        for f in 12..22 {
            rows.push_str(&format!("{f},4,2,-120,45\n"));
        }
        let labels = parse_metadata(rows.as_bytes(), 0.1).unwrap();
        let events = labels_to_events(&labels);
        let back = events_to_labels(&events, 0.1, labels.num_frames()).unwrap();
        let again = labels_to_events(&back);
        assert_eq!(events.len(), again.len());
        for (a, b) in events.iter().zip(again.iter()) {
            assert_eq!(a.class_id, b.class_id);
            assert_eq!(a.track_id, b.track_id);
            assert_eq!(a.t_start, b.t_start);
            assert_eq!(a.t_end, b.t_end);
            for (u, v) in a.trajectory.iter().zip(b.trajectory.iter()) {
                for d in 0..3 {
                    assert!((u[d] - v[d]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn az_el_unit_vector_round_trip() {
        for &(az, el) in &[(0.0, 0.0), (30.0, -10.0), (-180.0, 45.0), (179.5, -89.0)] {
            let v = az_el_to_unit(az, el);
            assert!((vec_norm(v) - 1.0).abs() < 1e-12);
            let (az2, el2) = unit_to_az_el(v);
            assert!((az - az2).abs() < 1e-9, "az {az} -> {az2}");
            assert!((el - el2).abs() < 1e-9, "el {el} -> {el2}");
        }
    }

    #[test]
    fn doa_matrix_marks_inactive_as_zero() {
        let labels = parse_metadata("2,1,0,0,0\n".as_bytes(), 0.1).unwrap();
        let events = labels_to_events(&labels);
        let m = framewise_doa_matrix(&events, 3, 3, 0.1);
        assert_eq!(m[0][1], [0.0; 3]);
        assert!((m[2][1][0] - 1.0).abs() < 1e-12);
        assert_eq!(m[2][0], [0.0; 3]);
    }
}

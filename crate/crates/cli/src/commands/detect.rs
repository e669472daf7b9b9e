//! `seldkit detect`: build or load the score maps, gate and fuse scores,
//! refine with NMS and the simultaneous-event clip, and write detections.
//!
//! Map sources:
//! - `--scene DIR` (oracle mode): ground-truth overlap map, oracle per-class
//!   scores, and a smoothness map from ground-truth or predicted
//!   trajectories (`--smoothness-source`).
//! - explicit `--overlap-map/--smoothness-map/--class-scores` CSV dumps.

use std::path::PathBuf;

use clap::Args;

use seldkit_core::inference::{
    gate_and_score, refine, write_detections_csv, write_trajectories_csv, DetectionsDocument,
    InferenceConfig,
};
use seldkit_core::labels::{framewise_doa_matrix, labels_to_events, read_metadata, DoaVec};
use seldkit_core::proposal::{
    ground_truth_overlap_map, min_smoothness_over_active, motion_smoothness_map,
    oracle_class_scores, step_locations_from_events, ClassScoreGrid, OverlapMap, ProposalGrid,
    SmoothnessMap,
};
use seldkit_core::{Error, Result};

use crate::manifest::Manifest;

#[derive(Args)]
pub struct DetectArgs {
    /// Scene directory (oracle maps from ground truth).
    #[arg(long, conflicts_with_all = ["overlap_map", "smoothness_map", "class_scores"])]
    pub scene: Option<PathBuf>,
    /// Overlap map CSV dump (files mode).
    #[arg(long, requires_all = ["smoothness_map", "class_scores"])]
    pub overlap_map: Option<PathBuf>,
    #[arg(long)]
    pub smoothness_map: Option<PathBuf>,
    #[arg(long)]
    pub class_scores: Option<PathBuf>,
    /// Framewise per-class DoA CSV `frame,class_id,x,y,z` for trajectories
    /// (and for predicted-mode smoothness in oracle runs).
    #[arg(long)]
    pub framewise_doas: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file of parameter defaults; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Label frame length, seconds (default 0.1).
    #[arg(long)]
    pub frame_duration: Option<f64>,
    /// Label frames per grid step (default 10).
    #[arg(long)]
    pub grid_unit: Option<usize>,
    /// Grid height (duration steps); defaults to the square grid.
    #[arg(long)]
    pub grid_height: Option<usize>,
    /// Grid width (start steps); defaults to the square grid.
    #[arg(long)]
    pub grid_width: Option<usize>,
    /// Boundary-sensitivity decay applied to oracle overlap targets (default 2).
    #[arg(long)]
    pub w_decay: Option<f64>,
    /// Overlap gate (default 0.5).
    #[arg(long)]
    pub d_t: Option<f64>,
    /// Smoothness gate, max squared step displacement (default 0.04).
    #[arg(long)]
    pub d_s: Option<f64>,
    /// Intra-class suppression threshold (default 0.5).
    #[arg(long)]
    pub nms_tiou: Option<f64>,
    /// Cap on simultaneously active detections (default 2).
    #[arg(long)]
    pub max_events: Option<usize>,
    /// Minimum class score to emit a detection (default 0.5).
    #[arg(long)]
    pub class_threshold: Option<f64>,
    /// How many NMS+clip passes to run (default 1).
    #[arg(long)]
    pub refine_iterations: Option<usize>,
    /// Smoothness source in oracle mode (default ground-truth).
    #[arg(long)]
    pub smoothness_source: Option<String>,
}

/// `--config` file schema for `detect`.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectConfigFile {
    frame_duration: Option<f64>,
    grid_unit: Option<usize>,
    grid_height: Option<usize>,
    grid_width: Option<usize>,
    w_decay: Option<f64>,
    d_t: Option<f64>,
    d_s: Option<f64>,
    nms_tiou: Option<f64>,
    max_events: Option<usize>,
    class_threshold: Option<f64>,
    refine_iterations: Option<usize>,
    smoothness_source: Option<String>,
}

fn read_framewise_doas(
    path: &std::path::Path,
    num_frames: usize,
    num_classes: usize,
) -> Result<Vec<Vec<DoaVec>>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = vec![vec![[0.0; 3]; num_classes]; num_frames];
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line.starts_with("frame")) {
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
        let frame: usize = fields[0].trim().parse().map_err(|_| parse_err("frame"))?;
        let class_id: usize = fields[1].trim().parse().map_err(|_| parse_err("class_id"))?;
        if frame >= num_frames || class_id >= num_classes {
            continue;
        }
        let x: f64 = fields[2].trim().parse().map_err(|_| parse_err("x"))?;
        let y: f64 = fields[3].trim().parse().map_err(|_| parse_err("y"))?;
        let z: f64 = fields[4].trim().parse().map_err(|_| parse_err("z"))?;
        out[frame][class_id] = [x, y, z];
    }
    Ok(out)
}

/// Per-class step locations from a framewise DoA matrix (first frame of
/// each step), for predicted-mode smoothness.
fn step_locations_from_matrix(
    doas: &[Vec<DoaVec>],
    class_id: usize,
    grid: &ProposalGrid,
) -> Vec<DoaVec> {
    (0..grid.num_steps())
        .map(|s| {
            doas.get(s * grid.unit)
                .and_then(|row| row.get(class_id))
                .copied()
                .unwrap_or([0.0; 3])
        })
        .collect()
}

pub fn run(args: DetectArgs) -> Result<()> {
    let file: DetectConfigFile = crate::config::load(args.config.as_deref())?;
    let defaults = InferenceConfig::default();
    let frame_duration = crate::config::pick(args.frame_duration, file.frame_duration, 0.1);
    let grid_unit = crate::config::pick(args.grid_unit, file.grid_unit, 10);
    let grid_height = args.grid_height.or(file.grid_height);
    let grid_width = args.grid_width.or(file.grid_width);
    let w_decay = crate::config::pick(args.w_decay, file.w_decay, 2.0);
    let refine_iterations =
        crate::config::pick(args.refine_iterations, file.refine_iterations, 1);
    let smoothness_source = crate::config::pick(
        args.smoothness_source,
        file.smoothness_source,
        "ground-truth".into(),
    );
    let config = InferenceConfig {
        d_t: crate::config::pick(args.d_t, file.d_t, defaults.d_t),
        d_s: crate::config::pick(args.d_s, file.d_s, defaults.d_s),
        nms_tiou: crate::config::pick(args.nms_tiou, file.nms_tiou, defaults.nms_tiou),
        max_events: crate::config::pick(args.max_events, file.max_events, defaults.max_events),
        class_threshold: crate::config::pick(
            args.class_threshold,
            file.class_threshold,
            defaults.class_threshold,
        ),
    };
    config.validate()?;

    let (overlap, smooth, class_scores, doas, frame_duration) = if let Some(scene) = &args.scene {
        let manifest = Manifest::read(&scene.join("manifest.json"))?;
        let labels = read_metadata(scene.join("labels.csv"), manifest.frame_duration)?;
        let events = labels_to_events(&labels);
        let num_frames = manifest.num_frames;
        let steps = num_frames / grid_unit;
        let grid = ProposalGrid::build(
            num_frames,
            grid_height.unwrap_or(steps),
            grid_width.unwrap_or(steps),
            grid_unit,
        )?;
        let overlap =
            ground_truth_overlap_map(&grid, &events, manifest.frame_duration, w_decay);
        let class_scores =
            oracle_class_scores(&grid, &events, manifest.frame_duration, manifest.num_classes);

        let doas = match &args.framewise_doas {
            Some(path) => read_framewise_doas(path, num_frames, manifest.num_classes)?,
            None => framewise_doa_matrix(
                &events,
                manifest.num_classes,
                num_frames,
                manifest.frame_duration,
            ),
        };
        let per_class: Vec<SmoothnessMap> = match smoothness_source.as_str() {
            "ground-truth" => (0..manifest.num_classes)
                .map(|c| {
                    let locs =
                        step_locations_from_events(&events, c, &grid, manifest.frame_duration);
                    motion_smoothness_map(&grid, &locs)
                })
                .collect::<Result<_>>()?,
            "predicted" => {
                if args.framewise_doas.is_none() {
                    return Err(Error::InvalidDomain(
                        "--smoothness-source predicted requires --framewise-doas".into(),
                    ));
                }
                (0..manifest.num_classes)
                    .map(|c| {
                        let locs = step_locations_from_matrix(&doas, c, &grid);
                        motion_smoothness_map(&grid, &locs)
                    })
                    .collect::<Result<_>>()?
            }
            other => {
                return Err(Error::InvalidDomain(format!(
                    "unknown smoothness source '{other}' (ground-truth | predicted)"
                )))
            }
        };
        let smooth = min_smoothness_over_active(&per_class, &class_scores, config.class_threshold)?;
        (overlap, smooth, class_scores, doas, manifest.frame_duration)
    } else {
        let overlap_path = args.overlap_map.as_ref().ok_or_else(|| {
            Error::InvalidDomain("either --scene or --overlap-map is required".into())
        })?;
        let overlap = OverlapMap::read_csv(overlap_path)?;
        let smooth = SmoothnessMap::read_csv(args.smoothness_map.as_ref().unwrap())?;
        let class_scores = ClassScoreGrid::read_csv(args.class_scores.as_ref().unwrap())?;
        if smooth.grid != overlap.grid || class_scores.grid != overlap.grid {
            return Err(Error::InvalidShape(
                "map files disagree on the proposal grid".into(),
            ));
        }
        let doas = match &args.framewise_doas {
            Some(path) => read_framewise_doas(
                path,
                overlap.grid.num_frames,
                class_scores.num_classes,
            )?,
            None => Vec::new(),
        };
        (overlap, smooth, class_scores, doas, frame_duration)
    };

    let raw = gate_and_score(&overlap, &smooth, &class_scores, &doas, frame_duration, &config)?;
    let detections = refine(raw, &config, refine_iterations);

    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    write_detections_csv(&detections, args.out.join("detections.csv"))?;
    write_trajectories_csv(&detections, frame_duration, args.out.join("trajectories.csv"))?;
    let doc = DetectionsDocument {
        frame_duration,
        detections,
    };
    let json =
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Serialization(e.to_string()))?;
    let json_path = args.out.join("detections.json");
    std::fs::write(&json_path, json + "\n")
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    Ok(())
}

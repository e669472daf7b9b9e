//! `seldkit eval`: score detections against ground-truth labels with the
//! event-based (AP/AR/mAP/mAR) or segment-based (ER/F/LE/LR) system, and
//! emit report.json, summary.csv, and optional SVG curves.

use std::path::PathBuf;

use clap::Args;

use seldkit_core::inference::{read_detections_csv, Detection, DetectionsDocument};
use seldkit_core::labels::{labels_to_events, read_metadata};
use seldkit_core::metrics::segment::{segment_eval_bucketed, FramewisePrediction};
use seldkit_core::metrics::{map_mar, EvalReport, EventEvalConfig, EventEvalResult, LengthBucket};
use seldkit_core::{Error, Result};

use crate::svg::{write_line_chart, Series};

#[derive(Args)]
pub struct EvalArgs {
    /// Detections file: .json document or .csv table.
    #[arg(long)]
    pub detections: PathBuf,
    /// Trajectory sidecar for CSV detections.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// Ground-truth metadata CSV.
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// `event` or `segment`.
    #[arg(long)]
    pub mode: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file of parameter defaults; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Label frame length, seconds (default 0.1).
    #[arg(long)]
    pub frame_duration: Option<f64>,
    /// Angular gate for segment metrics, degrees (default 20).
    #[arg(long)]
    pub angular_threshold: Option<f64>,
    /// Segment length in seconds (default 1).
    #[arg(long)]
    pub segment_length: Option<f64>,
    /// Also write AP-vs-tIoU and precision-vs-confidence SVG curves.
    #[arg(long, default_value_t = false)]
    pub plot: bool,
}

/// `--config` file schema for `eval`.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfigFile {
    frame_duration: Option<f64>,
    angular_threshold: Option<f64>,
    segment_length: Option<f64>,
}

fn read_detections(args: &EvalArgs, frame_duration: f64) -> Result<(Vec<Detection>, f64)> {
    let is_json = args
        .detections
        .extension()
        .map(|e| e == "json")
        .unwrap_or(false);
    if is_json {
        let text = std::fs::read_to_string(&args.detections)
            .map_err(|e| Error::io(args.detections.display().to_string(), e))?;
        let doc: DetectionsDocument =
            serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))?;
        Ok((doc.detections, doc.frame_duration))
    } else {
        let dets = read_detections_csv(&args.detections, args.trajectories.as_deref())?;
        Ok((dets, frame_duration))
    }
}

fn write_event_summary(result: &EventEvalResult, path: &std::path::Path) -> Result<()> {
    let mut out = String::from("scope,class_id,ap,ar\n");
    for (class_id, c) in &result.per_class {
        out.push_str(&format!("all,{class_id},{},{}\n", c.ap, c.ar));
    }
    out.push_str(&format!("all,mean,{},{}\n", result.map, result.mar));
    for bucket in LengthBucket::ALL {
        if let Some(b) = result.buckets.get(&bucket) {
            for (class_id, c) in &b.per_class {
                out.push_str(&format!("{bucket},{class_id},{},{}\n", c.ap, c.ar));
            }
            out.push_str(&format!("{bucket},mean,{},{}\n", b.map, b.mar));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn print_event_table(result: &EventEvalResult) {
    println!("{:<10} {:>10} {:>10}", "scope", "mAP", "mAR");
    println!("{:<10} {:>10.4} {:>10.4}", "all", result.map, result.mar);
    for bucket in LengthBucket::ALL {
        if let Some(b) = result.buckets.get(&bucket) {
            println!("{:<10} {:>10.4} {:>10.4}", bucket.to_string(), b.map, b.mar);
        }
    }
}

fn write_plots(result: &EventEvalResult, config: &EventEvalConfig, out: &std::path::Path) -> Result<()> {
    // AP as a function of the tIoU threshold, per class
    let mut ap_series = Vec::new();
    for (class_id, c) in &result.per_class {
        let points: Vec<(f64, f64)> = config
            .tiou_grid
            .iter()
            .zip(c.tallies.iter())
            .map(|(&tiou, row)| {
                let mean_precision = row
                    .iter()
                    .map(|&(tp, fp, _)| {
                        if tp + fp == 0 {
                            1.0
                        } else {
                            tp as f64 / (tp + fp) as f64
                        }
                    })
                    .sum::<f64>()
                    / row.len() as f64;
                (tiou, mean_precision)
            })
            .collect();
        ap_series.push(Series {
            label: format!("class {class_id}"),
            points,
        });
    }
    write_line_chart(
        &out.join("ap_vs_tiou.svg"),
        "average precision vs tIoU threshold",
        "tIoU threshold",
        "average precision",
        &ap_series,
    )?;

    // precision as a function of the confidence cut, mean over classes and tious
    let num_classes = result.per_class.len().max(1) as f64;
    let mut points = Vec::new();
    for (ci, &conf) in config.conf_grid.iter().enumerate() {
        let mut acc = 0.0;
        for c in result.per_class.values() {
            let mut class_acc = 0.0;
            for row in &c.tallies {
                let (tp, fp, _) = row[ci];
                class_acc += if tp + fp == 0 {
                    1.0
                } else {
                    tp as f64 / (tp + fp) as f64
                };
            }
            acc += class_acc / c.tallies.len() as f64;
        }
        points.push((conf, acc / num_classes));
    }
    write_line_chart(
        &out.join("precision_vs_confidence.svg"),
        "precision vs confidence threshold",
        "confidence threshold",
        "precision",
        &[Series {
            label: "mean".into(),
            points,
        }],
    )
}

pub fn run(args: EvalArgs) -> Result<()> {
    let file: EvalConfigFile = crate::config::load(args.config.as_deref())?;
    let gt_frame_duration =
        crate::config::pick(args.frame_duration, file.frame_duration, 0.1);
    let angular_threshold =
        crate::config::pick(args.angular_threshold, file.angular_threshold, 20.0);
    let segment_length = crate::config::pick(args.segment_length, file.segment_length, 1.0);

    let labels = read_metadata(&args.ground_truth, gt_frame_duration)?;
    let gt_events = labels_to_events(&labels);
    let (detections, frame_duration) = read_detections(&args, gt_frame_duration)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;

    let report = match args.mode.as_str() {
        "event" => {
            if gt_events.is_empty() {
                return Err(Error::Undefined(
                    "event evaluation needs at least one ground-truth event".into(),
                ));
            }
            let config = EventEvalConfig::default();
            let result = map_mar(&detections, &gt_events, &config)?;
            print_event_table(&result);
            write_event_summary(&result, &args.out.join("summary.csv"))?;
            if args.plot {
                write_plots(&result, &config, &args.out)?;
            }
            EvalReport {
                event: Some(result),
                segment: None,
            }
        }
        "segment" => {
            let num_frames = labels.num_frames();
            let pred = FramewisePrediction::from_detections(&detections, frame_duration, num_frames);
            let result = segment_eval_bucketed(
                &pred,
                &gt_events,
                num_frames,
                angular_threshold,
                segment_length,
            )?;
            println!(
                "{:<10} {:>8} {:>8} {:>8} {:>8}",
                "scope", "ER", "F", "LE_CD", "LR_CD"
            );
            println!(
                "{:<10} {:>8.4} {:>8.4} {:>8.2} {:>8.4}",
                "all", result.er, result.f_score, result.le_cd, result.lr_cd
            );
            let mut out = String::from("scope,er,f,le_cd,lr_cd\n");
            out.push_str(&format!(
                "all,{},{},{},{}\n",
                result.er, result.f_score, result.le_cd, result.lr_cd
            ));
            for bucket in LengthBucket::ALL {
                if let Some(b) = result.buckets.get(&bucket) {
                    println!(
                        "{:<10} {:>8.4} {:>8.4} {:>8.2} {:>8.4}",
                        bucket.to_string(),
                        b.er,
                        b.f_score,
                        b.le_cd,
                        b.lr_cd
                    );
                    out.push_str(&format!(
                        "{bucket},{},{},{},{}\n",
                        b.er, b.f_score, b.le_cd, b.lr_cd
                    ));
                }
            }
            std::fs::write(args.out.join("summary.csv"), out)
                .map_err(|e| Error::io(args.out.display().to_string(), e))?;
            EvalReport {
                event: None,
                segment: Some(result),
            }
        }
        other => {
            return Err(Error::InvalidDomain(format!(
                "unknown mode '{other}' (event | segment)"
            )))
        }
    };

    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Serialization(e.to_string()))?;
    let path = args.out.join("report.json");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

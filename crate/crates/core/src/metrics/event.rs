//! Event-based evaluation: per-class AP/AR averaged over a tIoU grid and a
//! confidence grid, with mAP/mAR as unweighted class means and length-bucket
//! breakdowns.
//!
//! Matching is greedy, one-to-one, by score descending, on temporal tIoU
//! only. Conventions pinned here: precision is 1 when no predictions remain
//! after confidence filtering, recall is 1 when a class has no ground truth,
//! and both grids run over the 19 values {0.10, 0.15, ..., 1.00}.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Detection;
use crate::labels::SoundEvent;
use crate::metrics::LengthBucket;
use crate::proposal::tiou_unchecked;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEvalConfig {
    pub tiou_grid: Vec<f64>,
    pub conf_grid: Vec<f64>,
    /// Upper edge of the Small duration bucket, seconds (closed).
    pub small_max: f64,
    /// Upper edge of the Medium duration bucket, seconds (closed).
    pub medium_max: f64,
}

impl Default for EventEvalConfig {
    fn default() -> Self {
        // k/20 keeps the endpoints exact in floating point
        let grid: Vec<f64> = (2..=20).map(|k| k as f64 / 20.0).collect();
        Self {
            tiou_grid: grid.clone(),
            conf_grid: grid,
            small_max: 2.0,
            medium_max: 7.0,
        }
    }
}

impl EventEvalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, grid) in [("tiou_grid", &self.tiou_grid), ("conf_grid", &self.conf_grid)] {
            if grid.is_empty() {
                return Err(Error::InvalidDomain(format!("{name} is empty")));
            }
            if grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidDomain(format!("{name} leaves [0, 1]")));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidDomain(format!(
                    "{name} must be strictly increasing"
                )));
            }
        }
        if !(0.0 < self.small_max && self.small_max < self.medium_max) {
            return Err(Error::InvalidDomain(
                "bucket edges must satisfy 0 < small_max < medium_max".into(),
            ));
        }
        Ok(())
    }

    pub fn bucket_of(&self, duration: f64) -> LengthBucket {
        LengthBucket::of_duration_with(duration, self.small_max, self.medium_max)
    }
}

/// Outcome of greedy matching at one tIoU threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Matched `(prediction index, ground-truth index)` pairs, in the order
    /// predictions were consumed.
    pub pairs: Vec<(usize, usize)>,
}

fn prediction_order(preds: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .total_cmp(&preds[a].score)
            .then(preds[a].t_start.total_cmp(&preds[b].t_start))
            .then(preds[a].t_end.total_cmp(&preds[b].t_end))
    });
    order
}

/// Greedy one-to-one matching of same-class predictions to ground truth:
/// predictions by score descending, each taking the unmatched ground-truth
/// event of highest tIoU, provided it reaches `tiou_thresh`.
pub fn match_events(preds: &[Detection], gts: &[SoundEvent], tiou_thresh: f64) -> MatchResult {
    let mut matched_gt = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for &p in &prediction_order(preds) {
        let pred = &preds[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if matched_gt[g] {
                continue;
            }
            let t = tiou_unchecked(pred.interval(), gt.interval());
            let better = match best {
                None => true,
                Some((bg, bt)) => {
                    t > bt
                        || (t == bt
                            && (gt.t_start, g) < (gts[bg].t_start, bg))
                }
            };
            if better {
                best = Some((g, t));
            }
        }
        if let Some((g, t)) = best {
            if t >= tiou_thresh {
                matched_gt[g] = true;
                pairs.push((p, g));
            }
        }
    }
    let tp = pairs.len();
    MatchResult {
        tp,
        fp: preds.len() - tp,
        fn_: gts.len() - tp,
        pairs,
    }
}

/// Per-class AP/AR plus the raw tally per grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassApAr {
    pub ap: f64,
    pub ar: f64,
    /// `tallies[ti][ci] = (tp, fp, fn)` for tiou_grid[ti], conf_grid[ci].
    pub tallies: Vec<Vec<(usize, usize, usize)>>,
}

fn classes_in_gt(gts: &[SoundEvent]) -> BTreeSet<usize> {
    gts.iter().map(|g| g.class_id).collect()
}

/// Evaluate one class whose `gts` may be filtered to a bucket. Predictions
/// that stay unmatched and fall outside `bucket` are ignored (not FP).
fn class_ap_ar(
    preds: &[&Detection],
    gts: &[&SoundEvent],
    config: &EventEvalConfig,
    bucket: Option<LengthBucket>,
) -> ClassApAr {
    let mut tallies = Vec::with_capacity(config.tiou_grid.len());
    let mut ap_acc = 0.0;
    let mut ar_acc = 0.0;
    for &tiou_thresh in &config.tiou_grid {
        let mut row = Vec::with_capacity(config.conf_grid.len());
        let mut precision_acc = 0.0;
        let mut recall_acc = 0.0;
        for &conf in &config.conf_grid {
            let kept: Vec<Detection> = preds
                .iter()
                .filter(|p| p.score >= conf)
                .map(|p| (*p).clone())
                .collect();
            let owned_gts: Vec<SoundEvent> = gts.iter().map(|g| (*g).clone()).collect();
            let m = match_events(&kept, &owned_gts, tiou_thresh);
            let (tp, mut fp, fn_) = (m.tp, m.fp, m.fn_);
            if let Some(b) = bucket {
                // unmatched out-of-bucket predictions are ignored
                let matched: BTreeSet<usize> = m.pairs.iter().map(|&(p, _)| p).collect();
                fp = kept
                    .iter()
                    .enumerate()
                    .filter(|(idx, p)| {
                        !matched.contains(idx) && config.bucket_of(p.duration()) == b
                    })
                    .count();
            }
            let precision = if tp + fp == 0 {
                1.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            let recall = if tp + fn_ == 0 {
                1.0
            } else {
                tp as f64 / (tp + fn_) as f64
            };
            precision_acc += precision;
            recall_acc += recall;
            row.push((tp, fp, fn_));
        }
        ap_acc += precision_acc / config.conf_grid.len() as f64;
        ar_acc += recall_acc / config.conf_grid.len() as f64;
        tallies.push(row);
    }
    ClassApAr {
        ap: ap_acc / config.tiou_grid.len() as f64,
        ar: ar_acc / config.tiou_grid.len() as f64,
        tallies,
    }
}

/// Per-class AP/AR over the full grids, for classes present in the ground
/// truth.
pub fn average_precision_recall(
    preds: &[Detection],
    gts: &[SoundEvent],
    config: &EventEvalConfig,
) -> BTreeMap<usize, ClassApAr> {
    let mut out = BTreeMap::new();
    for class_id in classes_in_gt(gts) {
        let class_preds: Vec<&Detection> =
            preds.iter().filter(|p| p.class_id == class_id).collect();
        let class_gts: Vec<&SoundEvent> = gts.iter().filter(|g| g.class_id == class_id).collect();
        out.insert(
            class_id,
            class_ap_ar(&class_preds, &class_gts, config, None),
        );
    }
    out
}

/// Bucket breakdown entry in the event report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketApAr {
    pub map: f64,
    pub mar: f64,
    pub per_class: BTreeMap<usize, ClassApAr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEvalResult {
    pub per_class: BTreeMap<usize, ClassApAr>,
    pub map: f64,
    pub mar: f64,
    pub buckets: BTreeMap<LengthBucket, BucketApAr>,
}

fn class_means(per_class: &BTreeMap<usize, ClassApAr>) -> (f64, f64) {
    let n = per_class.len() as f64;
    let map = per_class.values().map(|c| c.ap).sum::<f64>() / n;
    let mar = per_class.values().map(|c| c.ar).sum::<f64>() / n;
    (map, mar)
}

/// Full event-based evaluation: overall mAP/mAR (unweighted class means over
/// classes present in the ground truth) plus Small/Medium/Large breakdowns
/// where ground truth is restricted to the bucket and unmatched
/// out-of-bucket predictions are ignored.
pub fn map_mar(
    preds: &[Detection],
    gts: &[SoundEvent],
    config: &EventEvalConfig,
) -> Result<EventEvalResult> {
    config.validate()?;
    if classes_in_gt(gts).is_empty() {
        return Err(Error::Undefined(
            "event evaluation needs at least one ground-truth class".into(),
        ));
    }
    let per_class = average_precision_recall(preds, gts, config);
    let (map, mar) = class_means(&per_class);

    let mut buckets = BTreeMap::new();
    for bucket in LengthBucket::ALL {
        let bucket_gts: Vec<&SoundEvent> = gts
            .iter()
            .filter(|g| config.bucket_of(g.duration()) == bucket)
            .collect();
        let mut bucket_classes = BTreeMap::new();
        for class_id in bucket_gts.iter().map(|g| g.class_id).collect::<BTreeSet<_>>() {
            let class_preds: Vec<&Detection> =
                preds.iter().filter(|p| p.class_id == class_id).collect();
            let class_gts: Vec<&SoundEvent> = bucket_gts
                .iter()
                .filter(|g| g.class_id == class_id)
                .copied()
                .collect();
            bucket_classes.insert(
                class_id,
                class_ap_ar(&class_preds, &class_gts, config, Some(bucket)),
            );
        }
        if bucket_classes.is_empty() {
            continue;
        }
        let (bmap, bmar) = class_means(&bucket_classes);
        buckets.insert(
            bucket,
            BucketApAr {
                map: bmap,
                mar: bmar,
                per_class: bucket_classes,
            },
        );
    }

    Ok(EventEvalResult {
        per_class,
        map,
        mar,
        buckets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(class_id: usize, t_start: f64, t_end: f64) -> SoundEvent {
        let frames = crate::labels::frame_count(t_start, t_end, 0.1);
        SoundEvent {
            t_start,
            t_end,
            class_id,
            track_id: 0,
            trajectory: vec![[1.0, 0.0, 0.0]; frames],
        }
    }

    fn pred(class_id: usize, t_start: f64, t_end: f64, score: f64) -> Detection {
        Detection {
            class_id,
            t_start,
            t_end,
            score,
            trajectory: Vec::new(),
        }
    }

    /// Independent re-statement of the greedy rule, used as an oracle.
    fn greedy_oracle(preds: &[Detection], gts: &[SoundEvent], thresh: f64) -> (usize, usize, usize) {
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| {
            preds[b]
                .score
                .total_cmp(&preds[a].score)
                .then(preds[a].t_start.total_cmp(&preds[b].t_start))
                .then(preds[a].t_end.total_cmp(&preds[b].t_end))
        });
        let mut used = vec![false; gts.len()];
        let mut tp = 0;
        for p in order {
            let mut best_g = None;
            let mut best_t = -1.0;
            for (g, ev) in gts.iter().enumerate() {
                if used[g] {
                    continue;
                }
                let t = tiou_unchecked(preds[p].interval(), ev.interval());
                let tie_better = (t - best_t).abs() == 0.0
                    && best_g.is_some_and(|bg: usize| {
                        (gts[g].t_start, g) < (gts[bg].t_start, bg)
                    });
                if t > best_t || tie_better {
                    best_t = t;
                    best_g = Some(g);
                }
            }
            if let Some(g) = best_g {
                if best_t >= thresh {
                    used[g] = true;
                    tp += 1;
                }
            }
        }
        (tp, preds.len() - tp, gts.len() - tp)
    }

    /// Maximum bipartite matching with edges where tiou >= thresh.
    fn optimal_tp(preds: &[Detection], gts: &[SoundEvent], thresh: f64) -> usize {
        fn augment(
            p: usize,
            adj: &[Vec<usize>],
            seen: &mut [bool],
            owner: &mut [Option<usize>],
        ) -> bool {
            for &g in &adj[p] {
                if seen[g] {
                    continue;
                }
                seen[g] = true;
                if owner[g].is_none() || augment(owner[g].unwrap(), adj, seen, owner) {
                    owner[g] = Some(p);
                    return true;
                }
            }
            false
        }
        let adj: Vec<Vec<usize>> = preds
            .iter()
            .map(|p| {
                gts.iter()
                    .enumerate()
                    .filter(|(_, g)| tiou_unchecked(p.interval(), g.interval()) >= thresh)
                    .map(|(g, _)| g)
                    .collect()
            })
            .collect();
        let mut owner = vec![None; gts.len()];
        let mut tp = 0;
        for p in 0..preds.len() {
            let mut seen = vec![false; gts.len()];
            if augment(p, &adj, &mut seen, &mut owner) {
                tp += 1;
            }
        }
        tp
    }

    #[test]
    fn exact_match_is_a_true_positive() {
        let preds = vec![pred(0, 1.0, 3.0, 0.9)];
        let gts = vec![gt(0, 1.0, 3.0)];
        let m = match_events(&preds, &gts, 1.0);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 0));
    }

    #[test]
    fn second_prediction_on_one_gt_is_fp() {
        let preds = vec![pred(0, 1.0, 3.0, 0.9), pred(0, 1.1, 3.1, 0.8)];
        let gts = vec![gt(0, 1.0, 3.0)];
        let m = match_events(&preds, &gts, 0.5);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
        assert_eq!(m.pairs, vec![(0, 0)]);
    }

    #[test]
    fn below_threshold_is_fp_and_fn() {
        let preds = vec![pred(0, 0.0, 4.0, 0.9)];
        let gts = vec![gt(0, 0.0, 10.0)];
        let m = match_events(&preds, &gts, 0.5);
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
    }

    #[test]
    fn greedy_matches_oracle_and_never_beats_optimal() {
        // exhaustive-ish small cases
        let cases: Vec<(Vec<Detection>, Vec<SoundEvent>)> = vec![
            (
                vec![pred(0, 0.0, 2.0, 0.9), pred(0, 1.0, 3.0, 0.8)],
                vec![gt(0, 0.0, 2.0), gt(0, 1.0, 3.0)],
            ),
            (
                // greedy takes the middle gt first and sacrifices one match
                vec![pred(0, 1.0, 3.0, 0.9), pred(0, 0.0, 2.0, 0.8)],
                vec![gt(0, 0.5, 2.5), gt(0, 0.0, 2.0)],
            ),
            (
                vec![
                    pred(0, 0.0, 1.0, 0.5),
                    pred(0, 0.5, 1.5, 0.6),
                    pred(0, 1.0, 2.0, 0.7),
                ],
                vec![gt(0, 0.0, 1.0), gt(0, 1.0, 2.0)],
            ),
            (vec![], vec![gt(0, 0.0, 1.0)]),
            (vec![pred(0, 0.0, 1.0, 1.0)], vec![]),
        ];
        for (preds, gts) in cases {
            for thresh in [0.1, 0.3, 0.5, 0.9] {
                let m = match_events(&preds, &gts, thresh);
                let (tp, fp, fn_) = greedy_oracle(&preds, &gts, thresh);
                assert_eq!((m.tp, m.fp, m.fn_), (tp, fp, fn_));
                assert!(m.tp <= optimal_tp(&preds, &gts, thresh));
            }
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let gts = vec![gt(0, 0.0, 5.0), gt(1, 2.0, 9.0)];
        let preds: Vec<Detection> = gts
            .iter()
            .map(|g| pred(g.class_id, g.t_start, g.t_end, 1.0))
            .collect();
        let config = EventEvalConfig::default();
        let result = map_mar(&preds, &gts, &config).unwrap();
        assert_eq!(result.map, 1.0);
        assert_eq!(result.mar, 1.0);
    }

    #[test]
    fn no_predictions_has_vacuous_precision() {
        let gts = vec![gt(0, 0.0, 5.0)];
        let config = EventEvalConfig::default();
        let result = map_mar(&[], &gts, &config).unwrap();
        assert_eq!(result.map, 1.0);
        assert_eq!(result.mar, 0.0);
    }

    #[test]
    fn half_overlap_reaches_nine_of_nineteen_recall() {
        // one gt [0, 10], one pred [0, 5] with score 1: tiou is exactly 0.5,
        // so 9 of the 19 tiou grid points count it as a match
        let gts = vec![gt(0, 0.0, 10.0)];
        let preds = vec![pred(0, 0.0, 5.0, 1.0)];
        let config = EventEvalConfig::default();
        let per_class = average_precision_recall(&preds, &gts, &config);
        let c = &per_class[&0];
        assert!((c.ar - 9.0 / 19.0).abs() < 1e-9, "ar = {}", c.ar);
        assert!((c.ap - 9.0 / 19.0).abs() < 1e-9, "ap = {}", c.ap);
    }

    #[test]
    fn map_is_the_class_mean() {
        // class 0 perfect, class 1 absent from predictions
        let gts = vec![gt(0, 0.0, 5.0), gt(1, 6.0, 9.0)];
        let preds = vec![pred(0, 0.0, 5.0, 1.0)];
        let result = map_mar(&preds, &gts, &EventEvalConfig::default()).unwrap();
        let mar_by_hand = (result.per_class[&0].ar + result.per_class[&1].ar) / 2.0;
        assert!((result.mar - mar_by_hand).abs() < 1e-12);
        assert!((result.per_class[&0].ar - 1.0).abs() < 1e-12);
        assert_eq!(result.per_class[&1].ar, 0.0);
    }

    #[test]
    fn buckets_ignore_out_of_bucket_predictions() {
        // 1 s and 8 s gt events, both predicted perfectly: Small mAP must be
        // 1.0 over only the short event
        let gts = vec![gt(0, 0.0, 1.0), gt(0, 2.0, 10.0)];
        let preds = vec![pred(0, 0.0, 1.0, 1.0), pred(0, 2.0, 10.0, 1.0)];
        let result = map_mar(&preds, &gts, &EventEvalConfig::default()).unwrap();
        let small = &result.buckets[&LengthBucket::Small];
        assert_eq!(small.map, 1.0);
        assert_eq!(small.mar, 1.0);
        let large = &result.buckets[&LengthBucket::Large];
        assert_eq!(large.map, 1.0);
        assert_eq!(large.mar, 1.0);
        assert!(!result.buckets.contains_key(&LengthBucket::Medium));
    }

    #[test]
    fn zero_gt_classes_is_undefined() {
        assert!(matches!(
            map_mar(&[pred(0, 0.0, 1.0, 0.5)], &[], &EventEvalConfig::default()),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn score_scaling_preserves_matching() {
        let preds = vec![
            pred(0, 0.0, 2.0, 0.9),
            pred(0, 0.5, 2.5, 0.6),
            pred(0, 3.0, 4.0, 0.3),
        ];
        let gts = vec![gt(0, 0.0, 2.0), gt(0, 3.0, 4.0)];
        let scaled: Vec<Detection> = preds
            .iter()
            .map(|p| pred(p.class_id, p.t_start, p.t_end, p.score * 0.5))
            .collect();
        for thresh in [0.3, 0.5, 0.8] {
            let a = match_events(&preds, &gts, thresh);
            let b = match_events(&scaled, &gts, thresh);
            assert_eq!((a.tp, a.fp, a.fn_, a.pairs), (b.tp, b.fp, b.fn_, b.pairs));
        }
    }

    #[test]
    fn recall_monotone_in_thresholds() {
        let preds = vec![
            pred(0, 0.0, 2.0, 0.9),
            pred(0, 2.5, 5.0, 0.6),
            pred(0, 6.0, 7.0, 0.3),
        ];
        let gts = vec![gt(0, 0.0, 2.2), gt(0, 2.4, 5.0), gt(0, 6.0, 7.5)];
        let mut last_recall = f64::INFINITY;
        for thresh in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let m = match_events(&preds, &gts, thresh);
            let recall = m.tp as f64 / gts.len() as f64;
            assert!(recall <= last_recall);
            last_recall = recall;
        }
        // recall at fixed tiou is non-increasing in the confidence cut
        let mut last = f64::INFINITY;
        for conf in [0.1, 0.4, 0.7, 1.0] {
            let kept: Vec<Detection> = preds.iter().filter(|p| p.score >= conf).cloned().collect();
            let m = match_events(&kept, &gts, 0.5);
            let recall = m.tp as f64 / gts.len() as f64;
            assert!(recall <= last);
            last = recall;
        }
    }

    #[test]
    fn permutation_invariance() {
        let preds = vec![
            pred(0, 0.0, 2.0, 0.9),
            pred(1, 1.0, 4.0, 0.7),
            pred(0, 2.5, 5.0, 0.6),
        ];
        let gts = vec![gt(0, 0.0, 2.0), gt(1, 1.0, 4.0), gt(0, 2.4, 5.0)];
        let base = map_mar(&preds, &gts, &EventEvalConfig::default()).unwrap();
        let mut preds2 = preds.clone();
        preds2.reverse();
        let mut gts2 = gts.clone();
        gts2.reverse();
        let shuffled = map_mar(&preds2, &gts2, &EventEvalConfig::default()).unwrap();
        assert_eq!(base.map, shuffled.map);
        assert_eq!(base.mar, shuffled.mar);
        for (k, v) in &base.per_class {
            assert_eq!(v.ap, shuffled.per_class[k].ap);
            assert_eq!(v.ar, shuffled.per_class[k].ar);
        }
    }
}

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou3d, LabeledBox};
use crate::model::{DetectionSet, Detector};
use crate::scalar::Scalar;
use crate::train::{Dataset, EpochLog};

/// IoU thresholds reported by default.
pub const THRESHOLDS: [f64; 3] = [0.1, 0.5, 0.9];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class: String,
    pub num_gt: usize,
    /// AP per threshold; absent when the class has no ground truth.
    pub ap: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub thresholds: Vec<f64>,
    /// mAP per threshold, in `[0, 1]`.
    pub map: Vec<f64>,
    /// Mean of `map`.
    pub average: f64,
    pub per_class: Vec<ClassAp>,
    #[serde(default)]
    pub loss_curve: Vec<EpochLog>,
}

/// Area under the all-point-interpolated precision/recall curve.
///
/// `ranked` holds true/false-positive flags in descending score order.
pub fn average_precision(ranked: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (i, &hit) in ranked.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut last_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        if *r > last_recall {
            ap += (r - last_recall) * p;
            last_recall = *r;
        }
    }
    ap
}

/// Ranks every detection by its probability of `class` and greedily claims
/// the best-overlapping unclaimed ground truth of that class.
fn class_hits<T: Scalar>(
    dets: &[DetectionSet<T>],
    gts: &[&[LabeledBox<f64>]],
    class: usize,
    threshold: f64,
) -> Vec<bool> {
    let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
    for (v, d) in dets.iter().enumerate() {
        for j in 0..d.len() {
            ranked.push((d.probabilities(j)[class].as_f64(), v, j));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut claimed: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    ranked
        .into_iter()
        .map(|(_, v, j)| {
            let pred = dets[v].boxes[j].cast::<f64>();
            let mut best: Option<(f64, usize)> = None;
            for (m, gt) in gts[v].iter().enumerate() {
                if gt.class_id != class || claimed[v][m] {
                    continue;
                }
                let iou = iou3d(&pred, &gt.bbox);
                if iou >= threshold && best.is_none_or(|(b, _)| iou > b) {
                    best = Some((iou, m));
                }
            }
            match best {
                Some((_, m)) => {
                    claimed[v][m] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Scores precomputed detections against per-view ground truth.
pub fn evaluate_detections<T: Scalar>(
    dets: &[DetectionSet<T>],
    gts: &[&[LabeledBox<f64>]],
    class_names: &[String],
    thresholds: &[f64],
) -> Result<MetricsReport> {
    if dets.is_empty() || dets.len() != gts.len() {
        return Err(Error::Invalid(format!(
            "need one detection set per view, got {} sets for {} views",
            dets.len(),
            gts.len()
        )));
    }
    let per_class: Vec<ClassAp> = class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let num_gt = gts.iter().flat_map(|g| g.iter()).filter(|g| g.class_id == c).count();
            let ap = thresholds
                .iter()
                .map(|&th| (num_gt > 0).then(|| average_precision(&class_hits(dets, gts, c, th), num_gt)))
                .collect();
            ClassAp { class: name.clone(), num_gt, ap }
        })
        .collect();
    let present: Vec<&ClassAp> = per_class.iter().filter(|c| c.num_gt > 0).collect();
    if present.is_empty() {
        return Err(Error::Invalid("no ground-truth objects to evaluate against".into()));
    }
    let map: Vec<f64> = (0..thresholds.len())
        .map(|t| present.iter().map(|c| c.ap[t].unwrap_or(0.0)).sum::<f64>() / present.len() as f64)
        .collect();
    let average = map.iter().sum::<f64>() / map.len() as f64;
    Ok(MetricsReport { thresholds: thresholds.to_vec(), map, average, per_class, loss_curve: vec![] })
}

/// Detections for every view of `data`, in view order.
pub fn detect_all<T: Scalar>(detector: &Detector<T>, data: &Dataset) -> Result<Vec<DetectionSet<T>>> {
    data.views
        .par_iter()
        .map(|v| detector.detect(&data.scenes[v.scene], &v.pose, &data.intrinsics, &data.sampling))
        .collect()
}

pub fn evaluate<T: Scalar>(detector: &Detector<T>, data: &Dataset, thresholds: &[f64]) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::Invalid("evaluation set has no views".into()));
    }
    let dets = detect_all(detector, data)?;
    let gts: Vec<&[LabeledBox<f64>]> = (0..data.len()).map(|i| data.ground_truth(i)).collect();
    let names = &data.scenes[0].class_table;
    evaluate_detections(&dets, &gts, names, thresholds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Array;
    use crate::geometry::{box_from_pose, Box3D, Mat3};

    fn cube(x: f64, side: f64) -> Box3D<f64> {
        box_from_pose([x, 0.0, 0.0], [side; 3], &Mat3::identity()).unwrap()
    }

    fn names() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    /// Detections with logits strongly favouring `classes[j]`, scored in order.
    fn dets(boxes: Vec<Box3D<f64>>, classes: &[usize], c: usize) -> DetectionSet<f64> {
        let mut logits = vec![-20.0; boxes.len() * (c + 1)];
        for (j, &k) in classes.iter().enumerate() {
            logits[j * (c + 1) + k] = 20.0 - j as f64;
        }
        DetectionSet { logits: Array::new(vec![boxes.len(), c + 1], logits).unwrap(), boxes }
    }

    #[test]
    fn perfect_detections_score_one() {
        let gts =
            vec![LabeledBox { bbox: cube(0.0, 1.0), class_id: 0 }, LabeledBox { bbox: cube(3.0, 1.0), class_id: 1 }];
        let d = dets(vec![gts[0].bbox, gts[1].bbox, cube(-5.0, 0.1)], &[0, 1, 2], 2);
        let r = evaluate_detections(&[d], &[&gts], &names(), &THRESHOLDS).unwrap();
        assert_eq!(r.map, vec![1.0; 3]);
        assert_eq!(r.average, 1.0);
    }

    #[test]
    fn noobj_detections_with_flat_boxes_score_zero() {
        let gts = vec![LabeledBox { bbox: cube(0.0, 1.0), class_id: 0 }];
        let flat = Box3D::from_f64([[0.0; 3]; 8]);
        let d = dets(vec![flat; 3], &[2, 2, 2], 2);
        let r = evaluate_detections(&[d], &[&gts], &names(), &THRESHOLDS).unwrap();
        assert_eq!(r.map, vec![0.0; 3]);
    }

    #[test]
    fn hand_built_precision_recall() {
        // two class-0 objects; predictions overlap the first at 0.6 / 0.4 and miss the second
        let gts =
            vec![LabeledBox { bbox: cube(0.0, 1.0), class_id: 0 }, LabeledBox { bbox: cube(10.0, 1.0), class_id: 0 }];
        let shift = |iou: f64| 2.0 * (1.0 - iou) / (1.0 + iou) / 2.0 * 1.0;
        let p0 = cube(shift(0.6), 1.0);
        let p1 = cube(-shift(0.4), 1.0);
        let p2 = cube(-20.0, 1.0);
        assert!((iou3d(&p0, &gts[0].bbox) - 0.6).abs() < 1e-12);
        assert!((iou3d(&p1, &gts[0].bbox) - 0.4).abs() < 1e-12);
        let d = dets(vec![p0, p1, p2], &[0, 0, 0], 2);
        let r = evaluate_detections(&[d], &[&gts], &names()[..1], &[0.5]).unwrap();
        // ranked TP, FP, FP over 2 GT: PR points (0.5, 1), (0.5, 0.5), (0.5, 1/3)
        assert_eq!(r.map[0], 0.5);
        let r = evaluate_detections(&[dets(vec![p0, p1, p2], &[0, 0, 0], 2)], &[&gts], &names()[..1], &[0.3]).unwrap();
        // TP, FP (gt 0 already claimed, gt 1 too far), FP
        assert_eq!(r.map[0], 0.5);
    }

    #[test]
    fn ap_matches_exhaustive_enumeration() {
        // brute force: for every recall level, max precision at recall >= r
        fn oracle(ranked: &[bool], num_gt: usize) -> f64 {
            let pts: Vec<(f64, f64)> = (1..=ranked.len())
                .map(|k| {
                    let tp = ranked[..k].iter().filter(|&&h| h).count() as f64;
                    (tp / num_gt as f64, tp / k as f64)
                })
                .collect();
            let mut levels: Vec<f64> = pts.iter().map(|p| p.0).collect();
            levels.insert(0, 0.0);
            levels.dedup();
            levels
                .windows(2)
                .map(|w| {
                    let p = pts.iter().filter(|q| q.0 >= w[1]).map(|q| q.1).fold(0.0, f64::max);
                    (w[1] - w[0]) * p
                })
                .sum()
        }
        for mask in 0u32..32 {
            for len in 1..=5 {
                let ranked: Vec<bool> = (0..len).map(|i| mask >> i & 1 == 1).collect();
                let hits = ranked.iter().filter(|&&h| h).count();
                for num_gt in hits.max(1)..=5 {
                    let got = average_precision(&ranked, num_gt);
                    assert!((got - oracle(&ranked, num_gt)).abs() < 1e-15, "{ranked:?} / {num_gt}");
                }
            }
        }
    }

    #[test]
    fn map_nonincreasing_in_threshold() {
        let gts = vec![LabeledBox { bbox: cube(0.0, 1.0), class_id: 0 }];
        let d = dets(vec![cube(0.2, 1.1), cube(0.5, 0.9)], &[0, 1], 2);
        let th: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
        let r = evaluate_detections(&[d], &[&gts], &names(), &th).unwrap();
        assert!(r.map.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(evaluate_detections::<f64>(&[], &[], &names(), &THRESHOLDS).is_err());
    }
}

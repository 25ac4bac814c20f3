//! COCO-style average precision over IoU thresholds 0.50:0.95:0.05 with
//! 101-point interpolation, optionally after class-wise NMS.

use alloc::vec::Vec;

use crate::assignment::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::{iou, nms, BoxXYXY};
use crate::model::{BranchOutput, Model};

use super::scene::SyntheticScene;

pub const IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// Which branch to decode at the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchSel {
    Primary,
    Aux(usize),
}

impl BranchSel {
    pub fn index(self) -> usize {
        match self {
            BranchSel::Primary => 0,
            BranchSel::Aux(i) => i + 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            BranchSel::Primary
        } else {
            BranchSel::Aux(i - 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub branch: BranchSel,
    pub use_nms: bool,
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            branch: BranchSel::Primary,
            use_nms: false,
            score_threshold: 0.05,
            nms_iou: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class_index: usize,
    pub score: f64,
    pub bbox: BoxXYXY,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub ap50: f64,
    pub map: f64,
    /// `(iou_threshold, AP)` for every threshold.
    pub per_threshold: Vec<(f64, f64)>,
}

/// All (query, class) pairs scoring above `score_threshold`, with class-wise
/// NMS when requested.
pub fn detections(out: &BranchOutput, score_threshold: f64, use_nms: bool, nms_iou: f64) -> Vec<Detection> {
    let (nq, nc) = out.probs.shape();
    let mut dets = Vec::new();
    for c in 0..nc {
        let mut per_class: Vec<Detection> = (0..nq)
            .filter(|&q| out.probs.get(q, c) > score_threshold)
            .map(|q| Detection {
                class_index: c,
                score: out.probs.get(q, c),
                bbox: out.query_box(q).to_xyxy(),
            })
            .collect();
        if use_nms {
            let scored: Vec<(BoxXYXY, f64)> = per_class.iter().map(|d| (d.bbox, d.score)).collect();
            per_class = nms(&scored, nms_iou).into_iter().map(|i| per_class[i]).collect();
        }
        dets.extend(per_class);
    }
    dets
}

/// AP of one class at one IoU threshold.
fn class_ap(dets: &[Vec<Detection>], gts: &[&[GroundTruth]], class: usize, thr: f64) -> Option<f64> {
    let n_pos: usize = gts
        .iter()
        .map(|g| g.iter().filter(|o| o.class_index == class).count())
        .sum();
    if n_pos == 0 {
        return None;
    }
    // (score, scene, detection index)
    let mut ranked: Vec<(f64, usize, usize)> = Vec::new();
    for (s, ds) in dets.iter().enumerate() {
        for (i, d) in ds.iter().enumerate() {
            if d.class_index == class {
                ranked.push((d.score, s, i));
            }
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut used: Vec<Vec<bool>> = gts.iter().map(|g| alloc::vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    for (k, &(_, s, i)) in ranked.iter().enumerate() {
        let d = &dets[s][i];
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gts[s].iter().enumerate() {
            if g.class_index != class || used[s][j] {
                continue;
            }
            let v = iou(&d.bbox, &g.bbox.to_xyxy());
            if v >= thr && best.is_none_or(|(b, _)| v > b) {
                best = Some((v, j));
            }
        }
        if let Some((_, j)) = best {
            used[s][j] = true;
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_pos as f64);
    }
    Some(interpolated_ap(&precision, &recall))
}

/// Mean over 101 recall levels of the best precision at recall >= level.
pub fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let p = precision
            .iter()
            .zip(recall)
            .filter(|(_, &rc)| rc >= r - 1e-12)
            .map(|(&p, _)| p)
            .fold(0.0, f64::max);
        total += p;
    }
    total / 101.0
}

/// AP metrics from per-scene detections.
pub fn ap_metrics(dets: &[Vec<Detection>], gts: &[&[GroundTruth]], num_classes: usize) -> Result<EvalResult> {
    if dets.len() != gts.len() {
        return Err(Error::Validation(alloc::format!(
            "{} detection lists for {} scenes",
            dets.len(),
            gts.len()
        )));
    }
    let per_threshold: Vec<(f64, f64)> = IOU_THRESHOLDS
        .iter()
        .map(|&thr| {
            let aps: Vec<f64> = (0..num_classes).filter_map(|c| class_ap(dets, gts, c, thr)).collect();
            let ap = if aps.is_empty() {
                0.0
            } else {
                aps.iter().sum::<f64>() / aps.len() as f64
            };
            (thr, ap)
        })
        .collect();
    let map = per_threshold.iter().map(|x| x.1).sum::<f64>() / per_threshold.len() as f64;
    Ok(EvalResult {
        ap50: per_threshold[0].1,
        map,
        per_threshold,
    })
}

/// Evaluates one branch of `model`'s last layer on `scenes`.
pub fn evaluate(model: &Model, scenes: &[SyntheticScene], cfg: &EvalConfig) -> Result<EvalResult> {
    let b = cfg.branch.index();
    if b >= model.config.n_branches() {
        return Err(Error::Config(alloc::format!(
            "branch {:?} does not exist in a model with {} auxiliary branches",
            cfg.branch,
            model.config.n_aux
        )));
    }
    let mut dets = Vec::with_capacity(scenes.len());
    for s in scenes {
        let out = model.forward(&s.features)?;
        let branch = out.final_branch(b).expect("checked above");
        dets.push(detections(branch, cfg.score_threshold, cfg.use_nms, cfg.nms_iou));
    }
    let gts: Vec<&[GroundTruth]> = scenes.iter().map(|s| s.gts.as_slice()).collect();
    ap_metrics(&dets, &gts, model.config.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxCXCYWH;
    use crate::numerics::Tensor2D;
    use alloc::vec;

    fn gt(c: usize, b: [f64; 4]) -> GroundTruth {
        GroundTruth {
            class_index: c,
            bbox: BoxCXCYWH::from_array(b),
        }
    }

    fn det(c: usize, score: f64, b: [f64; 4]) -> Detection {
        Detection {
            class_index: c,
            score,
            bbox: BoxCXCYWH::from_array(b).to_xyxy(),
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let g = vec![gt(0, [0.3, 0.3, 0.2, 0.2]), gt(1, [0.7, 0.7, 0.2, 0.1])];
        let d = vec![det(0, 1.0, [0.3, 0.3, 0.2, 0.2]), det(1, 1.0, [0.7, 0.7, 0.2, 0.1])];
        let r = ap_metrics(&[d], &[&g], 2).unwrap();
        assert!((r.ap50 - 1.0).abs() < 1e-12 && (r.map - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_predictions_score_zero() {
        let g = vec![gt(0, [0.3, 0.3, 0.2, 0.2])];
        let r = ap_metrics(&[vec![]], &[&g], 1).unwrap();
        assert_eq!(r.ap50, 0.0);
        assert_eq!(r.map, 0.0);
    }

    #[test]
    fn hand_built_pr_curves() {
        let g = vec![gt(0, [0.5, 0.5, 0.2, 0.2])];
        let tp = det(0, 0.9, [0.5, 0.5, 0.2, 0.2]);
        let fp = det(0, 0.4, [0.1, 0.1, 0.05, 0.05]);
        let r = ap_metrics(&[vec![tp, fp]], &[&g], 1).unwrap();
        assert!((r.ap50 - 1.0).abs() < 1e-12);

        let tp_low = Detection { score: 0.3, ..tp };
        let r = ap_metrics(&[vec![tp_low, fp]], &[&g], 1).unwrap();
        assert!((r.ap50 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn each_ground_truth_is_consumed_once() {
        let g = vec![gt(0, [0.5, 0.5, 0.2, 0.2])];
        let d = vec![det(0, 0.9, [0.5, 0.5, 0.2, 0.2]), det(0, 0.8, [0.5, 0.5, 0.2, 0.2])];
        let r = ap_metrics(&[d.clone()], &[&g], 1).unwrap();
        // the duplicate is a false positive after full recall, so AP stays 1
        assert!((r.ap50 - 1.0).abs() < 1e-12);
        // wrong class never matches
        let r = ap_metrics(&[vec![det(1, 0.9, [0.5, 0.5, 0.2, 0.2])]], &[&g], 2).unwrap();
        assert_eq!(r.ap50, 0.0);
    }

    #[test]
    fn detections_threshold_and_nms() {
        let probs = Tensor2D::from_rows(&[&[0.9, 0.01], &[0.8, 0.02], &[0.03, 0.6]]).unwrap();
        let boxes =
            Tensor2D::from_rows(&[&[0.5, 0.5, 0.2, 0.2], &[0.51, 0.5, 0.2, 0.2], &[0.5, 0.5, 0.2, 0.2]]).unwrap();
        let out = BranchOutput { probs, boxes };
        let all = detections(&out, 0.05, false, 0.5);
        assert_eq!(all.len(), 3);
        let kept = detections(&out, 0.05, true, 0.5);
        // the near-duplicate of class 0 is removed; class 1 is untouched
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().any(|d| d.class_index == 0 && d.score == 0.9));
        assert!(kept.iter().any(|d| d.class_index == 1));
    }
}

//! COCO-protocol average precision for boxes and masks.

use serde::{Deserialize, Serialize};

use crate::boxes::iou_xywh;
use crate::error::{Error, Result};
use crate::raster::Mask;

pub const MAX_DETS: usize = 100;
pub const NUM_RECALL_POINTS: usize = 101;

/// IoU thresholds 0.50:0.05:0.95, computed the way `numpy.linspace` does.
pub fn iou_thresholds() -> [f64; 10] {
    let step = (0.95 - 0.5) / 9.0;
    let mut t: [f64; 10] = std::array::from_fn(|i| i as f64 * step + 0.5);
    t[9] = 0.95;
    t
}

fn recall_thresholds() -> [f64; NUM_RECALL_POINTS] {
    let step = 1.0 / 100.0;
    let mut r: [f64; NUM_RECALL_POINTS] = std::array::from_fn(|i| i as f64 * step);
    r[NUM_RECALL_POINTS - 1] = 1.0;
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    Box,
    Mask,
}

/// A scored detection. `bbox` is `(x, y, w, h)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_id: usize,
    pub score: f64,
    pub bbox: [f64; 4],
    pub mask: Option<Mask>,
}

/// A ground-truth object. `bbox` is `(x, y, w, h)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub class_id: usize,
    pub bbox: [f64; 4],
    pub mask: Option<Mask>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Mean over IoU 0.50:0.95.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    /// Per-class AP over IoU 0.50:0.95; `None` for classes without ground truth.
    pub per_class_ap: Vec<Option<f64>>,
    pub per_class_ap50: Vec<Option<f64>>,
}

fn check_box(b: &[f64; 4], record: String) -> Result<()> {
    if b.iter().any(|v| !v.is_finite()) || b[2] < 0.0 || b[3] < 0.0 {
        return Err(Error::MalformedAnnotation {
            record,
            reason: format!("invalid box {b:?}"),
        });
    }
    Ok(())
}

fn validate(preds: &[Vec<Prediction>], gts: &[Vec<GroundTruth>], num_classes: usize, kind: IouKind) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} prediction lists for {} images",
            preds.len(),
            gts.len()
        )));
    }
    for (img, objs) in gts.iter().enumerate() {
        for (j, g) in objs.iter().enumerate() {
            let record = format!("image {img} ground truth {j}");
            check_box(&g.bbox, record.clone())?;
            if g.class_id >= num_classes {
                return Err(Error::MalformedAnnotation {
                    record,
                    reason: format!("class {} out of range", g.class_id),
                });
            }
            if kind == IouKind::Mask && g.mask.is_none() {
                return Err(Error::MalformedAnnotation {
                    record,
                    reason: "mask evaluation needs a mask".into(),
                });
            }
        }
    }
    for (img, ps) in preds.iter().enumerate() {
        for (j, p) in ps.iter().enumerate() {
            let record = format!("image {img} prediction {j}");
            check_box(&p.bbox, record.clone())?;
            if p.class_id >= num_classes || !p.score.is_finite() {
                return Err(Error::MalformedAnnotation {
                    record,
                    reason: format!("class {} / score {}", p.class_id, p.score),
                });
            }
            if kind == IouKind::Mask && p.mask.is_none() {
                return Err(Error::MalformedAnnotation {
                    record,
                    reason: "mask evaluation needs a mask".into(),
                });
            }
        }
    }
    Ok(())
}

fn mask_iou(a: &Mask, b: &Mask) -> f64 {
    let u = a.union(b);
    if u == 0 {
        0.0
    } else {
        a.intersection(b) as f64 / u as f64
    }
}

/// Per image and class: detections kept (score order) and, per threshold,
/// whether each was matched.
struct ImageClassEval {
    scores: Vec<f64>,
    matched: Vec<Vec<bool>>,
}

fn evaluate_image_class(
    preds: &[&Prediction],
    gts: &[&GroundTruth],
    kind: IouKind,
    thresholds: &[f64],
) -> ImageClassEval {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    // Stable, like the reference implementation's mergesort.
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score));
    order.truncate(MAX_DETS);
    let dts: Vec<&Prediction> = order.iter().map(|&i| preds[i]).collect();

    let ious: Vec<Vec<f64>> = dts
        .iter()
        .map(|d| {
            gts.iter()
                .map(|g| match kind {
                    IouKind::Box => iou_xywh(d.bbox, g.bbox),
                    IouKind::Mask => mask_iou(d.mask.as_ref().unwrap(), g.mask.as_ref().unwrap()),
                })
                .collect()
        })
        .collect();

    let matched = thresholds
        .iter()
        .map(|&t| {
            let mut gt_taken = vec![false; gts.len()];
            (0..dts.len())
                .map(|d| {
                    let mut best = t.min(1.0 - 1e-10);
                    let mut m = None;
                    for (g, taken) in gt_taken.iter().enumerate() {
                        if *taken || ious[d][g] < best {
                            continue;
                        }
                        best = ious[d][g];
                        m = Some(g);
                    }
                    if let Some(g) = m {
                        gt_taken[g] = true;
                    }
                    m.is_some()
                })
                .collect()
        })
        .collect();
    ImageClassEval {
        scores: dts.iter().map(|d| d.score).collect(),
        matched,
    }
}

/// Interpolated precision at the 101 recall points, or `None` when the
/// class has no ground truth.
fn class_precision(evals: &[ImageClassEval], num_gt: usize, t: usize) -> Option<[f64; NUM_RECALL_POINTS]> {
    if num_gt == 0 {
        return None;
    }
    let mut dets: Vec<(f64, bool)> = evals
        .iter()
        .flat_map(|e| e.scores.iter().zip(&e.matched[t]).map(|(&s, &m)| (s, m)))
        .collect();
    dets.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    for &(_, m) in &dets {
        if m {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        recall.push(tp / num_gt as f64);
        precision.push(tp / (tp + fp + f64::EPSILON));
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut q = [0.0; NUM_RECALL_POINTS];
    for (r, &thr) in recall_thresholds().iter().enumerate() {
        let idx = recall.partition_point(|&v| v < thr);
        if idx < precision.len() {
            q[r] = precision[idx];
        }
    }
    Some(q)
}

/// Average precision under the COCO protocol: per image and class, at most
/// 100 detections are matched greedily in score order, precision is
/// interpolated at 101 recall points, and the mean runs over every
/// (threshold, class) with ground truth. `preds[i]` and `gts[i]` belong to
/// image `i`.
pub fn evaluate_ap(
    preds: &[Vec<Prediction>],
    gts: &[Vec<GroundTruth>],
    num_classes: usize,
    kind: IouKind,
) -> Result<EvalResult> {
    validate(preds, gts, num_classes, kind)?;
    let thresholds = iou_thresholds();
    // precision[t][k]
    let mut precision: Vec<Vec<Option<[f64; NUM_RECALL_POINTS]>>> = vec![Vec::new(); thresholds.len()];
    for k in 0..num_classes {
        let mut evals = Vec::new();
        let mut num_gt = 0;
        for (p, g) in preds.iter().zip(gts) {
            let pk: Vec<&Prediction> = p.iter().filter(|d| d.class_id == k).collect();
            let gk: Vec<&GroundTruth> = g.iter().filter(|o| o.class_id == k).collect();
            num_gt += gk.len();
            if pk.is_empty() && gk.is_empty() {
                continue;
            }
            evals.push(evaluate_image_class(&pk, &gk, kind, &thresholds));
        }
        for (t, row) in precision.iter_mut().enumerate() {
            row.push(class_precision(&evals, num_gt, t));
        }
    }

    let mean = |cells: &mut dyn Iterator<Item = &[f64; NUM_RECALL_POINTS]>| {
        let (mut sum, mut n) = (0.0, 0usize);
        for q in cells {
            sum += q.iter().sum::<f64>();
            n += q.len();
        }
        if n == 0 {
            None
        } else {
            Some(sum / n as f64)
        }
    };
    let at = |t: usize| mean(&mut precision[t].iter().flatten());
    let ap = mean(&mut precision.iter().flat_map(|row| row.iter().flatten()));
    let per_class_ap = (0..num_classes)
        .map(|k| mean(&mut precision.iter().filter_map(|row| row[k].as_ref())))
        .collect();
    let per_class_ap50 = (0..num_classes).map(|k| mean(&mut precision[0][k].iter())).collect();
    Ok(EvalResult {
        ap: ap.unwrap_or(0.0),
        ap50: at(0).unwrap_or(0.0),
        ap75: at(5).unwrap_or(0.0),
        per_class_ap,
        per_class_ap50,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(class_id: usize, bbox: [f64; 4]) -> GroundTruth {
        GroundTruth {
            class_id,
            bbox,
            mask: None,
        }
    }

    fn pred(class_id: usize, score: f64, bbox: [f64; 4]) -> Prediction {
        Prediction {
            class_id,
            score,
            bbox,
            mask: None,
        }
    }

    #[test]
    fn perfect_predictions() {
        let gts = vec![vec![gt(0, [0.0, 0.0, 10.0, 10.0]), gt(1, [20.0, 20.0, 5.0, 8.0])]];
        let preds = vec![gts[0].iter().map(|g| pred(g.class_id, 1.0, g.bbox)).collect()];
        let r = evaluate_ap(&preds, &gts, 2, IouKind::Box).unwrap();
        // Precision carries the reference evaluator's machine-epsilon guard.
        for v in [r.ap, r.ap50, r.ap75] {
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn no_predictions() {
        let gts = vec![vec![gt(0, [0.0, 0.0, 10.0, 10.0])]];
        let r = evaluate_ap(&[vec![]], &gts, 1, IouKind::Box).unwrap();
        assert_eq!((r.ap, r.ap50, r.ap75), (0.0, 0.0, 0.0));
        let r = evaluate_ap(&[vec![]], &[vec![]], 1, IouKind::Box).unwrap();
        assert_eq!(r.ap, 0.0);
    }

    #[test]
    fn malformed_ground_truth_is_identified() {
        let gts = vec![vec![gt(0, [0.0, 0.0, -1.0, 10.0])]];
        let err = evaluate_ap(&[vec![]], &gts, 1, IouKind::Box).unwrap_err();
        assert!(err.to_string().contains("image 0 ground truth 0"));
    }

    #[test]
    fn thresholds_match_linspace() {
        let t = iou_thresholds();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[9], 0.95);
    }
}

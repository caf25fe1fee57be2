//! Minimum-cost bipartite matching between predictions and targets.

use crate::autodiff::sigmoid;
use crate::boxes::{cxcywh_to_xyxy, giou_xyxy};
use crate::train::loss::{LossWeights, FOCAL_ALPHA, FOCAL_GAMMA};

/// Solves the rectangular assignment problem on `cost[rows][cols]`,
/// matching `min(rows, cols)` pairs at minimum total cost. Returns
/// `(row, col)` pairs sorted by row.
pub fn linear_assignment(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
        let mut pairs: Vec<(usize, usize)> = linear_assignment(&t).into_iter().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        return pairs;
    }
    let at = |i: usize, j: usize| {
        let v = cost[i][j];
        if v.is_finite() {
            v
        } else {
            1e18
        }
    };

    // Shortest augmenting path with row/column potentials; `owner[j]` is the
    // 1-based row assigned to column j, column 0 is a sentinel.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Matching cost of prediction `i` against target `j`: focal class cost
/// plus weighted L1 and negative GIoU box terms.
pub fn matching_cost(
    logits: &[Vec<f64>],
    boxes: &[[f64; 4]],
    gt_boxes: &[[f64; 4]],
    gt_classes: &[usize],
    weights: &LossWeights,
) -> Vec<Vec<f64>> {
    let eps = 1e-8;
    logits
        .iter()
        .zip(boxes)
        .map(|(lg, b)| {
            gt_boxes
                .iter()
                .zip(gt_classes)
                .map(|(t, &cls)| {
                    let p = sigmoid(lg[cls]);
                    let neg = (1.0 - FOCAL_ALPHA) * p.powf(FOCAL_GAMMA) * -(1.0 - p + eps).ln();
                    let pos = FOCAL_ALPHA * (1.0 - p).powf(FOCAL_GAMMA) * -(p + eps).ln();
                    let l1: f64 = (0..4).map(|k| (b[k] - t[k]).abs()).sum();
                    let giou = giou_xyxy(cxcywh_to_xyxy(*b), cxcywh_to_xyxy(*t));
                    weights.class * (pos - neg) + weights.l1 * l1 - weights.giou * giou
                })
                .collect()
        })
        .collect()
}

/// One-to-one assignment of predictions to targets, `(pred, target)` pairs.
pub fn hungarian_match(
    logits: &[Vec<f64>],
    boxes: &[[f64; 4]],
    gt_boxes: &[[f64; 4]],
    gt_classes: &[usize],
    weights: &LossWeights,
) -> Vec<(usize, usize)> {
    if logits.is_empty() || gt_boxes.is_empty() {
        return Vec::new();
    }
    linear_assignment(&matching_cost(logits, boxes, gt_boxes, gt_classes, weights))
}

//! Set-prediction loss: independent bipartite matching per stage, then focal
//! classification, L1 and GIoU box terms, and BCE plus dice mask terms.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::boxes::cxcywh_to_xyxy;
use crate::model::forward::{DetectionOutput, ForwardTrace};
use crate::raster::Mask;
use crate::scalar::{c, Scalar};
use crate::tensor::Matrix;
use crate::train::matcher::hungarian_match;

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub class: f64,
    pub l1: f64,
    pub giou: f64,
    pub mask: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            class: 2.0,
            l1: 5.0,
            giou: 2.0,
            mask: 2.0,
            dice: 2.0,
        }
    }
}

/// Unweighted loss components summed over stages, plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub class: f64,
    pub l1: f64,
    pub giou: f64,
    pub mask: f64,
    pub dice: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn accumulate(&mut self, o: &LossBreakdown) {
        self.class += o.class;
        self.l1 += o.l1;
        self.giou += o.giou;
        self.mask += o.mask;
        self.dice += o.dice;
        self.total += o.total;
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.class *= s;
        self.l1 *= s;
        self.giou *= s;
        self.mask *= s;
        self.dice *= s;
        self.total *= s;
        self
    }

    pub fn is_finite(&self) -> bool {
        [self.class, self.l1, self.giou, self.mask, self.dice, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Ground truth of one image: normalized cxcywh boxes, class ids and
/// optional binary masks at image resolution.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Annotations {
    pub boxes: Vec<[f64; 4]>,
    pub class_ids: Vec<usize>,
    pub masks: Option<Vec<Mask>>,
}

impl Annotations {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Nearest-neighbour mask targets at `side × side`, one row per object.
    pub fn mask_targets(&self, side: usize) -> Option<Matrix<f64>> {
        let masks = self.masks.as_ref()?;
        let mut out = Matrix::zeros(masks.len(), side * side);
        for (i, m) in masks.iter().enumerate() {
            let r = m.resize_nearest(side, side);
            for (o, &b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o = if b { 1.0 } else { 0.0 };
            }
        }
        Some(out)
    }
}

fn rows_f64<T: Scalar>(m: &Matrix<T>) -> Vec<Vec<f64>> {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|v| v.to_f64_lossy()).collect())
        .collect()
}

fn boxes_f64<T: Scalar>(m: &Matrix<T>) -> Vec<[f64; 4]> {
    (0..m.rows())
        .map(|i| {
            let r = m.row(i);
            [0, 1, 2, 3].map(|k| r[k].to_f64_lossy())
        })
        .collect()
}

fn col<T: Scalar>(g: &mut Graph<T>, m: Var, k: usize) -> Var {
    g.slice_cols(m, k, 1)
}

/// Per-row GIoU between graph boxes `a` and constant boxes `b`, both
/// `[M, 4]` cxcywh. Returns `[M, 1]`.
fn giou_rows<T: Scalar>(g: &mut Graph<T>, a: Var, b: &[[f64; 4]]) -> Var {
    let (cx, cy, w, h) = (col(g, a, 0), col(g, a, 1), col(g, a, 2), col(g, a, 3));
    let hw = g.scale(w, c(0.5));
    let hh = g.scale(h, c(0.5));
    let ax0 = g.sub(cx, hw);
    let ax1 = g.add(cx, hw);
    let ay0 = g.sub(cy, hh);
    let ay1 = g.add(cy, hh);

    let xyxy: Vec<[f64; 4]> = b.iter().map(|&t| cxcywh_to_xyxy(t)).collect();
    let column = |g: &mut Graph<T>, k: usize| g.constant(Matrix::from_fn(xyxy.len(), 1, |i, _| c(xyxy[i][k])));
    let (bx0, by0, bx1, by1) = (column(g, 0), column(g, 1), column(g, 2), column(g, 3));
    let barea = g.constant(Matrix::from_fn(b.len(), 1, |i, _| c(b[i][2] * b[i][3])));
    let zero = g.constant(Matrix::zeros(b.len(), 1));

    let span = |g: &mut Graph<T>, lo: Var, hi: Var| {
        let d = g.sub(hi, lo);
        g.max(d, zero)
    };
    let ix0 = g.max(ax0, bx0);
    let ix1 = g.min(ax1, bx1);
    let iy0 = g.max(ay0, by0);
    let iy1 = g.min(ay1, by1);
    let iw = span(g, ix0, ix1);
    let ih = span(g, iy0, iy1);
    let inter = g.mul(iw, ih);
    let aarea = g.mul(w, h);
    let sum = g.add(aarea, barea);
    let union = g.sub(sum, inter);
    let iou = g.div(inter, union);

    let hx0 = g.min(ax0, bx0);
    let hx1 = g.max(ax1, bx1);
    let hy0 = g.min(ay0, by0);
    let hy1 = g.max(ay1, by1);
    let hw = span(g, hx0, hx1);
    let hh = span(g, hy0, hy1);
    let hull = g.mul(hw, hh);
    let gap = g.sub(hull, union);
    let pen = g.div(gap, hull);
    g.sub(iou, pen)
}

/// Loss of one stage. `masks` carries `[P, side²]` mask logits when the
/// stage predicts masks. Returns the weighted total as a graph node and the
/// component values.
pub fn stage_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    boxes: Var,
    masks: Option<(Var, usize)>,
    targets: &Annotations,
    weights: &LossWeights,
) -> (Var, LossBreakdown) {
    let (p, classes) = g.shape(logits);
    let n = targets.len();
    let norm = 1.0 / n.max(1) as f64;
    let pairs = hungarian_match(
        &rows_f64(g.value(logits)),
        &boxes_f64(g.value(boxes)),
        &targets.boxes,
        &targets.class_ids,
        weights,
    );
    let mut out = LossBreakdown::default();

    // Sigmoid focal loss over every (prediction, class) cell.
    let mut t = Matrix::<T>::zeros(p, classes);
    for &(i, j) in &pairs {
        t.set(i, targets.class_ids[j], T::one());
    }
    let alpha_t = t.map(|v| c::<T>(FOCAL_ALPHA) * v + c::<T>(1.0 - FOCAL_ALPHA) * (T::one() - v));
    let flip = t.map(|v| T::one() - c::<T>(2.0) * v);
    let tc = g.constant(t);
    let xt = g.mul(logits, tc);
    let sp = g.softplus(logits);
    let ce = g.sub(sp, xt);
    let prob = g.sigmoid(logits);
    let flipc = g.constant(flip);
    let q = g.mul(prob, flipc);
    let one_minus_pt = g.add(q, tc);
    let modulator = if FOCAL_GAMMA == 2.0 {
        g.square(one_minus_pt)
    } else {
        let l = g.ln(one_minus_pt);
        let l = g.scale(l, c(FOCAL_GAMMA));
        g.exp(l)
    };
    let alpha = g.constant(alpha_t);
    let fl = g.mul(modulator, ce);
    let fl = g.mul(fl, alpha);
    let fl = g.sum(fl);
    let class_loss = g.scale(fl, c(norm));
    out.class = g.value(class_loss).get(0, 0).to_f64_lossy();
    let mut total = g.scale(class_loss, c(weights.class));

    if !pairs.is_empty() {
        let pi: Vec<usize> = pairs.iter().map(|pr| pr.0).collect();
        let tb: Vec<[f64; 4]> = pairs.iter().map(|pr| targets.boxes[pr.1]).collect();
        let pb = g.gather_rows(boxes, &pi);
        let tbc = g.constant(Matrix::from_fn(tb.len(), 4, |i, k| c(tb[i][k])));
        let d = g.sub(pb, tbc);
        let d = g.abs(d);
        let l1 = g.sum(d);
        let l1 = g.scale(l1, c(norm));
        out.l1 = g.value(l1).get(0, 0).to_f64_lossy();
        let term = g.scale(l1, c(weights.l1));
        total = g.add(total, term);

        let gi = giou_rows(g, pb, &tb);
        let gi = g.sum(gi);
        let gl = g.rsub_scalar(c(pairs.len() as f64), gi);
        let gl = g.scale(gl, c(norm));
        out.giou = g.value(gl).get(0, 0).to_f64_lossy();
        let term = g.scale(gl, c(weights.giou));
        total = g.add(total, term);

        if let (Some((mlogits, side)), Some(mt)) = (masks, targets.mask_targets(masks.map_or(0, |m| m.1))) {
            let mt = mt.select_rows(&pairs.iter().map(|pr| pr.1).collect::<Vec<_>>());
            let pixels = (side * side) as f64;
            let x = g.gather_rows(mlogits, &pi);
            let tm = g.constant(mt.cast());
            let xt = g.mul(x, tm);
            let sp = g.softplus(x);
            let bce = g.sub(sp, xt);
            let bce = g.sum(bce);
            let bce = g.scale(bce, c(norm / pixels));
            out.mask = g.value(bce).get(0, 0).to_f64_lossy();
            let term = g.scale(bce, c(weights.mask));
            total = g.add(total, term);

            let s = g.sigmoid(x);
            let st = g.mul(s, tm);
            let inter = g.sum_cols(st);
            let num = g.scale(inter, c(2.0));
            let num = g.add_scalar(num, T::one());
            let ssum = g.sum_cols(s);
            let tsum = g.sum_cols(tm);
            let den = g.add(ssum, tsum);
            let den = g.add_scalar(den, T::one());
            let ratio = g.div(num, den);
            let ratio = g.sum(ratio);
            let dice = g.rsub_scalar(c(pairs.len() as f64), ratio);
            let dice = g.scale(dice, c(norm));
            out.dice = g.value(dice).get(0, 0).to_f64_lossy();
            let term = g.scale(dice, c(weights.dice));
            total = g.add(total, term);
        }
    }
    out.total = g.value(total).get(0, 0).to_f64_lossy();
    (total, out)
}

/// Sum of stage losses over a training forward trace.
pub fn trace_loss<T: Scalar>(
    g: &mut Graph<T>,
    trace: &ForwardTrace<T>,
    targets: &Annotations,
    weights: &LossWeights,
) -> (Var, LossBreakdown) {
    let mut acc = LossBreakdown::default();
    let mut total = None;
    for s in &trace.stages {
        let (v, b) = stage_loss(
            g,
            s.logits,
            s.boxes,
            s.masks.map(|m| (m, trace.mask_side)),
            targets,
            weights,
        );
        acc.accumulate(&b);
        total = Some(match total {
            None => v,
            Some(t) => g.add(t, v),
        });
    }
    (total.expect("encoder stage always present"), acc)
}

/// Loss of an inference output. Every stage is matched independently; mask
/// terms apply to the stage that carries masks (the last one).
pub fn compute_loss<T: Scalar>(
    output: &DetectionOutput<T>,
    targets: &Annotations,
    weights: &LossWeights,
) -> LossBreakdown {
    let mut g = Graph::inference();
    let last = output.per_layer_boxes.len() - 1;
    let mut acc = LossBreakdown::default();
    for (s, (b, l)) in output.per_layer_boxes.iter().zip(&output.per_layer_logits).enumerate() {
        let bv = g.constant(b.clone());
        let lv = g.constant(l.clone());
        let masks = match (&output.masks, s == last) {
            (Some(m), true) => Some((g.constant(m.clone()), output.mask_side)),
            _ => None,
        };
        acc.accumulate(&stage_loss(&mut g, lv, bv, masks, targets, weights).1);
    }
    acc
}

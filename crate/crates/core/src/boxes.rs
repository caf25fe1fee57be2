//! Box conversions and overlap measures on normalized or absolute coordinates.

/// `(cx, cy, w, h)` to `(x0, y0, x1, y1)`.
#[inline]
pub fn cxcywh_to_xyxy(b: [f64; 4]) -> [f64; 4] {
    [
        b[0] - 0.5 * b[2],
        b[1] - 0.5 * b[3],
        b[0] + 0.5 * b[2],
        b[1] + 0.5 * b[3],
    ]
}

#[inline]
pub fn xyxy_to_cxcywh(b: [f64; 4]) -> [f64; 4] {
    [0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3]), b[2] - b[0], b[3] - b[1]]
}

/// Normalized cxcywh to absolute COCO `(x, y, w, h)`.
pub fn cxcywh_to_coco(b: [f64; 4], width: f64, height: f64) -> [f64; 4] {
    let [x0, y0, x1, y1] = cxcywh_to_xyxy(b);
    [x0 * width, y0 * height, (x1 - x0) * width, (y1 - y0) * height]
}

/// Absolute COCO `(x, y, w, h)` to normalized cxcywh.
pub fn coco_to_cxcywh(b: [f64; 4], width: f64, height: f64) -> [f64; 4] {
    [
        (b[0] + 0.5 * b[2]) / width,
        (b[1] + 0.5 * b[3]) / height,
        b[2] / width,
        b[3] / height,
    ]
}

fn area(b: [f64; 4]) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

/// IoU of two xyxy boxes; zero when the union is empty.
pub fn iou_xyxy(a: [f64; 4], b: [f64; 4]) -> f64 {
    let inter = area([a[0].max(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].min(b[3])]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU of two xyxy boxes.
pub fn giou_xyxy(a: [f64; 4], b: [f64; 4]) -> f64 {
    let inter = area([a[0].max(b[0]), a[1].max(b[1]), a[2].min(b[2]), a[3].min(b[3])]);
    let union = area(a) + area(b) - inter;
    let hull = area([a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])]);
    if union <= 0.0 || hull <= 0.0 {
        return 0.0;
    }
    inter / union - (hull - union) / hull
}

/// IoU of two `(x, y, w, h)` boxes, with the same operation order as the
/// reference COCO evaluator so results agree bit for bit.
pub fn iou_xywh(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2] + a[0]).min(b[2] + b[0]) - a[0].max(b[0]);
    if w <= 0.0 {
        return 0.0;
    }
    let h = (a[3] + a[1]).min(b[3] + b[1]) - a[1].max(b[1]);
    if h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

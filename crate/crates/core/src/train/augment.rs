//! Batch-level square resizing and the two permitted augmentations:
//! horizontal flip and random crop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::boxes::{cxcywh_to_xyxy, xyxy_to_cxcywh};
use crate::raster::Image;
use crate::scalar::Scalar;
use crate::train::loss::Annotations;

/// One training image with its annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<T> {
    pub image: Image<T>,
    pub annotations: Annotations,
}

/// Fixed augmentation parameters, identical for every step of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub flip_prob: f64,
    pub crop_prob: f64,
    /// Smallest crop side as a fraction of the image side.
    pub min_crop_scale: f64,
    /// Boxes keeping less than this fraction of their area are dropped.
    pub min_retention: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            flip_prob: 0.5,
            crop_prob: 0.5,
            min_crop_scale: 0.6,
            min_retention: 0.3,
        }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        Self {
            flip_prob: 0.0,
            crop_prob: 0.0,
            ..Self::default()
        }
    }
}

pub fn flip_sample<T: Scalar>(s: &TrainSample<T>) -> TrainSample<T> {
    let a = &s.annotations;
    TrainSample {
        image: s.image.flip_horizontal(),
        annotations: Annotations {
            boxes: a.boxes.iter().map(|b| [1.0 - b[0], b[1], b[2], b[3]]).collect(),
            class_ids: a.class_ids.clone(),
            masks: a
                .masks
                .as_ref()
                .map(|m| m.iter().map(|m| m.flip_horizontal()).collect()),
        },
    }
}

/// Crops the pixel window `[x0, x0 + width) × [y0, y0 + height)`. Boxes are
/// clipped to the window and dropped when they keep less than
/// `min_retention` of their area.
pub fn crop_sample<T: Scalar>(
    s: &TrainSample<T>,
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
    min_retention: f64,
) -> TrainSample<T> {
    let (iw, ih) = (s.image.width(), s.image.height());
    if x0 == 0 && y0 == 0 && width == iw && height == ih {
        return s.clone();
    }
    let a = &s.annotations;
    let (fx0, fy0) = (x0 as f64 / iw as f64, y0 as f64 / ih as f64);
    let (fx1, fy1) = ((x0 + width) as f64 / iw as f64, (y0 + height) as f64 / ih as f64);
    let mut out = Annotations {
        masks: a.masks.as_ref().map(|_| Vec::new()),
        ..Annotations::default()
    };
    for (i, b) in a.boxes.iter().enumerate() {
        let [bx0, by0, bx1, by1] = cxcywh_to_xyxy(*b);
        let c = [bx0.max(fx0), by0.max(fy0), bx1.min(fx1), by1.min(fy1)];
        let full = (bx1 - bx0) * (by1 - by0);
        let kept = (c[2] - c[0]).max(0.0) * (c[3] - c[1]).max(0.0);
        if full <= 0.0 || kept / full < min_retention {
            continue;
        }
        let (sx, sy) = (fx1 - fx0, fy1 - fy0);
        out.boxes.push(xyxy_to_cxcywh([
            (c[0] - fx0) / sx,
            (c[1] - fy0) / sy,
            (c[2] - fx0) / sx,
            (c[3] - fy0) / sy,
        ]));
        out.class_ids.push(a.class_ids[i]);
        if let (Some(dst), Some(src)) = (out.masks.as_mut(), a.masks.as_ref()) {
            dst.push(src[i].crop(x0, y0, width, height));
        }
    }
    TrainSample {
        image: s.image.crop(x0, y0, width, height),
        annotations: out,
    }
}

/// Random horizontal flip, then random crop, under a fixed policy.
pub fn augment<T: Scalar, R: Rng>(s: &TrainSample<T>, rng: &mut R, policy: &AugmentPolicy) -> TrainSample<T> {
    let mut out = if rng.random::<f64>() < policy.flip_prob {
        flip_sample(s)
    } else {
        s.clone()
    };
    if rng.random::<f64>() < policy.crop_prob {
        let (w, h) = (out.image.width(), out.image.height());
        let side = |rng: &mut R, full: usize| {
            let lo = ((full as f64 * policy.min_crop_scale).ceil() as usize).clamp(1, full);
            rng.random_range(lo..=full)
        };
        let cw = side(rng, w);
        let ch = side(rng, h);
        let x0 = rng.random_range(0..=w - cw);
        let y0 = rng.random_range(0..=h - ch);
        out = crop_sample(&out, x0, y0, cw, ch, policy.min_retention);
    }
    out
}

/// Resizes every sample to `resolution × resolution`. Normalized boxes are
/// unchanged; masks follow the image with nearest-neighbour sampling.
pub fn batch_resize<T: Scalar>(samples: &[TrainSample<T>], resolution: usize) -> Vec<TrainSample<T>> {
    samples
        .iter()
        .map(|s| TrainSample {
            image: s.image.resize(resolution, resolution),
            annotations: Annotations {
                boxes: s.annotations.boxes.clone(),
                class_ids: s.annotations.class_ids.clone(),
                masks: s.annotations.masks.as_ref().map(|ms| {
                    ms.iter()
                        .map(|m| {
                            if m.height == resolution && m.width == resolution {
                                m.clone()
                            } else {
                                m.resize_nearest(resolution, resolution)
                            }
                        })
                        .collect()
                }),
            },
        })
        .collect()
}

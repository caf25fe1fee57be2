//! Box and mask average precision, and end-to-end evaluation of a sub-net.

pub mod ap;

pub use ap::{evaluate_ap, EvalResult, GroundTruth, IouKind, Prediction};

use crate::autodiff::sigmoid;
use crate::boxes::cxcywh_to_coco;
use crate::data::{Dataset, ImageRecord};
use crate::error::Result;
use crate::model::{model_forward, DetectionOutput, ElasticWeights, ModelConfig};
use crate::raster::{Image, Mask};
use crate::scalar::Scalar;

/// Ground truth of every image in `ds`.
pub fn ground_truth(ds: &Dataset, with_masks: bool) -> Vec<Vec<GroundTruth>> {
    ds.images
        .iter()
        .map(|r| {
            let masks = with_masks.then(|| r.masks());
            r.objects
                .iter()
                .enumerate()
                .map(|(i, o)| GroundTruth {
                    class_id: o.class_id,
                    bbox: o.bbox,
                    mask: masks.as_ref().map(|m| m[i].clone()),
                })
                .collect()
        })
        .collect()
}

/// Converts the final stage of `out` into one scored prediction per query:
/// score is the maximum class sigmoid, boxes are scaled to `width × height`
/// pixels and mask logits are bilinearly upsampled and thresholded at zero.
pub fn output_predictions<T: Scalar>(
    out: &DetectionOutput<T>,
    width: usize,
    height: usize,
    with_masks: bool,
) -> Vec<Prediction> {
    let logits = out.final_logits();
    let boxes = out.final_boxes();
    (0..logits.rows())
        .map(|q| {
            let (mut best, mut cls) = (f64::NEG_INFINITY, 0);
            for (k, v) in logits.row(q).iter().enumerate() {
                let v = v.to_f64_lossy();
                if v > best {
                    best = v;
                    cls = k;
                }
            }
            let b = boxes.row(q);
            let cxcywh = [0, 1, 2, 3].map(|k| b[k].to_f64_lossy());
            let mask = match (&out.masks, with_masks) {
                (Some(m), true) => {
                    let side = out.mask_side;
                    let data: Vec<f64> = m.row(q).iter().map(|v| v.to_f64_lossy()).collect();
                    let up = Image::from_vec(1, side, side, data)
                        .expect("mask row is side²")
                        .resize(height, width);
                    Some(Mask {
                        height,
                        width,
                        data: up.data().iter().map(|&v| v > 0.0).collect(),
                    })
                }
                _ => None,
            };
            Prediction {
                class_id: cls,
                score: sigmoid(best),
                bbox: cxcywh_to_coco(cxcywh, width as f64, height as f64),
                mask,
            }
        })
        .collect()
}

fn predict_image<T: Scalar>(
    w: &ElasticWeights<T>,
    config: &ModelConfig,
    r: &ImageRecord,
    with_masks: bool,
) -> Result<Vec<Prediction>> {
    let img: Image<T> = r.image()?.resize(config.resolution, config.resolution);
    let out = model_forward(std::slice::from_ref(&img), config, w)?;
    Ok(output_predictions(&out[0], r.width, r.height, with_masks))
}

/// Inference over every image of `ds` with one sub-net.
pub fn predict_dataset<T: Scalar>(
    w: &ElasticWeights<T>,
    config: &ModelConfig,
    ds: &Dataset,
    with_masks: bool,
) -> Result<Vec<Vec<Prediction>>> {
    ds.images
        .iter()
        .map(|r| predict_image(w, config, r, with_masks))
        .collect()
}

/// Runs the sub-net `config` over `ds` and scores it. Mask AP requires the
/// mask head to be enabled in `config`.
pub fn evaluate_config<T: Scalar>(
    w: &ElasticWeights<T>,
    config: &ModelConfig,
    ds: &Dataset,
    kind: IouKind,
) -> Result<EvalResult> {
    config.validate(w.dims())?;
    if kind == IouKind::Mask && !config.mask_head_enabled {
        return Err(crate::error::Error::Unsupported(
            "mask evaluation needs a config with the mask head enabled".into(),
        ));
    }
    let with_masks = kind == IouKind::Mask;
    let preds = predict_dataset(w, config, ds, with_masks)?;
    evaluate_ap(&preds, &ground_truth(ds, with_masks), ds.num_classes(), kind)
}

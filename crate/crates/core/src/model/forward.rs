use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::model::decoder::{decoder_forward, QueryInit};
use crate::model::encoder::{encode_image, project_and_propose, EncoderMode, Subnet};
use crate::model::queries::{select_queries, SelectedQuery};
use crate::model::segmentation::{pixel_embedding, segmentation_forward};
use crate::model::weights::ElasticWeights;
use crate::raster::Image;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Predictions of one stage as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct StagePreds {
    pub logits: Var,
    pub boxes: Var,
    pub masks: Option<Var>,
}

/// Everything a forward pass leaves on the graph.
pub struct ForwardTrace<T> {
    /// Stage 0 is the encoder, stage `l` decoder layer `l`.
    pub stages: Vec<StagePreds>,
    pub selected: Vec<SelectedQuery<T>>,
    pub tokens: Var,
    pub cls: Var,
    pub mask_side: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOptions {
    /// Supervise every encoder token at stage 0 and predict masks at every
    /// stage (training); otherwise stage 0 holds the selected queries and
    /// only the last stage gets masks.
    pub training: bool,
    pub count_flops: bool,
    pub mode: EncoderMode,
}

impl ForwardOptions {
    pub fn inference() -> Self {
        Self {
            training: false,
            count_flops: false,
            mode: EncoderMode::Elastic,
        }
    }

    pub fn training() -> Self {
        Self {
            training: true,
            ..Self::inference()
        }
    }
}

/// Builds the full sub-net forward pass for one image on `g`.
pub fn forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    w: &ElasticWeights<T>,
    config: &ModelConfig,
    image: &Image<T>,
    opts: ForwardOptions,
) -> Result<ForwardTrace<T>> {
    let sub = Subnet::derive(g, w, config)?;
    if opts.count_flops {
        g.count_flops(true);
    }
    let enc = encode_image(g, w, &sub, image, opts.mode)?;
    let prop = project_and_propose(g, w, &sub, enc.tokens);
    let selected = select_queries(g.value(prop.logits), g.value(prop.boxes), config.num_queries)?;
    let idx: Vec<usize> = selected.iter().map(|s| s.token).collect();
    let reference = Matrix::from_fn(idx.len(), 4, |i, j| selected[i].bbox[j]);
    let content = g.gather_rows(prop.memory, &idx);
    let layers = decoder_forward(
        g,
        w,
        QueryInit { content, reference },
        prop.memory,
        sub.token_box_pos,
        config.num_decoder_layers,
    )?;

    let (enc_logits, enc_boxes, enc_hidden) = if opts.training {
        (prop.logits, prop.boxes, prop.hidden)
    } else {
        (
            g.gather_rows(prop.logits, &idx),
            g.gather_rows(prop.boxes, &idx),
            g.gather_rows(prop.hidden, &idx),
        )
    };
    let mut stages = vec![StagePreds {
        logits: enc_logits,
        boxes: enc_boxes,
        masks: None,
    }];
    let mut hidden = vec![enc_hidden];
    for layer in &layers {
        stages.push(StagePreds {
            logits: layer.logits,
            boxes: layer.boxes,
            masks: None,
        });
        hidden.push(layer.head_hidden);
    }

    if config.mask_head_enabled {
        let pixel = pixel_embedding(g, w, &sub, enc.tokens);
        let heads = &w.layout().heads;
        let first = if opts.training { 0 } else { stages.len() - 1 };
        for s in first..stages.len() {
            stages[s].masks = Some(segmentation_forward(g, w, &sub, pixel, &heads[s], hidden[s])?);
        }
    }
    g.count_flops(false);

    Ok(ForwardTrace {
        stages,
        selected,
        tokens: enc.tokens,
        cls: enc.cls,
        mask_side: config.mask_side(),
    })
}

/// Inference output for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionOutput<T> {
    /// `[queries, 4]` normalized cxcywh per stage; index 0 is the encoder stage.
    pub per_layer_boxes: Vec<Matrix<T>>,
    /// `[queries, classes]` per stage.
    pub per_layer_logits: Vec<Matrix<T>>,
    /// `[queries, side²]` mask logits of the last stage, row-major pixels.
    pub masks: Option<Matrix<T>>,
    pub mask_side: usize,
    /// Encoder-stage query selection, in score order.
    pub selected: Vec<SelectedQuery<T>>,
}

impl<T: Scalar> DetectionOutput<T> {
    pub fn from_trace(g: &Graph<T>, trace: &ForwardTrace<T>) -> Self {
        Self {
            per_layer_boxes: trace.stages.iter().map(|s| g.value(s.boxes).clone()).collect(),
            per_layer_logits: trace.stages.iter().map(|s| g.value(s.logits).clone()).collect(),
            masks: trace.stages.last().and_then(|s| s.masks).map(|m| g.value(m).clone()),
            mask_side: trace.mask_side,
            selected: trace.selected.clone(),
        }
    }

    pub fn num_decoder_layers(&self) -> usize {
        self.per_layer_boxes.len() - 1
    }

    pub fn final_boxes(&self) -> &Matrix<T> {
        self.per_layer_boxes.last().expect("encoder stage always present")
    }

    pub fn final_logits(&self) -> &Matrix<T> {
        self.per_layer_logits.last().expect("encoder stage always present")
    }
}

/// Inference forward pass over a batch.
pub fn model_forward<T: Scalar>(
    images: &[Image<T>],
    config: &ModelConfig,
    w: &ElasticWeights<T>,
) -> Result<Vec<DetectionOutput<T>>> {
    images
        .iter()
        .map(|img| model_forward_counted(img, config, w).map(|(o, _)| o))
        .collect()
}

/// Single-image inference that also reports the matmul FLOPs executed after
/// sub-net derivation.
pub fn model_forward_counted<T: Scalar>(
    image: &Image<T>,
    config: &ModelConfig,
    w: &ElasticWeights<T>,
) -> Result<(DetectionOutput<T>, u64)> {
    let mut g = Graph::inference();
    let opts = ForwardOptions {
        count_flops: true,
        ..ForwardOptions::inference()
    };
    let trace = forward_graph(&mut g, w, config, image, opts)?;
    Ok((DetectionOutput::from_trace(&g, &trace), g.flops()))
}

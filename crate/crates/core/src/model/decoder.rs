use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::encoder::{attention, box_sine_embedding, linear, mlp, norm, stage_heads};
use crate::model::weights::{DecoderBlockIds, ElasticWeights};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Decoder input: query content rows and their reference boxes.
pub struct QueryInit<T> {
    pub content: Var,
    pub reference: Matrix<T>,
}

/// One decoder layer's predictions.
pub struct LayerOutput {
    pub hidden: Var,
    /// Head-normalized hidden state, input to the mask FFN.
    pub head_hidden: Var,
    pub logits: Var,
    pub boxes: Var,
}

fn decoder_block<T: Scalar>(
    g: &mut Graph<T>,
    w: &ElasticWeights<T>,
    ids: &DecoderBlockIds,
    x: Var,
    pos: Var,
    memory: Var,
    memory_pos: Var,
) -> Var {
    let d = w.dims().dim;
    let heads = w.dims().heads;

    let h = norm(g, w, x, ids.norm1);
    let hp = g.add(h, pos);
    let qk = linear(g, w, hp, ids.self_qk);
    let q = g.slice_cols(qk, 0, d);
    let k = g.slice_cols(qk, d, d);
    let v = linear(g, w, h, ids.self_v);
    let a = attention(g, q, k, v, heads);
    let a = linear(g, w, a, ids.self_out);
    let x = g.add(x, a);

    let h = norm(g, w, x, ids.norm2);
    let hp = g.add(h, pos);
    let q = linear(g, w, hp, ids.cross_q);
    let mp = g.add(memory, memory_pos);
    let k = linear(g, w, mp, ids.cross_k);
    let v = linear(g, w, memory, ids.cross_v);
    let a = attention(g, q, k, v, heads);
    let a = linear(g, w, a, ids.cross_out);
    let x = g.add(x, a);

    let h = norm(g, w, x, ids.norm3);
    let h = mlp(g, w, h, ids.fc1, ids.fc2);
    g.add(x, h)
}

/// Runs the first `num_layers` decoder layers. Each layer refines the
/// previous layer's (detached) boxes, so a shorter run reproduces the prefix
/// of a longer one exactly. `num_layers == 0` returns no layers.
pub fn decoder_forward<T: Scalar>(
    g: &mut Graph<T>,
    w: &ElasticWeights<T>,
    queries: QueryInit<T>,
    memory: Var,
    memory_pos: Var,
    num_layers: usize,
) -> Result<Vec<LayerOutput>> {
    let dims = w.dims();
    if num_layers > dims.max_decoder_layers {
        return Err(Error::InvalidConfig(format!(
            "{num_layers} decoder layers requested, weights hold {}",
            dims.max_decoder_layers
        )));
    }
    let l = w.layout();
    let mut x = queries.content;
    let mut reference = queries.reference;
    let mut out = Vec::with_capacity(num_layers);
    for layer in 0..num_layers {
        let emb = g.constant(box_sine_embedding(&reference, dims.pos_freqs));
        let pos = linear(g, w, emb, l.box_pos);
        x = decoder_block(g, w, &l.decoder[layer], x, pos, memory, memory_pos);
        let (logits, boxes, head_hidden) = stage_heads(g, w, &l.heads[layer + 1], x, &reference);
        reference = g.value(boxes).clone();
        out.push(LayerOutput {
            hidden: x,
            head_hidden,
            logits,
            boxes,
        });
    }
    Ok(out)
}

//! Elastic ViT encoder and the per-config sub-net derivation.

use std::f64::consts::PI;

use crate::autodiff::{inverse_sigmoid, Graph, Var};
use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::model::position::position_map;
use crate::model::resample::pi_resize_matrix;
use crate::model::weights::{ElasticWeights, EncoderBlockIds, HeadIds, LinearIds, NormIds};
use crate::model::window::window_tiles;
use crate::raster::Image;
use crate::scalar::{c, Scalar};
use crate::tensor::Matrix;

pub(crate) const LN_EPS: f64 = 1e-6;

/// Config-dependent tensors derived from the shared weights before any
/// image is seen: resampled patch kernel, interpolated positional table and
/// the positional embedding of every token's anchor box.
pub struct Subnet<T> {
    pub config: ModelConfig,
    pub kernel: Var,
    pub pos: Var,
    pub anchors: Matrix<T>,
    pub token_box_pos: Var,
}

impl<T: Scalar> Subnet<T> {
    pub fn derive(g: &mut Graph<T>, w: &ElasticWeights<T>, config: &ModelConfig) -> Result<Self> {
        let dims = w.dims();
        config.validate(dims)?;
        let l = w.layout();
        let p0 = dims.base_patch;
        let p = config.patch_size;

        let base = g.param(l.patch_kernel, w.get(l.patch_kernel));
        let kernel = if p == p0 {
            base
        } else {
            let map = g.constant(pi_resize_matrix(p0, p)?.cast());
            let n0 = p0 * p0;
            let parts: Vec<Var> = (0..dims.in_channels)
                .map(|ch| {
                    let s = g.slice_rows(base, ch * n0, n0);
                    g.matmul(map, s)
                })
                .collect();
            g.concat_rows(&parts)
        };

        let table = g.param(l.pe_table, w.get(l.pe_table));
        let grid = config.grid_side();
        let pos = if grid == dims.pe_grid() {
            table
        } else {
            let map = position_map(dims.pe_grid(), grid)?;
            g.sparse(table, map)
        };

        let anchors = token_anchors(grid, config.patch_size, config.resolution);
        let emb = g.constant(box_sine_embedding(&anchors, dims.pos_freqs));
        let token_box_pos = linear(g, w, emb, l.box_pos);

        Ok(Self {
            config: *config,
            kernel,
            pos,
            anchors,
            token_box_pos,
        })
    }
}

/// Anchor box per token: cell centre, side of two patches (normalized cxcywh).
pub fn token_anchors<T: Scalar>(grid: usize, patch: usize, resolution: usize) -> Matrix<T> {
    let side = (2.0 * patch as f64 / resolution as f64).min(1.0);
    Matrix::from_fn(grid * grid, 4, |t, k| {
        let (y, x) = (t / grid, t % grid);
        c(match k {
            0 => (x as f64 + 0.5) / grid as f64,
            1 => (y as f64 + 0.5) / grid as f64,
            _ => side,
        })
    })
}

/// Sine/cosine features of normalized boxes, `[n, 8·freqs]`.
pub fn box_sine_embedding<T: Scalar>(boxes: &Matrix<T>, freqs: usize) -> Matrix<T> {
    Matrix::from_fn(boxes.rows(), 8 * freqs, |i, j| {
        let coord = j / (2 * freqs);
        let f = (j % (2 * freqs)) / 2;
        let v = boxes.get(i, coord).to_f64_lossy() * PI * (1u64 << f) as f64;
        c(if j % 2 == 0 { v.sin() } else { v.cos() })
    })
}

pub(crate) fn linear<T: Scalar>(g: &mut Graph<T>, w: &ElasticWeights<T>, x: Var, ids: LinearIds) -> Var {
    let wv = g.param(ids.w, w.get(ids.w));
    let bv = g.param(ids.b, w.get(ids.b));
    g.linear(x, wv, bv)
}

pub(crate) fn norm<T: Scalar>(g: &mut Graph<T>, w: &ElasticWeights<T>, x: Var, ids: NormIds) -> Var {
    let gamma = g.param(ids.gamma, w.get(ids.gamma));
    let beta = g.param(ids.beta, w.get(ids.beta));
    g.layer_norm(x, gamma, beta, c(LN_EPS))
}

/// Two-layer MLP with GELU.
pub(crate) fn mlp<T: Scalar>(g: &mut Graph<T>, w: &ElasticWeights<T>, x: Var, fc1: LinearIds, fc2: LinearIds) -> Var {
    let h = linear(g, w, x, fc1);
    let h = g.gelu(h);
    linear(g, w, h, fc2)
}

/// Multi-head scaled dot-product attention on projected `q [n, D]`,
/// `k [m, D]`, `v [m, D]`.
pub fn attention<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var, heads: usize) -> Var {
    let d = g.shape(q).1;
    let dh = d / heads;
    let scale = c::<T>(1.0 / (dh as f64).sqrt());
    let outs: Vec<Var> = (0..heads)
        .map(|h| {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh),
                    g.slice_cols(k, h * dh, dh),
                    g.slice_cols(v, h * dh, dh),
                )
            };
            let s = g.matmul_nt(qh, kh);
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            g.matmul(a, vh)
        })
        .collect();
    if outs.len() == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)
    }
}

/// Whether windowed blocks honour the configured window count or every block
/// runs global attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderMode {
    Elastic,
    AllGlobal,
}

/// Attention groups over the `[copies; spatial]` row layout of a windowed
/// block: copy `w` followed by the spatial rows of tile `w`.
pub fn window_groups(grid: usize, num_windows: usize) -> Result<Vec<Vec<usize>>> {
    let copies = num_windows * num_windows;
    Ok(window_tiles(grid, num_windows)?
        .into_iter()
        .enumerate()
        .map(|(w, tile)| {
            let mut rows = Vec::with_capacity(tile.len() + 1);
            rows.push(w);
            rows.extend(tile.into_iter().map(|t| t + copies));
            rows
        })
        .collect())
}

fn encoder_block<T: Scalar>(
    g: &mut Graph<T>,
    w: &ElasticWeights<T>,
    ids: &EncoderBlockIds,
    x: Var,
    groups: Option<&[Vec<usize>]>,
) -> Var {
    let d = w.dims().dim;
    let heads = w.dims().heads;
    let h = norm(g, w, x, ids.norm1);
    let qkv = linear(g, w, h, ids.qkv);
    let q = g.slice_cols(qkv, 0, d);
    let k = g.slice_cols(qkv, d, d);
    let v = g.slice_cols(qkv, 2 * d, d);
    let att = match groups {
        None => attention(g, q, k, v, heads),
        Some(groups) => {
            let mut order = Vec::with_capacity(g.shape(x).0);
            let outs: Vec<Var> = groups
                .iter()
                .map(|rows| {
                    order.extend_from_slice(rows);
                    let qg = g.gather_rows(q, rows);
                    let kg = g.gather_rows(k, rows);
                    let vg = g.gather_rows(v, rows);
                    attention(g, qg, kg, vg, heads)
                })
                .collect();
            let stacked = g.concat_rows(&outs);
            let mut inverse = vec![0; order.len()];
            for (pos, &row) in order.iter().enumerate() {
                inverse[row] = pos;
            }
            g.gather_rows(stacked, &inverse)
        }
    };
    let att = linear(g, w, att, ids.proj);
    let x = g.add(x, att);
    let h = norm(g, w, x, ids.norm2);
    let h = mlp(g, w, h, ids.fc1, ids.fc2);
    g.add(x, h)
}

/// Encoder activations for one image.
pub struct EncodedImage {
    /// Normalized spatial tokens `[T, D]`, raster order.
    pub tokens: Var,
    /// Mean of the normalized class-token copies, `[1, D]`.
    pub cls: Var,
}

/// Runs patch embedding and every encoder block on one image.
pub fn encode_image<T: Scalar>(
    g: &mut Graph<T>,
    w: &ElasticWeights<T>,
    sub: &Subnet<T>,
    image: &Image<T>,
    mode: EncoderMode,
) -> Result<EncodedImage> {
    let cfg = &sub.config;
    if image.height() != cfg.resolution || image.width() != cfg.resolution {
        return Err(crate::error::Error::InvalidConfig(format!(
            "image is {}x{}, config expects {}",
            image.height(),
            image.width(),
            cfg.resolution
        )));
    }
    let l = w.layout();
    let patches = g.constant(image.patches(cfg.patch_size)?);
    let bias = g.param(l.patch_bias, w.get(l.patch_bias));
    let x = g.linear(patches, sub.kernel, bias);
    let x = g.add(x, sub.pos);

    let cls_token = g.param(l.cls_token, w.get(l.cls_token));
    let pe_cls = g.param(l.pe_cls, w.get(l.pe_cls));
    let cls = g.add(cls_token, pe_cls);

    let copies = match mode {
        EncoderMode::Elastic => cfg.window_count(),
        EncoderMode::AllGlobal => 1,
    };
    let cls_copies = if copies == 1 {
        cls
    } else {
        g.gather_rows(cls, &vec![0; copies])
    };
    let mut x = g.concat_rows(&[cls_copies, x]);

    let groups = window_groups(cfg.grid_side(), cfg.num_windows)?;
    for block in &l.encoder {
        let grouped = mode == EncoderMode::Elastic && block.windowed;
        x = encoder_block(g, w, block, x, grouped.then_some(groups.as_slice()));
    }

    let x = norm(g, w, x, l.encoder_norm);
    let t = cfg.num_tokens();
    let tokens = g.slice_rows(x, copies, t);
    let cls = if copies == 1 {
        g.slice_rows(x, 0, 1)
    } else {
        let c = g.slice_rows(x, 0, copies);
        g.mean_rows(c)
    };
    Ok(EncodedImage { tokens, cls })
}

/// Two-stage proposals on the projected encoder memory.
pub struct Proposals {
    /// Layer-normalized projector output `[T, D]`.
    pub memory: Var,
    pub logits: Var,
    pub boxes: Var,
    /// Head-normalized memory, input to the mask FFN of the encoder stage.
    pub hidden: Var,
}

pub fn project_and_propose<T: Scalar>(
    g: &mut Graph<T>,
    w: &ElasticWeights<T>,
    sub: &Subnet<T>,
    tokens: Var,
) -> Proposals {
    let l = w.layout();
    let m = linear(g, w, tokens, l.projector);
    let memory = norm(g, w, m, l.projector_norm);
    let head = &l.heads[0];
    let (logits, boxes, hidden) = stage_heads(g, w, head, memory, &sub.anchors);
    Proposals {
        memory,
        logits,
        boxes,
        hidden,
    }
}

/// Class logits and refined boxes `sigmoid(logit(reference) + Δ)` of one stage.
pub(crate) fn stage_heads<T: Scalar>(
    g: &mut Graph<T>,
    w: &ElasticWeights<T>,
    head: &HeadIds,
    x: Var,
    reference: &Matrix<T>,
) -> (Var, Var, Var) {
    let hn = norm(g, w, x, head.norm);
    let logits = linear(g, w, hn, head.class);
    let delta = mlp(g, w, hn, head.box1, head.box2);
    let base = g.constant(reference.map(inverse_sigmoid));
    let unact = g.add(base, delta);
    let boxes = g.sigmoid(unact);
    (logits, boxes, hn)
}

/// Matrix-valued encoder outputs for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderFeatures<T> {
    pub tokens: Matrix<T>,
    pub cls: Matrix<T>,
    pub logits: Matrix<T>,
    pub boxes: Matrix<T>,
}

/// Inference-mode encoder over a batch of images.
pub fn encoder_forward<T: Scalar>(
    images: &[Image<T>],
    config: &ModelConfig,
    w: &ElasticWeights<T>,
    mode: EncoderMode,
) -> Result<Vec<EncoderFeatures<T>>> {
    images
        .iter()
        .map(|img| {
            let mut g = Graph::inference();
            let sub = Subnet::derive(&mut g, w, config)?;
            let enc = encode_image(&mut g, w, &sub, img, mode)?;
            let prop = project_and_propose(&mut g, w, &sub, enc.tokens);
            Ok(EncoderFeatures {
                tokens: g.value(enc.tokens).clone(),
                cls: g.value(enc.cls).clone(),
                logits: g.value(prop.logits).clone(),
                boxes: g.value(prop.boxes).clone(),
            })
        })
        .collect()
}

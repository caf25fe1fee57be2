//! The single shared parameter set every sub-net is derived from.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::config::ModelDims;
use crate::scalar::{c, Scalar};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearIds {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NormIds {
    pub gamma: usize,
    pub beta: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderBlockIds {
    pub windowed: bool,
    pub norm1: NormIds,
    pub qkv: LinearIds,
    pub proj: LinearIds,
    pub norm2: NormIds,
    pub fc1: LinearIds,
    pub fc2: LinearIds,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderBlockIds {
    pub norm1: NormIds,
    pub self_qk: LinearIds,
    pub self_v: LinearIds,
    pub self_out: LinearIds,
    pub norm2: NormIds,
    pub cross_q: LinearIds,
    pub cross_k: LinearIds,
    pub cross_v: LinearIds,
    pub cross_out: LinearIds,
    pub norm3: NormIds,
    pub fc1: LinearIds,
    pub fc2: LinearIds,
}

/// Prediction heads attached to one stage (encoder proposals or a decoder layer).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadIds {
    pub norm: NormIds,
    pub class: LinearIds,
    pub box1: LinearIds,
    pub box2: LinearIds,
    pub mask1: LinearIds,
    pub mask2: LinearIds,
}

/// Parameter indices for every component, built deterministically from
/// [`ModelDims`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub patch_kernel: usize,
    pub patch_bias: usize,
    pub cls_token: usize,
    pub pe_cls: usize,
    pub pe_table: usize,
    pub encoder: Vec<EncoderBlockIds>,
    pub encoder_norm: NormIds,
    pub projector: LinearIds,
    pub projector_norm: NormIds,
    pub box_pos: LinearIds,
    /// Index 0 is the encoder stage, index `l` the `l`-th decoder layer.
    pub heads: Vec<HeadIds>,
    pub decoder: Vec<DecoderBlockIds>,
    pub pixel_norm: NormIds,
    pub pixel_proj: LinearIds,
}

/// How a freshly created parameter is initialised.
#[derive(Clone, Copy, Debug)]
enum Init {
    Zeros,
    Ones,
    Const(f64),
    Normal(f64),
    Xavier,
}

struct Builder {
    specs: Vec<(String, usize, usize, Init)>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push((name, rows, cols, init));
        self.specs.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearIds {
        LinearIds {
            w: self.add(format!("{name}.weight"), fan_in, fan_out, Init::Xavier),
            b: self.add(format!("{name}.bias"), 1, fan_out, Init::Zeros),
        }
    }

    fn linear_init(&mut self, name: &str, fan_in: usize, fan_out: usize, w: Init, b: Init) -> LinearIds {
        LinearIds {
            w: self.add(format!("{name}.weight"), fan_in, fan_out, w),
            b: self.add(format!("{name}.bias"), 1, fan_out, b),
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> NormIds {
        NormIds {
            gamma: self.add(format!("{name}.gamma"), 1, dim, Init::Ones),
            beta: self.add(format!("{name}.beta"), 1, dim, Init::Zeros),
        }
    }
}

/// Focal-loss prior: initial foreground probability of every class logit.
const CLASS_PRIOR: f64 = 0.01;

fn build_layout(dims: &ModelDims) -> (Layout, Builder) {
    let d = dims.dim;
    let hidden = dims.hidden_dim();
    let mut b = Builder { specs: Vec::new() };
    let patch_in = dims.in_channels * dims.base_patch * dims.base_patch;
    let g = dims.pe_grid();

    let patch_kernel = b.add("patch_embed.kernel".into(), patch_in, d, Init::Xavier);
    let patch_bias = b.add("patch_embed.bias".into(), 1, d, Init::Zeros);
    let cls_token = b.add("cls_token".into(), 1, d, Init::Normal(0.02));
    let pe_cls = b.add("pos_embed.cls".into(), 1, d, Init::Normal(0.02));
    let pe_table = b.add("pos_embed.grid".into(), g * g, d, Init::Normal(0.02));

    let encoder = dims
        .window_layout()
        .into_iter()
        .enumerate()
        .map(|(i, windowed)| {
            let n = format!("encoder.{i}");
            EncoderBlockIds {
                windowed,
                norm1: b.norm(&format!("{n}.norm1"), d),
                qkv: b.linear(&format!("{n}.qkv"), d, 3 * d),
                proj: b.linear(&format!("{n}.proj"), d, d),
                norm2: b.norm(&format!("{n}.norm2"), d),
                fc1: b.linear(&format!("{n}.fc1"), d, hidden),
                fc2: b.linear(&format!("{n}.fc2"), hidden, d),
            }
        })
        .collect();
    let encoder_norm = b.norm("encoder.norm", d);
    let projector = b.linear("projector.linear", d, d);
    let projector_norm = b.norm("projector.norm", d);
    let box_pos = b.linear("box_pos", dims.box_embed_dim(), d);

    let prior_bias = -((1.0 - CLASS_PRIOR) / CLASS_PRIOR).ln();
    let heads = (0..=dims.max_decoder_layers)
        .map(|l| {
            let n = if l == 0 {
                "head.encoder".to_string()
            } else {
                format!("head.decoder{}", l - 1)
            };
            HeadIds {
                norm: b.norm(&format!("{n}.norm"), d),
                class: b.linear_init(
                    &format!("{n}.class"),
                    d,
                    dims.num_classes,
                    Init::Xavier,
                    Init::Const(prior_bias),
                ),
                box1: b.linear(&format!("{n}.box1"), d, d),
                box2: b.linear_init(&format!("{n}.box2"), d, 4, Init::Zeros, Init::Zeros),
                mask1: b.linear(&format!("{n}.mask1"), d, d),
                mask2: b.linear(&format!("{n}.mask2"), d, dims.mask_dim),
            }
        })
        .collect();

    let decoder = (0..dims.max_decoder_layers)
        .map(|l| {
            let n = format!("decoder.{l}");
            DecoderBlockIds {
                norm1: b.norm(&format!("{n}.norm1"), d),
                self_qk: b.linear(&format!("{n}.self_qk"), d, 2 * d),
                self_v: b.linear(&format!("{n}.self_v"), d, d),
                self_out: b.linear(&format!("{n}.self_out"), d, d),
                norm2: b.norm(&format!("{n}.norm2"), d),
                cross_q: b.linear(&format!("{n}.cross_q"), d, d),
                cross_k: b.linear(&format!("{n}.cross_k"), d, d),
                cross_v: b.linear(&format!("{n}.cross_v"), d, d),
                cross_out: b.linear(&format!("{n}.cross_out"), d, d),
                norm3: b.norm(&format!("{n}.norm3"), d),
                fc1: b.linear(&format!("{n}.fc1"), d, hidden),
                fc2: b.linear(&format!("{n}.fc2"), hidden, d),
            }
        })
        .collect();

    let pixel_norm = b.norm("pixel_embed.norm", d);
    let pixel_proj = b.linear("pixel_embed.proj", d, dims.mask_dim);

    (
        Layout {
            patch_kernel,
            patch_bias,
            cls_token,
            pe_cls,
            pe_table,
            encoder,
            encoder_norm,
            projector,
            projector_norm,
            box_pos,
            heads,
            decoder,
            pixel_norm,
            pixel_proj,
        },
        b,
    )
}

/// Shared supernet parameters.
#[derive(Clone, Debug)]
pub struct ElasticWeights<T> {
    dims: ModelDims,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Matrix<T>>,
}

impl<T: Scalar> ElasticWeights<T> {
    pub fn init<R: Rng>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        dims.check()?;
        let (layout, builder) = build_layout(&dims);
        let mut names = Vec::with_capacity(builder.specs.len());
        let mut params = Vec::with_capacity(builder.specs.len());
        for (name, rows, cols, init) in builder.specs {
            let m = match init {
                Init::Zeros => Matrix::zeros(rows, cols),
                Init::Ones => Matrix::filled(rows, cols, T::one()),
                Init::Const(v) => Matrix::filled(rows, cols, c(v)),
                Init::Normal(std) => normal_matrix(rows, cols, std, rng),
                Init::Xavier => {
                    let std = (2.0 / (rows + cols) as f64).sqrt();
                    normal_matrix(rows, cols, std, rng)
                }
            };
            names.push(name);
            params.push(m);
        }
        Ok(Self {
            dims,
            layout,
            names,
            params,
        })
    }

    /// Rebuilds weights from named tensors, checking every name and shape.
    pub fn from_named(dims: ModelDims, tensors: Vec<(String, Matrix<T>)>) -> Result<Self> {
        dims.check()?;
        let (layout, builder) = build_layout(&dims);
        if tensors.len() != builder.specs.len() {
            return Err(Error::InvalidArtifact(format!(
                "expected {} tensors, found {}",
                builder.specs.len(),
                tensors.len()
            )));
        }
        let mut names = Vec::with_capacity(tensors.len());
        let mut params = Vec::with_capacity(tensors.len());
        for ((name, m), (want, rows, cols, _)) in tensors.into_iter().zip(builder.specs) {
            if name != want || m.shape() != (rows, cols) {
                return Err(Error::InvalidArtifact(format!(
                    "tensor {name} {:?} does not match expected {want} ({rows}, {cols})",
                    m.shape()
                )));
            }
            names.push(name);
            params.push(m);
        }
        Ok(Self {
            dims,
            layout,
            names,
            params,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Matrix::len).sum()
    }

    #[inline]
    pub fn get(&self, id: usize) -> &Matrix<T> {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Matrix<T> {
        &mut self.params[id]
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn params(&self) -> &[Matrix<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.params
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Matrix<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn cast<U: Scalar>(&self) -> ElasticWeights<U> {
        ElasticWeights {
            dims: self.dims.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Matrix::cast).collect(),
        }
    }

    /// Encoder block index of a parameter, for layer-wise learning-rate decay.
    /// Patch and positional embeddings sit below block 0 (`Some(-1)`); heads,
    /// projector and decoder are outside the backbone (`None`).
    pub fn backbone_depth_of(&self, id: usize) -> Option<isize> {
        let l = &self.layout;
        if [l.patch_kernel, l.patch_bias, l.cls_token, l.pe_cls, l.pe_table].contains(&id) {
            return Some(-1);
        }
        let name = &self.names[id];
        let rest = name.strip_prefix("encoder.")?;
        let idx = rest.split('.').next()?.parse::<isize>().ok()?;
        Some(idx)
    }

    /// SHA-256 over names, shapes and the `f64` image of every value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.named() {
            h.update(name.as_bytes());
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.data() {
                h.update(v.to_f64_lossy().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn normal_matrix<T: Scalar, R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Matrix<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Matrix::from_fn(rows, cols, |_, _| c(dist.sample(rng)))
}

/// Serialized form of one tensor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl<T: Scalar> ElasticWeights<T> {
    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.named()
            .map(|(name, m)| TensorRecord {
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
                data: m.data().iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect()
    }

    pub fn from_records(dims: ModelDims, records: Vec<TensorRecord>) -> Result<Self> {
        let tensors = records
            .into_iter()
            .map(|r| {
                let data = r.data.into_iter().map(T::from_f64_lossy).collect();
                Matrix::from_vec(r.rows, r.cols, data).map(|m| (r.name, m))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_named(dims, tensors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pe_table_spans_max_grid() {
        let dims = ModelDims::toy(3);
        let w = ElasticWeights::<f32>::init(dims.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = dims.max_resolution / dims.min_patch;
        assert_eq!(w.get(w.layout().pe_table).shape(), (g * g, dims.dim));
    }

    #[test]
    fn every_decoder_layer_has_its_own_heads() {
        let dims = ModelDims::toy(3);
        let w = ElasticWeights::<f32>::init(dims.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let heads = &w.layout().heads;
        assert_eq!(heads.len(), dims.max_decoder_layers + 1);
        let mut class_ids: Vec<usize> = heads.iter().map(|h| h.class.w).collect();
        class_ids.dedup();
        assert_eq!(class_ids.len(), heads.len());
    }

    #[test]
    fn records_round_trip_and_digest_is_stable() {
        let dims = ModelDims::toy(3);
        let w = ElasticWeights::<f32>::init(dims.clone(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let back = ElasticWeights::<f32>::from_records(dims, w.to_records()).unwrap();
        assert_eq!(back.params(), w.params());
        assert_eq!(back.digest(), w.digest());
    }

    #[test]
    fn backbone_depths() {
        let dims = ModelDims::toy(3);
        let w = ElasticWeights::<f32>::init(dims, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let l = w.layout();
        assert_eq!(w.backbone_depth_of(l.pe_table), Some(-1));
        assert_eq!(w.backbone_depth_of(l.encoder[2].fc1.w), Some(2));
        assert_eq!(w.backbone_depth_of(l.decoder[0].fc1.w), None);
        assert_eq!(w.backbone_depth_of(l.encoder_norm.gamma), None);
    }
}

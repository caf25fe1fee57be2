//! Instance-mask head: a stride-4 pixel embedding map dotted with per-query
//! mask embeddings.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::encoder::{linear, mlp, norm, Subnet};
use crate::model::resample::upsample_map;
use crate::model::weights::{ElasticWeights, HeadIds};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Bilinearly upsamples the encoder tokens to `resolution / 4` per side and
/// projects every pixel to the mask embedding width, `[side², E]`.
pub fn pixel_embedding<T: Scalar>(g: &mut Graph<T>, w: &ElasticWeights<T>, sub: &Subnet<T>, tokens: Var) -> Var {
    let l = w.layout();
    let cfg = &sub.config;
    let up = g.sparse(tokens, upsample_map(cfg.grid_side(), cfg.mask_side()));
    let h = norm(g, w, up, l.pixel_norm);
    linear(g, w, h, l.pixel_proj)
}

/// Mask logits `[queries, side²]` for one stage's query embeddings.
pub fn segmentation_forward<T: Scalar>(
    g: &mut Graph<T>,
    w: &ElasticWeights<T>,
    sub: &Subnet<T>,
    pixel: Var,
    head: &HeadIds,
    head_hidden: Var,
) -> Result<Var> {
    if !sub.config.mask_head_enabled {
        return Err(Error::Unsupported("mask head is disabled in this config".into()));
    }
    let q = mlp(g, w, head_hidden, head.mask1, head.mask2);
    Ok(g.matmul_nt(q, pixel))
}

/// `mask[q, p] = ⟨query_q, pixel_p⟩` on plain matrices.
pub fn mask_logits<T: Scalar>(query_embeds: &Matrix<T>, pixel_embeds: &Matrix<T>) -> Matrix<T> {
    query_embeds.matmul_nt(pixel_embeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_pixels_give_zero_logits() {
        let q = Matrix::from_fn(3, 4, |i, j| (i + j) as f64 - 1.5);
        let p = Matrix::zeros(16 * 16, 4);
        let m = mask_logits(&q, &p);
        assert_eq!(m.shape(), (3, 256));
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthogonal_queries() {
        let q = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let p = Matrix::from_fn(9, 3, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let m = mask_logits(&q, &p);
        assert!(m.row(0).iter().all(|&v| v == 1.0));
        assert!(m.row(1).iter().all(|&v| v == 0.0));
    }
}

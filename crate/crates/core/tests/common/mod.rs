#![allow(dead_code)]

use flexdet::autodiff::{Graph, Var};
use flexdet::model::forward::{forward_graph, ForwardOptions};
use flexdet::model::{ElasticWeights, ModelConfig, ModelDims};
use flexdet::raster::{Image, Mask};
use flexdet::tensor::Matrix;
use flexdet::train::loss::{trace_loss, LossWeights};
use flexdet::train::Annotations;
use flexdet::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A model small enough for finite differences: 16 px images, patch kernel
/// stored at 8 and usable down to 4.
pub fn tiny_dims() -> ModelDims {
    ModelDims {
        in_channels: 3,
        dim: 8,
        heads: 2,
        mlp_ratio: 2,
        encoder_depth: 2,
        max_decoder_layers: 2,
        max_queries: 4,
        num_classes: 2,
        base_patch: 8,
        min_patch: 4,
        max_resolution: 16,
        mask_dim: 4,
        pos_freqs: 2,
    }
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        resolution: 16,
        patch_size: 4,
        num_windows: 2,
        num_decoder_layers: 2,
        num_queries: 3,
        mask_head_enabled: true,
    }
}

pub fn weights<T: Scalar>(dims: ModelDims, seed: u64) -> ElasticWeights<T> {
    ElasticWeights::init(dims, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

pub fn random_image<T: Scalar>(side: usize, seed: u64) -> Image<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * side * side)
        .map(|_| T::from_f64_lossy(rng.random::<f64>()))
        .collect();
    Image::from_vec(3, side, side, data).unwrap()
}

/// Two rectangles on a `side × side` canvas with matching masks.
pub fn two_targets(side: usize) -> Annotations {
    let rects = [(0.1, 0.2, 0.5, 0.6), (0.55, 0.5, 0.95, 0.9)];
    let mut boxes = Vec::new();
    let mut masks = Vec::new();
    for &(x0, y0, x1, y1) in &rects {
        boxes.push([(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0]);
        let mut m = Mask::new(side, side);
        for y in 0..side {
            for x in 0..side {
                let (fx, fy) = ((x as f64 + 0.5) / side as f64, (y as f64 + 0.5) / side as f64);
                m.set(y, x, fx >= x0 && fx < x1 && fy >= y0 && fy < y1);
            }
        }
        masks.push(m);
    }
    Annotations {
        boxes,
        class_ids: vec![0, 1],
        masks: Some(masks),
    }
}

/// O(n²) reference: kept iff nothing dominates it and no lower index is an
/// exact duplicate.
pub fn frontier_oracle(p: &[(f64, f64)]) -> Vec<usize> {
    (0..p.len())
        .filter(|&i| {
            !p.iter().enumerate().any(|(j, q)| {
                let dominates = q.0 <= p[i].0 && q.1 >= p[i].1 && (q.0 < p[i].0 || q.1 > p[i].1);
                dominates || (j < i && *q == p[i])
            })
        })
        .collect()
}

/// Loss of the tiny model at `w` on a fixed image and two targets. With
/// `replay`, value-derived constants (detached reference boxes) are pinned
/// to a base point so the function is exactly the one the tape records.
fn tiny_loss(w: &ElasticWeights<f64>, replay: Option<Vec<Matrix<f64>>>) -> (f64, Graph<f64>, Var) {
    let mut g = match replay {
        Some(v) => Graph::replaying(v),
        None => Graph::new(),
    };
    let img = random_image(16, 7);
    let trace = forward_graph(&mut g, w, &tiny_config(), &img, ForwardOptions::training()).unwrap();
    let (total, _) = trace_loss(&mut g, &trace, &two_targets(16), &LossWeights::default());
    (g.value(total).get(0, 0), g, total)
}

/// Compares tape gradients of the full training loss with central
/// differences over every scalar of a float64 tiny model. Returns the
/// number of scalars, the worst relative error and where it occurred.
pub fn gradient_check() -> (usize, f64, String) {
    let w = weights::<f64>(tiny_dims(), 3);
    let (_, g, total) = tiny_loss(&w, None);
    let base = g.constant_values();
    let grads = g.backward(total);

    // Central differences carry ~1e-9 of roundoff, so gradients below 1e-4
    // are compared in absolute terms.
    let eps = 1e-6;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for id in 0..w.len() {
        for k in 0..w.params()[id].len() {
            let mut wp = w.clone();
            wp.get_mut(id).data_mut()[k] += eps;
            let mut wm = w.clone();
            wm.get_mut(id).data_mut()[k] -= eps;
            let numeric = (tiny_loss(&wp, Some(base.clone())).0 - tiny_loss(&wm, Some(base.clone())).0) / (2.0 * eps);
            let analytic = grads.get(&id).map_or(0.0, |g| g.data()[k]);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
            if rel > worst.0 {
                worst = (
                    rel,
                    format!("{}[{k}]: tape {analytic:e}, numeric {numeric:e}", w.name(id)),
                );
            }
            checked += 1;
        }
    }
    (checked, worst.0, worst.1)
}

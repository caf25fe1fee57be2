use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::weights::ElasticWeights;
use crate::scalar::{c, Scalar};
use crate::tensor::Matrix;

/// Adam with decoupled weight decay. Moments and step counts are kept per
/// parameter so tensors skipped by a sub-net keep their bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    steps: Vec<u64>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &[Matrix<T>], weight_decay: f64) -> Self {
        let zeros = || params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros(),
            v: zeros(),
            steps: vec![0; params.len()],
        }
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    /// Updates every parameter that has a gradient with rate `lrs[id]`.
    /// Weight decay applies to matrices only, not to biases or norm scales.
    pub fn step(&mut self, params: &mut [Matrix<T>], grads: &HashMap<usize, Matrix<T>>, lrs: &[f64]) {
        let (b1, b2) = (self.beta1, self.beta2);
        for (&id, grad) in grads {
            let p = &mut params[id];
            self.steps[id] += 1;
            let t = self.steps[id] as i32;
            let bc1 = 1.0 - b1.powi(t);
            let bc2 = 1.0 - b2.powi(t);
            let lr = lrs[id];
            let decay = if p.rows() > 1 && p.cols() > 1 {
                self.weight_decay
            } else {
                0.0
            };
            let (m, v) = (&mut self.m[id], &mut self.v[id]);
            for k in 0..p.len() {
                let gk = grad.data()[k].to_f64_lossy();
                let mk = b1 * m.data()[k].to_f64_lossy() + (1.0 - b1) * gk;
                let vk = b2 * v.data()[k].to_f64_lossy() + (1.0 - b2) * gk * gk;
                m.data_mut()[k] = c(mk);
                v.data_mut()[k] = c(vk);
                let mut x = p.data()[k].to_f64_lossy();
                x -= lr * decay * x;
                x -= lr * (mk / bc1) / ((vk / bc2).sqrt() + self.eps);
                p.data_mut()[k] = c(x);
            }
        }
    }
}

/// Global L2 norm over all gradients, summed in id order.
pub fn global_norm<T: Scalar>(grads: &HashMap<usize, Matrix<T>>) -> f64 {
    let mut ids: Vec<&usize> = grads.keys().collect();
    ids.sort_unstable();
    ids.iter()
        .map(|id| grads[id].data().iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut HashMap<usize, Matrix<T>>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = c::<T>(max_norm / norm);
        for g in grads.values_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

/// Learning-rate multipliers for backbone blocks, bottom to top:
/// `decay^(depth − 1 − i)`.
pub fn layer_decay_multipliers(depth: usize, decay: f64) -> Vec<f64> {
    (0..depth).map(|i| decay.powi((depth - 1 - i) as i32)).collect()
}

/// Per-parameter multiplier: backbone block `i` gets `decay^(L−1−i)`, the
/// patch and position embeddings sit one level below block 0, and everything
/// outside the backbone trains at the base rate.
pub fn param_lr_multipliers<T: Scalar>(w: &ElasticWeights<T>, decay: f64) -> Vec<f64> {
    let depth = w.dims().encoder_depth as i32;
    (0..w.len())
        .map(|id| match w.backbone_depth_of(id) {
            Some(d) => decay.powi(depth - 1 - d as i32),
            None => 1.0,
        })
        .collect()
}

/// `e ← decay·e + (1 − decay)·p`, elementwise over every tensor.
pub fn ema_update<T: Scalar>(ema: &mut [Matrix<T>], params: &[Matrix<T>], decay: f64) -> Result<()> {
    if ema.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "ema holds {} tensors, params {}",
            ema.len(),
            params.len()
        )));
    }
    for (i, (e, p)) in ema.iter().zip(params).enumerate() {
        if e.shape() != p.shape() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {i}: ema {:?} vs param {:?}",
                e.shape(),
                p.shape()
            )));
        }
    }
    let (a, b) = (c::<T>(decay), c::<T>(1.0 - decay));
    for (e, p) in ema.iter_mut().zip(params) {
        for (x, &y) in e.data_mut().iter_mut().zip(p.data()) {
            *x = a * *x + b * y;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_scales_to_max_norm() {
        // Norm 0.5 clipped to 0.1 scales everything by 0.2.
        let mut grads = HashMap::new();
        grads.insert(0, Matrix::from_vec(1, 2, vec![0.3f64, 0.4]).unwrap());
        let before = clip_grad_norm(&mut grads, 0.1);
        assert!((before - 0.5).abs() < 1e-12);
        assert!((grads[&0].get(0, 0) - 0.06).abs() < 1e-12);
        assert!((grads[&0].get(0, 1) - 0.08).abs() < 1e-12);
    }

    #[test]
    fn small_gradients_untouched() {
        let mut grads = HashMap::new();
        grads.insert(3, Matrix::from_vec(1, 1, vec![0.05]).unwrap());
        clip_grad_norm(&mut grads, 0.1);
        assert_eq!(grads[&3].get(0, 0), 0.05);
    }

    #[test]
    fn three_layer_decay() {
        let m = layer_decay_multipliers(3, 0.8);
        assert!((m[0] - 0.64).abs() < 1e-12);
        assert!((m[1] - 0.8).abs() < 1e-12);
        assert_eq!(m[2], 1.0);
    }

    #[test]
    fn ema_formula() {
        let p = vec![Matrix::filled(1, 1, 1.0f64)];
        let mut e = vec![Matrix::filled(1, 1, 0.0)];
        ema_update(&mut e, &p, 0.9).unwrap();
        assert!((e[0].get(0, 0) - 0.1).abs() < 1e-12);

        let mut e = vec![Matrix::filled(1, 1, 0.3)];
        ema_update(&mut e, &p, 0.0).unwrap();
        assert_eq!(e[0].get(0, 0), 1.0);
        let mut e = vec![Matrix::filled(1, 1, 0.3)];
        ema_update(&mut e, &p, 1.0).unwrap();
        assert_eq!(e[0].get(0, 0), 0.3);

        let mut e = vec![Matrix::filled(2, 1, 0.3)];
        assert!(ema_update(&mut e, &p, 0.5).is_err());
    }

    #[test]
    fn ema_converges_geometrically() {
        let p = vec![Matrix::filled(1, 3, 2.0)];
        let mut e = vec![Matrix::filled(1, 3, 0.0)];
        let mut gap = 2.0;
        for _ in 0..20 {
            ema_update(&mut e, &p, 0.7).unwrap();
            let next = (e[0].get(0, 0) - 2.0f64).abs();
            assert!((next - 0.7 * gap).abs() < 1e-12);
            gap = next;
        }
    }

    #[test]
    fn adamw_skips_params_without_grad() {
        let mut params = vec![Matrix::filled(2, 2, 1.0f64), Matrix::filled(1, 2, 1.0)];
        let mut opt = AdamW::new(&params, 0.0);
        let mut grads = HashMap::new();
        grads.insert(1, Matrix::filled(1, 2, 0.5));
        opt.step(&mut params, &grads, &[1e-2, 1e-2]);
        assert_eq!(params[0], Matrix::filled(2, 2, 1.0));
        assert_eq!(opt.steps(), &[0, 1]);
        // First Adam step moves by lr in the direction opposite the gradient.
        assert!((params[1].get(0, 0) - (1.0 - 1e-2)).abs() < 1e-9);
    }
}

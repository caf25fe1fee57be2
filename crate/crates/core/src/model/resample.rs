//! Patch-kernel resampling and bilinear interpolation maps.
//!
//! The patch kernel is stored at the base patch size `p0` and mapped to any
//! other patch size with the pseudo-inverse of the bilinear patch-resize
//! operator: for the resize `B: R^{p0²} → R^{p²}` the resampled kernel is
//! `pinv(Bᵀ) · w`, the least-squares solution of `⟨ŵ, Bx⟩ = ⟨w, x⟩`. When
//! `p ≥ p0` the identity holds exactly for every patch `x`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use crate::tensor::{Matrix, SparseRows};

/// 1-D bilinear resize taps with half-pixel centres (no corner alignment).
/// Returns, for every output sample, up to two `(source index, weight)` pairs.
pub fn half_pixel_taps(from: usize, to: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = from as f64 / to as f64;
    (0..to)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (from - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(from - 1);
            let f = src - i0 as f64;
            if i1 == i0 || f == 0.0 {
                vec![(i0, 1.0)]
            } else {
                vec![(i0, 1.0 - f), (i1, f)]
            }
        })
        .collect()
}

/// 1-D bilinear taps with aligned corners. A single output sample reads the
/// centre of the source range.
pub fn align_corner_taps(from: usize, to: usize) -> Vec<Vec<(usize, f64)>> {
    (0..to)
        .map(|i| {
            let src = if to == 1 {
                (from - 1) as f64 / 2.0
            } else {
                i as f64 * (from - 1) as f64 / (to - 1) as f64
            };
            let i0 = (src.floor() as usize).min(from - 1);
            let i1 = (i0 + 1).min(from - 1);
            let f = src - i0 as f64;
            if i1 == i0 || f == 0.0 {
                vec![(i0, 1.0)]
            } else {
                vec![(i0, 1.0 - f), (i1, f)]
            }
        })
        .collect()
}

/// Separable 2-D map over row-major `from × from` grids built from 1-D taps.
pub fn grid_map<T: Scalar>(taps: &[Vec<(usize, f64)>], from: usize) -> SparseRows<T> {
    let to = taps.len();
    let mut rows = Vec::with_capacity(to * to);
    for ty in taps {
        for tx in taps {
            let mut r = Vec::with_capacity(ty.len() * tx.len());
            for &(y, wy) in ty {
                for &(x, wx) in tx {
                    r.push((y * from + x, c::<T>(wy * wx)));
                }
            }
            rows.push(r);
        }
    }
    SparseRows::new(from * from, rows)
}

/// Dense 1-D bilinear patch-resize matrix `[to, from]`.
pub fn bilinear_resize_matrix(from: usize, to: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(to, from);
    for (i, taps) in half_pixel_taps(from, to).into_iter().enumerate() {
        for (j, w) in taps {
            m[(i, j)] += w;
        }
    }
    m
}

fn check_patch(p: usize) -> Result<()> {
    if p < 2 {
        return Err(Error::InvalidConfig(format!("patch size {p} must be at least 2")));
    }
    Ok(())
}

/// Dense PI-resize operator `[p_to², p_from²]` on row-major patches.
pub fn pi_resize_matrix(p_from: usize, p_to: usize) -> Result<Matrix<f64>> {
    check_patch(p_from)?;
    check_patch(p_to)?;
    if p_from == p_to {
        let n = p_from * p_from;
        return Ok(Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 }));
    }
    // The 2-D resize is the Kronecker square of the 1-D one, and so is its
    // pseudo-inverse.
    let b = bilinear_resize_matrix(p_from, p_to);
    let p1 = b
        .transpose()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidConfig(format!("pseudo-inverse failed: {e}")))?;
    let (to, from) = (p_to, p_from);
    Ok(Matrix::from_fn(to * to, from * from, |r, col| {
        let (ry, rx) = (r / to, r % to);
        let (cy, cx) = (col / from, col % from);
        p1[(ry, cy)] * p1[(rx, cx)]
    }))
}

/// Resamples a patch kernel laid out as `[channels · p_from², out_dim]`
/// (row index `c·p² + y·p + x`) to `[channels · p_to², out_dim]`.
pub fn resample_patch_kernel<T: Scalar>(
    kernel: &Matrix<T>,
    channels: usize,
    p_from: usize,
    p_to: usize,
) -> Result<Matrix<T>> {
    check_patch(p_from)?;
    check_patch(p_to)?;
    let n_from = p_from * p_from;
    if kernel.rows() != channels * n_from {
        return Err(Error::ShapeMismatch(format!(
            "kernel has {} rows, expected {channels}·{p_from}²",
            kernel.rows()
        )));
    }
    if p_from == p_to {
        return Ok(kernel.clone());
    }
    let map: Matrix<T> = pi_resize_matrix(p_from, p_to)?.cast();
    let parts: Vec<Matrix<T>> = (0..channels)
        .map(|ch| map.matmul(&kernel.slice_rows(ch * n_from, n_from)))
        .collect();
    let refs: Vec<&Matrix<T>> = parts.iter().collect();
    Ok(Matrix::vstack(&refs))
}

/// Row-sparse bilinear upsampling of a `from × from` token grid to `to × to`.
pub fn upsample_map<T: Scalar>(from: usize, to: usize) -> Arc<SparseRows<T>> {
    Arc::new(grid_map(&half_pixel_taps(from, to), from))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_sizes_match() {
        let k = Matrix::from_fn(3 * 16 * 16, 5, |i, j| (i * 5 + j) as f32 * 0.01);
        assert_eq!(resample_patch_kernel(&k, 3, 16, 16).unwrap(), k);
    }

    #[test]
    fn downsampled_shape() {
        let k = Matrix::from_fn(4 * 16 * 16, 7, |i, j| ((i + j) % 5) as f64);
        let r = resample_patch_kernel(&k, 4, 16, 12).unwrap();
        assert_eq!(r.shape(), (4 * 12 * 12, 7));
    }

    #[test]
    fn rejects_degenerate_patch() {
        let k = Matrix::<f32>::zeros(3, 1);
        assert!(matches!(
            resample_patch_kernel(&k, 3, 1, 4),
            Err(Error::InvalidConfig(_))
        ));
        assert!(pi_resize_matrix(8, 0).is_err());
    }

    #[test]
    fn taps_sum_to_one() {
        for (a, b) in [(8, 16), (16, 12), (3, 7), (5, 1)] {
            for t in half_pixel_taps(a, b).iter().chain(align_corner_taps(a, b).iter()) {
                let s: f64 = t.iter().map(|x| x.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}

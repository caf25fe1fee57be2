use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::resample::{align_corner_taps, grid_map};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, SparseRows};

/// Align-corners bilinear map from a `g_max × g_max` table to `target × target`.
pub fn position_map<T: Scalar>(g_max: usize, target: usize) -> Result<Arc<SparseRows<T>>> {
    if target == 0 || target > g_max {
        return Err(Error::InvalidConfig(format!(
            "positional grid {target} outside 1..={g_max}"
        )));
    }
    Ok(Arc::new(grid_map(&align_corner_taps(g_max, target), g_max)))
}

/// Interpolates the spatial positional table (row-major, `g_max²` rows) to a
/// `target²`-row table. The class-token embedding is stored separately and
/// is never resampled.
pub fn interpolate_position_grid<T: Scalar>(pe_table: &Matrix<T>, g_max: usize, target: usize) -> Result<Matrix<T>> {
    if pe_table.rows() != g_max * g_max {
        return Err(Error::ShapeMismatch(format!(
            "positional table has {} rows, expected {}",
            pe_table.rows(),
            g_max * g_max
        )));
    }
    if target == g_max {
        return Ok(pe_table.clone());
    }
    Ok(position_map(g_max, target)?.apply(pe_table))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_at_full_grid() {
        let pe = Matrix::from_fn(16, 3, |i, j| (i * 3 + j) as f32 * 0.37);
        assert_eq!(interpolate_position_grid(&pe, 4, 4).unwrap(), pe);
        // The sparse path at full size is also exact.
        assert_eq!(position_map::<f32>(4, 4).unwrap().apply(&pe), pe);
    }

    #[test]
    fn single_cell_reads_grid_centre() {
        // [[a, b], [c, d]] sampled at the centre is the plain average.
        let (a, b, cc, d) = (1.0, 2.0, 4.0, 8.0);
        let pe = Matrix::from_rows(&[vec![a], vec![b], vec![cc], vec![d]]).unwrap();
        let out = interpolate_position_grid(&pe, 2, 1).unwrap();
        assert_eq!(out.get(0, 0), (a + b + cc + d) / 4.0);
    }

    #[test]
    fn affine_ramp_stays_affine() {
        let (g, t) = (4usize, 3usize);
        let pe = Matrix::from_fn(g * g, 2, |i, j| {
            let (y, x) = ((i / g) as f64, (i % g) as f64);
            if j == 0 {
                2.0 * x - y + 0.5
            } else {
                0.25 * y
            }
        });
        let out = interpolate_position_grid(&pe, g, t).unwrap();
        let s = (g - 1) as f64 / (t - 1) as f64;
        for i in 0..t * t {
            let (y, x) = ((i / t) as f64 * s, (i % t) as f64 * s);
            assert!((out.get(i, 0) - (2.0 * x - y + 0.5)).abs() < 1e-12);
            assert!((out.get(i, 1) - 0.25 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_oversized_target() {
        let pe = Matrix::<f32>::zeros(4, 1);
        assert!(matches!(
            interpolate_position_grid(&pe, 2, 3),
            Err(Error::InvalidConfig(_))
        ));
    }
}

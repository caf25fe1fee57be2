//! Window partitioning of a class-token-prefixed token sequence.
//!
//! Spatial tokens are stored row-major over a `grid × grid` layout. A
//! partition into `k` windows per side produces `k²` groups; each group gets
//! its own copy of the class token followed by the tokens of one contiguous
//! tile, also row-major. Merging averages the class-token copies.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Spatial token indices of each tile, tiles ordered row-major.
pub fn window_tiles(grid: usize, num_windows: usize) -> Result<Vec<Vec<usize>>> {
    if num_windows == 0 || !grid.is_multiple_of(num_windows) {
        return Err(Error::InvalidConfig(format!(
            "grid {grid} is not divisible into {num_windows} windows per side"
        )));
    }
    let side = grid / num_windows;
    let mut tiles = Vec::with_capacity(num_windows * num_windows);
    for wy in 0..num_windows {
        for wx in 0..num_windows {
            let mut t = Vec::with_capacity(side * side);
            for y in 0..side {
                for x in 0..side {
                    t.push((wy * side + y) * grid + wx * side + x);
                }
            }
            tiles.push(t);
        }
    }
    Ok(tiles)
}

fn grid_of(rows: usize) -> Result<usize> {
    let t = rows.saturating_sub(1);
    let g = (t as f64).sqrt().round() as usize;
    if rows == 0 || g * g != t {
        return Err(Error::ShapeMismatch(format!(
            "{rows} rows is not one class token plus a square grid"
        )));
    }
    Ok(g)
}

/// Splits `[1 + T, D]` tokens into `num_windows²` groups of `[1 + T/num_windows², D]`.
pub fn window_partition<T: Scalar>(tokens: &Matrix<T>, num_windows: usize) -> Result<Vec<Matrix<T>>> {
    let grid = grid_of(tokens.rows())?;
    let tiles = window_tiles(grid, num_windows)?;
    Ok(tiles
        .iter()
        .map(|tile| {
            let mut idx = Vec::with_capacity(tile.len() + 1);
            idx.push(0);
            idx.extend(tile.iter().map(|&t| t + 1));
            tokens.select_rows(&idx)
        })
        .collect())
}

/// Inverse of [`window_partition`]: restores raster order and replaces the
/// class-token copies by their mean.
pub fn window_merge<T: Scalar>(groups: &[Matrix<T>], num_windows: usize) -> Result<Matrix<T>> {
    if groups.len() != num_windows * num_windows || groups.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} groups for {num_windows} windows per side",
            groups.len()
        )));
    }
    let per = groups[0].rows() - 1;
    let total = per * groups.len();
    let grid = grid_of(total + 1)?;
    let tiles = window_tiles(grid, num_windows)?;
    let dim = groups[0].cols();
    let mut out = Matrix::zeros(total + 1, dim);
    let inv = T::one() / T::from_usize(groups.len()).unwrap();
    for (g, tile) in groups.iter().zip(&tiles) {
        if g.rows() != per + 1 || g.cols() != dim {
            return Err(Error::ShapeMismatch("uneven window groups".into()));
        }
        for (o, &v) in out.row_mut(0).iter_mut().zip(g.row(0)) {
            *o += v * inv;
        }
        for (k, &t) in tile.iter().enumerate() {
            out.row_mut(t + 1).copy_from_slice(g.row(k + 1));
        }
    }
    Ok(out)
}

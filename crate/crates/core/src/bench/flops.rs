use crate::error::Result;
use crate::model::{ModelConfig, ModelDims};

/// `2·t·m·n` for a linear map of `t` rows from `m` to `n` features.
pub fn linear_flops(t: usize, m: usize, n: usize) -> u64 {
    2 * (t * m * n) as u64
}

/// Score and mixing products of attention: `4·q·k·d` for `q` queries over
/// `k` keys of width `d`.
pub fn attention_core_flops(q: usize, k: usize, d: usize) -> u64 {
    4 * (q * k * d) as u64
}

/// Analytic multiply-add count of one inference forward pass of `config`.
///
/// Counts every matrix product executed after the sub-net is derived:
/// linear layers at `2·t·m·n`, attention at `4·t²·d` globally and
/// `4·w·(1 + t/w)²·d` for `w` windows (each window attends over its own
/// class-token copy and tiles). Normalization, activations and the sparse
/// upsampling of the mask branch are free.
pub fn estimate_flops(config: &ModelConfig, dims: &ModelDims) -> Result<u64> {
    config.check_shape()?;
    let d = dims.dim;
    let hidden = dims.hidden_dim();
    let classes = dims.num_classes;
    let t = config.num_tokens();
    let k = config.num_queries;
    let copies = config.window_count();
    let n = copies + t;
    let p = config.patch_size;

    let mut f = linear_flops(t, dims.in_channels * p * p, d);
    for windowed in dims.window_layout() {
        f += linear_flops(n, d, 3 * d) + linear_flops(n, d, d);
        f += if windowed && copies > 1 {
            let group = 1 + t / copies;
            copies as u64 * attention_core_flops(group, group, d)
        } else {
            attention_core_flops(n, n, d)
        };
        f += linear_flops(n, d, hidden) + linear_flops(n, hidden, d);
    }

    let heads = |rows: usize| linear_flops(rows, d, classes) + linear_flops(rows, d, d) + linear_flops(rows, d, 4);
    f += linear_flops(t, d, d);
    f += heads(t);

    for _ in 0..config.num_decoder_layers {
        f += linear_flops(k, dims.box_embed_dim(), d);
        f += linear_flops(k, d, 2 * d) + linear_flops(k, d, d);
        f += attention_core_flops(k, k, d);
        f += linear_flops(k, d, d);
        f += linear_flops(k, d, d) + 2 * linear_flops(t, d, d);
        f += attention_core_flops(k, t, d);
        f += linear_flops(k, d, d);
        f += linear_flops(k, d, hidden) + linear_flops(k, hidden, d);
        f += heads(k);
    }

    if config.mask_head_enabled {
        let pixels = config.mask_side() * config.mask_side();
        f += linear_flops(pixels, d, dims.mask_dim);
        f += linear_flops(k, d, d) + linear_flops(k, d, dims.mask_dim);
        f += linear_flops(k, dims.mask_dim, pixels);
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_linear() {
        assert_eq!(linear_flops(4, 8, 8), 512);
    }

    #[test]
    fn quadratic_term_scales_by_sixteen() {
        assert_eq!(attention_core_flops(64, 64, 32), 16 * attention_core_flops(16, 16, 32));
    }
}

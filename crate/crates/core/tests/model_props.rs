mod common;

use flexdet::autodiff::Graph;
use flexdet::bench::flops::estimate_flops;
use flexdet::model::forward::{forward_graph, ForwardOptions};
use flexdet::model::resample::bilinear_resize_matrix;
use flexdet::model::{encoder_forward, model_forward, model_forward_counted, resample_patch_kernel, EncoderMode};
use flexdet::nas::{enumerate_space, SearchSpace};
use flexdet::tensor::Matrix;
use flexdet::{ModelConfig, ModelDims};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_image, tiny_config, tiny_dims, weights};

fn toy_config(resolution: usize, patch: usize, windows: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        resolution,
        patch_size: patch,
        num_windows: windows,
        num_decoder_layers: layers,
        num_queries: 12,
        mask_head_enabled: true,
    }
}

#[test]
fn truncated_decoder_reproduces_every_prefix() {
    let dims = ModelDims::toy(3);
    let w = weights::<f32>(dims.clone(), 11);
    let img = random_image::<f32>(96, 1);
    for (res, patch, win) in [(96, 8, 2), (64, 16, 1)] {
        let full_cfg = toy_config(res, patch, win, dims.max_decoder_layers);
        let img = img.resize(res, res);
        let full = &model_forward(std::slice::from_ref(&img), &full_cfg, &w).unwrap()[0];
        // Every stage's mask from a training-mode pass of the full decoder.
        let mut g = Graph::inference();
        let opts = ForwardOptions {
            training: true,
            ..ForwardOptions::inference()
        };
        let trace = forward_graph(&mut g, &w, &full_cfg, &img, opts).unwrap();
        for k in 0..=dims.max_decoder_layers {
            let cfg = toy_config(res, patch, win, k);
            let out = &model_forward(std::slice::from_ref(&img), &cfg, &w).unwrap()[0];
            assert_eq!(out.num_decoder_layers(), k);
            assert_eq!(out.per_layer_boxes[..], full.per_layer_boxes[..=k], "boxes, k = {k}");
            assert_eq!(out.per_layer_logits[..], full.per_layer_logits[..=k], "logits, k = {k}");
            if k > 0 {
                let aux = g.value(trace.stages[k].masks.unwrap());
                assert_eq!(out.masks.as_ref().unwrap(), aux, "masks, k = {k}");
            }
        }
    }
}

#[test]
fn pi_resize_preserves_inner_products() {
    let up = bilinear_resize_matrix(8, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let kernel = Matrix::from_fn(64, 1, |_, _| rng.random_range(-1.0..1.0));
        let patch: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let resized = resample_patch_kernel(&kernel, 1, 8, 16).unwrap();
        // Bilinear 8→16 resize of the patch, separable over rows and columns.
        let big: Vec<f64> = (0..256)
            .map(|r| {
                let (y, x) = (r / 16, r % 16);
                (0..64).map(|s| up[(y, s / 8)] * up[(x, s % 8)] * patch[s]).sum()
            })
            .collect();
        let before: f64 = (0..64).map(|i| kernel.get(i, 0) * patch[i]).sum();
        let after: f64 = (0..256).map(|i| resized.get(i, 0) * big[i]).sum();
        let rel = (before - after).abs() / before.abs().max(1e-12);
        assert!(rel <= 1e-5, "{before} vs {after}");
    }
}

#[test]
fn single_window_equals_all_global() {
    let dims = ModelDims::toy(3);
    for seed in 0..4 {
        let w = weights::<f32>(dims.clone(), seed);
        for (res, patch) in [(96, 8), (64, 16), (96, 16)] {
            let img = random_image::<f32>(res, seed + 100);
            let cfg = toy_config(res, patch, 1, 1);
            let a = &encoder_forward(std::slice::from_ref(&img), &cfg, &w, EncoderMode::Elastic).unwrap()[0];
            let b = &encoder_forward(std::slice::from_ref(&img), &cfg, &w, EncoderMode::AllGlobal).unwrap()[0];
            for (x, y) in [(&a.tokens, &b.tokens), (&a.cls, &b.cls)] {
                for (p, q) in x.data().iter().zip(y.data()) {
                    assert!((p - q).abs() <= 1e-5 * p.abs().max(q.abs()).max(1.0), "{p} vs {q}");
                }
            }
            // More than one window really changes the computation.
            let cfg2 = toy_config(res, patch, 2, 1);
            let c = &encoder_forward(&[img], &cfg2, &w, EncoderMode::Elastic).unwrap()[0];
            assert_ne!(c.tokens, b.tokens);
        }
    }
}

#[test]
fn mask_side_is_a_quarter_of_resolution() {
    let dims = ModelDims::toy(3);
    let w = weights::<f32>(dims, 2);
    let space = SearchSpace {
        resolutions: vec![32, 64, 96],
        patch_sizes: vec![8, 16],
        window_counts: vec![1, 2],
        decoder_depths: vec![0, 3],
        query_counts: vec![4],
        mask_head: true,
    };
    for cfg in enumerate_space(&space).unwrap() {
        let out = &model_forward(&[random_image::<f32>(cfg.resolution, 0)], &cfg, &w).unwrap()[0];
        let side = cfg.resolution / 4;
        assert_eq!(out.mask_side, side);
        let m = out.masks.as_ref().unwrap();
        assert_eq!(m.shape(), (cfg.num_queries, side * side), "{cfg:?}");
    }
}

#[test]
fn flops_estimate_matches_counted_forward() {
    let dims = ModelDims::toy(3);
    let w = weights::<f32>(dims.clone(), 4);
    let configs = [
        toy_config(96, 8, 2, 3),
        toy_config(96, 16, 1, 0),
        toy_config(64, 8, 2, 1),
        toy_config(64, 16, 2, 2),
        ModelConfig {
            mask_head_enabled: false,
            num_queries: 5,
            ..toy_config(32, 8, 1, 2)
        },
    ];
    for cfg in configs {
        let (_, counted) = model_forward_counted(&random_image::<f32>(cfg.resolution, 3), &cfg, &w).unwrap();
        let est = estimate_flops(&cfg, &dims).unwrap();
        assert_eq!(est, counted, "{cfg:?}");
    }
    let tiny = tiny_config();
    let (_, counted) = model_forward_counted(&random_image::<f32>(16, 0), &tiny, &weights(tiny_dims(), 0)).unwrap();
    assert_eq!(estimate_flops(&tiny, &tiny_dims()).unwrap(), counted);
}

use std::path::PathBuf;

use anyhow::{bail, Result};
use flexdet::bench::{measure_latency, BenchProtocol};
use flexdet::eval::{evaluate_config, IouKind};
use flexdet::model::model_forward;
use flexdet::nas::{grid_search, FlopsProxy, LatencySource, SearchSpace};
use flexdet::raster::Image;
use flexdet::train::{train, TrainState, TrainerConfig};
use flexdet::{ElasticWeights, ModelConfig};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::plot::plot_frontier;
use crate::util::{load_artifact, load_dataset, Iou};
use crate::{Context, Outcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
pub enum Latency {
    /// Estimated FLOPs divided by `--flops-per-ms`.
    Flops,
    /// Wall-clock timing under the buffered protocol.
    Measured,
}

#[derive(clap::Args, Debug, Serialize)]
pub struct Args {
    #[arg(long)]
    pub artifact: PathBuf,
    /// Search space TOML.
    #[arg(long)]
    pub space: PathBuf,
    /// Held-out dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = Iou::Box)]
    pub iou: Iou,
    #[arg(long, value_enum, default_value_t = Latency::Flops)]
    pub latency: Latency,
    #[arg(long, default_value_t = 1e6)]
    pub flops_per_ms: f64,
    #[arg(long, default_value_t = 200.0)]
    pub buffer_ms: f64,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// Fine-tune each config on `--fine-tune-data` for this many steps before
    /// scoring it; 0 scores the shared weights as they are.
    #[arg(long, default_value_t = 0)]
    pub fine_tune_steps: u64,
    #[arg(long)]
    pub fine_tune_data: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub fine_tune_lr: f64,
    #[arg(long, default_value_t = 8)]
    pub fine_tune_batch: usize,
}

/// The space holding only `c`.
fn single(c: &ModelConfig) -> SearchSpace {
    SearchSpace {
        resolutions: vec![c.resolution],
        patch_sizes: vec![c.patch_size],
        window_counts: vec![c.num_windows],
        decoder_depths: vec![c.num_decoder_layers],
        query_counts: vec![c.num_queries],
        mask_head: c.mask_head_enabled,
    }
}

/// Times inference on one fixed image.
struct Measured {
    image: Image<f32>,
    protocol: BenchProtocol,
}

impl LatencySource<f32> for Measured {
    fn latency_ms(&mut self, w: &ElasticWeights<f32>, config: &ModelConfig) -> flexdet::Result<f64> {
        let input = [self.image.resize(config.resolution, config.resolution)];
        let r = measure_latency(
            || model_forward(&input, config, w).map(|_| ()).map_err(|e| e.to_string()),
            &self.protocol,
        )?;
        Ok(r.stats.mean_ms)
    }
}

pub fn run(ctx: &Context, args: Args) -> Result<Outcome> {
    let (artifact, digest) = load_artifact(&args.artifact)?;
    let space = SearchSpace::load(&args.space)?;
    let ds = load_dataset(&args.dataset)?;
    if let Some(trained) = &artifact.space {
        if !space.is_subset_of(trained) {
            eprintln!("warning: the search space reaches outside the space the weights were trained on");
        }
    }
    let weights = artifact.weights::<f32>()?;
    let kind = IouKind::from(args.iou);

    let mut latency: Box<dyn LatencySource<f32>> = match args.latency {
        Latency::Flops => {
            if args.flops_per_ms.is_nan() || args.flops_per_ms <= 0.0 {
                bail!("--flops-per-ms must be positive");
            }
            Box::new(FlopsProxy {
                flops_per_ms: args.flops_per_ms,
            })
        }
        Latency::Measured => {
            let protocol = BenchProtocol {
                buffer_ms: args.buffer_ms,
                warmup_iters: args.warmup,
                measure_iters: args.iters,
            };
            protocol.validate()?;
            Box::new(Measured {
                image: ds.images[0].image()?,
                protocol,
            })
        }
    };
    let fine_tune = match (args.fine_tune_steps, &args.fine_tune_data) {
        (0, _) => None,
        (_, None) => bail!("--fine-tune-steps needs --fine-tune-data"),
        (steps, Some(dir)) => {
            let cfg = TrainerConfig {
                base_lr: args.fine_tune_lr,
                batch_size: args.fine_tune_batch,
                steps,
                ..TrainerConfig::default()
            };
            cfg.validate()?;
            Some((cfg, load_dataset(dir)?))
        }
    };
    let seed = ctx.seed;
    let mut evaluator = |w: &ElasticWeights<f32>, c: &ModelConfig| {
        let c = ModelConfig {
            mask_head_enabled: c.mask_head_enabled || kind == IouKind::Mask,
            ..*c
        };
        let tuned;
        let w = match &fine_tune {
            None => w,
            Some((cfg, data)) => {
                let samples = data.train_samples::<f32>(c.mask_head_enabled)?;
                let mut state = TrainState::new(w.clone(), cfg.weight_decay, seed);
                train(&mut state, &samples, &single(&c), cfg, |_, _| Ok(()))?;
                tuned = state.weights;
                &tuned
            }
        };
        let r = evaluate_config(w, &c, &ds, kind)?;
        eprintln!("{c:?}: ap {:.4} ap50 {:.4}", r.ap, r.ap50);
        Ok(r.ap)
    };
    let report = grid_search(&weights, &space, latency.as_mut(), &mut evaluator)?;

    let json = ctx.out_dir.join("pareto.json");
    let csv = ctx.out_dir.join("pareto.csv");
    let svg = ctx.out_dir.join("pareto.svg");
    report.write_json(&json)?;
    report.write_csv(&csv)?;
    plot_frontier(&report, &svg)?;

    let mut m = RunManifest::new(ctx, "search", (&args, &space))?;
    m.inputs.insert("artifact".into(), digest);
    m.input("space", &args.space)?;
    m.input("dataset", &args.dataset)?;
    if let Some(dir) = args.fine_tune_data.as_ref().filter(|_| args.fine_tune_steps > 0) {
        m.input("fine_tune_data", dir)?;
    }
    for p in [&json, &csv, &svg] {
        m.output(&ctx.out_dir, p)?;
    }
    m.write(&ctx.out_dir)?;

    let failed = report.num_failed();
    println!(
        "{} configs, {} on the frontier, {failed} failed; report in {}",
        report.points.len(),
        report.frontier.len(),
        json.display()
    );
    for p in &report.points {
        if let Some(e) = &p.error {
            eprintln!("failed {:?}: {e}", p.config);
        }
    }
    if failed == report.points.len() {
        bail!("every config failed");
    }
    Ok(if failed > 0 {
        Outcome::Partial
    } else {
        Outcome::Complete
    })
}

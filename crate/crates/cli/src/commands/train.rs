use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use flexdet::archive::Artifact;
use flexdet::bench::estimate_flops;
use flexdet::nas::{enumerate_space, SearchSpace};
use flexdet::train::{train, Checkpoint, TrainState, TrainerConfig};
use flexdet::{ElasticWeights, ModelConfig, ModelDims};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::RunManifest;
use crate::util::load_dataset;
use crate::{Context, Outcome};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// TOML run description: dataset directory, search space, trainer settings.
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// Contents of the run description file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    /// Dataset directory, relative to the run description.
    pub data: PathBuf,
    pub space: SearchSpace,
    #[serde(default)]
    pub trainer: TrainerConfig,
    /// Backbone dimensions; derived from the space when absent.
    pub model: Option<ModelDims>,
    /// Sub-net stored as the artifact default; the costliest config when absent.
    pub default_config: Option<ModelConfig>,
}

/// Toy dimensions sized to cover every config of `space`.
fn dims_for(space: &SearchSpace, num_classes: usize) -> ModelDims {
    let max = |v: &[usize]| v.iter().copied().max().unwrap_or(1);
    let min_patch = space.patch_sizes.iter().copied().min().unwrap_or(8);
    ModelDims {
        max_resolution: max(&space.resolutions),
        min_patch,
        base_patch: min_patch,
        max_decoder_layers: max(&space.decoder_depths),
        max_queries: max(&space.query_counts),
        ..ModelDims::toy(num_classes)
    }
}

pub fn run(ctx: &Context, args: Args) -> Result<Outcome> {
    let text = std::fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut file: TrainFile = toml::from_str(&text).with_context(|| format!("parsing {}", args.config.display()))?;
    let base = args.config.parent().unwrap_or_else(|| std::path::Path::new("."));
    let data_dir = base.join(&file.data);
    let ds = load_dataset(&data_dir)?;
    file.trainer.validate()?;

    let dims = file
        .model
        .clone()
        .unwrap_or_else(|| dims_for(&file.space, ds.num_classes()));
    dims.check()?;
    if dims.num_classes != ds.num_classes() {
        bail!("model has {} classes, dataset {}", dims.num_classes, ds.num_classes());
    }
    let configs = enumerate_space(&file.space)?;
    if configs.is_empty() {
        bail!("the search space contains no valid config");
    }
    for c in &configs {
        c.validate(&dims).with_context(|| format!("config {c:?}"))?;
    }
    let default_config = match file.default_config {
        Some(c) => c,
        None => {
            let mut best = configs[0];
            let mut best_flops = 0;
            for c in &configs {
                let f = estimate_flops(c, &dims)?;
                if f > best_flops {
                    (best, best_flops) = (*c, f);
                }
            }
            best
        }
    };
    default_config.validate(&dims)?;
    file.model = Some(dims.clone());
    file.default_config = Some(default_config);

    let mut state = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::<f32>::load(path)?;
            if ck.dims != dims {
                bail!(
                    "checkpoint {} was written for different model dimensions",
                    path.display()
                );
            }
            ck.restore()?
        }
        None => {
            let w = ElasticWeights::<f32>::init(dims.clone(), &mut ChaCha8Rng::seed_from_u64(ctx.seed))?;
            TrainState::new(w, file.trainer.weight_decay, ctx.seed)
        }
    };
    let start_step = state.step;

    let samples = ds.train_samples::<f32>(file.space.mask_head)?;
    let log_path = ctx.out_dir.join("train_log.jsonl");
    let log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(args.resume.is_some())
        .truncate(args.resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(log_file);
    let ck_dir = ctx.out_dir.join("checkpoints");
    let every = file.trainer.checkpoint_every;

    let logs = train(&mut state, &samples, &file.space, &file.trainer, |st, l| {
        let line = serde_json::to_string(l)?;
        writeln!(log, "{line}").map_err(|e| flexdet::Error::InvalidArgument(format!("writing the log: {e}")))?;
        if every > 0 && l.step % every == 0 {
            std::fs::create_dir_all(&ck_dir)
                .map_err(|e| flexdet::Error::InvalidArgument(format!("creating {}: {e}", ck_dir.display())))?;
            Checkpoint::capture(st).save(&ck_dir.join(format!("step-{:06}.json", l.step)))?;
        }
        if l.step % 100 == 0 {
            eprintln!("step {} loss {:.4}", l.step, l.loss.total);
        }
        Ok(())
    })?;
    log.flush()?;
    drop(log);

    let ck_path = ctx.out_dir.join("checkpoint.json");
    Checkpoint::capture(&state).save(&ck_path)?;
    let art_path = ctx.out_dir.join("model.json");
    let digest = Artifact::new(
        &state.ema,
        default_config,
        Some(file.space.clone()),
        ds.categories.clone(),
    )
    .save(&art_path)?;

    let mut m = RunManifest::new(ctx, "train", &file)?;
    m.input("config", &args.config)?;
    m.input("data", &data_dir)?;
    if let Some(r) = &args.resume {
        m.input("resume", r)?;
    }
    for p in [&art_path, &ck_path, &log_path] {
        m.output(&ctx.out_dir, p)?;
    }
    m.write(&ctx.out_dir)?;

    match logs.last() {
        Some(l) => println!(
            "trained steps {}..{}, final loss {:.4}; artifact {} ({digest})",
            start_step + 1,
            l.step,
            l.loss.total,
            art_path.display()
        ),
        None => println!("nothing to do: checkpoint already at step {}", state.step),
    }
    Ok(Outcome::Complete)
}

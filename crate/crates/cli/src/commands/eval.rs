use std::path::PathBuf;

use anyhow::{anyhow, bail, Context as _, Result};
use flexdet::eval::{evaluate_config, EvalResult};
use flexdet::{ModelConfig, ModelDims};
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::util::{load_artifact, load_dataset, write_json, Iou};
use crate::{Context, Outcome};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Override one knob of the artifact's config, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Evaluate once per value, as `key=v1,v2,...`.
    #[arg(long, value_name = "KEY=V1,V2")]
    pub sweep: Option<String>,
    #[arg(long, value_enum, default_value_t = Iou::Box)]
    pub iou: Iou,
}

#[derive(Serialize)]
struct Entry {
    config: ModelConfig,
    result: EvalResult,
}

fn split_pair(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| anyhow!("expected KEY=VALUE, got `{s}`"))
}

/// Applies one override. `num_queries=all` keeps every query the token grid
/// and the weights allow.
fn apply(c: &mut ModelConfig, dims: &ModelDims, key: &str, value: &str) -> Result<()> {
    let num = || -> Result<usize> {
        value
            .parse()
            .with_context(|| format!("{key}: `{value}` is not a count"))
    };
    match key {
        "resolution" => c.resolution = num()?,
        "patch_size" => c.patch_size = num()?,
        "num_windows" => c.num_windows = num()?,
        "num_decoder_layers" => c.num_decoder_layers = num()?,
        "num_queries" if value == "all" => c.num_queries = usize::MAX,
        "num_queries" => c.num_queries = num()?,
        "mask_head_enabled" => {
            c.mask_head_enabled = value
                .parse()
                .with_context(|| format!("{key}: `{value}` is not a bool"))?
        }
        _ => bail!("unknown config key `{key}`"),
    }
    if c.num_queries == usize::MAX {
        c.num_queries = dims
            .max_queries
            .min(c.check_shape().map(|_| c.num_tokens()).unwrap_or(dims.max_queries));
    }
    Ok(())
}

pub fn run(ctx: &Context, args: Args) -> Result<Outcome> {
    let (artifact, digest) = load_artifact(&args.artifact)?;
    let ds = load_dataset(&args.dataset)?;
    let weights = artifact.weights::<f32>()?;
    let dims = &artifact.dims;

    let mut base = artifact.config;
    let mut all_queries = false;
    for o in &args.overrides {
        let (k, v) = split_pair(o)?;
        all_queries |= k == "num_queries" && v == "all";
        apply(&mut base, dims, k, v)?;
    }
    let configs = match &args.sweep {
        None => vec![base],
        Some(s) => {
            let (k, vs) = split_pair(s)?;
            vs.split(',')
                .map(|v| {
                    let mut c = base;
                    apply(&mut c, dims, k, v.trim())?;
                    if all_queries && k != "num_queries" {
                        apply(&mut c, dims, "num_queries", "all")?;
                    }
                    Ok(c)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    for c in &configs {
        c.validate(dims)?;
    }

    let mut entries = Vec::new();
    for c in configs {
        let result = evaluate_config(&weights, &c, &ds, args.iou.into())?;
        println!(
            "{c:?}: ap {:.4} ap50 {:.4} ap75 {:.4}",
            result.ap, result.ap50, result.ap75
        );
        entries.push(Entry { config: c, result });
    }

    let out = ctx.out_dir.join("eval.json");
    write_json(&out, &entries)?;
    let resolved: Vec<ModelConfig> = entries.iter().map(|e| e.config).collect();
    let mut m = RunManifest::new(ctx, "eval", (&args.iou, &resolved))?;
    m.inputs.insert("artifact".into(), digest);
    m.input("dataset", &args.dataset)?;
    m.output(&ctx.out_dir, &out)?;
    m.write(&ctx.out_dir)?;
    Ok(Outcome::Complete)
}

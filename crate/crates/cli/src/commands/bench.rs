use std::path::PathBuf;

use anyhow::{bail, Result};
use flexdet::bench::{
    bench_artifact_with, BenchProtocol, CpuFreqSampler, TelemetrySource, TelemetryTrace, TraceReplay,
};

use crate::manifest::RunManifest;
use crate::util::{load_dataset, write_json};
use crate::{Context, Outcome};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    pub artifact: PathBuf,
    /// Dataset for the accuracy phase; latency uses its first image.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Pause between consecutive calls; 0 disables buffering.
    #[arg(long, default_value_t = 200.0)]
    pub buffer_ms: f64,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// `cpufreq` to sample the CPU clock, or a `t_ms,value` CSV to replay.
    #[arg(long)]
    pub telemetry: Option<String>,
}

pub fn run(ctx: &Context, args: Args) -> Result<Outcome> {
    let ds = load_dataset(&args.dataset)?;
    let protocol = BenchProtocol {
        buffer_ms: args.buffer_ms,
        warmup_iters: args.warmup,
        measure_iters: args.iters,
    };
    let mut source: Option<Box<dyn TelemetrySource>> = match args.telemetry.as_deref() {
        None => None,
        Some("cpufreq") => match CpuFreqSampler::new(0) {
            Some(s) => Some(Box::new(s)),
            None => bail!("cpufreq telemetry is not available on this machine"),
        },
        Some(path) => Some(Box::new(TraceReplay::new(TelemetryTrace::read_csv(path.as_ref())?))),
    };
    let report = bench_artifact_with(
        &args.artifact,
        &ds,
        &protocol,
        source.as_mut().map(|s| s.as_mut() as &mut dyn TelemetrySource),
        |_| {},
    )?;

    let out = ctx.out_dir.join("bench.json");
    write_json(&out, &report)?;
    let mut m = RunManifest::new(ctx, "bench", (&protocol, &args.telemetry))?;
    m.inputs.insert("artifact".into(), report.artifact_digest.clone());
    m.input("dataset", &args.dataset)?;
    if let Some(t) = args.telemetry.as_deref().filter(|t| *t != "cpufreq") {
        m.input("telemetry", t.as_ref())?;
    }
    m.output(&ctx.out_dir, &out)?;
    m.write(&ctx.out_dir)?;

    let l = &report.latency;
    println!(
        "ap {:.4} ap50 {:.4}; latency mean {:.3} ms p99 {:.3} ms; {} throttle events; artifact {}",
        report.eval.ap,
        report.eval.ap50,
        l.stats.mean_ms,
        l.stats.p99_ms,
        l.throttle_events.len(),
        report.artifact_digest
    );
    Ok(Outcome::Complete)
}

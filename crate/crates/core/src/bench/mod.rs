//! Latency measurement under the buffering protocol, throttle detection,
//! same-artifact benchmarking and analytic FLOPs.

pub mod flops;
pub mod latency;
pub mod telemetry;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use flops::estimate_flops;
pub use latency::{
    latency_stats, measure_latency, measure_latency_with_telemetry, BenchProtocol, LatencyReport, LatencyStats,
};
pub use telemetry::{
    detect_throttle, CpuFreqSampler, TelemetrySample, TelemetrySource, TelemetryTrace, ThrottleEvent, TraceReplay,
};

use crate::archive::{sha256_hex, Artifact};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_config, EvalResult, IouKind};
use crate::model::{model_forward, ModelConfig};
use crate::raster::Image;

/// Accuracy and latency of one artifact file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub artifact_digest: String,
    pub config: ModelConfig,
    pub eval: EvalResult,
    pub latency: LatencyReport,
    pub estimated_flops: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchPhase {
    AccuracyDone,
    LatencyDone,
}

fn reread_digest(path: &Path, expected: &str) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let found = sha256_hex(&bytes);
    if found != expected {
        return Err(Error::DigestMismatch {
            expected: expected.to_string(),
            found,
        });
    }
    Ok(())
}

/// Measures accuracy on `ds` and latency on its first image from the single
/// artifact at `path`. The file digest is rechecked after each phase.
pub fn bench_artifact(path: &Path, ds: &Dataset, protocol: &BenchProtocol) -> Result<BenchReport> {
    bench_artifact_with(path, ds, protocol, None, |_| {})
}

/// Default throttle rule for benchmark telemetry: a 15% drop below the
/// mean of the last 10 unthrottled samples.
pub const THROTTLE_WINDOW: usize = 10;
pub const THROTTLE_DROP: f64 = 0.15;

/// [`bench_artifact`] with optional telemetry sampled before every measured
/// call and a callback invoked after each phase, before the digest recheck.
pub fn bench_artifact_with(
    path: &Path,
    ds: &Dataset,
    protocol: &BenchProtocol,
    telemetry: Option<&mut dyn TelemetrySource>,
    mut after_phase: impl FnMut(BenchPhase),
) -> Result<BenchReport> {
    protocol.validate()?;
    let (artifact, digest) = Artifact::load(path)?;
    let weights = artifact.weights::<f32>()?;
    let config = artifact.config;
    let first = ds
        .images
        .first()
        .ok_or_else(|| Error::InvalidArgument("benchmark dataset is empty".into()))?;

    let eval = evaluate_config(&weights, &config, ds, IouKind::Box)?;
    after_phase(BenchPhase::AccuracyDone);
    reread_digest(path, &digest)?;

    let input: Image<f32> = first.image()?.resize(config.resolution, config.resolution);
    let inputs = [input];
    let latency = measure_latency_with_telemetry(
        || {
            model_forward(&inputs, &config, &weights)
                .map(|_| ())
                .map_err(|e| e.to_string())
        },
        protocol,
        telemetry,
        THROTTLE_WINDOW,
        THROTTLE_DROP,
    )?;
    after_phase(BenchPhase::LatencyDone);
    reread_digest(path, &digest)?;

    Ok(BenchReport {
        artifact_digest: digest,
        config,
        eval,
        latency,
        estimated_flops: estimate_flops(&config, &artifact.dims)?,
    })
}

use std::thread::sleep;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bench::telemetry::{detect_throttle, TelemetrySample, TelemetrySource, TelemetryTrace, ThrottleEvent};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchProtocol {
    /// Pause between the end of one call and the start of the next.
    pub buffer_ms: f64,
    pub warmup_iters: usize,
    pub measure_iters: usize,
}

impl Default for BenchProtocol {
    fn default() -> Self {
        Self {
            buffer_ms: 200.0,
            warmup_iters: 3,
            measure_iters: 20,
        }
    }
}

impl BenchProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(self.buffer_ms >= 0.0 && self.buffer_ms.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "buffer_ms {} must be >= 0",
                self.buffer_ms
            )));
        }
        if self.measure_iters == 0 {
            return Err(Error::InvalidArgument("measure_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Summary statistics over measured calls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    /// Population standard deviation.
    pub std_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn latency_stats(per_iter_ms: &[f64]) -> LatencyStats {
    if per_iter_ms.is_empty() {
        return LatencyStats::default();
    }
    let n = per_iter_ms.len() as f64;
    let mean = per_iter_ms.iter().sum::<f64>() / n;
    let var = per_iter_ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = per_iter_ms.to_vec();
    sorted.sort_by(f64::total_cmp);
    LatencyStats {
        mean_ms: mean,
        std_ms: var.sqrt(),
        p50_ms: percentile(&sorted, 50.0),
        p99_ms: percentile(&sorted, 99.0),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub protocol: BenchProtocol,
    pub per_iter_ms: Vec<f64>,
    /// Start of each measured call relative to the first one.
    pub start_offsets_ms: Vec<f64>,
    #[serde(flatten)]
    pub stats: LatencyStats,
    /// Smallest pause observed before a measured call (`None` when a single
    /// measured call had no predecessor).
    pub min_gap_ms: Option<f64>,
    /// Wall time from the first to the end of the last measured call.
    pub total_wall_ms: f64,
    pub throttle_events: Vec<ThrottleEvent>,
    /// Telemetry read before each measured call, when a source was given.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub telemetry: Vec<TelemetrySample>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Times `runner` under `protocol`. Every call, warm-up included, is
/// separated from the previous one by at least `buffer_ms`.
pub fn measure_latency<F>(runner: F, protocol: &BenchProtocol) -> Result<LatencyReport>
where
    F: FnMut() -> std::result::Result<(), String>,
{
    measure_latency_with_telemetry(runner, protocol, None, 10, 0.15)
}

/// [`measure_latency`] that also samples `telemetry` before each measured
/// call and reports throttle events by iteration.
pub fn measure_latency_with_telemetry<F>(
    mut runner: F,
    protocol: &BenchProtocol,
    mut telemetry: Option<&mut dyn TelemetrySource>,
    baseline_window: usize,
    drop_fraction: f64,
) -> Result<LatencyReport>
where
    F: FnMut() -> std::result::Result<(), String>,
{
    protocol.validate()?;
    let buffer = Duration::from_secs_f64(protocol.buffer_ms / 1e3);
    let total = protocol.warmup_iters + protocol.measure_iters;
    let origin = Instant::now();
    let mut last_end: Option<Instant> = None;
    let mut per_iter = Vec::with_capacity(protocol.measure_iters);
    let mut starts = Vec::with_capacity(protocol.measure_iters);
    let mut gaps = Vec::new();
    let mut first_start = None;
    let mut end = origin;
    let mut samples = Vec::new();

    for i in 0..total {
        if last_end.is_some() && !buffer.is_zero() {
            sleep(buffer);
        }
        let measured = i >= protocol.warmup_iters;
        if measured {
            if let Some(src) = telemetry.as_deref_mut() {
                if let Some(v) = src.sample() {
                    samples.push(TelemetrySample {
                        t_ms: ms(origin.elapsed()),
                        value: v,
                    });
                }
            }
        }
        let start = Instant::now();
        runner().map_err(|message| Error::Runner { iteration: i, message })?;
        end = Instant::now();
        if measured {
            if let Some(prev) = last_end {
                gaps.push(ms(start - prev));
            }
            let fs = *first_start.get_or_insert(start);
            starts.push(ms(start - fs));
            per_iter.push(ms(end - start));
        }
        last_end = Some(end);
    }

    let throttle_events = if samples.is_empty() {
        Vec::new()
    } else {
        detect_throttle(&TelemetryTrace::new(samples.clone())?, baseline_window, drop_fraction)
    };
    Ok(LatencyReport {
        protocol: *protocol,
        stats: latency_stats(&per_iter),
        min_gap_ms: gaps.iter().copied().reduce(f64::min),
        total_wall_ms: ms(end - first_start.expect("at least one measured call")),
        start_offsets_ms: starts,
        per_iter_ms: per_iter,
        throttle_events,
        telemetry: samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_are_exact() {
        let s = latency_stats(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.mean_ms, 2.5);
        assert!((s.std_ms - 1.25f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.p50_ms, 2.5);
        assert!((s.p99_ms - 3.97).abs() < 1e-12);
    }

    #[test]
    fn zero_buffer_and_lengths() {
        let p = BenchProtocol {
            buffer_ms: 0.0,
            warmup_iters: 1,
            measure_iters: 4,
        };
        let r = measure_latency(|| Ok(()), &p).unwrap();
        assert_eq!(r.per_iter_ms.len(), 4);
        assert!(r.min_gap_ms.unwrap() >= 0.0);
    }

    #[test]
    fn runner_error_names_iteration() {
        let mut n = 0;
        let p = BenchProtocol {
            buffer_ms: 0.0,
            warmup_iters: 0,
            measure_iters: 5,
        };
        let err = measure_latency(
            || {
                n += 1;
                if n == 3 {
                    Err("boom".into())
                } else {
                    Ok(())
                }
            },
            &p,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Runner { iteration: 2, .. }));
    }

    #[test]
    fn invalid_protocol() {
        let p = BenchProtocol {
            buffer_ms: -1.0,
            ..BenchProtocol::default()
        };
        assert!(measure_latency(|| Ok(()), &p).is_err());
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub t_ms: f64,
    /// Clock in MHz or power in W; only relative drops matter.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryTrace {
    samples: Vec<TelemetrySample>,
}

impl TelemetryTrace {
    pub fn new(samples: Vec<TelemetrySample>) -> Result<Self> {
        if let Some(i) = (1..samples.len()).find(|&i| samples[i].t_ms <= samples[i - 1].t_ms) {
            return Err(Error::InvalidArgument(format!(
                "telemetry timestamps must increase strictly (sample {i})"
            )));
        }
        Ok(Self { samples })
    }

    /// Samples at a fixed period starting at zero.
    pub fn from_values(values: &[f64], period_ms: f64) -> Result<Self> {
        Self::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &value)| TelemetrySample {
                    t_ms: i as f64 * period_ms,
                    value,
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[TelemetrySample] {
        &self.samples
    }

    /// Reads a `t_ms,value` CSV with a header row.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let samples = r
            .deserialize()
            .collect::<std::result::Result<Vec<TelemetrySample>, _>>()?;
        Self::new(samples)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// A run of samples below the throttle threshold, reported at its onset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThrottleEvent {
    pub sample_index: usize,
    pub onset_ms: f64,
    /// Largest fractional drop below the baseline during the episode.
    pub severity: f64,
}

/// Flags samples below `(1 − drop_fraction)` of the baseline, the mean of
/// the last `baseline_window` unthrottled samples (initially the first
/// `baseline_window`). Consecutive flagged samples form one event; the
/// baseline is frozen while an event is open.
pub fn detect_throttle(trace: &TelemetryTrace, baseline_window: usize, drop_fraction: f64) -> Vec<ThrottleEvent> {
    let s = trace.samples();
    let window = baseline_window.max(1);
    if s.len() <= window {
        return Vec::new();
    }
    let mut baseline: std::collections::VecDeque<f64> = s[..window].iter().map(|x| x.value).collect();
    let mut events: Vec<ThrottleEvent> = Vec::new();
    let mut open = false;
    for (i, x) in s.iter().enumerate().skip(window) {
        let base = baseline.iter().sum::<f64>() / baseline.len() as f64;
        if x.value < (1.0 - drop_fraction) * base {
            let severity = 1.0 - x.value / base;
            if open {
                let e = events.last_mut().expect("open event");
                e.severity = e.severity.max(severity);
            } else {
                events.push(ThrottleEvent {
                    sample_index: i,
                    onset_ms: x.t_ms,
                    severity,
                });
                open = true;
            }
        } else {
            open = false;
            baseline.pop_front();
            baseline.push_back(x.value);
        }
    }
    events
}

/// Yields one telemetry reading per call.
pub trait TelemetrySource {
    fn sample(&mut self) -> Option<f64>;
}

/// Replays a recorded trace, one sample per call.
pub struct TraceReplay {
    trace: TelemetryTrace,
    next: usize,
}

impl TraceReplay {
    pub fn new(trace: TelemetryTrace) -> Self {
        Self { trace, next: 0 }
    }
}

impl TelemetrySource for TraceReplay {
    fn sample(&mut self) -> Option<f64> {
        let v = self.trace.samples().get(self.next).map(|s| s.value);
        self.next += 1;
        v
    }
}

/// Current CPU clock from the Linux cpufreq interface, in MHz.
pub struct CpuFreqSampler {
    path: PathBuf,
}

impl CpuFreqSampler {
    pub fn new(cpu: usize) -> Option<Self> {
        let path = PathBuf::from(format!("/sys/devices/system/cpu/cpu{cpu}/cpufreq/scaling_cur_freq"));
        path.exists().then_some(Self { path })
    }
}

impl TelemetrySource for CpuFreqSampler {
    fn sample(&mut self) -> Option<f64> {
        let khz: f64 = std::fs::read_to_string(&self.path).ok()?.trim().parse().ok()?;
        Some(khz / 1e3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_trace_is_silent() {
        let t = TelemetryTrace::from_values(&[1500.0; 100], 10.0).unwrap();
        assert!(detect_throttle(&t, 10, 0.15).is_empty());
    }

    #[test]
    fn non_increasing_timestamps_rejected() {
        let s = vec![
            TelemetrySample { t_ms: 1.0, value: 1.0 },
            TelemetrySample { t_ms: 1.0, value: 1.0 },
        ];
        assert!(TelemetryTrace::new(s).is_err());
    }

    #[test]
    fn recovery_then_second_drop_gives_two_events() {
        let mut v = vec![100.0; 60];
        for x in &mut v[20..25] {
            *x = 60.0;
        }
        for x in &mut v[40..45] {
            *x = 70.0;
        }
        let t = TelemetryTrace::from_values(&v, 1.0).unwrap();
        let ev = detect_throttle(&t, 10, 0.15);
        assert_eq!(ev.iter().map(|e| e.sample_index).collect::<Vec<_>>(), vec![20, 40]);
        assert!((ev[0].severity - 0.4).abs() < 1e-12);
    }
}

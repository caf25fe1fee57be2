use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::estimate_flops;
use crate::error::{Error, Result};
use crate::model::{ElasticWeights, ModelConfig};
use crate::nas::pareto::pareto_frontier;
use crate::nas::space::{enumerate_space, SearchSpace};
use crate::scalar::Scalar;

/// Latency of one config in milliseconds, measured or modelled.
pub trait LatencySource<T> {
    fn latency_ms(&mut self, weights: &ElasticWeights<T>, config: &ModelConfig) -> Result<f64>;
}

/// Accuracy (AP in `[0, 1]`) of one config on a held-out set.
pub trait AccuracyEvaluator<T> {
    fn accuracy(&mut self, weights: &ElasticWeights<T>, config: &ModelConfig) -> Result<f64>;
}

/// Analytic latency: estimated FLOPs divided by a fixed throughput.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlopsProxy {
    pub flops_per_ms: f64,
}

impl Default for FlopsProxy {
    fn default() -> Self {
        // One GFLOP/s.
        Self { flops_per_ms: 1e6 }
    }
}

impl<T: Scalar> LatencySource<T> for FlopsProxy {
    fn latency_ms(&mut self, weights: &ElasticWeights<T>, config: &ModelConfig) -> Result<f64> {
        Ok(estimate_flops(config, weights.dims())? as f64 / self.flops_per_ms)
    }
}

impl<T, F: FnMut(&ElasticWeights<T>, &ModelConfig) -> Result<f64>> AccuracyEvaluator<T> for F {
    fn accuracy(&mut self, weights: &ElasticWeights<T>, config: &ModelConfig) -> Result<f64> {
        self(weights, config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub config: ModelConfig,
    pub accuracy: Option<f64>,
    pub latency_ms: Option<f64>,
    pub flops: Option<u64>,
    /// Set when evaluating this config failed; the point is then off the frontier.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoReport {
    pub weights_digest: String,
    pub points: Vec<ParetoPoint>,
    /// Indices into `points` of the non-dominated configs, ascending.
    pub frontier: Vec<usize>,
}

impl ParetoReport {
    pub fn from_points(weights_digest: String, points: Vec<ParetoPoint>) -> Self {
        let ok: Vec<usize> = (0..points.len())
            .filter(|&i| points[i].accuracy.is_some() && points[i].latency_ms.is_some())
            .collect();
        let coords: Vec<(f64, f64)> = ok
            .iter()
            .map(|&i| (points[i].latency_ms.unwrap(), points[i].accuracy.unwrap()))
            .collect();
        let frontier = pareto_frontier(&coords).into_iter().map(|j| ok[j]).collect();
        Self {
            weights_digest,
            points,
            frontier,
        }
    }

    pub fn num_failed(&self) -> usize {
        self.points.iter().filter(|p| p.error.is_some()).count()
    }

    /// Frontier points ordered by latency.
    pub fn frontier_points(&self) -> Vec<&ParetoPoint> {
        let mut pts: Vec<&ParetoPoint> = self.frontier.iter().map(|&i| &self.points[i]).collect();
        pts.sort_by(|a, b| a.latency_ms.unwrap().total_cmp(&b.latency_ms.unwrap()));
        pts
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "resolution",
            "patch_size",
            "num_windows",
            "num_decoder_layers",
            "num_queries",
            "mask_head",
            "accuracy",
            "latency_ms",
            "flops",
            "on_frontier",
            "error",
        ])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for (i, p) in self.points.iter().enumerate() {
            let c = &p.config;
            w.write_record([
                c.resolution.to_string(),
                c.patch_size.to_string(),
                c.num_windows.to_string(),
                c.num_decoder_layers.to_string(),
                c.num_queries.to_string(),
                c.mask_head_enabled.to_string(),
                opt(p.accuracy.map(|v| v.to_string())),
                opt(p.latency_ms.map(|v| v.to_string())),
                opt(p.flops.map(|v| v.to_string())),
                self.frontier.contains(&i).to_string(),
                opt(p.error.clone()),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Evaluates every config of `space` once with fixed weights and extracts the
/// accuracy/latency frontier. Per-config failures are recorded, not raised.
pub fn grid_search<T: Scalar>(
    weights: &ElasticWeights<T>,
    space: &SearchSpace,
    latency: &mut dyn LatencySource<T>,
    evaluator: &mut dyn AccuracyEvaluator<T>,
) -> Result<ParetoReport> {
    let configs = enumerate_space(space)?;
    let points = configs
        .into_iter()
        .map(|config| {
            let mut run = || -> Result<(f64, f64, u64)> {
                config.validate(weights.dims())?;
                let flops = estimate_flops(&config, weights.dims())?;
                let acc = evaluator.accuracy(weights, &config)?;
                let lat = latency.latency_ms(weights, &config)?;
                Ok((acc, lat, flops))
            };
            match run() {
                Ok((acc, lat, flops)) => ParetoPoint {
                    config,
                    accuracy: Some(acc),
                    latency_ms: Some(lat),
                    flops: Some(flops),
                    error: None,
                },
                Err(e) => ParetoPoint {
                    config,
                    accuracy: None,
                    latency_ms: None,
                    flops: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(ParetoReport::from_points(weights.digest(), points))
}

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Knob sets whose valid Cartesian product forms the search space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub resolutions: Vec<usize>,
    pub patch_sizes: Vec<usize>,
    pub window_counts: Vec<usize>,
    pub decoder_depths: Vec<usize>,
    pub query_counts: Vec<usize>,
    /// Applied to every enumerated config.
    #[serde(default)]
    pub mask_head: bool,
}

impl SearchSpace {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("search space always serializes")
    }

    /// True when every knob set of `self` is a subset of `other`'s.
    pub fn is_subset_of(&self, other: &SearchSpace) -> bool {
        let sub = |a: &[usize], b: &[usize]| a.iter().all(|v| b.contains(v));
        sub(&self.resolutions, &other.resolutions)
            && sub(&self.patch_sizes, &other.patch_sizes)
            && sub(&self.window_counts, &other.window_counts)
            && sub(&self.decoder_depths, &other.decoder_depths)
            && sub(&self.query_counts, &other.query_counts)
    }
}

/// Sorted, de-duplicated Cartesian product of the knob sets, keeping only
/// configs that pass [`ModelConfig::check_shape`].
pub fn enumerate_space(space: &SearchSpace) -> Result<Vec<ModelConfig>> {
    let knobs = [
        ("resolutions", &space.resolutions),
        ("patch_sizes", &space.patch_sizes),
        ("window_counts", &space.window_counts),
        ("decoder_depths", &space.decoder_depths),
        ("query_counts", &space.query_counts),
    ];
    for (name, set) in knobs {
        if set.is_empty() {
            return Err(Error::InvalidSpace(format!("knob set `{name}` is empty")));
        }
    }
    let mut out = Vec::new();
    for &resolution in &space.resolutions {
        for &patch_size in &space.patch_sizes {
            for &num_windows in &space.window_counts {
                for &num_decoder_layers in &space.decoder_depths {
                    for &num_queries in &space.query_counts {
                        let cfg = ModelConfig {
                            resolution,
                            patch_size,
                            num_windows,
                            num_decoder_layers,
                            num_queries,
                            mask_head_enabled: space.mask_head,
                        };
                        if cfg.check_shape().is_ok() {
                            out.push(cfg);
                        }
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Uniform draw over the enumerated valid configs.
pub fn sample_config<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Result<ModelConfig> {
    let configs = enumerate_space(space)?;
    pick(&configs, rng)
}

pub(crate) fn pick<R: Rng + ?Sized>(configs: &[ModelConfig], rng: &mut R) -> Result<ModelConfig> {
    if configs.is_empty() {
        return Err(Error::InvalidSpace("no valid config in the search space".into()));
    }
    Ok(configs[rng.random_range(0..configs.len())])
}

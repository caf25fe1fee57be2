use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::model::forward::{forward_graph, ForwardOptions};
use crate::model::weights::TensorRecord;
use crate::model::{ElasticWeights, ModelConfig, ModelDims};
use crate::nas::space::{enumerate_space, pick, SearchSpace};
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::train::augment::{augment, batch_resize, AugmentPolicy, TrainSample};
use crate::train::loss::{trace_loss, LossBreakdown, LossWeights};
use crate::train::optim::{clip_grad_norm, ema_update, param_lr_multipliers, AdamW};

/// Hyperparameters of a run. All of them stay fixed for every step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub layer_lr_decay: f64,
    pub ema_decay: f64,
    pub weight_decay: f64,
    pub steps: u64,
    pub loss_weights: LossWeights,
    pub augment: AugmentPolicy,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4 * 16.0 / 128.0,
            batch_size: 16,
            grad_clip_norm: 0.1,
            layer_lr_decay: 0.8,
            ema_decay: 0.999,
            weight_decay: 1e-4,
            steps: 1000,
            loss_weights: LossWeights::default(),
            augment: AugmentPolicy::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainerConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr {} must be positive", self.base_lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) || self.ema_decay == 0.0 {
            return bad(format!("ema_decay {} must lie in (0, 1)", self.ema_decay));
        }
        if [self.grad_clip_norm, self.layer_lr_decay]
            .iter()
            .any(|v| v.is_nan() || *v <= 0.0)
        {
            return bad("grad_clip_norm and layer_lr_decay must be positive".into());
        }
        Ok(())
    }
}

/// Everything that evolves during training.
pub struct TrainState<T> {
    pub weights: ElasticWeights<T>,
    pub ema: ElasticWeights<T>,
    pub optimizer: AdamW<T>,
    pub rng: ChaCha8Rng,
    /// Completed steps.
    pub step: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(weights: ElasticWeights<T>, weight_decay: f64, seed: u64) -> Self {
        Self {
            ema: weights.clone(),
            optimizer: AdamW::new(weights.params(), weight_decay),
            weights,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
        }
    }
}

/// Learning rate of one parameter group, recorded every step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupLr {
    pub group: String,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    /// 1-based index of this step.
    pub step: u64,
    pub config: ModelConfig,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub base_lr: f64,
    pub group_lrs: Vec<GroupLr>,
    pub augment: AugmentPolicy,
    pub num_targets: usize,
}

fn group_lrs<T: Scalar>(w: &ElasticWeights<T>, cfg: &TrainerConfig) -> Vec<GroupLr> {
    let mult = param_lr_multipliers(w, cfg.layer_lr_decay);
    let mut groups: Vec<GroupLr> = Vec::new();
    for id in 0..w.len() {
        let group = match w.backbone_depth_of(id) {
            Some(-1) => "embeddings".to_string(),
            Some(d) => format!("encoder.{d}"),
            None => "rest".to_string(),
        };
        if !groups.iter().any(|g| g.group == group) {
            groups.push(GroupLr {
                group,
                lr: cfg.base_lr * mult[id],
            });
        }
    }
    groups
}

/// One weight-sharing update: draw a sub-net uniformly from `configs`,
/// augment and resize the batch, accumulate the mean loss gradient over the
/// batch, clip, apply AdamW with layer-wise rates, then update the EMA.
pub fn train_step_on<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &[TrainSample<T>],
    configs: &[ModelConfig],
    cfg: &TrainerConfig,
) -> Result<StepLog> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let step = state.step + 1;
    let num_classes = state.weights.dims().num_classes;
    if let Some(&k) = batch
        .iter()
        .flat_map(|s| &s.annotations.class_ids)
        .find(|&&k| k >= num_classes)
    {
        return Err(Error::InvalidArgument(format!(
            "target class {k} but the model has {num_classes} classes"
        )));
    }
    let config = pick(configs, &mut state.rng)?;
    let augmented: Vec<TrainSample<T>> = batch.iter().map(|s| augment(s, &mut state.rng, &cfg.augment)).collect();
    let resized = batch_resize(&augmented, config.resolution);

    let scale = 1.0 / batch.len() as f64;
    let mut grads: HashMap<usize, Matrix<T>> = HashMap::new();
    let mut loss = LossBreakdown::default();
    let mut num_targets = 0;
    for s in &resized {
        let mut g = Graph::new();
        let trace = forward_graph(&mut g, &state.weights, &config, &s.image, ForwardOptions::training())?;
        let (total, parts) = trace_loss(&mut g, &trace, &s.annotations, &cfg.loss_weights);
        if !parts.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("config {config:?}, loss {parts:?}"),
            });
        }
        let root = g.scale(total, crate::scalar::c(scale));
        for (id, gm) in g.backward(root) {
            match grads.get_mut(&id) {
                Some(acc) => acc.add_assign(&gm),
                None => {
                    grads.insert(id, gm);
                }
            }
        }
        loss = LossBreakdown {
            class: loss.class + parts.class,
            l1: loss.l1 + parts.l1,
            giou: loss.giou + parts.giou,
            mask: loss.mask + parts.mask,
            dice: loss.dice + parts.dice,
            total: loss.total + parts.total,
        };
        num_targets += s.annotations.len();
    }
    let loss = loss.scaled(scale);
    if grads.values().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step,
            detail: format!("non-finite gradient under config {config:?}"),
        });
    }

    let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip_norm);
    let lrs: Vec<f64> = param_lr_multipliers(&state.weights, cfg.layer_lr_decay)
        .into_iter()
        .map(|m| cfg.base_lr * m)
        .collect();
    state.optimizer.step(state.weights.params_mut(), &grads, &lrs);
    ema_update(state.ema.params_mut(), state.weights.params(), cfg.ema_decay)?;
    state.step = step;

    Ok(StepLog {
        step,
        config,
        loss,
        grad_norm,
        base_lr: cfg.base_lr,
        group_lrs: group_lrs(&state.weights, cfg),
        augment: cfg.augment,
        num_targets,
    })
}

/// [`train_step_on`] over the enumerated configs of `space`.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &[TrainSample<T>],
    space: &SearchSpace,
    cfg: &TrainerConfig,
) -> Result<StepLog> {
    train_step_on(state, batch, &enumerate_space(space)?, cfg)
}

/// Trains until `state.step == cfg.steps`, drawing batches uniformly with
/// replacement from `data`. `on_step` sees the state after every step and
/// may write checkpoints or logs.
pub fn train<T: Scalar>(
    state: &mut TrainState<T>,
    data: &[TrainSample<T>],
    space: &SearchSpace,
    cfg: &TrainerConfig,
    mut on_step: impl FnMut(&TrainState<T>, &StepLog) -> Result<()>,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let configs = enumerate_space(space)?;
    for c in &configs {
        c.validate(state.weights.dims())?;
    }
    let mut logs = Vec::new();
    while state.step < cfg.steps {
        let batch: Vec<TrainSample<T>> = (0..cfg.batch_size)
            .map(|_| data[state.rng.random_range(0..data.len())].clone())
            .collect();
        let log = train_step_on(state, &batch, &configs, cfg)?;
        on_step(state, &log)?;
        logs.push(log);
    }
    Ok(logs)
}

/// Serialized training state for bit-exact resumption.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct Checkpoint<T> {
    pub step: u64,
    pub dims: ModelDims,
    pub weights: Vec<TensorRecord>,
    pub ema: Vec<TensorRecord>,
    pub optimizer: AdamW<T>,
    pub rng: ChaCha8Rng,
}

impl<T: Scalar + Serialize + for<'a> Deserialize<'a>> Checkpoint<T> {
    pub fn capture(state: &TrainState<T>) -> Self {
        Self {
            step: state.step,
            dims: state.weights.dims().clone(),
            weights: state.weights.to_records(),
            ema: state.ema.to_records(),
            optimizer: state.optimizer.clone(),
            rng: state.rng.clone(),
        }
    }

    pub fn restore(self) -> Result<TrainState<T>> {
        Ok(TrainState {
            weights: ElasticWeights::from_records(self.dims.clone(), self.weights)?,
            ema: ElasticWeights::from_records(self.dims, self.ema)?,
            optimizer: self.optimizer,
            rng: self.rng,
            step: self.step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

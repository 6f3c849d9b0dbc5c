use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::bce_loss;
use super::topology::Modality;
use super::wws::{ModelInput, WwsModel};
use crate::error::{Error, Result};
use crate::nn::ParamRegistry;
use crate::tensor::{Graph, Tensor};

/// Labeled examples served in batches by index.
pub trait BatchSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Model input and 0/1 labels for the given example indices.
    fn batch(&self, indices: &[usize]) -> Result<(ModelInput, Vec<f64>)>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_modality(Modality::Audio)
    }
}

impl TrainConfig {
    pub fn for_modality(m: Modality) -> Self {
        let (learning_rate, batch_size) = match m {
            Modality::Audio => (1e-3, 64),
            Modality::Video | Modality::Av => (2e-3, 16),
        };
        TrainConfig {
            learning_rate,
            batch_size,
            epochs: 5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training settings {self:?}")))
        }
    }
}

/// Adam with per-parameter first and second moments. Moments of masked-out
/// weights are held at zero.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update over every parameter that has a gradient, followed by
    /// re-applying masks.
    pub fn step(
        &mut self,
        reg: &mut ParamRegistry,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, grad) in grads {
            let p = reg.param_mut(name)?;
            if grad.shape() != p.value.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("{name}: grad {:?}", grad.shape()),
                ));
            }
            let n = grad.len();
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let mask = p.mask.as_ref().map(|m| m.data());
            let w = p.value.data_mut();
            for i in 0..n {
                if mask.is_some_and(|k| k[i] == 0.0) {
                    m[i] = 0.0;
                    v[i] = 0.0;
                    w[i] = 0.0;
                    continue;
                }
                let gi = grad.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                w[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
            if !w.iter().all(|x| x.is_finite()) {
                return Err(Error::Divergence {
                    stage: format!("optimizer step {} on {name}", self.step),
                });
            }
        }
        reg.apply_masks();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// Zero-based count of epochs run on this model before this one.
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
}

/// Runs epochs of minibatch Adam on the parameters selected by `trainable`.
/// Frozen parameters enter the graph as constants.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub adam: Adam,
    /// Epochs completed so far; seeds the next shuffle.
    pub epochs_done: usize,
    trainable: Box<dyn Fn(&str) -> bool + 'a>,
    on_step: Option<Box<dyn FnMut(&ParamRegistry) -> Result<()> + 'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            adam: Adam::new(&config),
            config,
            epochs_done: 0,
            trainable: Box::new(|_| true),
            on_step: None,
        })
    }

    pub fn with_trainable(mut self, f: impl Fn(&str) -> bool + 'a) -> Self {
        self.trainable = Box::new(f);
        self
    }

    /// Called with the registry after every optimizer step.
    pub fn with_step_hook(mut self, f: impl FnMut(&ParamRegistry) -> Result<()> + 'a) -> Self {
        self.on_step = Some(Box::new(f));
        self
    }

    fn order(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let seed = self.config.seed ^ (self.epochs_done as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx
    }

    pub fn run_epoch(&mut self, model: &mut WwsModel, data: &dyn BatchSource) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        let epoch = self.epochs_done;
        let order = self.order(data.len());
        let (mut total, mut batches) = (0.0, 0);
        for (bi, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let diverged = |e: Error| match e {
                Error::NonFinite { op } => Error::Divergence {
                    stage: format!("epoch {} batch {bi} ({op})", epoch + 1),
                },
                other => other,
            };
            let (input, labels) = data.batch(chunk)?;
            let mut g = Graph::new();
            let b = model.registry.bind_with(&mut g, &*self.trainable)?;
            let scores = model.forward(&mut g, &b, &input).map_err(diverged)?;
            let loss = bce_loss(&mut g, scores, &labels).map_err(diverged)?;
            let lv = g.value(loss)?.item()?;
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    stage: format!("epoch {} batch {bi}", epoch + 1),
                });
            }
            let grads = g.backward(loss).map_err(diverged)?;
            self.adam.step(&mut model.registry, grads.named())?;
            if let Some(hook) = self.on_step.as_mut() {
                hook(&model.registry)?;
            }
            total += lv * chunk.len() as f64;
            batches += 1;
        }
        self.epochs_done += 1;
        Ok(EpochLog {
            epoch,
            mean_loss: total / data.len() as f64,
            batches,
        })
    }

    pub fn run(
        &mut self,
        model: &mut WwsModel,
        data: &dyn BatchSource,
        epochs: usize,
    ) -> Result<Vec<EpochLog>> {
        (0..epochs).map(|_| self.run_epoch(model, data)).collect()
    }
}

/// Trains a model for `config.epochs` epochs from its current weights.
pub fn train(
    model: &mut WwsModel,
    data: &dyn BatchSource,
    config: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    let mut t = Trainer::new(config.clone())?;
    t.run(model, data, config.epochs)
}

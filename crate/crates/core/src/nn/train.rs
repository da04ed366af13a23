use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use super::mlp::{Gradients, MlpModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Decoupled (AdamW-style) weight decay.
    pub weight_decay: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Stop once the best validation loss improved by less than
    /// `early_stop_rel` over the last `early_stop_window` epochs.
    pub early_stop_window: usize,
    pub early_stop_rel: f64,
    pub loss: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-3,
            batch: 32,
            max_epochs: 100,
            early_stop_window: 5,
            early_stop_rel: 0.05,
            loss: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.weight_decay >= 0.0
            && self.batch >= 1
            && self.max_epochs >= 1
            && self.early_stop_window >= 1
            && self.early_stop_rel >= 0.0
            && self.loss.mse >= 0.0
            && self.loss.outage >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training config {self:?}")))
        }
    }
}

/// A differentiable objective over a fixed set of samples and models.
pub trait Objective: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loss of sample `idx`. When `grads` is given, parameter gradients of
    /// every model are accumulated into it.
    fn sample_loss(&self, models: &[MlpModel], idx: usize, grads: Option<&mut [Gradients]>) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Epoch at which early stopping fired, if it did.
    pub early_stop_epoch: Option<usize>,
    pub config: TrainConfig,
}

impl TrainReport {
    pub fn stop_epoch(&self) -> usize {
        self.epochs.last().map_or(0, |e| e.epoch)
    }

    /// Validation losses rescaled so the curve's minimum is 0 and maximum 1.
    pub fn normalized_val_loss(&self) -> Vec<f64> {
        max_min_normalize(&self.epochs.iter().map(|e| e.val_loss).collect::<Vec<_>>())
    }
}

pub fn max_min_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one model.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(model: &MlpModel) -> Self {
        let n = model.n_params();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let g_iter = grads
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()));
        for (((p, &g), m), v) in model
            .params_mut()
            .zip(g_iter)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            *p -= lr * (update + weight_decay * *p);
        }
    }
}

/// Mean loss of an objective without gradients.
pub fn mean_loss(objective: &dyn Objective, models: &[MlpModel]) -> f64 {
    let n = objective.len();
    (0..n)
        .map(|i| objective.sample_loss(models, i, None))
        .sum::<f64>()
        / n as f64
}

/// Mini-batch AdamW with early stopping on the validation objective. On
/// return `models` holds the parameters of the best validation epoch.
pub fn train(
    models: &mut [MlpModel],
    train_set: &dyn Objective,
    val_set: &dyn Objective,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Domain(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt: Vec<Adam> = models.iter().map(Adam::new).collect();
    let mut grads: Vec<Gradients> = models.iter().map(Gradients::zeros_like).collect();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best_models = models.to_vec();
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_history = Vec::with_capacity(cfg.max_epochs);
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut early_stop_epoch = None;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            grads.iter_mut().for_each(Gradients::clear);
            for &i in batch {
                train_sum += train_set.sample_loss(models, i, Some(&mut grads));
            }
            let k = 1.0 / batch.len() as f64;
            for ((m, g), o) in models.iter_mut().zip(&mut grads).zip(&mut opt) {
                g.scale(k);
                o.step(m, g, cfg.lr, cfg.weight_decay);
            }
        }
        let train_loss = train_sum / train_set.len() as f64;
        let val_loss = mean_loss(val_set, models);
        if !train_loss.is_finite()
            || !val_loss.is_finite()
            || !models.iter().all(MlpModel::is_finite)
        {
            return Err(Error::Divergence { epoch });
        }
        epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best {
            best = val_loss;
            best_epoch = epoch;
            best_models.clone_from_slice(models);
        }
        best_history.push(best);
        let w = cfg.early_stop_window;
        if best_history.len() > w {
            let then = best_history[best_history.len() - 1 - w];
            if best > (1.0 - cfg.early_stop_rel) * then {
                early_stop_epoch = Some(epoch);
                break;
            }
        }
    }
    models.clone_from_slice(&best_models);
    Ok(TrainReport {
        epochs,
        best_epoch,
        best_val_loss: best,
        early_stop_epoch,
        config: *cfg,
    })
}

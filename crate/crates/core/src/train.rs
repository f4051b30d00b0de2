//! Training loop and evaluation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, Model, ModelConfig};
use crate::data::{batch_indices, collate, epoch_seed, DataError, LabeledImage, Normalization};
use crate::fbm::{fbm_total_loss, FbmConfig, FbmError};
use crate::metrics::{MetricsError, MetricsReport};
use crate::optim::{scaled_lr, AdamW, AdamWConfig, LrSchedule};
use crate::tensor::{no_grad, Tensor, TensorError};

/// Learning rate quoted for a batch of 512.
pub const REFERENCE_LR: f64 = 5e-4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Fbm(#[from] FbmError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl TrainError {
    fn is_non_finite(&self) -> bool {
        matches!(
            self,
            Self::Tensor(TensorError::NonFinite { .. }) | Self::Fbm(FbmError::Tensor(TensorError::NonFinite { .. }))
        )
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Rate for a batch of 512; the run uses `lr_ref * batch / 512`.
    pub lr_ref: f64,
    pub min_lr: f64,
    /// Defaults to one epoch of steps.
    pub warmup_steps: Option<u64>,
    pub adamw: AdamWConfig,
    pub fbm_lambda: f64,
    /// Defaults to the reference schedule rescaled to the model's token counts.
    pub k_schedule: Option<[Option<usize>; 4]>,
    pub seed: u64,
    pub normalization: Normalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch: 32,
            lr_ref: REFERENCE_LR,
            min_lr: 0.0,
            warmup_steps: None,
            adamw: AdamWConfig::default(),
            fbm_lambda: 1.0,
            k_schedule: None,
            seed: 0,
            normalization: Normalization::default(),
        }
    }
}

impl TrainConfig {
    pub fn base_lr(&self) -> f64 {
        scaled_lr(self.lr_ref, self.batch)
    }

    pub fn steps_per_epoch(&self, samples: usize) -> u64 {
        samples.div_ceil(self.batch.max(1)) as u64
    }

    pub fn total_steps(&self, samples: usize) -> u64 {
        self.steps_per_epoch(samples) * self.epochs as u64
    }

    pub fn effective_warmup(&self, samples: usize) -> u64 {
        let total = self.total_steps(samples);
        self.warmup_steps
            .unwrap_or_else(|| self.steps_per_epoch(samples).min(total.saturating_sub(1)))
    }

    pub fn schedule(&self, samples: usize) -> Result<LrSchedule> {
        Ok(LrSchedule::new(
            self.base_lr(),
            self.min_lr,
            self.effective_warmup(samples),
            self.total_steps(samples),
        )?)
    }

    pub fn fbm_config(&self, model: &ModelConfig) -> FbmConfig {
        let tokens = std::array::from_fn(|i| model.stage_tokens(i));
        let mut cfg = FbmConfig::scaled(tokens, model.num_classes, self.fbm_lambda);
        if let Some(k) = self.k_schedule {
            cfg.k_schedule = k;
        }
        cfg
    }

    /// Every violated constraint for a run over `samples` images.
    pub fn violations(&self, samples: usize, model: &ModelConfig) -> Vec<String> {
        let mut v = Vec::new();
        if self.epochs == 0 {
            v.push("epochs must be positive".into());
        }
        if self.batch == 0 {
            v.push("batch must be positive".into());
        }
        if samples == 0 {
            v.push("training set is empty".into());
        }
        if !(self.lr_ref.is_finite() && self.lr_ref > 0.0) {
            v.push(format!("lr_ref must be positive, got {}", self.lr_ref));
        }
        if !(self.min_lr.is_finite() && self.min_lr >= 0.0 && self.min_lr <= self.base_lr()) {
            v.push(format!("min_lr must lie in [0, base lr {}], got {}", self.base_lr(), self.min_lr));
        }
        let a = &self.adamw;
        for (name, val) in [("beta1", a.beta1), ("beta2", a.beta2)] {
            if !(0.0..1.0).contains(&val) {
                v.push(format!("{name} must lie in [0, 1), got {val}"));
            }
        }
        if !(a.eps > 0.0) {
            v.push(format!("eps must be positive, got {}", a.eps));
        }
        if !(a.weight_decay >= 0.0) {
            v.push(format!("weight_decay must be non-negative, got {}", a.weight_decay));
        }
        let total = self.total_steps(samples);
        if total > 0 && self.effective_warmup(samples) >= total {
            v.push(format!(
                "warmup_steps {} must be below total steps {total}",
                self.effective_warmup(samples)
            ));
        }
        if !(self.fbm_lambda.is_finite() && self.fbm_lambda >= 0.0) {
            v.push(format!("fbm_lambda must be finite and non-negative, got {}", self.fbm_lambda));
        } else if self.fbm_lambda > 0.0 {
            let tokens = std::array::from_fn(|i| model.stage_tokens(i));
            v.extend(self.fbm_config(model).violations(tokens));
        }
        v
    }
}

/// `cross_entropy(logits, labels) + fbm_loss`, where `fbm_loss` already
/// carries its weight.
pub fn total_loss(logits: &Tensor, labels: &[usize], fbm_loss: &Tensor) -> Result<Tensor> {
    Ok(logits.cross_entropy(labels)?.add(fbm_loss)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step {
        epoch: usize,
        step: u64,
        lr: f64,
        ce: f64,
        fbm: f64,
        loss: f64,
    },
    /// Loss and accuracy averaged over the epoch's batches, measured before
    /// each update.
    Epoch {
        epoch: usize,
        mean_loss: f64,
        train_top1: f64,
    },
}

pub struct TrainOutcome {
    pub optimizer: AdamW,
    pub steps: u64,
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let n = logits.shape()[1];
    logits
        .data()
        .chunks(n)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Runs `cfg.epochs` epochs of AdamW over `data`, reporting every step and
/// epoch to `on_record`.
pub fn train(
    model: &Model,
    data: &[LabeledImage],
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    let v = cfg.violations(data.len(), model.config());
    if !v.is_empty() {
        return Err(TrainError::Config(v));
    }
    let num_classes = model.config().num_classes;
    if let Some(bad) = data.iter().find(|d| d.label >= num_classes) {
        return Err(TrainError::Config(vec![format!(
            "{} has label {} but the model has {num_classes} classes",
            bad.source_id, bad.label
        )]));
    }
    let schedule = cfg.schedule(data.len())?;
    let fbm_cfg = cfg.fbm_config(model.config());
    let params = model.param_tensors();
    let mut opt = AdamW::new(&params, cfg.adamw);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0usize, 0usize);
        for idx in batch_indices(data.len(), cfg.batch, epoch_seed(cfg.seed, epoch))? {
            let items: Vec<&LabeledImage> = idx.iter().map(|&i| &data[i]).collect();
            let run = || -> Result<(f64, f64, usize)> {
                model.zero_grad();
                let (x, y) = collate(&items, &cfg.normalization)?;
                let out = model.forward(&x)?;
                let ce = out.logits.cross_entropy(&y)?;
                let fb = if cfg.fbm_lambda != 0.0 {
                    fbm_total_loss(&out.stage_features, model.stage_classifiers(), &fbm_cfg)?.loss
                } else {
                    Tensor::scalar(0.0)?
                };
                let loss = ce.add(&fb)?;
                if !loss.item().is_finite() {
                    return Err(TensorError::NonFinite { op: "loss" }.into());
                }
                loss.backward()?;
                let hits = argmax_rows(&out.logits).iter().zip(&y).filter(|(p, t)| p == t).count();
                Ok((ce.item(), fb.item(), hits))
            };
            let (ce, fb, hits) = run().map_err(|e| {
                if e.is_non_finite() {
                    TrainError::NonFinite {
                        step,
                        detail: e.to_string(),
                    }
                } else {
                    e
                }
            })?;
            let lr = schedule.lr_at(step)?;
            opt.step(&params, lr)?;
            on_record(&LogRecord::Step {
                epoch,
                step,
                lr,
                ce,
                fbm: fb,
                loss: ce + fb,
            });
            loss_sum += ce + fb;
            correct += hits;
            batches += 1;
            step += 1;
        }
        on_record(&LogRecord::Epoch {
            epoch,
            mean_loss: loss_sum / batches as f64,
            train_top1: correct as f64 / data.len() as f64,
        });
    }
    model.zero_grad();
    Ok(TrainOutcome { optimizer: opt, steps: step })
}

/// Predicted class per image (ties go to the lower index).
pub fn predict(model: &Model, data: &[LabeledImage], batch: usize, norm: &Normalization) -> Result<Vec<usize>> {
    let mut preds = Vec::with_capacity(data.len());
    no_grad(|| -> Result<()> {
        for chunk in data.chunks(batch.max(1)) {
            let items: Vec<&LabeledImage> = chunk.iter().collect();
            let (x, _) = collate(&items, norm)?;
            preds.extend(argmax_rows(&model.forward(&x)?.logits));
        }
        Ok(())
    })?;
    Ok(preds)
}

pub fn evaluate(model: &Model, data: &[LabeledImage], batch: usize, norm: &Normalization) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(TrainError::Config(vec!["evaluation set is empty".into()]));
    }
    let preds = predict(model, data, batch, norm)?;
    let truth: Vec<usize> = data.iter().map(|d| d.label).collect();
    Ok(MetricsReport::from_predictions(&truth, &preds, model.config().num_classes)?)
}

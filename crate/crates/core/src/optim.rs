//! Optimizers, the e warm-up schedule and the mini-batch training loop.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelKind};
use crate::losses::{BaseLoss, LossSpec};
use crate::model::{self, Model, ModelSpec};
use crate::rng::{self, streams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }
}

/// `p <- p - lr * g`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    debug_assert_eq!(params.len(), grads.len());
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        AdamMoments {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update; `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    debug_assert!(t >= 1);
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Optimizer state for a whole model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    moments: Vec<AdamMoments>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, model: &Model) -> Self {
        let moments = match config {
            OptimizerConfig::Sgd { .. } => Vec::new(),
            OptimizerConfig::Adam { .. } => model
                .param_slices()
                .iter()
                .map(|s| AdamMoments::zeros(s.len()))
                .collect(),
        };
        Optimizer {
            config,
            moments,
            steps: 0,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Model) {
        self.steps += 1;
        let grads = grads.param_slices();
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                for (p, g) in model.param_slices_mut().into_iter().zip(grads) {
                    sgd_step(p, g, lr);
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                for ((p, g), m) in model
                    .param_slices_mut()
                    .into_iter()
                    .zip(grads)
                    .zip(self.moments.iter_mut())
                {
                    adam_step(p, g, m, self.steps, lr, beta1, beta2, eps);
                }
            }
        }
    }
}

fn default_warmup() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub model: ModelSpec,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub total_epochs: usize,
    /// Leading fraction of epochs trained with `e = 1`.
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Radius of the weight ball linear models are projected onto after
    /// every update.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection_radius: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.transform.validate()?;
        let lr = self.optimizer.lr();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::domain(format!(
                "learning rate {lr} must be finite and >= 0"
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be positive"));
        }
        if self.total_epochs == 0 {
            return Err(Error::domain("total_epochs must be positive"));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::domain(format!(
                "warmup_fraction {} not in [0, 1)",
                self.warmup_fraction
            )));
        }
        if let Some(m) = self.projection_radius {
            if !(m > 0.0) {
                return Err(Error::domain("projection radius must be > 0"));
            }
        }
        Ok(())
    }

    /// `floor(warmup_fraction * total_epochs)`. The product is nudged by
    /// 1e-9 so that e.g. `0.29 * 100` floors to 29 rather than 28.
    pub fn warmup_epochs(&self) -> usize {
        (self.warmup_fraction * self.total_epochs as f64 + 1e-9).floor() as usize
    }
}

/// Exponent in force during `epoch`: 1 for the warm-up epochs, the target
/// exponent afterwards.
pub fn effective_e(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.total_epochs {
        return Err(Error::domain(format!(
            "epoch {epoch} out of range for {} epochs",
            cfg.total_epochs
        )));
    }
    Ok(if epoch < cfg.warmup_epochs() {
        1.0
    } else {
        cfg.loss.transform.e()
    })
}

/// One line of the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub effective_e: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub epochs: Vec<EpochMetrics>,
    pub initial_model: Model,
    pub model: Model,
    pub epoch_seconds: Vec<f64>,
}

impl TrainResult {
    pub fn final_metrics(&self) -> &EpochMetrics {
        self.epochs.last().expect("at least one epoch")
    }

    pub fn effective_e_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|m| m.effective_e).collect()
    }
}

/// Mean loss and accuracy of `model` over `ds`.
pub fn evaluate(model: &Model, loss: &LossSpec, ds: &Dataset) -> Result<(f64, f64)> {
    const CHUNK: usize = 4096;
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let x = ds.features();
    for start in (0..ds.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(ds.len());
        let scores = model.forward_batch(x.slice(ndarray::s![start..end, ..]))?;
        for (row, &y) in scores.rows().into_iter().zip(&ds.labels()[start..end]) {
            let row = row.as_slice().expect("standard layout");
            total_loss += loss.eval(row, y)?.value;
            if model::predict_from_scores(row) == y {
                correct += 1;
            }
        }
    }
    Ok((
        total_loss / ds.len() as f64,
        correct as f64 / ds.len() as f64,
    ))
}

/// Mean loss over `x` with its gradient with respect to the model parameters.
pub fn loss_and_grad(
    model: &Model,
    loss: &LossSpec,
    x: ArrayView2<'_, f64>,
    labels: &[i32],
) -> Result<(f64, Model)> {
    let scores = model.forward_batch(x)?;
    let n = labels.len() as f64;
    let mut upstream = Array2::zeros(scores.raw_dim());
    let mut total = 0.0;
    for ((row, mut up), &y) in scores
        .rows()
        .into_iter()
        .zip(upstream.rows_mut())
        .zip(labels)
    {
        let ev = loss.eval(row.as_slice().expect("standard layout"), y)?;
        total += ev.value;
        for (u, g) in up.iter_mut().zip(&ev.grad_wrt_scores) {
            *u = g / n;
        }
    }
    let grads = model.backward_batch(x, upstream.view())?;
    Ok((total / n, grads))
}

/// Finite weights can still overflow the scores; that is divergence, not bad input.
fn overflow_as_divergence(
    err: Error,
    model: &Model,
    x: ArrayView2<'_, f64>,
    epoch: usize,
    batch: usize,
) -> Error {
    match model.forward_batch(x) {
        Ok(scores) if !scores.iter().all(|v| v.is_finite()) => Error::Diverged {
            epoch,
            batch,
            detail: format!("non-finite scores ({err})"),
        },
        _ => err,
    }
}

fn check_compatible(loss: &LossSpec, ds: &Dataset, what: &str) -> Result<()> {
    match (loss.base, ds.kind()) {
        (BaseLoss::Logistic | BaseLoss::Hinge, LabelKind::Binary) => Ok(()),
        (BaseLoss::SoftmaxCe, LabelKind::Multiclass { .. }) => Ok(()),
        (base, kind) => Err(Error::domain(format!(
            "{what} labels {kind:?} incompatible with {} loss",
            base.name()
        ))),
    }
}

/// Minimises the (transformed) empirical risk by mini-batch updates.
pub fn train(cfg: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<TrainResult> {
    train_with_observer(cfg, train_set, test_set, |_| {})
}

/// [`train`], calling `on_epoch` after each epoch's metrics are computed.
pub fn train_with_observer(
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainResult> {
    cfg.validate()?;
    check_compatible(&cfg.loss, train_set, "training")?;
    check_compatible(&cfg.loss, test_set, "test")?;
    if train_set.dim() != test_set.dim() {
        return Err(Error::shape(
            format!("test features of width {}", train_set.dim()),
            test_set.dim(),
        ));
    }
    let out_dim = match cfg.loss.base {
        BaseLoss::SoftmaxCe => train_set.num_classes().max(test_set.num_classes()),
        _ => 1,
    };
    let mut model = cfg.model.init(
        train_set.dim(),
        out_dim,
        &mut rng::stream(cfg.seed, streams::INIT),
    )?;
    if let (Model::Linear(lin), Some(m)) = (&mut model, cfg.projection_radius) {
        model::project_in_place(lin, m);
    }
    let initial_model = model.clone();
    let mut optimizer = Optimizer::new(cfg.optimizer, &model);
    let n = train_set.len();
    let x = train_set.features();
    let labels = train_set.labels();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.total_epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.total_epochs);

    for epoch in 0..cfg.total_epochs {
        let started = Instant::now();
        let e = effective_e(epoch, cfg)?;
        let loss = LossSpec::new(cfg.loss.base, cfg.loss.transform.with_e(e)?);
        order.copy_from_slice(&(0..n).collect::<Vec<_>>());
        order.shuffle(&mut rng::stream(
            cfg.seed,
            streams::SHUFFLE_BASE + epoch as u64,
        ));

        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xb = x.select(Axis(0), idx);
            let yb: Vec<i32> = idx.iter().map(|&i| labels[i]).collect();
            let (value, grads) = loss_and_grad(&model, &loss, xb.view(), &yb)
                .map_err(|err| overflow_as_divergence(err, &model, xb.view(), epoch, batch))?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    detail: format!("batch loss is {value}"),
                });
            }
            optimizer.step(&mut model, &grads);
            if let (Model::Linear(lin), Some(m)) = (&mut model, cfg.projection_radius) {
                model::project_in_place(lin, m);
            }
            if !model.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    detail: "non-finite parameters after update".into(),
                });
            }
        }

        let batches = n.div_ceil(cfg.batch_size);
        let (train_loss, train_acc) = evaluate(&model, &loss, train_set)
            .map_err(|err| overflow_as_divergence(err, &model, x.view(), epoch, batches))?;
        if !train_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: batches,
                detail: format!("epoch training loss is {train_loss}"),
            });
        }
        let (_, test_acc) = evaluate(&model, &loss, test_set).map_err(|err| {
            overflow_as_divergence(err, &model, test_set.features().view(), epoch, batches)
        })?;
        let metrics = EpochMetrics {
            epoch,
            train_loss,
            train_acc,
            test_acc,
            effective_e: e,
        };
        on_epoch(&metrics);
        epochs.push(metrics);
        epoch_seconds.push(started.elapsed().as_secs_f64());
    }

    Ok(TrainResult {
        epochs,
        initial_model,
        model,
        epoch_seconds,
    })
}

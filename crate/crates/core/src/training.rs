//! Siamese two-stage training with validation-based model selection.
//!
//! Each step builds the batch graph, derives an edge-dropout view, runs
//! both views through the same bound parameters, and updates with Adam.
//! During the first `epochs_frozen` epochs every variance-path parameter
//! is bound as a constant, so it cannot change.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{Cohort, Patient, Split};
use crate::error::{Error, Result};
use crate::evaluation::{auc_prc, auc_roc};
use crate::gaussian::sample_on_tape;
use crate::graph::{augment_mask, BatchInputs};
use crate::math;
use crate::model::{AumModel, ModelConfig};
use crate::nn::ParamRole;
use crate::objectives::{
    cross_entropy_with_logits_on_tape, sup_contrastive_on_tape, unsup_contrastive_on_tape, vib_kl_on_tape, LossBreakdown, LossTerms,
    LossWeights,
};
use crate::rng::{normal_vec, permutation, stream, StreamRng};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const TRAIN_STREAM: u64 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    ValAucRoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_total: usize,
    pub epochs_frozen: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub drop_ratio: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub tau_unsup: f64,
    pub tau_sup: f64,
    pub grad_clip: f64,
    pub selection: SelectionMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_total: 100,
            epochs_frozen: 20,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            drop_ratio: 0.2,
            seed: 0,
            loss_weights: LossWeights::default(),
            tau_unsup: 0.5,
            tau_sup: 0.5,
            grad_clip: 5.0,
            selection: SelectionMetric::ValAucRoc,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_frozen >= self.epochs_total {
            return Err(Error::config(format!(
                "epochs_frozen ({}) must be below epochs_total ({})",
                self.epochs_frozen, self.epochs_total
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.drop_ratio) {
            return Err(Error::config("drop_ratio must lie in [0, 1)"));
        }
        if !(self.tau_unsup > 0.0 && self.tau_sup > 0.0) {
            return Err(Error::config("temperatures must be positive"));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return Err(Error::config("grad_clip must be positive"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.adam_eps > 0.0) {
            return Err(Error::config("invalid Adam hyperparameters"));
        }
        self.loss_weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Frozen,
    Joint,
}

impl Stage {
    pub fn at(epoch: usize, config: &TrainConfig) -> Self {
        if epoch < config.epochs_frozen {
            Stage::Frozen
        } else {
            Stage::Joint
        }
    }

    pub fn trains(self, role: ParamRole) -> bool {
        self == Stage::Joint || role == ParamRole::Mean
    }
}

/// Names of the parameters updated in `stage`.
pub fn freeze_mask(model: &AumModel, stage: Stage) -> BTreeSet<String> {
    model
        .param_roles()
        .into_iter()
        .filter(|(_, role)| stage.trains(*role))
        .map(|(name, _)| name)
        .collect()
}

/// Adam (or plain SGD) state aligned with the model's visiting order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: Vec<u64>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(model: &AumModel, config: &TrainConfig) -> Self {
        let mut m = Vec::new();
        model.visit(&mut |_, _, t| m.push(Tensor::zeros(t.rows(), t.cols())));
        Self {
            kind: config.optimizer,
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.adam_eps,
            steps: alloc::vec![0; m.len()],
            v: m.clone(),
            m,
        }
    }

    /// Applies `grads` (visiting order; `None` leaves a parameter alone).
    pub fn step(&mut self, model: &mut AumModel, grads: &[Option<Tensor>]) {
        let mut i = 0;
        model.visit_mut(&mut |_, _, p| {
            if let Some(g) = &grads[i] {
                match self.kind {
                    OptimizerKind::Sgd => {
                        for (w, gi) in p.data_mut().iter_mut().zip(g.data()) {
                            *w -= self.lr * gi;
                        }
                    }
                    OptimizerKind::Adam => {
                        self.steps[i] += 1;
                        let t = self.steps[i] as i32;
                        let c1 = 1.0 - libm::pow(self.beta1, f64::from(t));
                        let c2 = 1.0 - libm::pow(self.beta2, f64::from(t));
                        let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
                        for (k, (w, gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                            m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gi;
                            v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gi * gi;
                            *w -= self.lr * (m[k] / c1) / (math::sqrt(v[k] / c2) + self.eps);
                        }
                    }
                }
            }
            i += 1;
        });
    }
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> f64 {
    let norm = math::sqrt(grads.iter().flatten().map(Tensor::sq_norm).sum());
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// One optimisation step's forward pass: builds both views of `batch` on
/// `tape` and returns the total loss node with its breakdown.
pub fn batch_loss(
    tape: &mut Tape,
    bound: &AumModel<Var>,
    batch: &[&Patient],
    config: &TrainConfig,
    rng: &mut StreamRng,
) -> Result<(Var, LossBreakdown)> {
    let mc = &bound.config;
    let inputs = BatchInputs::new(batch, &bound.encoders, &mc.input_dims)?;
    let enc = bound.encode(tape, &inputs)?;
    let augmented = augment_mask(&inputs.observed, inputs.n_modalities, config.drop_ratio, rng)?;
    let view = bound.branch(tape, &enc, &inputs.observed)?;
    let aug = bound.branch(tape, &enc, &augmented)?;
    let labels: Vec<u8> = batch.iter().map(|p| p.label).collect();

    let unsup = unsup_contrastive_on_tape(tape, view.patient_mu, aug.patient_mu, config.tau_unsup)?;
    let sup = sup_contrastive_on_tape(tape, view.patient_mu, &labels, config.tau_sup)?;
    let noise = Tensor::new(batch.len(), mc.latent_dim, normal_vec(rng, batch.len() * mc.latent_dim))?;
    let z = sample_on_tape(tape, view.patient_mu, view.patient_sigma, noise)?;
    let logits = bound.head.logits(tape, z)?;
    let ce = cross_entropy_with_logits_on_tape(tape, logits, &labels)?;
    let vib = vib_kl_on_tape(tape, view.patient_mu, view.patient_sigma)?;
    LossTerms { unsup, sup, ce, vib }.combine(tape, config.loss_weights)
}

/// Gradients for every parameter of `model` (visiting order) after one
/// batch, with `None` for parameters not trained in `stage`.
pub fn batch_gradients(
    model: &AumModel,
    batch: &[&Patient],
    config: &TrainConfig,
    stage: Stage,
    rng: &mut StreamRng,
) -> Result<(Vec<Option<Tensor>>, LossBreakdown)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, &|_, role| stage.trains(role));
    let (loss, breakdown) = batch_loss(&mut tape, &bound, batch, config, rng)?;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite {
            epoch: 0,
            batch: 0,
            detail: format!("losses {breakdown:?}"),
        });
    }
    let mut grads = tape.backward(loss)?;
    let mut out = Vec::new();
    bound.visit(&mut |_, role, v| {
        out.push(if stage.trains(role) {
            Some(grads.take(*v).unwrap_or_else(|| {
                let t = tape.value(*v);
                Tensor::zeros(t.rows(), t.cols())
            }))
        } else {
            None
        })
    });
    Ok((out, breakdown))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub auc_roc: f64,
    pub auc_prc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub validation: Option<ValidationMetrics>,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: String,
    pub epoch: usize,
    pub model: ModelConfig,
    pub params: BTreeMap<String, Tensor>,
    pub validation: Option<ValidationMetrics>,
}

impl Checkpoint {
    pub fn from_model(model: &AumModel, config_hash: &str, epoch: usize, validation: Option<ValidationMetrics>) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config_hash: String::from(config_hash),
            epoch,
            model: model.config.clone(),
            params: model.params(),
            validation,
        }
    }

    pub fn to_model(&self) -> Result<AumModel> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", self.format_version)));
        }
        AumModel::from_params(&self.model, &self.params)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: AumModel,
    pub log: Vec<EpochRecord>,
}

fn patients<'a>(cohort: &'a Cohort, idx: &[usize]) -> Vec<&'a Patient> {
    idx.iter().map(|&i| &cohort.patients[i]).collect()
}

fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    // A trailing singleton has no contrastive negatives.
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let n = order.len();
        out.pop();
        out.pop();
        let start = (out.len()) * size;
        out.push(&order[start..n]);
    }
    out
}

fn validate_on(model: &AumModel, cohort: &Cohort, idx: &[usize]) -> Result<Option<ValidationMetrics>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let batch = patients(cohort, idx);
    let scores = model.predict(&batch)?;
    let labels: Vec<u8> = batch.iter().map(|p| p.label).collect();
    match (auc_roc(&scores, &labels), auc_prc(&scores, &labels)) {
        (Ok(auc_roc), Ok(auc_prc)) => Ok(Some(ValidationMetrics { auc_roc, auc_prc })),
        _ => Ok(None),
    }
}

fn mean_breakdown(items: &[LossBreakdown], weights: LossWeights) -> LossBreakdown {
    let n = items.len().max(1) as f64;
    let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        unsup: avg(|b| b.unsup),
        sup: avg(|b| b.sup),
        ce: avg(|b| b.ce),
        vib: avg(|b| b.vib),
        total: avg(|b| b.total),
        weights,
    }
}

/// Trains a fresh model on `split.train` and selects the epoch with the
/// best validation AUC-ROC. `on_epoch` sees each record as it is produced,
/// together with the parameters at the end of that epoch.
pub fn train(
    cohort: &Cohort,
    split: &Split,
    model_config: &ModelConfig,
    config: &TrainConfig,
    config_hash: &str,
    on_epoch: &mut dyn FnMut(&EpochRecord, &AumModel),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model_config = model_config.clone();
    if model_config.input_dims != cohort.config.input_dims {
        model_config.input_dims = cohort.config.input_dims.clone();
    }
    let mut model = AumModel::init(&model_config, config.seed)?;
    if split.train.len() < 2 {
        return Err(Error::config("the training split needs at least two patients"));
    }
    let mut optimizer = Optimizer::new(&model, config);
    let mut rng = stream(config.seed, TRAIN_STREAM);
    let mut log = Vec::with_capacity(config.epochs_total);
    let mut best: Option<(f64, Checkpoint)> = None;

    for epoch in 0..config.epochs_total {
        let stage = Stage::at(epoch, config);
        let perm = permutation(&mut rng, split.train.len());
        let order: Vec<usize> = perm.iter().map(|&i| split.train[i]).collect();
        let mut losses = Vec::new();
        for (b, idx) in batches(&order, config.batch_size).into_iter().enumerate() {
            let batch = patients(cohort, idx);
            let (mut grads, breakdown) = match batch_gradients(&model, &batch, config, stage, &mut rng) {
                Ok(r) => r,
                Err(Error::NonFinite { detail, .. }) => {
                    let ids: Vec<usize> = batch.iter().map(|p| p.id).collect();
                    return Err(Error::NonFinite {
                        epoch,
                        batch: b,
                        detail: format!("{detail}; patients {ids:?}"),
                    });
                }
                Err(e) => return Err(e),
            };
            if grads.iter().flatten().any(|g| !g.all_finite()) {
                let ids: Vec<usize> = batch.iter().map(|p| p.id).collect();
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    detail: format!("non-finite gradient; patients {ids:?}, losses {breakdown:?}"),
                });
            }
            clip_global_norm(&mut grads, config.grad_clip);
            optimizer.step(&mut model, &grads);
            losses.push(breakdown);
        }
        let validation = validate_on(&model, cohort, &split.validation)?;
        let improved = match (&best, validation) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some((score, _)), Some(v)) => v.auc_roc > *score,
        };
        if improved {
            let v = validation.expect("checked above");
            best = Some((v.auc_roc, Checkpoint::from_model(&model, config_hash, epoch, validation)));
        }
        let record = EpochRecord {
            epoch,
            stage,
            loss: mean_breakdown(&losses, config.loss_weights),
            validation,
            best: improved,
        };
        on_epoch(&record, &model);
        log.push(record);
    }
    let best = match best {
        Some((_, c)) => c,
        None => Checkpoint::from_model(&model, config_hash, config.epochs_total - 1, None),
    };
    Ok(TrainOutcome { best, last: model, log })
}

/// Probabilities for the patients at `indices`, propagated as one batch.
pub fn predict(checkpoint: &Checkpoint, cohort: &Cohort, indices: &[usize]) -> Result<Vec<f64>> {
    let model = checkpoint.to_model()?;
    if model.config.input_dims != cohort.config.input_dims {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects input dimensions {:?}, cohort has {:?}",
            model.config.input_dims, cohort.config.input_dims
        )));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= cohort.len()) {
        return Err(Error::Lookup(format!("patient index {i} out of range")));
    }
    model.predict(&patients(cohort, indices))
}

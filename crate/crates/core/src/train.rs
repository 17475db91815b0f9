//! Classifier training, joint generator training against the frozen
//! classifier, and the naive single-adversary baseline.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{apply_transform, sample_transform, AugmentationSpec, GeomTransform};
use crate::losses::{self, LossBreakdown, LossWeights};
use crate::metrics::roc_auc;
use crate::nn::params::{add_grads, scale_grads};
use crate::nn::{AdversarialGenerator, ClassifierArch, ClassifierNet, GenMode, GeneratorArch, GeneratorPair, ParamGrads, ParamSet};
use crate::optim::{adam_step, AdamState, PlateauScheduler};
use crate::synth::Dataset;
use crate::tensor::Image;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "DX_THREADS";

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

/// Worker count from `DX_THREADS`, else the available parallelism.
pub fn worker_threads() -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n >= 1 => n,
        _ => avail,
    }
}

pub fn thread_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub plateau_patience: usize,
    pub seed: u64,
    /// Random geometric augmentation of training inputs.
    pub augment: bool,
    pub loss_weights: LossWeights,
    pub augmentation: AugmentationSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 70,
            batch_size: 8,
            initial_lr: 1e-4,
            lr_decay_factor: 3.0,
            plateau_patience: 3,
            seed: 0,
            augment: true,
            loss_weights: LossWeights::default(),
            augmentation: AugmentationSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn classifier_default() -> Self {
        Self { epochs: 50, batch_size: 32, ..Self::default() }
    }

    /// Batch size 8 for Single AE, 4 for Duo AE.
    pub fn generator_default(mode: GenMode) -> Self {
        let batch_size = if mode == GenMode::DuoAE { 4 } else { 8 };
        Self { batch_size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: String| Err(Error::InvalidSpec { field, reason });
        if self.epochs < 1 {
            return bad("epochs", "must be ≥ 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size", "must be ≥ 1".into());
        }
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return bad("initial_lr", format!("must be > 0, got {}", self.initial_lr));
        }
        if !(self.lr_decay_factor.is_finite() && self.lr_decay_factor > 1.0) {
            return bad("lr_decay_factor", format!("must be > 1, got {}", self.lr_decay_factor));
        }
        if self.plateau_patience < 1 {
            return bad("plateau_patience", "must be ≥ 1".into());
        }
        self.loss_weights.validate()?;
        self.augmentation.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used during this epoch.
    pub lr: f64,
    /// Mean of the per-step training objective.
    pub loss: LossBreakdown,
    /// Validation AUC (classifier) or validation total loss (generators).
    pub val_metric: f64,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the returned checkpoint.
    pub best_epoch: usize,
    pub best_metric: f64,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }

    /// Deterministic table: epoch, lr, loss terms and validation metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,lr,total,l_d,l_fc,l_reg,l_sa,val_metric\n");
        for e in &self.epochs {
            let l = &e.loss;
            let _ = writeln!(out, "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}", e.epoch, e.lr, l.total, l.l_d, l.l_fc, l.l_reg, l.l_sa, e.val_metric);
        }
        out
    }

    /// Wall-clock seconds per epoch, kept apart from the reproducible table.
    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,wall_secs\n");
        for e in &self.epochs {
            let _ = writeln!(out, "{},{:.3}", e.epoch, e.wall_secs);
        }
        out
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn ensure_non_empty(ds: &Dataset, what: &'static str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::InvalidSpec { field: what, reason: "dataset is empty".into() });
    }
    Ok(())
}

/// Draws one transform per sample of the batch, in batch order.
fn augmented_inputs(ds: &Dataset, batch: &[usize], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Image> {
    batch
        .iter()
        .map(|&i| {
            let x = &ds.samples[i].image;
            if !cfg.augment {
                return x.clone();
            }
            let t = sample_transform(&cfg.augmentation, rng);
            if t == GeomTransform::IDENTITY {
                x.clone()
            } else {
                apply_transform(&t, x)
            }
        })
        .collect()
}

/// Sums per-sample results in index order so the total does not depend on
/// how the work was scheduled.
fn ordered_sum(parts: Vec<(LossBreakdown, ParamGrads)>, template: &ParamSet) -> (LossBreakdown, ParamGrads) {
    let mut loss = LossBreakdown::default();
    let mut grads = template.zero_grads();
    for (l, g) in &parts {
        loss.accumulate(l);
        add_grads(&mut grads, g);
    }
    (loss, grads)
}

fn diverged(epoch: usize, history: &TrainHistory) -> Error {
    Error::Diverged { epoch, history: Box::new(history.clone()) }
}

fn classifier_scores(net: &ClassifierNet, ds: &Dataset) -> Result<Vec<f64>> {
    ds.samples.par_iter().map(|s| net.score(&s.image)).collect()
}

/// ROC-AUC of the classifier against the labels of `ds`.
pub fn classifier_auc(net: &ClassifierNet, ds: &Dataset) -> Result<f64> {
    let scores = classifier_scores(net, ds)?;
    let labels: Vec<bool> = ds.samples.iter().map(|s| s.label == 1).collect();
    roc_auc(&labels, &scores)
}

/// Binary cross-entropy against the labels with random train-time
/// augmentation; returns the weights of the epoch with the best
/// validation AUC.
pub fn train_classifier(
    arch: ClassifierArch,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<(ClassifierNet, TrainHistory)> {
    config.validate()?;
    ensure_non_empty(train, "train")?;
    ensure_non_empty(val, "val")?;
    if arch.outputs != 1 {
        return Err(Error::InvalidSpec { field: "outputs", reason: "label training needs a single-output classifier".into() });
    }
    let pool = thread_pool()?;
    pool.install(|| {
        let mut net = ClassifierNet::init(arch, config.seed)?;
        let mut adam = AdamState::new(net.params());
        let mut sched = PlateauScheduler::new(config.initial_lr, config.lr_decay_factor, config.plateau_patience);
        let (mut shuffle, mut aug) = (stream(config.seed, SHUFFLE_STREAM), stream(config.seed, AUGMENT_STREAM));
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut history = TrainHistory { best_metric: f64::NEG_INFINITY, ..TrainHistory::default() };
        let mut best = net.clone();
        let mut lr = config.initial_lr;
        for epoch in 1..=config.epochs {
            let started = Instant::now();
            order.shuffle(&mut shuffle);
            let mut epoch_loss = LossBreakdown::default();
            let mut steps = 0usize;
            for batch in order.chunks(config.batch_size) {
                let inputs = augmented_inputs(train, batch, config, &mut aug);
                let parts = batch
                    .par_iter()
                    .zip(inputs.par_iter())
                    .map(|(&i, x)| {
                        let target = train.samples[i].label as f64;
                        let (out, cache) = net.forward_cached(x)?;
                        let l = losses::bce(target, out[0]);
                        let d = losses::bce_grad(target, out[0]);
                        let (g, _) = net.backward(&cache, &[d], true);
                        Ok((LossBreakdown::new(0.0, l, 0.0, 0.0), g.expect("requested")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (mut loss, mut grads) = ordered_sum(parts, net.params());
                let inv = 1.0 / batch.len() as f64;
                loss = loss.scaled(inv);
                scale_grads(&mut grads, inv);
                if !loss.total.is_finite() {
                    return Err(diverged(epoch, &history));
                }
                adam_step(net.params_mut(), &grads, &mut adam, lr).map_err(|_| diverged(epoch, &history))?;
                epoch_loss.accumulate(&loss);
                steps += 1;
            }
            let epoch_loss = epoch_loss.scaled(1.0 / steps as f64);
            let val_auc = match classifier_auc(&net, val) {
                Ok(a) => a,
                Err(Error::UndefinedMetric(_)) => {
                    let scores = classifier_scores(&net, val)?;
                    -val.samples.iter().zip(&scores).map(|(s, &p)| losses::bce(s.label as f64, p)).sum::<f64>() / val.len() as f64
                }
                Err(e) => return Err(e),
            };
            history.epochs.push(EpochRecord { epoch, lr, loss: epoch_loss, val_metric: val_auc, wall_secs: started.elapsed().as_secs_f64() });
            if val_auc > history.best_metric {
                history.best_metric = val_auc;
                history.best_epoch = epoch;
                best = net.clone();
            }
            lr = sched.observe(epoch_loss.total);
        }
        Ok((best, history))
    })
}

/// Observes every optimizer step before parameters move: the model, the
/// (augmented) batch inputs and the objective that was differentiated.
pub type StepHook<'a, M> = &'a mut (dyn FnMut(&M, &[Image], &LossBreakdown) + Send);

/// What generator-style training needs from a model.
trait Trainable: Clone + Send + Sync {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn sample(&self, x: &Image, classifier: &ClassifierNet, w: &LossWeights) -> Result<(LossBreakdown, ParamGrads)>;
    /// Terms outside the expectation, added once per step.
    fn per_step(&self, w: &LossWeights, grads: &mut ParamGrads) -> Result<f64>;
}

impl Trainable for GeneratorPair {
    fn params(&self) -> &ParamSet {
        GeneratorPair::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        GeneratorPair::params_mut(self)
    }

    fn sample(&self, x: &Image, classifier: &ClassifierNet, w: &LossWeights) -> Result<(LossBreakdown, ParamGrads)> {
        losses::sample_loss_and_grads(x, self, classifier, w)
    }

    fn per_step(&self, w: &LossWeights, grads: &mut ParamGrads) -> Result<f64> {
        losses::generator_weight_loss_grad(self, w, grads)
    }
}

impl Trainable for AdversarialGenerator {
    fn params(&self) -> &ParamSet {
        AdversarialGenerator::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        AdversarialGenerator::params_mut(self)
    }

    fn sample(&self, x: &Image, classifier: &ClassifierNet, w: &LossWeights) -> Result<(LossBreakdown, ParamGrads)> {
        losses::naive_sample_loss_and_grads(x, self, classifier, w)
    }

    fn per_step(&self, _: &LossWeights, _: &mut ParamGrads) -> Result<f64> {
        Ok(0.0)
    }
}

/// Batch mean of the expectation terms plus the per-step terms, with
/// gradients.
fn batch_objective<M: Trainable>(model: &M, inputs: &[Image], classifier: &ClassifierNet, w: &LossWeights) -> Result<(LossBreakdown, ParamGrads)> {
    let parts = inputs.par_iter().map(|x| model.sample(x, classifier, w)).collect::<Result<Vec<_>>>()?;
    let (loss, mut grads) = ordered_sum(parts, model.params());
    let inv = 1.0 / inputs.len() as f64;
    scale_grads(&mut grads, inv);
    let l_sa = model.per_step(w, &mut grads)?;
    let m = loss.scaled(inv);
    Ok((LossBreakdown::new(m.l_d, m.l_fc, m.l_reg, l_sa), grads))
}

fn validation_loss<M: Trainable>(model: &M, val: &Dataset, classifier: &ClassifierNet, w: &LossWeights) -> Result<f64> {
    let inputs: Vec<Image> = val.samples.iter().map(|s| s.image.clone()).collect();
    Ok(batch_objective(model, &inputs, classifier, w)?.0.total)
}

fn train_generator_like<M: Trainable>(
    mut model: M,
    classifier: &ClassifierNet,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    mut hook: Option<StepHook<'_, M>>,
) -> Result<(M, TrainHistory)> {
    config.validate()?;
    ensure_non_empty(train, "train")?;
    ensure_non_empty(val, "val")?;
    let frozen = classifier.params().fingerprint();
    let w = &config.loss_weights;
    let pool = thread_pool()?;
    let result = pool.install(|| {
        let mut adam = AdamState::new(model.params());
        let mut sched = PlateauScheduler::new(config.initial_lr, config.lr_decay_factor, config.plateau_patience);
        let (mut shuffle, mut aug) = (stream(config.seed, SHUFFLE_STREAM), stream(config.seed, AUGMENT_STREAM));
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut history = TrainHistory { best_metric: f64::INFINITY, ..TrainHistory::default() };
        let mut best = model.clone();
        let mut lr = config.initial_lr;
        for epoch in 1..=config.epochs {
            let started = Instant::now();
            order.shuffle(&mut shuffle);
            let mut epoch_loss = LossBreakdown::default();
            let mut steps = 0usize;
            for batch in order.chunks(config.batch_size) {
                let inputs = augmented_inputs(train, batch, config, &mut aug);
                let (loss, grads) = batch_objective(&model, &inputs, classifier, w)?;
                if !loss.total.is_finite() {
                    return Err(diverged(epoch, &history));
                }
                if let Some(h) = hook.as_mut() {
                    h(&model, &inputs, &loss);
                }
                adam_step(model.params_mut(), &grads, &mut adam, lr).map_err(|_| diverged(epoch, &history))?;
                epoch_loss.accumulate(&loss);
                steps += 1;
            }
            let epoch_loss = epoch_loss.scaled(1.0 / steps as f64);
            let val_loss = validation_loss(&model, val, classifier, w)?;
            if !val_loss.is_finite() {
                return Err(diverged(epoch, &history));
            }
            history.epochs.push(EpochRecord { epoch, lr, loss: epoch_loss, val_metric: val_loss, wall_secs: started.elapsed().as_secs_f64() });
            if val_loss < history.best_metric {
                history.best_metric = val_loss;
                history.best_epoch = epoch;
                best = model.clone();
            }
            lr = sched.observe(epoch_loss.total);
        }
        Ok((best, history))
    });
    if classifier.params().fingerprint() != frozen {
        return Err(Error::FrozenViolation);
    }
    result
}

/// Jointly trains both generators against the frozen classifier; returns
/// the epoch with the lowest validation objective.
pub fn train_generators(
    classifier: &ClassifierNet,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    mode: GenMode,
    arch: GeneratorArch,
) -> Result<(GeneratorPair, TrainHistory)> {
    train_generators_with_hook(classifier, train, val, config, mode, arch, None)
}

pub fn train_generators_with_hook(
    classifier: &ClassifierNet,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    mode: GenMode,
    arch: GeneratorArch,
    hook: Option<StepHook<'_, GeneratorPair>>,
) -> Result<(GeneratorPair, TrainHistory)> {
    let pair = GeneratorPair::init(mode, arch, config.seed)?;
    train_generator_like(pair, classifier, train, val, config, hook)
}

/// The single-adversary baseline: α2, β2 and λ terms only.
pub fn train_naive(
    classifier: &ClassifierNet,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    arch: GeneratorArch,
) -> Result<(AdversarialGenerator, TrainHistory)> {
    let g = AdversarialGenerator::init(arch, config.seed)?;
    train_generator_like(g, classifier, train, val, config, None)
}

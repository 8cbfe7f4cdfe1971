//! Training and evaluation loops, history logging, checkpoints, and the
//! ablation runner.

mod ablation;
mod checkpoint;

pub use ablation::{run_ablation, AblationReport, AblationRow};
pub use checkpoint::{model_tag, parse_model_tag, Checkpoint, FORMAT_VERSION, MAGIC};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{
    augment, augment_seed, batch_of, load_dataset, split_train_val, synth_crack_corpus, to_working_size,
    AugmentConfig, Sample,
};
use crate::error::{Error, Result};
use crate::graph::{LayerGraph, Mode};
use crate::models::{build_variant, ModelConfig, ModelVariant};
use crate::optim::{bce_loss, AdamConfig, AdamState, Confusion, Metrics};
use crate::seed;

/// Where training samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// `<root>/cracked` and `<root>/non-cracked`.
    Directory(PathBuf),
    /// Generated in memory at `size` pixels, then resized to the input size.
    Synthetic { n_per_class: usize, seed: u64, size: usize },
}

impl DataSource {
    /// Samples at `input_size x input_size`, cracked first.
    pub fn load(&self, input_size: usize) -> Result<Vec<Sample>> {
        match self {
            DataSource::Directory(root) => {
                let (index, samples) = load_dataset(root, input_size)?;
                if !index.skipped.is_empty() {
                    log::warn!("skipped {} unreadable file(s) under {}", index.skipped.len(), root.display());
                }
                Ok(samples)
            }
            &DataSource::Synthetic { n_per_class, seed, size } => synth_crack_corpus(n_per_class, seed, size)?
                .into_par_iter()
                .map(|s| Ok(Sample { image: to_working_size(&s.image, input_size)?, ..s }))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub variant: ModelVariant,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub val_frac: f64,
    /// `None` trains on the original samples only.
    pub augment: Option<AugmentConfig>,
    pub seed: u64,
    pub data: DataSource,
    /// Checkpoints and history are written here when set.
    pub output_dir: Option<PathBuf>,
    /// Stop after this many epochs without a new lowest validation loss.
    pub patience: Option<usize>,
    /// Stop as soon as validation accuracy reaches this percentage.
    pub target_val_acc: Option<f64>,
    /// Stop as soon as epoch training accuracy reaches this percentage.
    pub target_train_acc: Option<f64>,
    /// When false the `seconds` history column is written as 0.
    pub record_wall_time: bool,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: ModelVariant::DuccNet,
            model: ModelConfig::default(),
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            val_frac: 0.1,
            augment: Some(AugmentConfig::default()),
            seed: 0,
            data: DataSource::Synthetic { n_per_class: 200, seed: 0, size: 256 },
            output_dir: None,
            patience: Some(10),
            target_val_acc: None,
            target_train_acc: None,
            record_wall_time: true,
            eval_batch_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch size must be >= 2 for batch-norm statistics, got {}",
                self.batch_size
            )));
        }
        if self.eval_batch_size < 1 {
            return Err(Error::Config("evaluation batch size must be >= 1".into()));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return Err(Error::Config(format!("validation fraction must be in (0, 1), got {}", self.val_frac)));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc,seconds";

pub fn history_csv(records: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{},{:.6},{:.4},{:.6},{:.4},{:.3}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.seconds
        )
        .unwrap();
    }
    out
}

/// Result of an infer-mode pass over labelled samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    /// Mean binary cross-entropy.
    pub loss: f64,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.metrics.validation_accuracy().unwrap_or(0.0)
    }

    pub fn confusion(&self) -> Confusion {
        self.metrics.confusion()
    }
}

/// Infer-mode probabilities for `samples`, in order.
pub fn predict(graph: &LayerGraph, samples: &[Sample], batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = batch_of(&refs)?;
        out.extend(graph.infer(&x)?.data().iter().map(|&p| p as f64));
    }
    Ok(out)
}

/// Infer-mode metrics and mean loss, thresholding at 0.5.
pub fn evaluate(graph: &LayerGraph, samples: &[Sample], batch_size: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut metrics = Metrics::default();
    let mut loss_sum = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = batch_of(&refs)?;
        let p = graph.infer(&x)?;
        loss_sum += bce_loss(&p, &y)?.0 * chunk.len() as f64;
        for (&pi, s) in p.data().iter().zip(chunk) {
            metrics.record(pi as f64, s.label.value() as f64);
        }
    }
    Ok(Evaluation { metrics, loss: loss_sum / samples.len() as f64 })
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub graph: LayerGraph,
    pub history: Vec<EpochRecord>,
    /// Snapshot at the highest validation accuracy (earliest on ties).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub train_samples: usize,
    pub val: Vec<Sample>,
}

/// Splits `samples` into contiguous batches of `batch`, folding a trailing
/// single-sample batch into its predecessor.
fn batch_bounds(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(batch).map(|s| (s, (s + batch).min(n))).collect();
    if out.len() > 1 && out.last().is_some_and(|&(s, e)| e - s == 1) {
        let (_, e) = out.pop().unwrap();
        out.last_mut().unwrap().1 = e;
    }
    out
}

/// Loads the configured data, splits it, and trains.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = cfg.data.load(cfg.model.input_size)?;
    let (train_set, val_set) = split_train_val(samples, cfg.val_frac, cfg.seed)?;
    train_on(cfg, &train_set, val_set)
}

/// Trains on an explicit train/validation partition.
pub fn train_on(cfg: &TrainConfig, train_set: &[Sample], val: Vec<Sample>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::Dataset(format!("need at least 2 training samples, got {}", train_set.len())));
    }
    let mut graph: LayerGraph = build_variant(cfg.variant, &cfg.model, cfg.seed)?;
    let mut adam = AdamState::new(cfg.adam, graph.trainable().into_iter().map(|(_, t)| t))?;
    let tag = model_tag(cfg.variant, &cfg.model);
    if cfg.augment.is_some() {
        log::info!(
            "augmentation on: each epoch sees the {} originals plus one augmented copy each ({} samples)",
            train_set.len(),
            2 * train_set.len()
        );
    }
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut history = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut best_loss = f64::INFINITY;
    let mut since_improved = 0;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut epoch_set: Vec<Sample> = train_set.to_vec();
        if let Some(aug) = &cfg.augment {
            let copies = train_set
                .par_iter()
                .enumerate()
                .map(|(i, s)| augment(s, aug, &mut seed::rng(augment_seed(aug.seed, epoch, i), &[])))
                .collect::<Result<Vec<_>>>()?;
            epoch_set.extend(copies);
        }
        epoch_set.shuffle(&mut seed::rng(cfg.seed, &[0x5f1e, epoch as u64]));

        let mut metrics = Metrics::default();
        let mut loss_sum = 0.0;
        for (b, (s, e)) in batch_bounds(epoch_set.len(), cfg.batch_size).into_iter().enumerate() {
            let refs: Vec<&Sample> = epoch_set[s..e].iter().collect();
            let (x, y) = batch_of(&refs)?;
            let step_seed = seed::derive(cfg.seed, &[0xd20b, epoch as u64, b as u64]);
            let (p, tape) = graph.forward(&x, Mode::Train, step_seed)?;
            let (loss, dl) = bce_loss(&p, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            let grads = graph.backward(&tape, &dl)?;
            let g = grads.tensors();
            adam.step(&mut graph.trainable_mut(), &g)?;
            loss_sum += loss * (e - s) as f64;
            for (&pi, smp) in p.data().iter().zip(&epoch_set[s..e]) {
                metrics.record(pi as f64, smp.label.value() as f64);
            }
        }
        let val_eval = evaluate(&graph, &val, cfg.eval_batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / epoch_set.len() as f64,
            train_acc: metrics.validation_accuracy()?,
            val_loss: val_eval.loss,
            val_acc: val_eval.accuracy(),
            seconds: if cfg.record_wall_time { started.elapsed().as_secs_f64() } else { 0.0 },
        };
        log::info!(
            "epoch {:>3}: train_loss {:.4} train_acc {:.2} val_loss {:.4} val_acc {:.2} ({:.1}s)",
            record.epoch,
            record.train_loss,
            record.train_acc,
            record.val_loss,
            record.val_acc,
            record.seconds
        );
        if best.as_ref().is_none_or(|(acc, _)| record.val_acc > *acc) {
            best = Some((record.val_acc, Checkpoint::from_graph(&graph, &tag, cfg.seed, epoch as u32)));
        }
        let reached = cfg.target_val_acc.is_some_and(|t| record.val_acc >= t)
            || cfg.target_train_acc.is_some_and(|t| record.train_acc >= t);
        if record.val_loss < best_loss {
            best_loss = record.val_loss;
            since_improved = 0;
        } else {
            since_improved += 1;
        }
        history.push(record);
        if let Some(dir) = &cfg.output_dir {
            write_history(&dir.join("history.csv"), &history)?;
        }
        if reached {
            log::info!("target accuracy reached at epoch {epoch}");
            break;
        }
        if cfg.patience.is_some_and(|p| since_improved >= p) {
            log::info!("early stop at epoch {epoch}: no validation-loss improvement for {since_improved} epochs");
            break;
        }
    }

    let last_epoch = history.last().map_or(0, |r| r.epoch) as u32;
    let last = Checkpoint::from_graph(&graph, &tag, cfg.seed, last_epoch);
    let best = best.map(|(_, c)| c).unwrap_or_else(|| last.clone());
    if let Some(dir) = &cfg.output_dir {
        best.save(&dir.join("best.ducc"))?;
        last.save(&dir.join("final.ducc"))?;
    }
    Ok(TrainOutcome { graph, history, best, last, train_samples: train_set.len(), val })
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}

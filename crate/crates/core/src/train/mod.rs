//! SGD training with a step learning-rate schedule, per-epoch validation,
//! history logging and resumable checkpoints.

mod checkpoint;
mod sgd;

pub use checkpoint::Checkpoint;
pub use sgd::{LrSchedule, Sgd};

use std::path::{Path, PathBuf};

use crate::arch::MacNet;
use crate::autograd::Tape;
use crate::data::{AugmentationPolicy, Batcher, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::loss::{softmax_cross_entropy, ClassWeights};
use crate::metrics::{EvalAccumulator, EvalReport};
use crate::ops::{softmax_forward, Mode};
use crate::rng::stream;
use crate::tensor::Real;

const DROPOUT_STREAM: u64 = 0xd809;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Drives batch order, augmentation and dropout.
    pub seed: u64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub augment: bool,
    /// Also write `epoch_NNN.ckpt` every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Where `history.csv` and `checkpoints/` go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    /// Measure eval-mode accuracy on the training split after each epoch.
    pub track_train_accuracy: bool,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            epochs: 100,
            batch_size: 32,
            seed: 0,
            schedule: LrSchedule::default(),
            momentum: 0.9,
            weight_decay: 0.0005,
            augment: true,
            checkpoint_every: 0,
            out_dir: None,
            track_train_accuracy: true,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        self.schedule.validate()
    }
}

/// One row of `history.csv`. Validation columns are NaN when the
/// validation split is empty, and `train_top1` when tracking is off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Epoch loss sum divided by the number of training images.
    pub train_loss: f64,
    pub val_top1: f64,
    pub val_top5: f64,
    pub val_macro_f1: f64,
    pub train_top1: f64,
}

const HISTORY_HEADER: [&str; 7] = ["epoch", "lr", "train_loss", "val_top1", "val_top5", "val_macro_f1", "train_top1"];

impl HistoryRecord {
    fn fields(&self) -> [String; 7] {
        [
            self.epoch.to_string(),
            self.lr.to_string(),
            self.train_loss.to_string(),
            self.val_top1.to_string(),
            self.val_top5.to_string(),
            self.val_macro_f1.to_string(),
            self.train_top1.to_string(),
        ]
    }
}

pub fn write_history(path: impl AsRef<Path>, history: &[HistoryRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HISTORY_HEADER)?;
    for r in history {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: impl AsRef<Path>) -> Result<Vec<HistoryRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let bad = |reason: String| Error::Format { line, reason };
        let f = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| bad(format!("missing column `{}`", HISTORY_HEADER[k])))?
                .parse()
                .map_err(|_| bad(format!("column `{}` is not a number", HISTORY_HEADER[k])))
        };
        let epoch = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad epoch".into()))?;
        out.push(HistoryRecord {
            epoch,
            lr: f(1)?,
            train_loss: f(2)?,
            val_top1: f(3)?,
            val_top5: f(4)?,
            val_macro_f1: f(5)?,
            train_top1: f(6)?,
        });
    }
    Ok(out)
}

/// Eval-mode report over every image of `batcher`. Leaves the model
/// untouched.
pub fn evaluate_batcher<T: Real>(model: &MacNet<T>, batcher: &Batcher) -> Result<EvalReport> {
    let mut acc = EvalAccumulator::new(model.config().num_classes);
    for batch in batcher.epoch::<T>(0) {
        let batch = batch?;
        let probs = softmax_forward(&model.eval_logits(&batch.images)?)?;
        acc.add_batch(&probs, &batch.labels)?;
    }
    acc.finish()
}

/// Eval-mode report on one split, centre-cropped and unaugmented.
pub fn evaluate<T: Real>(model: &MacNet<T>, manifest: &DatasetManifest, split: Split, batch_size: usize) -> Result<EvalReport> {
    if manifest.image_count(split) == 0 {
        return Err(Error::contract(format!("split `{split}` has no images to evaluate")));
    }
    let crop = model.config().input_size;
    let batcher = Batcher::new(manifest, split, batch_size, 0, AugmentationPolicy::disabled(crop))?;
    evaluate_batcher(model, &batcher)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<HistoryRecord>,
    /// Epoch with the highest validation macro-F1 (earliest on ties).
    pub best: Option<(usize, f64)>,
}

pub struct Trainer<T> {
    pub model: MacNet<T>,
    pub optimizer: Sgd<T>,
    config: TrainRunConfig,
    weights: ClassWeights,
    train: Batcher,
    train_eval: Option<Batcher>,
    val: Option<Batcher>,
    history: Vec<HistoryRecord>,
    next_epoch: usize,
    best: Option<(usize, f64)>,
    last_good: Option<PathBuf>,
}

impl<T: Real> Trainer<T> {
    /// Prepares a fresh run. Class weights come from the training split.
    pub fn new(model: MacNet<T>, manifest: &DatasetManifest, config: TrainRunConfig) -> Result<Self> {
        config.validate()?;
        let classes = model.config().num_classes;
        if manifest.num_classes() != classes {
            return Err(Error::config(format!(
                "manifest has {} classes but the model predicts {classes}",
                manifest.num_classes()
            )));
        }
        let weights = ClassWeights::from_counts(&manifest.class_counts(Split::Train))?;
        let crop = model.config().input_size;
        let policy = if config.augment {
            AugmentationPolicy::standard(crop)
        } else {
            AugmentationPolicy::disabled(crop)
        };
        let train = Batcher::new(manifest, Split::Train, config.batch_size, config.seed, policy)?;
        let train_eval = config.track_train_accuracy.then(|| train.without_augmentation());
        let val = if manifest.image_count(Split::Val) > 0 {
            Some(Batcher::new(
                manifest,
                Split::Val,
                config.batch_size,
                0,
                AugmentationPolicy::disabled(crop),
            )?)
        } else {
            None
        };
        let optimizer = Sgd::new(model.store(), config.momentum, config.weight_decay, config.schedule.lr_at(0));
        if let Some(dir) = &config.out_dir {
            std::fs::create_dir_all(dir.join("checkpoints"))?;
        }
        Ok(Trainer {
            model,
            optimizer,
            config,
            weights,
            train,
            train_eval,
            val,
            history: Vec::new(),
            next_epoch: 0,
            best: None,
            last_good: None,
        })
    }

    /// Continues from a checkpoint written by a previous run: weights,
    /// moments, velocities, epoch counter and best-epoch record. History
    /// rows after the stored epoch are dropped.
    pub fn resume(checkpoint: &Checkpoint, manifest: &DatasetManifest, config: TrainRunConfig) -> Result<Self> {
        let model = checkpoint.build_model()?;
        let mut trainer = Self::new(model, manifest, config)?;
        let epoch = checkpoint
            .epoch
            .ok_or_else(|| Error::Checkpoint("checkpoint was not written during training".into()))?;
        checkpoint.restore_optimizer(&trainer.model, &mut trainer.optimizer)?;
        trainer.next_epoch = epoch + 1;
        if let (Some(e), Some(f)) = (checkpoint.extra("best_epoch"), checkpoint.extra("best_val_macro_f1")) {
            let parse = || Error::Checkpoint("invalid best-epoch record".into());
            trainer.best = Some((e.parse().map_err(|_| parse())?, f.parse().map_err(|_| parse())?));
        }
        if let Some(dir) = &trainer.config.out_dir {
            let path = dir.join("history.csv");
            if path.exists() {
                trainer.history = read_history(&path)?.into_iter().filter(|r| r.epoch <= epoch).collect();
            }
        }
        Ok(trainer)
    }

    pub fn config(&self) -> &TrainRunConfig {
        &self.config
    }

    pub fn weights(&self) -> &ClassWeights {
        &self.weights
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }

    /// Runs one epoch of SGD followed by evaluation and bookkeeping.
    pub fn run_epoch(&mut self) -> Result<HistoryRecord> {
        let epoch = self.next_epoch;
        let lr = self.config.schedule.lr_at(epoch);
        self.optimizer.current_lr = lr;
        self.model.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        for (b, batch) in self.train.epoch::<T>(epoch).enumerate() {
            let batch = batch?;
            let mut tape = Tape::new();
            let x = tape.constant(batch.images);
            let mut rng = stream(&[self.config.seed, epoch as u64, b as u64, DROPOUT_STREAM]);
            let trace = self.model.forward(&mut tape, x, Some(&mut rng))?;
            let loss = softmax_cross_entropy(&mut tape, trace.logits, &batch.labels, &self.weights)?;
            let value = tape.value(loss).data()[0].as_f64();
            if !value.is_finite() {
                return Err(self.diverged(epoch));
            }
            loss_sum += value;
            tape.backward(loss)?;
            self.model.store_mut().zero_grads();
            self.model.store_mut().accumulate_grads(&tape, &trace.params)?;
            self.optimizer.step(self.model.store_mut())?;
        }
        self.model.set_mode(Mode::Eval);

        let nan = f64::NAN;
        let (val_top1, val_top5, val_macro_f1) = match &self.val {
            Some(v) => {
                let r = evaluate_batcher(&self.model, v)?;
                (r.top1, r.top5, r.macro_f1)
            }
            None => (nan, nan, nan),
        };
        let train_top1 = match &self.train_eval {
            Some(t) => evaluate_batcher(&self.model, t)?.top1,
            None => nan,
        };
        let record = HistoryRecord {
            epoch,
            lr,
            train_loss: loss_sum / self.train.len() as f64,
            val_top1,
            val_top5,
            val_macro_f1,
            train_top1,
        };
        self.history.push(record);
        self.next_epoch = epoch + 1;
        let improved = val_macro_f1.is_finite() && self.best.is_none_or(|(_, f)| val_macro_f1 > f);
        if improved {
            self.best = Some((epoch, val_macro_f1));
        }
        self.persist(epoch, improved)?;
        Ok(record)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        while self.next_epoch < self.config.epochs {
            self.run_epoch()?;
        }
        Ok(TrainOutcome {
            history: self.history.clone(),
            best: self.best,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let epoch = self.next_epoch.checked_sub(1);
        let mut ck = Checkpoint::from_model(&self.model, Some(&self.optimizer), epoch)
            .with_extra("train.seed", self.config.seed)
            .with_extra("train.batch_size", self.config.batch_size);
        if let Some((e, f)) = self.best {
            ck = ck.with_extra("best_epoch", e).with_extra("best_val_macro_f1", f);
        }
        ck
    }

    fn persist(&mut self, epoch: usize, improved: bool) -> Result<()> {
        let Some(dir) = self.config.out_dir.clone() else { return Ok(()) };
        write_history(dir.join("history.csv"), &self.history)?;
        let ck = self.checkpoint();
        let ckdir = dir.join("checkpoints");
        let last = ckdir.join("last.ckpt");
        ck.save(&last)?;
        self.last_good = Some(last);
        if self.config.checkpoint_every > 0 && (epoch + 1).is_multiple_of(self.config.checkpoint_every) {
            ck.save(ckdir.join(format!("epoch_{epoch:03}.ckpt")))?;
        }
        if improved {
            ck.save(ckdir.join("best.ckpt"))?;
        }
        Ok(())
    }

    fn diverged(&self, epoch: usize) -> Error {
        let last_good = self
            .last_good
            .as_ref()
            .map_or_else(|| "none".to_string(), |p| p.display().to_string());
        Error::TrainingDiverged { epoch, last_good }
    }
}

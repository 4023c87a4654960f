use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encode::{make_batch, EncodedExample};
use super::metrics::{evaluate, mean_loss, Metrics};
use crate::engine::ops::Mode;
use crate::engine::optim::{RmsProp, RmsPropConfig};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a strictly lower validation loss before stopping.
    pub patience: usize,
    pub seed: u64,
    pub optimizer: RmsPropConfig,
    /// Run the loop without updating parameters or running statistics.
    pub freeze: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            optimizer: RmsPropConfig::default(),
            freeze: false,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidParameter(format!("batch size must be >= 2, got {}", self.batch_size)));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidParameter("patience must be >= 1".into()));
        }
        let lr = self.optimizer.learning_rate;
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::InvalidParameter(format!("learning rate must be positive, got {lr}")));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub seconds: f64,
}

/// Steps a model through epochs of mini-batch RMSprop.
pub struct Trainer<T> {
    pub model: Model<T>,
    optimizer: RmsProp<T>,
    options: TrainOptions,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(mut model: Model<T>, options: TrainOptions) -> Result<Self> {
        options.validate()?;
        let optimizer = RmsProp::new(options.optimizer)?;
        model.reseed(options.seed ^ 0x5eed_d20b);
        model.set_update_running_stats(!options.freeze);
        Ok(Trainer {
            model,
            optimizer,
            rng: ChaCha8Rng::seed_from_u64(options.seed),
            options,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Shuffled batches; a trailing batch of one joins the previous batch,
    /// since batch normalization needs two samples.
    fn batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.rng);
        let mut batches: Vec<Vec<usize>> = idx.chunks(self.options.batch_size).map(<[usize]>::to_vec).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            let last = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(last);
        }
        batches
    }

    /// One pass over `train`; returns the example-weighted mean train-mode loss.
    pub fn run_epoch(&mut self, train: &[EncodedExample]) -> Result<f64> {
        if train.is_empty() {
            return Err(Error::Empty("training split".into()));
        }
        self.epoch += 1;
        let mut total = 0.0;
        for batch_idx in self.batches(train.len()) {
            let refs: Vec<&EncodedExample> = batch_idx.iter().map(|&i| &train[i]).collect();
            let batch = make_batch::<T>(&refs)?;
            let loss = self.model.loss_and_grad(&batch, Mode::Train)?.as_f64();
            if !loss.is_finite() {
                let tensor = self.model.first_non_finite().unwrap_or_else(|| "loss".into());
                return Err(Error::Divergence { epoch: self.epoch, tensor });
            }
            total += loss * refs.len() as f64;
            if !self.options.freeze {
                self.optimizer.step(&mut self.model.params_mut());
            }
        }
        Ok(total / train.len() as f64)
    }
}

pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Model<T>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains with early stopping on validation loss. `on_epoch` sees each log
/// row as soon as it is produced.
pub fn train<T: Scalar>(
    model: Model<T>,
    train: &[EncodedExample],
    validation: &[EncodedExample],
    options: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    if validation.is_empty() {
        return Err(Error::Empty("validation split".into()));
    }
    let mut trainer = Trainer::new(model, options.clone())?;
    let mut best: Option<(f64, usize, Model<T>)> = None;
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut stopped_early = false;
    for _ in 0..options.max_epochs {
        let start = Instant::now();
        let train_loss = trainer.run_epoch(train)?;
        let val_loss = mean_loss(&mut trainer.model, validation)?;
        if !val_loss.is_finite() {
            let tensor = trainer.model.first_non_finite().unwrap_or_else(|| "validation loss".into());
            return Err(Error::Divergence { epoch: trainer.epoch(), tensor });
        }
        let val_f1 = evaluate(&mut trainer.model, validation)?.f1;
        let row = EpochLog {
            epoch: trainer.epoch(),
            train_loss,
            val_loss,
            val_f1,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {} train_loss {:.4} val_loss {:.4} val_f1 {:.4}", row.epoch, train_loss, val_loss, val_f1);
        on_epoch(&row);
        log.push(row);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, trainer.epoch(), trainer.model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= options.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        stopped_early,
    })
}

/// Logistic regression over the standardized explicit text vector, trained
/// with the same loop, evaluated on `test`.
pub fn train_lr_baseline(
    train_set: &[EncodedExample],
    validation: &[EncodedExample],
    test: &[EncodedExample],
    options: &TrainOptions,
) -> Result<(TrainOutcome<f32>, Metrics)> {
    let model = Model::<f32>::build(&ModelConfig::logistic_text(), options.seed)?;
    let mut outcome = train(model, train_set, validation, options, |_| {})?;
    let metrics = evaluate(&mut outcome.model, test)?;
    Ok((outcome, metrics))
}

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::events::ResolvedGrid;
use super::{predict_corpus, run_process, Mode, Model};
use crate::config::ModelConfig;
use crate::corpus::ProcessInstance;
use crate::eval::{score_task1, Task1Report};
use crate::forward::Forward;
use crate::tensor::{Adam, AdamConfig, Tape};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without a dev improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            learning_rate: AdamConfig::default().lr,
            batch_size: 8,
            epochs: 200,
            seed: 1,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(Error::Config)?;
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, epochs and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

pub const METRICS_HEADER: &str = "epoch,loss,cat1,cat2,cat3,macro,micro";

/// One line of the metrics log; `loss` is the mean per-process loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub cat1: f64,
    pub cat2: f64,
    pub cat3: f64,
    pub macro_avg: f64,
    pub micro: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.epoch, self.loss, self.cat1, self.cat2, self.cat3, self.macro_avg, self.micro
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev micro-average.
    pub best: Model,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

/// Teacher-forced loss over `batch`, one backward pass per process, then a
/// single optimizer step. `seeds[k]` drives the dropout masks of process `k`.
/// Returns the summed loss.
pub fn teacher_forced_step(model: &mut Model, adam: &mut Adam, batch: &[&ProcessInstance], seeds: &[u64]) -> Result<f64> {
    model.params.zero_grad();
    let mut total = 0.0;
    for (inst, &seed) in batch.iter().zip(seeds) {
        let grads = {
            let tape = Tape::new();
            let fw = Forward::train(&tape, &model.params, &model.config, &model.embeddings, seed);
            let run = run_process(&fw, inst, Mode::TeacherForced)?;
            let loss = run.loss.ok_or_else(|| Error::Config("process produced no loss terms".into()))?;
            total += tape.scalar(loss);
            tape.backward(loss)?
        };
        grads.accumulate_into(&mut model.params)?;
    }
    adam.step(&mut model.params)?;
    Ok(total)
}

/// Task 1 scores of free-running predictions against gold.
pub fn evaluate_dev(model: &Model, dev: &[ProcessInstance]) -> Result<Task1Report> {
    let preds: Vec<ResolvedGrid> = predict_corpus(model, dev)?.iter().map(|g| g.resolved()).collect();
    let golds: Vec<ResolvedGrid> = dev.iter().map(ResolvedGrid::gold).collect();
    score_task1(&preds, &golds)
}

/// Trains `model` on `train_set` with seeded shuffling and dropout, scoring
/// `dev` after every epoch and keeping the best parameters. Stops after
/// `patience` epochs without improvement, or once dev is perfect.
pub fn train(
    train_set: &[ProcessInstance],
    dev: &[ProcessInstance],
    config: &TrainConfig,
    mut model: Model,
    mut on_epoch: impl FnMut(&EpochMetrics, &Model),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || dev.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if model.config != config.model {
        return Err(Error::Config("model was built with a different configuration".into()));
    }
    let mut adam = Adam::new(AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xd50f_0a7e);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&ProcessInstance> = chunk.iter().map(|&k| &train_set[k]).collect();
            let seeds: Vec<u64> = batch.iter().map(|_| dropout_rng.gen()).collect();
            loss += teacher_forced_step(&mut model, &mut adam, &batch, &seeds)?;
        }
        let report = evaluate_dev(&model, dev)?;
        let m = EpochMetrics {
            epoch,
            loss: loss / train_set.len() as f64,
            cat1: report.cat1,
            cat2: report.cat2,
            cat3: report.cat3,
            macro_avg: report.macro_avg,
            micro: report.micro,
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, dev micro {:.2}, macro {:.2}",
            m.loss,
            m.micro,
            m.macro_avg
        );
        on_epoch(&m, &model);
        metrics.push(m);
        if best.as_ref().is_none_or(|b| report.micro > b.0) {
            best = Some((report.micro, epoch, model.clone()));
        }
        let (best_micro, best_epoch, _) = best.as_ref().expect("set above");
        if *best_micro >= 100.0 || epoch - best_epoch >= config.patience {
            break;
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        metrics,
    })
}

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use super::optim::{accumulate, scale, Adam};
use super::pipeline::{stream_rng, Example, ExampleOutcome, Pipeline, STREAM_SHUFFLE};
use crate::config::{LossConfig, OptimConfig};
use crate::error::{Error, Result};
use crate::neurons::SpikeMode;
use crate::tensor::Parameters;

/// Per-epoch training summary. `wall_clock_s` is kept out of the serialized
/// report so repeated runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub firing_rate: f64,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub firing_rate: f64,
}

pub struct Trainer {
    pub pipeline: Pipeline,
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub seed: u64,
    adam: Adam,
    lr_scale: Vec<f64>,
    pool: rayon::ThreadPool,
    epoch: usize,
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid("threads", e.to_string()))
}

/// Forward/backward for a batch, with results in input order whatever the thread count.
fn batch_outcomes(
    pool: &rayon::ThreadPool,
    pipeline: &Pipeline,
    batch: &[&Example],
    weights: &LossWeights,
) -> Result<Vec<ExampleOutcome>> {
    pool.install(|| {
        batch
            .par_iter()
            .map(|ex| pipeline.loss_and_grad(ex, weights, SpikeMode::Hard))
            .collect()
    })
}

impl Trainer {
    pub fn new(pipeline: Pipeline, optim: OptimConfig, loss: LossConfig, seed: u64, threads: usize) -> Result<Self> {
        optim.validate()?;
        loss.validate()?;
        let adam = Adam::new(&optim, pipeline.param_count());
        let mut lr_scale = Vec::with_capacity(pipeline.param_count());
        pipeline.visit(&mut |name, _, data| {
            let front = name.starts_with("gabor.") || name.starts_with("pcen.");
            lr_scale.extend(std::iter::repeat(if front { optim.frontend_lr_scale } else { 1.0 }).take(data.len()));
        });
        Ok(Self {
            lr_scale,
            pipeline,
            optim,
            loss,
            seed,
            adam,
            pool: build_pool(threads)?,
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Visit order for an epoch; depends only on the seed and epoch index.
    pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = stream_rng(
            seed.wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            STREAM_SHUFFLE,
        );
        order.shuffle(&mut rng);
        order
    }

    /// One shuffled pass of minibatch Adam; constraints are projected after every step.
    pub fn train_epoch(&mut self, data: &[Example]) -> Result<TrainReport> {
        if data.is_empty() {
            return Err(Error::invalid("train_manifest", "dataset is empty"));
        }
        let start = Instant::now();
        let weights = LossWeights::from(&self.loss);
        let lr = self.optim.learning_rate_at(self.epoch);
        let order = Self::epoch_order(self.seed, self.epoch, data.len());
        let (mut loss_sum, mut correct, mut rate_sum) = (0.0, 0usize, 0.0);
        for (step, chunk) in order.chunks(self.optim.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let outcomes = batch_outcomes(&self.pool, &self.pipeline, &batch, &weights)?;
            let mut grads = self.pipeline.zeros_like();
            for o in &outcomes {
                if !o.loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch: self.epoch,
                        step,
                        loss: o.loss,
                    });
                }
                loss_sum += o.loss;
                rate_sum += o.rate;
                correct += o.correct as usize;
                accumulate(&mut grads, &o.grads);
            }
            scale(&mut grads, 1.0 / outcomes.len() as f64);
            self.adam
                .step_scaled(&mut self.pipeline, &grads, lr, Some(&self.lr_scale));
            self.pipeline.project();
        }
        let n = data.len() as f64;
        let report = TrainReport {
            epoch: self.epoch,
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
            firing_rate: rate_sum / n,
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        Ok(report)
    }

    pub fn fit(&mut self, data: &[Example]) -> Result<Vec<TrainReport>> {
        (0..self.optim.epochs).map(|_| self.train_epoch(data)).collect()
    }

    pub fn evaluate(&self, data: &[Example]) -> Result<EvalSummary> {
        evaluate_with(&self.pool, &self.pipeline, data)
    }
}

/// Accuracy and mean encoder firing rate with hard spikes.
pub fn evaluate(pipeline: &Pipeline, data: &[Example], threads: usize) -> Result<EvalSummary> {
    evaluate_with(&build_pool(threads)?, pipeline, data)
}

fn evaluate_with(pool: &rayon::ThreadPool, pipeline: &Pipeline, data: &[Example]) -> Result<EvalSummary> {
    if data.is_empty() {
        return Err(Error::invalid("test_manifest", "dataset is empty"));
    }
    let preds: Vec<(bool, f64)> = pool.install(|| {
        data.par_iter()
            .map(|ex| pipeline.predict_example(ex).map(|p| (p.label == ex.label, p.rate)))
            .collect::<Result<_>>()
    })?;
    let n = data.len() as f64;
    Ok(EvalSummary {
        accuracy: preds.iter().filter(|p| p.0).count() as f64 / n,
        firing_rate: preds.iter().map(|p| p.1).sum::<f64>() / n,
    })
}

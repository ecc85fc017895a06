//! Optimizer, frame-budget batching and per-utterance gradients.
//!
//! A step is split so that callers can parallelize the expensive middle
//! part: [`Trainer::plan_step`] fixes the batch and a random stream per
//! utterance, [`utterance_gradient`] is a pure function of one job, and
//! [`Trainer::apply`] reduces the results in job order and updates the
//! parameters. The outcome is therefore independent of how jobs are
//! scheduled.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::model::{scheduled_sample, Model};
use crate::ops::{Eval, Ops};
use crate::tape::{Gradients, Tape};
use crate::{Error, ParamStore, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Frame budget per mini-batch.
    pub batch_frames: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// Scheduled-sampling probability.
    pub scheduled_sampling: f64,
    /// Global gradient norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub deterministic: bool,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_frames: 2000,
            learning_rate: 1e-3,
            steps: 1000,
            scheduled_sampling: 0.1,
            clip_norm: 5.0,
            deterministic: true,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_frames == 0 {
            return Err(Error::Config("batch_frames must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.scheduled_sampling) {
            return Err(Error::Config("scheduled_sampling must lie in [0, 1]".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|p| alloc::vec![0.0; p.tensor.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= lr * (*m / c1) / (crate::math::sqrt(*v / c2) + self.eps);
            }
        }
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Packs utterances in `order` into batches of at most `budget` frames. An
/// utterance longer than the budget gets a batch of its own.
pub fn frame_batches(frames: &[usize], order: &[usize], budget: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut used = 0;
    for &i in order {
        if !cur.is_empty() && used + frames[i] > budget {
            out.push(core::mem::take(&mut cur));
            used = 0;
        }
        used += frames[i];
        cur.push(i);
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Prediction-network inputs with scheduled sampling applied.
pub fn decoder_inputs(targets: &[usize], p_ss: f64, vocab_size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    targets.iter().map(|&y| scheduled_sample(y, p_ss, vocab_size, rng)).collect()
}

/// One utterance of a planned step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Job {
    pub utterance: usize,
    /// Random stream for scheduled sampling.
    pub stream: u64,
}

/// Negative log-likelihood and its gradient for one utterance.
pub fn utterance_gradient(model: &Model, utt: &Utterance, p_ss: f64, seed: u64, job: Job) -> Result<(f64, Gradients)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(job.stream);
    let inputs = decoder_inputs(&utt.targets, p_ss, model.config.vocab_size, &mut rng);
    let mut tape = Tape::new(model.params());
    let loss = model.utterance_nll(&mut tape, &utt.features, &utt.targets, &inputs)?;
    let nll = tape.value(&loss).item();
    if !nll.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok((nll, tape.backward(loss)?))
}

/// Mean negative log-likelihood over a dataset, without gradients.
pub fn mean_nll(model: &Model, data: &[Utterance]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for u in data {
        let mut ops = Eval::new(model.params());
        total += model.utterance_nll(&mut ops, &u.features, &u.targets, &u.targets)?.item();
    }
    Ok(total / data.len() as f64)
}

/// Summed losses and gradients of part of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGradient {
    pub loss_sum: f64,
    pub grads: Gradients,
    pub count: usize,
}

impl BatchGradient {
    pub fn zeros(params: &ParamStore) -> Self {
        Self { loss_sum: 0.0, grads: Gradients::zeros_like(params), count: 0 }
    }

    pub fn single(nll: f64, grads: Gradients) -> Self {
        Self { loss_sum: nll, grads, count: 1 }
    }

    pub fn push(&mut self, nll: f64, grads: &Gradients) {
        self.loss_sum += nll;
        self.grads.accumulate(grads, 1.0);
        self.count += 1;
    }

    pub fn merge(mut self, other: &Self) -> Self {
        self.loss_sum += other.loss_sum;
        self.grads.accumulate(&other.grads, 1.0);
        self.count += other.count;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    /// Mean per-utterance nll of the batch before the update.
    pub loss: f64,
    pub grad_norm: f64,
    pub utterances: usize,
    pub frames: usize,
}

/// Training loop state: optimizer moments, the epoch order and step count.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    adam: Adam,
    frames: Vec<usize>,
    batches: Vec<Vec<usize>>,
    next_batch: usize,
    epoch: u64,
    step: usize,
}

impl Trainer {
    pub fn new(model: &Model, data: &[Utterance], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            adam: Adam::new(model.params()),
            frames: data.iter().map(Utterance::frames).collect(),
            batches: Vec::new(),
            next_batch: 0,
            epoch: 0,
            step: 0,
            config,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    /// The jobs of the next step. Each epoch reshuffles the data.
    pub fn plan_step(&mut self) -> Vec<Job> {
        if self.next_batch == self.batches.len() {
            let mut order: Vec<usize> = (0..self.frames.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(self.epoch);
            order.shuffle(&mut rng);
            self.batches = frame_batches(&self.frames, &order, self.config.batch_frames);
            self.next_batch = 0;
            self.epoch += 1;
        }
        let batch = &self.batches[self.next_batch];
        self.next_batch += 1;
        let base = (self.step as u64) << 20;
        batch.iter().enumerate().map(|(i, &u)| Job { utterance: u, stream: base + i as u64 }).collect()
    }

    /// Sums per-utterance results in order and takes an update step.
    pub fn apply(&mut self, model: &mut Model, results: Vec<Result<(f64, Gradients)>>) -> Result<StepLog> {
        let mut batch = BatchGradient::zeros(model.params());
        for r in results {
            let (nll, g) = r.map_err(|e| self.diverged(e))?;
            batch.push(nll, &g);
        }
        self.update(model, batch)
    }

    /// Maps a non-finite loss to [`Error::Diverged`] at the current step.
    pub fn diverged(&self, e: Error) -> Error {
        match e {
            Error::NonFinite => Error::Diverged { step: self.step, loss: f64::NAN },
            e => e,
        }
    }

    /// Averages a summed batch, clips and takes an Adam step.
    pub fn update(&mut self, model: &mut Model, batch: BatchGradient) -> Result<StepLog> {
        let BatchGradient { loss_sum, mut grads, count } = batch;
        if count == 0 {
            return Err(Error::EmptyInput);
        }
        let loss = loss_sum / count as f64;
        grads.scale(1.0 / count as f64);
        let grad_norm = clip_gradients(&mut grads, self.config.clip_norm);
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Diverged { step: self.step, loss });
        }
        self.adam.step(model.params_mut(), &grads, self.config.learning_rate);
        let frames = self.batches[self.next_batch - 1].iter().map(|&u| self.frames[u]).sum();
        self.step += 1;
        Ok(StepLog { step: self.step, loss, grad_norm, utterances: count, frames })
    }

    /// One sequential step.
    pub fn step(&mut self, model: &mut Model, data: &[Utterance]) -> Result<StepLog> {
        let jobs = self.plan_step();
        let p_ss = self.config.scheduled_sampling;
        let seed = self.config.seed;
        let results = jobs.iter().map(|&j| utterance_gradient(model, &data[j.utterance], p_ss, seed, j)).collect();
        self.apply(model, results)
    }
}

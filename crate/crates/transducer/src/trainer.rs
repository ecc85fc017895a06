//! Training loop with per-utterance gradients computed in parallel.

use std::time::Instant;

use attn_transducer_core::data::Utterance;
use attn_transducer_core::model::Model;
use attn_transducer_core::train::{utterance_gradient, BatchGradient, Job, StepLog, TrainConfig, Trainer};
use rayon::prelude::*;

use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub steps: Vec<StepLog>,
    pub seconds: f64,
}

impl TrainOutcome {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }
}

/// Runs `config.steps` updates. `on_step` sees every step log together with
/// the updated model (for logging and checkpoint cadence).
///
/// Per-utterance results are always collected in job order. With
/// `deterministic` set they are also reduced sequentially in that order, so
/// the result does not depend on the thread count; otherwise rayon's tree
/// reduction is used.
pub fn train(
    model: &mut Model,
    data: &[Utterance],
    config: TrainConfig,
    mut on_step: impl FnMut(&StepLog, &Model) -> Result<()>,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut trainer = Trainer::new(model, data, config)?;
    let mut steps = Vec::with_capacity(trainer.config.steps);
    while !trainer.is_done() {
        let jobs = trainer.plan_step();
        let batch = compute(model, data, &trainer, &jobs)?;
        let log = trainer.update(model, batch)?;
        on_step(&log, model)?;
        steps.push(log);
    }
    Ok(TrainOutcome { steps, seconds: start.elapsed().as_secs_f64() })
}

fn compute(model: &Model, data: &[Utterance], trainer: &Trainer, jobs: &[Job]) -> Result<BatchGradient> {
    let cfg = &trainer.config;
    let run = |j: &Job| {
        utterance_gradient(model, &data[j.utterance], cfg.scheduled_sampling, cfg.seed, *j).map_err(|e| trainer.diverged(e))
    };
    if cfg.deterministic {
        let results: Vec<_> = jobs.par_iter().map(run).collect();
        let mut batch = BatchGradient::zeros(model.params());
        for r in results {
            let (nll, g) = r?;
            batch.push(nll, &g);
        }
        return Ok(batch);
    }
    let batch = jobs
        .par_iter()
        .map(|j| run(j).map(|(l, g)| BatchGradient::single(l, g)))
        .try_reduce_with(|a, b| Ok(a.merge(&b)))
        .unwrap_or_else(|| Ok(BatchGradient::zeros(model.params())))?;
    Ok(batch)
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamState, Graph, LrSchedule};
use crate::corpus::{make_batches, Batch, TokenSeq};
use crate::error::{Error, Result};
use crate::model::Seq2Seq;

/// Optimizer settings for one training or fine-tuning stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub lr_max: f64,
    pub warmup_steps: u64,
    /// Padded-token cap per batch.
    pub max_tokens: usize,
    pub clip_norm: f64,
}

impl TrainSchedule {
    pub fn pretrain() -> Self {
        Self {
            lr_max: 1e-3,
            warmup_steps: 200,
            max_tokens: 512,
            clip_norm: 1.0,
        }
    }

    pub fn fine_tune() -> Self {
        Self {
            lr_max: 5e-4,
            warmup_steps: 50,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        LrSchedule::new(self.lr_max, self.warmup_steps)?;
        if self.max_tokens == 0 || !(self.clip_norm > 0.0) {
            return Err(Error::Config("max_tokens and clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step training loss, in step order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
    pub epochs: usize,
}

impl TrainLog {
    /// Mean loss over the last `n` steps.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let k = n.min(self.losses.len()).max(1);
        self.losses.iter().rev().take(k).sum::<f64>() / k as f64
    }
}

/// Number of batches one epoch over `columns` produces.
pub fn steps_per_epoch(columns: &[&[TokenSeq]], max_tokens: usize) -> Result<usize> {
    Ok(make_batches(columns, max_tokens, 0)?.batches.len())
}

/// Runs exactly `steps` optimizer steps on a copy of `model`, cycling through
/// reshuffled epochs of `columns`. The input model is left untouched.
pub fn train<M: Seq2Seq>(
    model: &M,
    columns: &[&[TokenSeq]],
    steps: usize,
    schedule: &TrainSchedule,
    seed: u64,
) -> Result<(M, TrainLog)> {
    schedule.validate()?;
    let lr = LrSchedule::new(schedule.lr_max, schedule.warmup_steps)?;
    let mut out = model.clone();
    let mut log = TrainLog::default();
    if steps == 0 {
        return Ok((out, log));
    }
    if columns.first().map_or(true, |c| c.is_empty()) {
        return Err(Error::contract("training corpus is empty"));
    }
    let dropout = model.config().dropout;
    let mut adam = AdamState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queue: Vec<Batch> = Vec::new();
    while log.losses.len() < steps {
        if queue.is_empty() {
            let b = make_batches(columns, schedule.max_tokens, seed.wrapping_add(log.epochs as u64))?;
            if b.batches.is_empty() {
                return Err(Error::contract("every row exceeds the batch token cap"));
            }
            queue = b.batches;
            queue.reverse();
            log.epochs += 1;
        }
        let batch = queue.pop().expect("nonempty queue");
        let step = log.losses.len() as u64 + 1;
        let mut g = Graph::<f32>::with_dropout(dropout, ChaCha8Rng::seed_from_u64(rand::Rng::gen(&mut rng)));
        let loss_node = out.loss_graph(&mut g, &batch)?;
        let loss = g.scalar(loss_node) as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("{} loss {loss} at step {step}", out.kind().tag())));
        }
        let grads = g.backward(loss_node)?;
        grads.write_into(out.params_mut())?;
        let norm = out.params_mut().clip_grad_norm(schedule.clip_norm);
        if !norm.is_finite() {
            return Err(Error::Diverged(format!("{} gradient norm {norm} at step {step}", out.kind().tag())));
        }
        adam_step(out.params_mut(), &mut adam, lr.lr_at(step)?)?;
        out.params_mut().clear_grads();
        log.losses.push(loss);
    }
    Ok((out, log))
}

/// Token-weighted mean loss over a held-out corpus, without dropout.
pub fn corpus_loss<M: Seq2Seq>(model: &M, columns: &[&[TokenSeq]], max_tokens: usize) -> Result<f64> {
    let batching = make_batches(columns, max_tokens, 0)?;
    let last = columns.last().ok_or_else(|| Error::contract("no columns"))?;
    let (mut num, mut den) = (0.0, 0.0);
    for b in &batching.batches {
        let tokens: usize = b.index.iter().map(|&i| last[i].len() + 1).sum();
        num += model.eval_loss(b)? * tokens as f64;
        den += tokens as f64;
    }
    if den == 0.0 {
        return Err(Error::contract("held-out corpus is empty"));
    }
    Ok(num / den)
}

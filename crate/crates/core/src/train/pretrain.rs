use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::{decoder_of, denovo_grads, denovo_loss};
use super::{lr_at, Adam, TrainConfig, ValidationEvent};
use crate::chem::Peptide;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::preprocess::ProcessedSpectrum;

/// A spectrum with its known peptide.
#[derive(Debug, Clone, PartialEq)]
pub struct DenovoExample {
    pub spectrum: ProcessedSpectrum,
    pub peptide: Peptide,
}

#[derive(Debug, Clone)]
pub struct PretrainFit {
    /// Mean training batch loss per step.
    pub step_losses: Vec<f64>,
    pub log: Vec<ValidationEvent>,
}

/// Cycles through a dataset in seed-shuffled passes.
pub(crate) struct Loader {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Loader {
    pub fn new(n: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Trains encoder and decoder on the de novo sequencing loss for
/// `cfg.max_steps` steps with warmup and cosine decay.
pub fn pretrain_denovo(model: &mut Model, train: &[DenovoExample], valid: &[DenovoExample], cfg: &TrainConfig) -> Result<PretrainFit> {
    cfg.validate()?;
    decoder_of(model)?;
    if train.is_empty() {
        return Err(Error::Config("de novo training set is empty".into()));
    }
    let mut adam = Adam::new(&model.store);
    let mut loader = Loader::new(train.len(), cfg.seed, 0);
    let mut step_losses = Vec::with_capacity(cfg.max_steps);
    let mut log = Vec::new();
    let validate = |model: &Model, step: usize, log: &mut Vec<ValidationEvent>| -> Result<()> {
        if !valid.is_empty() {
            log.push(ValidationEvent {
                step,
                task: "denovo".into(),
                split: "valid".into(),
                loss: denovo_loss(model, valid)?,
                auroc: None,
            });
        }
        Ok(())
    };
    for step in 0..cfg.max_steps {
        if step % cfg.validate_every == 0 {
            validate(model, step, &mut log)?;
        }
        let idx = loader.next_batch(cfg.batch_size);
        let batch: Vec<&DenovoExample> = idx.iter().map(|&i| &train[i]).collect();
        let (loss, grads) = denovo_grads(model, &batch, cfg.seed, step)?;
        let lr = lr_at(step, cfg.lr, cfg.warmup_steps, cfg.cosine_half_period);
        adam.step(&mut model.store, &grads, lr, cfg.weight_decay)?;
        step_losses.push(loss);
    }
    validate(model, cfg.max_steps, &mut log)?;
    Ok(PretrainFit { step_losses, log })
}

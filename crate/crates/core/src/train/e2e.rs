use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::classify_grads;
use super::head::evaluate_head;
use super::{check_labels, Adam, EarlyStopping, TrainConfig, ValidationEvent, Verdict};
use crate::encoder::{EncoderConfig, PREFIX as ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::preprocess::ProcessedSpectrum;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct E2eOptions {
    /// Candidate encoder depths; empty trains `encoder.n_layers` only.
    pub layer_sweep: Vec<usize>,
    /// Train the head only, leaving the randomly initialized encoder fixed.
    pub freeze_encoder: bool,
}

#[derive(Debug, Clone)]
pub struct E2eFit {
    /// Encoder and head at the best validation epoch of the selected depth.
    pub model: Model,
    pub best_epoch: usize,
    pub best_auroc: f64,
    /// `(n_layers, best validation AUROC)` per sweep candidate.
    pub sweep: Vec<(usize, f64)>,
    pub log: Vec<ValidationEvent>,
}

/// Trains an encoder and head jointly from scratch on one task.
#[allow(clippy::too_many_arguments)]
pub fn train_end_to_end(
    task: &str,
    train: &[ProcessedSpectrum],
    train_y: &[u8],
    valid: &[ProcessedSpectrum],
    valid_y: &[u8],
    encoder: &EncoderConfig,
    head_hidden: usize,
    cfg: &TrainConfig,
    opts: &E2eOptions,
) -> Result<E2eFit> {
    cfg.validate()?;
    check_labels(valid_y, "validation")?;
    check_labels(train_y, "training")?;
    if train.len() != train_y.len() || valid.len() != valid_y.len() {
        return Err(Error::DegenerateInput("spectrum and label counts differ".into()));
    }
    let mut depths = opts.layer_sweep.clone();
    if depths.is_empty() {
        depths.push(encoder.n_layers);
    }
    depths.sort_unstable();
    depths.dedup();
    let mut best: Option<E2eFit> = None;
    let mut sweep = Vec::new();
    for &n_layers in &depths {
        let enc = EncoderConfig {
            n_layers,
            ..encoder.clone()
        };
        let fit = fit_one(task, train, train_y, valid, valid_y, enc, head_hidden, cfg, opts.freeze_encoder)?;
        sweep.push((n_layers, fit.best_auroc));
        // Strict improvement keeps the smaller depth on ties.
        if best.as_ref().map_or(true, |b| fit.best_auroc > b.best_auroc) {
            best = Some(fit);
        }
    }
    let mut best = best.expect("at least one depth");
    best.sweep = sweep;
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn fit_one(
    task: &str,
    train: &[ProcessedSpectrum],
    train_y: &[u8],
    valid: &[ProcessedSpectrum],
    valid_y: &[u8],
    encoder: EncoderConfig,
    head_hidden: usize,
    cfg: &TrainConfig,
    freeze_encoder: bool,
) -> Result<E2eFit> {
    let mut mc = ModelConfig::encoder_only(encoder);
    mc.heads = vec![task.to_string()];
    mc.head_hidden = head_hidden;
    let mut model = Model::init(mc, cfg.seed)?;
    let head = model.head(task).expect("head registered").clone();
    let mut adam = Adam::new(&model.store);
    if freeze_encoder {
        adam.set_lr_scale(&model.store, &format!("{ENCODER_PREFIX}."), 0.0);
    }
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut stopper = EarlyStopping::new(cfg.patience_epochs);
    let mut best_store = model.store.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<(&ProcessedSpectrum, u8)> = idx.iter().map(|&i| (&train[i], train_y[i])).collect();
            let (_, grads) = classify_grads(&model, &head, &batch, cfg.label_smoothing, cfg.seed, step)?;
            adam.step(&mut model.store, &grads, cfg.lr, cfg.weight_decay)?;
            step += 1;
        }
        let emb = model.embed(valid)?;
        let (loss, auc) = evaluate_head(&head, &model.store, &emb, valid_y, cfg.label_smoothing)?;
        log.push(ValidationEvent {
            step,
            task: task.to_string(),
            split: "valid".into(),
            loss,
            auroc: Some(auc),
        });
        match stopper.update(auc) {
            Verdict::Improved => best_store = model.store.clone(),
            Verdict::Stop => break,
            Verdict::Continue => {}
        }
    }
    model.store = best_store;
    Ok(E2eFit {
        model,
        best_epoch: stopper.best_epoch(),
        best_auroc: stopper.best(),
        sweep: Vec::new(),
        log,
    })
}

use super::batch::{classify_grads, combine, decoder_of, denovo_grads, denovo_loss};
use super::head::evaluate_head;
use super::pretrain::Loader;
use super::{head_prefix, lr_at, Adam, DenovoExample, TrainConfig, ValidationEvent};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::preprocess::ProcessedSpectrum;

/// Train and validation spectra for one downstream task.
#[derive(Debug, Clone, Copy)]
pub struct TaskData<'a> {
    pub name: &'a str,
    pub train: &'a [ProcessedSpectrum],
    pub train_labels: &'a [u8],
    pub valid: &'a [ProcessedSpectrum],
    pub valid_labels: &'a [u8],
}

#[derive(Debug, Clone, Copy)]
pub struct MultitaskData<'a> {
    pub tasks: &'a [TaskData<'a>],
    pub denovo_train: &'a [DenovoExample],
    pub denovo_valid: &'a [DenovoExample],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskOptions {
    /// Loss weight per downstream task, in task order; empty means all 1.
    pub task_weights: Vec<f64>,
    pub denovo_weight: f64,
    /// Parameter-name prefixes excluded from updates.
    pub frozen_prefixes: Vec<String>,
    pub head_seed: u64,
}

impl Default for MultitaskOptions {
    fn default() -> Self {
        Self {
            task_weights: Vec::new(),
            denovo_weight: 1.0,
            frozen_prefixes: Vec::new(),
            head_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MultitaskFit {
    /// Parameters at the validation event with the lowest mean downstream loss.
    pub model: Model,
    pub selected_step: usize,
    pub selected_mean_loss: f64,
    pub step0_mean_loss: f64,
    /// Total weighted loss and its per-task parts (downstream tasks, then de novo).
    pub step_losses: Vec<(f64, Vec<f64>)>,
    pub log: Vec<ValidationEvent>,
}

/// Joint fine-tuning: every step takes one batch from each downstream task
/// and one de novo batch and minimizes the weighted sum of their losses.
pub fn finetune_multitask(init: &Model, data: MultitaskData, cfg: &TrainConfig, opts: &MultitaskOptions) -> Result<MultitaskFit> {
    cfg.validate()?;
    let mut model = init.clone();
    decoder_of(&model)?;
    for t in data.tasks {
        if t.train.is_empty() || t.valid.is_empty() {
            return Err(Error::Config(format!("task {} has an empty loader", t.name)));
        }
        if t.train.len() != t.train_labels.len() || t.valid.len() != t.valid_labels.len() {
            return Err(Error::DegenerateInput(format!("task {}: spectrum and label counts differ", t.name)));
        }
        if model.head(t.name).is_none() {
            model.add_head(t.name, opts.head_seed)?;
        }
    }
    if data.tasks.is_empty() || data.denovo_train.is_empty() {
        return Err(Error::Config("multi-task fine-tuning needs tasks and de novo data".into()));
    }
    let weights: Vec<f64> = if opts.task_weights.is_empty() {
        vec![1.0; data.tasks.len()]
    } else if opts.task_weights.len() == data.tasks.len() {
        opts.task_weights.clone()
    } else {
        return Err(Error::Config("one weight per task required".into()));
    };
    let heads: Vec<_> = data
        .tasks
        .iter()
        .map(|t| model.head(t.name).expect("head added").clone())
        .collect();
    let mut adam = Adam::new(&model.store);
    for p in &opts.frozen_prefixes {
        adam.set_lr_scale(&model.store, p, 0.0);
    }
    let mut loaders: Vec<Loader> = data
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| Loader::new(t.train.len(), cfg.seed, i as u64 + 1))
        .collect();
    let mut denovo_loader = Loader::new(data.denovo_train.len(), cfg.seed, 0);

    let mut log = Vec::new();
    let validate = |model: &Model, step: usize, log: &mut Vec<ValidationEvent>| -> Result<f64> {
        let mut sum = 0.0;
        for (t, head) in data.tasks.iter().zip(&heads) {
            let emb = model.embed(t.valid)?;
            let (loss, auc) = evaluate_head(head, &model.store, &emb, t.valid_labels, cfg.label_smoothing)?;
            sum += loss;
            log.push(ValidationEvent {
                step,
                task: t.name.to_string(),
                split: "valid".into(),
                loss,
                auroc: Some(auc),
            });
        }
        if !data.denovo_valid.is_empty() {
            log.push(ValidationEvent {
                step,
                task: "denovo".into(),
                split: "valid".into(),
                loss: denovo_loss(model, data.denovo_valid)?,
                auroc: None,
            });
        }
        Ok(sum / data.tasks.len() as f64)
    };

    let step0 = validate(&model, 0, &mut log)?;
    let (mut best_loss, mut best_step, mut best_store) = (step0, 0, model.store.clone());
    let mut step_losses = Vec::with_capacity(cfg.max_steps);
    for step in 0..cfg.max_steps {
        let mut parts = Vec::with_capacity(data.tasks.len() + 1);
        let mut losses = Vec::with_capacity(data.tasks.len() + 1);
        for (k, t) in data.tasks.iter().enumerate() {
            let idx = loaders[k].next_batch(cfg.batch_size);
            let batch: Vec<(&ProcessedSpectrum, u8)> = idx.iter().map(|&i| (&t.train[i], t.train_labels[i])).collect();
            let (loss, grads) = classify_grads(&model, &heads[k], &batch, cfg.label_smoothing, cfg.seed, step)?;
            losses.push(loss);
            parts.push((weights[k], grads));
        }
        let idx = denovo_loader.next_batch(cfg.batch_size);
        let batch: Vec<&DenovoExample> = idx.iter().map(|&i| &data.denovo_train[i]).collect();
        let (loss, grads) = denovo_grads(&model, &batch, cfg.seed, step)?;
        losses.push(loss);
        parts.push((opts.denovo_weight, grads));
        let total: f64 = losses
            .iter()
            .zip(weights.iter().chain(std::iter::once(&opts.denovo_weight)))
            .map(|(l, w)| l * w)
            .sum();
        let grads = combine(parts, model.store.len());
        let lr = lr_at(step, cfg.lr, cfg.warmup_steps, cfg.cosine_half_period);
        adam.step(&mut model.store, &grads, lr, cfg.weight_decay)?;
        step_losses.push((total, losses));
        let done = step + 1;
        if done % cfg.validate_every == 0 || done == cfg.max_steps {
            let mean = validate(&model, done, &mut log)?;
            if mean < best_loss {
                best_loss = mean;
                best_step = done;
                best_store = model.store.clone();
            }
        }
    }
    model.store = best_store;
    Ok(MultitaskFit {
        model,
        selected_step: best_step,
        selected_mean_loss: best_loss,
        step0_mean_loss: step0,
        step_losses,
        log,
    })
}

/// Prefix of a task head's parameters, for freezing.
pub fn head_params_prefix(task: &str) -> String {
    format!("{}.", head_prefix(task))
}

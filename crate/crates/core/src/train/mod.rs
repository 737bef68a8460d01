//! Losses, optimizer, schedules and the training loops for heads, end-to-end
//! models, de novo pre-training and multi-task fine-tuning.

use std::io::Write;

use crate::error::{Error, Result};
use crate::nn::{Gradients, Mat, ParamStore, Scalar};

mod batch;
mod e2e;
mod head;
mod multitask;
mod pretrain;

pub use e2e::{train_end_to_end, E2eFit, E2eOptions};
pub use head::{head_prefix, load_head, save_head, train_head, DenseHead, HeadFit};
pub use multitask::{finetune_multitask, head_params_prefix, MultitaskData, MultitaskFit, MultitaskOptions, TaskData};
pub use pretrain::{pretrain_denovo, DenovoExample, PretrainFit};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub label_smoothing: f64,
    pub warmup_steps: usize,
    pub cosine_half_period: usize,
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub max_steps: usize,
    pub validate_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-6,
            batch_size: 32,
            label_smoothing: 0.001,
            warmup_steps: 1000,
            cosine_half_period: 120_000,
            patience_epochs: 5,
            max_epochs: 100,
            max_steps: 3000,
            validate_every: 4000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("train.lr must be a finite non-negative number".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("train.weight_decay must be non-negative".into()));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::Config("train.label_smoothing must be in [0, 0.5)".into()));
        }
        if self.batch_size == 0 || self.patience_epochs == 0 || self.max_epochs == 0 || self.validate_every == 0 {
            return Err(Error::Config(
                "train.batch_size, patience_epochs, max_epochs and validate_every must be positive".into(),
            ));
        }
        if self.cosine_half_period == 0 {
            return Err(Error::Config("train.cosine_half_period must be positive".into()));
        }
        Ok(())
    }
}

/// Binary cross-entropy of a logit against a (possibly soft) target, in the
/// overflow-free form `max(z, 0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

pub fn smooth_label(y: u8, eps: f64) -> f64 {
    let y = y as f64;
    y * (1.0 - eps) + (1.0 - y) * eps
}

pub fn bce_smoothed(z: f64, y: u8, eps: f64) -> f64 {
    bce_with_logits(z, smooth_label(y, eps))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Linear warmup to `peak` over `warmup` steps, then a cosine decay reaching
/// zero after `half_period` further steps.
pub fn lr_at(step: usize, peak: f64, warmup: usize, half_period: usize) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let t = (step - warmup) as f64 / half_period as f64;
    if t >= 1.0 {
        return 0.0;
    }
    (peak * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())).max(0.0)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with coupled L2 weight decay and optional per-parameter learning-rate
/// multipliers (0 freezes a parameter).
#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    m: Vec<Mat<F>>,
    v: Vec<Mat<F>>,
    lr_scale: Vec<f64>,
    step: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros = |(_, _, t): (_, &str, &Mat<F>)| Mat::zeros(t.rows, t.cols);
        Self {
            m: store.iter().map(zeros).collect(),
            v: store.iter().map(zeros).collect(),
            lr_scale: vec![1.0; store.len()],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr_scale(&mut self, store: &ParamStore<F>, prefix: &str, scale: f64) {
        for (id, name, _) in store.iter() {
            if name.starts_with(prefix) {
                self.lr_scale[id.0] = scale;
            }
        }
    }

    /// One update of every parameter that received a gradient.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &Gradients<F>, lr: f64, weight_decay: f64) -> Result<()> {
        grads.check_finite(store)?;
        if self.m.len() != store.len() {
            return Err(Error::Numeric("optimizer state does not match parameter store".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        let (b1, b2) = (F::lit(ADAM_BETA1), F::lit(ADAM_BETA2));
        let wd = F::lit(weight_decay);
        for (id, g) in grads.iter() {
            let scale = self.lr_scale[id.0];
            if scale == 0.0 {
                continue;
            }
            let step_size = F::lit(lr * scale / c1);
            let inv_c2 = F::lit(1.0 / c2);
            let eps = F::lit(ADAM_EPS);
            let p = store.get_mut(id);
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            for k in 0..p.data.len() {
                let gk = g.data[k] + wd * p.data[k];
                m.data[k] = b1 * m.data[k] + (F::one() - b1) * gk;
                v.data[k] = b2 * v.data[k] + (F::one() - b2) * gk * gk;
                let denom = (v.data[k] * inv_c2).sqrt() + eps;
                p.data[k] -= step_size * m.data[k] / denom;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Patience-based stopping on a metric where larger is better.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Records the metric of the next epoch (epochs count from 1).
    pub fn update(&mut self, metric: f64) -> Verdict {
        self.epoch += 1;
        if metric > self.best {
            self.best = metric;
            self.best_epoch = self.epoch;
            Verdict::Improved
        } else if self.epoch - self.best_epoch >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// One validation measurement, logged as a row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationEvent {
    pub step: usize,
    pub task: String,
    pub split: String,
    pub loss: f64,
    pub auroc: Option<f64>,
}

pub fn write_training_log<W: Write>(mut w: W, events: &[ValidationEvent]) -> Result<()> {
    writeln!(w, "step\ttask\tsplit\tloss\tauroc")?;
    for e in events {
        let auroc = e.auroc.map(|a| a.to_string()).unwrap_or_else(|| "NA".into());
        writeln!(w, "{}\t{}\t{}\t{}\t{}", e.step, e.task, e.split, e.loss, auroc)?;
    }
    Ok(())
}

fn check_labels(labels: &[u8], what: &str) -> Result<()> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        let msg = format!("{what} set has {pos} positives out of {}", labels.len());
        return Err(if what == "validation" {
            Error::DegenerateValidation(msg)
        } else {
            Error::DegenerateLabels(msg)
        });
    }
    Ok(())
}

/// Sums per-example gradients in input order, then divides by their count.
fn mean_gradients<F: Scalar>(parts: Vec<Gradients<F>>, n_params: usize) -> Gradients<F> {
    let n = parts.len();
    let mut total = Gradients::new(n_params);
    for p in parts {
        total.merge(p);
    }
    if n > 0 {
        total.scale(F::lit(1.0 / n as f64));
    }
    total
}

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bce_smoothed, check_labels, smooth_label, Adam, EarlyStopping, TrainConfig, ValidationEvent, Verdict};
use crate::binio::Cursor;
use crate::blocks::Linear;
use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::nn::{Graph, Mat, ParamStore, Scalar, Var};

pub fn head_prefix(task: &str) -> String {
    format!("head.{task}")
}

/// Task-specific classifier: one ReLU hidden layer, one output logit.
#[derive(Debug, Clone)]
pub struct DenseHead {
    hidden: Linear,
    out: Linear,
    d_in: usize,
    width: usize,
}

impl DenseHead {
    pub fn init<F: Scalar>(store: &mut ParamStore<F>, rng: &mut dyn RngCore, task: &str, d_in: usize, hidden: usize) -> Self {
        let p = head_prefix(task);
        Self {
            hidden: Linear::init(store, rng, &format!("{p}.hidden"), d_in, hidden),
            out: Linear::init(store, rng, &format!("{p}.out"), hidden, 1),
            d_in,
            width: hidden,
        }
    }

    pub fn bind<F: Scalar>(store: &ParamStore<F>, task: &str, d_in: usize, hidden: usize) -> Result<Self> {
        let p = head_prefix(task);
        Ok(Self {
            hidden: Linear::bind(store, &format!("{p}.hidden"), d_in, hidden)?,
            out: Linear::bind(store, &format!("{p}.out"), hidden, 1)?,
            d_in,
            width: hidden,
        })
    }

    /// Logits `n × 1` for embeddings `n × d_in`.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, x: Var) -> Var {
        let h = self.hidden.forward(g, x);
        let h = g.relu(h);
        self.out.forward(g, h)
    }

    pub fn logits<F: Scalar>(&self, store: &ParamStore<F>, rows: &[Vec<F>]) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let x = stack(rows, self.d_in)?;
        let mut g = Graph::inference(store);
        let x = g.input(x);
        let z = self.forward(&mut g, x);
        Ok(g.value(z).data.iter().map(|&v| Scalar::to_f64(v)).collect())
    }
}

pub(crate) fn stack<F: Scalar>(rows: &[Vec<F>], d: usize) -> Result<Mat<F>> {
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        if r.len() != d {
            return Err(Error::Numeric(format!("embedding of width {} where {d} expected", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite embedding".into()));
        }
        data.extend_from_slice(r);
    }
    Ok(Mat::from_vec(rows.len(), d, data))
}

/// Result of fitting a head on fixed embeddings.
#[derive(Debug, Clone)]
pub struct HeadFit {
    /// Head parameters at the best validation epoch.
    pub store: ParamStore<f32>,
    pub head: DenseHead,
    pub best_epoch: usize,
    pub best_auroc: f64,
    pub epochs_run: usize,
    pub log: Vec<ValidationEvent>,
}

/// Mean smoothed BCE and AUROC of a head on labeled embeddings.
pub(crate) fn evaluate_head(
    head: &DenseHead,
    store: &ParamStore<f32>,
    x: &[Vec<f32>],
    y: &[u8],
    eps: f64,
) -> Result<(f64, f64)> {
    let z = head.logits(store, x)?;
    let loss = z.iter().zip(y).map(|(&z, &y)| bce_smoothed(z, y, eps)).sum::<f64>() / z.len() as f64;
    Ok((loss, auroc(&z, y)?))
}

/// Trains a dense head on frozen embeddings with a constant learning rate,
/// validating each epoch and keeping the best-AUROC snapshot.
pub fn train_head(
    task: &str,
    train_x: &[Vec<f32>],
    train_y: &[u8],
    valid_x: &[Vec<f32>],
    valid_y: &[u8],
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<HeadFit> {
    cfg.validate()?;
    check_labels(valid_y, "validation")?;
    check_labels(train_y, "training")?;
    if train_x.len() != train_y.len() || valid_x.len() != valid_y.len() {
        return Err(Error::DegenerateInput("embedding and label counts differ".into()));
    }
    let d = train_x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::<f32>::new();
    let head = DenseHead::init(&mut store, &mut rng, task, d, hidden);
    let mut adam = Adam::new(&store);
    let mut stopper = EarlyStopping::new(cfg.patience_epochs);
    let mut best = store.clone();
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let rows: Vec<Vec<f32>> = batch.iter().map(|&i| train_x[i].clone()).collect();
            let targets: Vec<f32> = batch
                .iter()
                .map(|&i| smooth_label(train_y[i], cfg.label_smoothing) as f32)
                .collect();
            let x = stack(&rows, d)?;
            let grads = {
                let mut g = Graph::new(&store);
                let x = g.input(x);
                let z = head.forward(&mut g, x);
                let loss = g.bce_with_logits(z, &targets);
                g.backward(loss)?
            };
            adam.step(&mut store, &grads, cfg.lr, cfg.weight_decay)?;
            step += 1;
        }
        let (loss, auc) = evaluate_head(&head, &store, valid_x, valid_y, cfg.label_smoothing)?;
        log.push(ValidationEvent {
            step,
            task: task.to_string(),
            split: "valid".into(),
            loss,
            auroc: Some(auc),
        });
        match stopper.update(auc) {
            Verdict::Improved => best = store.clone(),
            Verdict::Stop => break,
            Verdict::Continue => {}
        }
    }
    Ok(HeadFit {
        store: best,
        head,
        best_epoch: stopper.best_epoch(),
        best_auroc: stopper.best(),
        epochs_run: stopper.epoch(),
        log,
    })
}

pub const HEAD_MAGIC: &[u8; 4] = b"SHED";
const HEAD_VERSION: u32 = 1;

/// Writes a trained head: magic, version, task, input width, hidden width,
/// then each tensor as (name, rows, cols, float32 data), little-endian.
pub fn save_head<W: std::io::Write>(mut w: W, task: &str, fit: &HeadFit) -> Result<()> {
    let put = |w: &mut W, v: usize| w.write_all(&(v as u32).to_le_bytes());
    w.write_all(HEAD_MAGIC)?;
    w.write_all(&HEAD_VERSION.to_le_bytes())?;
    put(&mut w, task.len())?;
    w.write_all(task.as_bytes())?;
    put(&mut w, fit.head.d_in)?;
    put(&mut w, fit.head.width)?;
    put(&mut w, fit.store.len())?;
    for (_, name, t) in fit.store.iter() {
        put(&mut w, name.len())?;
        w.write_all(name.as_bytes())?;
        put(&mut w, t.rows)?;
        put(&mut w, t.cols)?;
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a head written by [`save_head`]; returns the task name, head and
/// its parameters.
pub fn load_head<R: std::io::Read>(mut r: R) -> Result<(String, DenseHead, ParamStore<f32>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor::new(&bytes, "head file");
    if c.take(4)? != HEAD_MAGIC {
        return Err(Error::Format("not a head file (bad magic)".into()));
    }
    if c.u32()? != HEAD_VERSION {
        return Err(Error::Format("unsupported head file version".into()));
    }
    let task = c.string()?;
    let d_in = c.usize()?;
    let hidden = c.usize()?;
    let count = c.usize()?;
    if count != 4 {
        return Err(Error::Format(format!("head file holds {count} tensors, expected 4")));
    }
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name = c.string()?;
        let rows = c.usize()?;
        let cols = c.usize()?;
        let data = c.f32s(rows.saturating_mul(cols))?;
        store.insert(name, Mat::from_vec(rows, cols, data));
    }
    c.finish()?;
    let head = DenseHead::bind(&store, &task, d_in, hidden)?;
    Ok((task, head, store))
}

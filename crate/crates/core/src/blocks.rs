//! Transformer building blocks shared by the spectrum encoder and the
//! peptide decoder. Each block registers its tensors under a name prefix
//! and can later be re-bound to a store by name with shape checks.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::nn::{Graph, Initializer, Mat, ParamId, ParamStore, Scalar, Var};

fn register<F: Scalar>(
    store: &mut ParamStore<F>,
    rng: &mut dyn RngCore,
    name: String,
    rows: usize,
    cols: usize,
    init: Initializer,
) -> ParamId {
    let m = init.build(rng, rows, cols);
    store.insert(name, m)
}

pub(crate) fn bind<F: Scalar>(store: &ParamStore<F>, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
    let id = store.id(name)?;
    let shape = store.get(id).shape();
    if shape != (rows, cols) {
        return Err(Error::Format(format!(
            "parameter {name} has shape {shape:?}, expected ({rows}, {cols})"
        )));
    }
    Ok(id)
}

/// Collects (name, rows, cols) for every tensor a registration function creates.
pub(crate) fn required_shapes(register: impl FnOnce(&mut ParamStore<f32>, &mut dyn RngCore)) -> Vec<(String, usize, usize)> {
    let mut store = ParamStore::<f32>::new();
    let mut rng = rand::rngs::mock::StepRng::new(0, 1);
    register(&mut store, &mut rng);
    store
        .iter()
        .map(|(_, n, t)| (n.to_string(), t.rows, t.cols))
        .collect()
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn init<F: Scalar>(store: &mut ParamStore<F>, rng: &mut dyn RngCore, prefix: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: register(store, rng, format!("{prefix}.weight"), fan_in, fan_out, Initializer::Xavier),
            b: register(store, rng, format!("{prefix}.bias"), 1, fan_out, Initializer::Zeros),
        }
    }

    pub fn bind<F: Scalar>(store: &ParamStore<F>, prefix: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            w: bind(store, &format!("{prefix}.weight"), fan_in, fan_out)?,
            b: bind(store, &format!("{prefix}.bias"), 1, fan_out)?,
        })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn init<F: Scalar>(store: &mut ParamStore<F>, rng: &mut dyn RngCore, prefix: &str, d: usize) -> Self {
        Self {
            gain: register(store, rng, format!("{prefix}.gain"), 1, d, Initializer::Ones),
            bias: register(store, rng, format!("{prefix}.bias"), 1, d, Initializer::Zeros),
        }
    }

    pub fn bind<F: Scalar>(store: &ParamStore<F>, prefix: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: bind(store, &format!("{prefix}.gain"), 1, d)?,
            bias: bind(store, &format!("{prefix}.bias"), 1, d)?,
        })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    n_heads: usize,
}

impl MultiHeadAttention {
    pub fn init<F: Scalar>(store: &mut ParamStore<F>, rng: &mut dyn RngCore, prefix: &str, d: usize, n_heads: usize) -> Self {
        Self {
            q: Linear::init(store, rng, &format!("{prefix}.q"), d, d),
            k: Linear::init(store, rng, &format!("{prefix}.k"), d, d),
            v: Linear::init(store, rng, &format!("{prefix}.v"), d, d),
            out: Linear::init(store, rng, &format!("{prefix}.out"), d, d),
            n_heads,
        }
    }

    pub fn bind<F: Scalar>(store: &ParamStore<F>, prefix: &str, d: usize, n_heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::bind(store, &format!("{prefix}.q"), d, d)?,
            k: Linear::bind(store, &format!("{prefix}.k"), d, d)?,
            v: Linear::bind(store, &format!("{prefix}.v"), d, d)?,
            out: Linear::bind(store, &format!("{prefix}.out"), d, d)?,
            n_heads,
        })
    }

    /// Scaled dot-product attention of `query` rows over `memory` rows.
    /// With `causal`, query row `i` sees memory rows `0..=i` only.
    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, query: Var, memory: Var, causal: bool) -> Var {
        let d = g.shape(query).1;
        let dh = d / self.n_heads;
        let q = self.q.forward(g, query);
        let k = self.k.forward(g, memory);
        let v = self.v.forward(g, memory);
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let heads: Vec<Var> = (0..self.n_heads)
            .map(|h| {
                let (qh, kh, vh) = if self.n_heads == 1 {
                    (q, k, v)
                } else {
                    (g.slice_cols(q, h * dh, dh), g.slice_cols(k, h * dh, dh), g.slice_cols(v, h * dh, dh))
                };
                let scores = g.matmul_t(qh, kh);
                let scores = g.scale(scores, scale);
                let weights = g.softmax(scores, causal);
                g.matmul(weights, vh)
            })
            .collect();
        let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        self.out.forward(g, joined)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    inner: Linear,
    outer: Linear,
}

impl FeedForward {
    pub fn init<F: Scalar>(store: &mut ParamStore<F>, rng: &mut dyn RngCore, prefix: &str, d: usize, ff: usize) -> Self {
        Self {
            inner: Linear::init(store, rng, &format!("{prefix}.inner"), d, ff),
            outer: Linear::init(store, rng, &format!("{prefix}.outer"), ff, d),
        }
    }

    pub fn bind<F: Scalar>(store: &ParamStore<F>, prefix: &str, d: usize, ff: usize) -> Result<Self> {
        Ok(Self {
            inner: Linear::bind(store, &format!("{prefix}.inner"), d, ff)?,
            outer: Linear::bind(store, &format!("{prefix}.outer"), ff, d)?,
        })
    }

    pub fn forward<F: Scalar>(&self, g: &mut Graph<F>, x: Var) -> Var {
        let h = self.inner.forward(g, x);
        let h = g.relu(h);
        self.outer.forward(g, h)
    }
}

/// Inverted dropout; a no-op without an RNG or with `p == 0`.
pub(crate) fn dropout<F: Scalar, R: RngCore + ?Sized>(g: &mut Graph<F>, x: Var, p: f64, rng: Option<&mut R>) -> Var {
    let Some(rng) = rng else { return x };
    if p <= 0.0 {
        return x;
    }
    let (r, c) = g.shape(x);
    let keep = F::lit(1.0 / (1.0 - p));
    let mask = (0..r * c)
        .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
        .collect();
    g.mul_const(x, Mat::from_vec(r, c, mask))
}

/// Sinusoidal features of a scalar with geometrically spaced wavelengths in
/// `[lambda_min, lambda_max]`: sines in the first half, cosines in the second.
pub fn sinusoidal(value: f64, d_model: usize, lambda_min: f64, lambda_max: f64) -> Vec<f64> {
    let half = d_model / 2;
    let mut out = vec![0.0; d_model];
    for k in 0..half {
        let frac = if half > 1 { k as f64 / (half - 1) as f64 } else { 0.0 };
        let lambda = lambda_min * (lambda_max / lambda_min).powf(frac);
        let omega = 2.0 * std::f64::consts::PI / lambda;
        out[k] = (omega * value).sin();
        out[half + k] = (omega * value).cos();
    }
    out
}

//! Transformer spectrum encoder.
//!
//! Each peak becomes a token: a fixed sinusoidal encoding of its m/z plus a
//! learned, bias-free projection of its intensity. A stack of post-norm
//! self-attention blocks follows, and the spectrum embedding is the mean of
//! the per-peak outputs over valid positions.

use rand::RngCore;
use rayon::prelude::*;

use crate::blocks::{self, dropout, FeedForward, LayerNorm, MultiHeadAttention};
use crate::error::{Error, Result};
use crate::nn::{Graph, Initializer, Mat, ParamId, ParamStore, Scalar, Var};
use crate::preprocess::ProcessedSpectrum;

pub const PREFIX: &str = "encoder";

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            ff_dim: 256,
            dropout: 0.0,
            lambda_min: 0.001,
            lambda_max: 10000.0,
        }
    }
}

impl EncoderConfig {
    /// Nine layers, width 512, eight heads.
    pub fn full_scale() -> Self {
        Self {
            d_model: 512,
            n_layers: 9,
            n_heads: 8,
            ff_dim: 2048,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(Error::Config("encoder.d_model must be a positive even number".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config("encoder.d_model must be divisible by encoder.n_heads".into()));
        }
        if self.n_layers == 0 {
            return Err(Error::Config("encoder.n_layers must be at least 1".into()));
        }
        if self.ff_dim == 0 {
            return Err(Error::Config("encoder.ff_dim must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("encoder.dropout must be in [0, 1)".into()));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min < self.lambda_max) {
            return Err(Error::Config("encoder.lambda_min must be positive and below lambda_max".into()));
        }
        Ok(())
    }
}

/// Sinusoidal m/z encoding with wavelengths spaced geometrically between
/// `lambda_min` and `lambda_max`.
pub fn encode_mz(mz: f64, d_model: usize, lambda_min: f64, lambda_max: f64) -> Vec<f64> {
    blocks::sinusoidal(mz, d_model, lambda_min, lambda_max)
}

/// Padded batch of preprocessed spectra. Padded slots hold m/z 0 and
/// intensity 0 with `mask == false`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakBatch {
    pub batch: usize,
    pub max_len: usize,
    pub mz: Vec<f64>,
    pub intensity: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PeakBatch {
    pub fn from_spectra(spectra: &[&ProcessedSpectrum]) -> Result<Self> {
        let max_len = spectra.iter().map(|s| s.peaks.len()).max().unwrap_or(0);
        let batch = spectra.len();
        let mut mz = vec![0.0; batch * max_len];
        let mut intensity = vec![0.0; batch * max_len];
        let mut mask = vec![false; batch * max_len];
        for (b, s) in spectra.iter().enumerate() {
            if s.peaks.is_empty() {
                return Err(Error::EmptySpectrum(format!("batch row {b}")));
            }
            for (i, &(m, it)) in s.peaks.iter().enumerate() {
                mz[b * max_len + i] = m;
                intensity[b * max_len + i] = it;
                mask[b * max_len + i] = true;
            }
        }
        Ok(Self {
            batch,
            max_len,
            mz,
            intensity,
            mask,
        })
    }

    /// Valid (m/z, intensity) columns of one row.
    pub fn row(&self, b: usize) -> (Vec<f64>, Vec<f64>) {
        let range = b * self.max_len..(b + 1) * self.max_len;
        let mut mz = Vec::new();
        let mut it = Vec::new();
        for i in range {
            if self.mask[i] {
                mz.push(self.mz[i]);
                it.push(self.intensity[i]);
            }
        }
        (mz, it)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff: FeedForward,
    norm2: LayerNorm,
}

/// Encoder architecture bound to parameter ids in a store.
#[derive(Debug, Clone)]
pub struct SpectrumEncoder {
    cfg: EncoderConfig,
    intensity: ParamId,
    layers: Vec<EncoderLayer>,
}

/// Output of encoding one spectrum.
pub struct Encoded {
    /// `n_peaks × d_model` per-peak outputs.
    pub memory: Var,
    /// `1 × d_model` mean over peaks.
    pub pooled: Var,
}

impl SpectrumEncoder {
    pub fn init<F: Scalar>(cfg: &EncoderConfig, store: &mut ParamStore<F>, rng: &mut dyn RngCore) -> Self {
        let d = cfg.d_model;
        let intensity = store.insert(
            format!("{PREFIX}.intensity.weight"),
            Initializer::Xavier.build(rng, 1, d),
        );
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("{PREFIX}.layers.{l}");
                EncoderLayer {
                    attn: MultiHeadAttention::init(store, rng, &format!("{p}.self_attn"), d, cfg.n_heads),
                    norm1: LayerNorm::init(store, rng, &format!("{p}.norm1"), d),
                    ff: FeedForward::init(store, rng, &format!("{p}.ff"), d, cfg.ff_dim),
                    norm2: LayerNorm::init(store, rng, &format!("{p}.norm2"), d),
                }
            })
            .collect();
        Self {
            cfg: cfg.clone(),
            intensity,
            layers,
        }
    }

    pub fn bind<F: Scalar>(cfg: &EncoderConfig, store: &ParamStore<F>) -> Result<Self> {
        let d = cfg.d_model;
        let intensity = blocks::bind(store, &format!("{PREFIX}.intensity.weight"), 1, d)?;
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("{PREFIX}.layers.{l}");
                Ok(EncoderLayer {
                    attn: MultiHeadAttention::bind(store, &format!("{p}.self_attn"), d, cfg.n_heads)?,
                    norm1: LayerNorm::bind(store, &format!("{p}.norm1"), d)?,
                    ff: FeedForward::bind(store, &format!("{p}.ff"), d, cfg.ff_dim)?,
                    norm2: LayerNorm::bind(store, &format!("{p}.norm2"), d)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            intensity,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Per-peak input embeddings: m/z encoding plus `intensity · W_int`.
    pub fn embed_peaks<F: Scalar>(&self, g: &mut Graph<F>, mz: &[f64], intensity: &[f64]) -> Result<Var> {
        if mz.len() != intensity.len() {
            return Err(Error::Numeric("m/z and intensity lengths differ".into()));
        }
        if mz.iter().chain(intensity).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite peak value".into()));
        }
        let d = self.cfg.d_model;
        let mut enc = Vec::with_capacity(mz.len() * d);
        for &m in mz {
            enc.extend(encode_mz(m, d, self.cfg.lambda_min, self.cfg.lambda_max));
        }
        let enc = g.input(Mat::from_f64(mz.len(), d, &enc));
        let col = g.input(Mat::from_f64(intensity.len(), 1, intensity));
        let w = g.param(self.intensity);
        let proj = g.matmul(col, w);
        Ok(g.add(enc, proj))
    }

    /// Encodes the valid peaks of one spectrum.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        mz: &[f64],
        intensity: &[f64],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Encoded> {
        if mz.is_empty() {
            return Err(Error::EmptySpectrum("no valid peaks to encode".into()));
        }
        let p = self.cfg.dropout;
        let mut x = self.embed_peaks(g, mz, intensity)?;
        for layer in &self.layers {
            let a = layer.attn.forward(g, x, x, false);
            let a = dropout(g, a, p, rng.as_deref_mut());
            let sum = g.add(x, a);
            x = layer.norm1.forward(g, sum);
            let f = layer.ff.forward(g, x);
            let f = dropout(g, f, p, rng.as_deref_mut());
            let sum = g.add(x, f);
            x = layer.norm2.forward(g, sum);
        }
        let pooled = g.mean_rows(x);
        Ok(Encoded { memory: x, pooled })
    }

    pub fn forward_spectrum<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        s: &ProcessedSpectrum,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Encoded> {
        let (mz, it): (Vec<f64>, Vec<f64>) = s.peaks.iter().copied().unzip();
        self.forward(g, &mz, &it, rng)
    }

    /// Per-peak input embeddings for a padded batch, one
    /// `max_len × d_model` matrix per row (padded slots included).
    pub fn embed_batch<F: Scalar>(&self, store: &ParamStore<F>, batch: &PeakBatch) -> Result<Vec<Mat<F>>> {
        (0..batch.batch)
            .map(|b| {
                let range = b * batch.max_len..(b + 1) * batch.max_len;
                let mut g = Graph::inference(store);
                let v = self.embed_peaks(&mut g, &batch.mz[range.clone()], &batch.intensity[range])?;
                Ok(g.value(v).clone())
            })
            .collect()
    }

    /// Frozen inference over a batch: per-row peak memory and pooled embedding.
    pub fn encode_batch<F: Scalar>(&self, store: &ParamStore<F>, batch: &PeakBatch) -> Result<Vec<(Mat<F>, Vec<F>)>> {
        (0..batch.batch)
            .into_par_iter()
            .map(|b| {
                let (mz, it) = batch.row(b);
                let mut g = Graph::inference(store);
                let enc = self.forward(&mut g, &mz, &it, None)?;
                Ok((g.value(enc.memory).clone(), g.value(enc.pooled).data.clone()))
            })
            .collect()
    }

    /// Pooled embeddings for many spectra, in input order.
    pub fn embed_spectra<F: Scalar>(&self, store: &ParamStore<F>, spectra: &[ProcessedSpectrum]) -> Result<Vec<Vec<F>>> {
        spectra
            .par_iter()
            .map(|s| {
                let mut g = Graph::inference(store);
                let enc = self.forward_spectrum(&mut g, s, None)?;
                Ok(g.value(enc.pooled).data.clone())
            })
            .collect()
    }
}

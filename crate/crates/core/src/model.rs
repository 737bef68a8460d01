//! Complete model (encoder, optional decoder, task heads) and its binary
//! checkpoint format.
//!
//! Layout, little-endian: magic `SCPT`, `u32` version, `u32` length plus
//! `key=value` config text, `u32` tensor count, then per tensor `u32` name
//! length, name bytes, `u32` rank, `u32` dims, `f32` data.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::required_shapes;
use crate::denovo::{DecoderConfig, PeptideDecoder, Token, Vocabulary};
use crate::encoder::{EncoderConfig, SpectrumEncoder};
use crate::binio::Cursor;
use crate::error::{Error, Result};
use crate::nn::{Mat, ParamStore};
use crate::preprocess::ProcessedSpectrum;
use crate::train::DenseHead;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: Option<DecoderConfig>,
    pub vocab: Vocabulary,
    pub heads: Vec<String>,
    pub head_hidden: usize,
}

impl ModelConfig {
    pub fn encoder_only(encoder: EncoderConfig) -> Self {
        let head_hidden = encoder.d_model;
        Self {
            encoder,
            decoder: None,
            vocab: Vocabulary::default(),
            heads: Vec::new(),
            head_hidden,
        }
    }

    pub fn with_decoder(encoder: EncoderConfig) -> Self {
        let decoder = DecoderConfig {
            d_model: encoder.d_model,
            ..DecoderConfig::default()
        };
        Self {
            decoder: Some(decoder),
            ..Self::encoder_only(encoder)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if let Some(d) = &self.decoder {
            d.validate(self.encoder.d_model)?;
        }
        if self.head_hidden == 0 {
            return Err(Error::Config("head.hidden must be positive".into()));
        }
        for (i, h) in self.heads.iter().enumerate() {
            if h.is_empty() || h.contains([',', '\n', '=']) || self.heads[..i].contains(h) {
                return Err(Error::Config(format!("bad or duplicate head name {h:?}")));
            }
        }
        Ok(())
    }

    /// The config block as ordered `key=value` lines.
    pub fn to_text(&self) -> String {
        let e = &self.encoder;
        let mut lines = vec![
            format!("encoder.d_model={}", e.d_model),
            format!("encoder.n_layers={}", e.n_layers),
            format!("encoder.n_heads={}", e.n_heads),
            format!("encoder.ff_dim={}", e.ff_dim),
            format!("encoder.dropout={}", e.dropout),
            format!("encoder.lambda_min={}", e.lambda_min),
            format!("encoder.lambda_max={}", e.lambda_max),
        ];
        if let Some(d) = &self.decoder {
            let mods: Vec<String> = (0..self.vocab.eos())
                .filter_map(|i| self.vocab.token(i))
                .filter(|t| t.delta != 0.0)
                .map(|t| format!("{}:{}", t.residue, t.delta))
                .collect();
            lines.extend([
                format!("decoder.n_layers={}", d.n_layers),
                format!("decoder.n_heads={}", d.n_heads),
                format!("decoder.ff_dim={}", d.ff_dim),
                format!("decoder.max_len={}", d.max_len),
                format!("decoder.max_charge={}", d.max_charge),
                format!("decoder.dropout={}", d.dropout),
                format!("decoder.vocab={}", mods.join(",")),
            ]);
        }
        lines.push(format!("heads={}", self.heads.join(",")));
        lines.push(format!("head.hidden={}", self.head_hidden));
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad config line {line:?}")))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Format(format!("config is missing {k}")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("bad value {v:?} for {k}")))
        }
        let encoder = EncoderConfig {
            d_model: num("encoder.d_model", get("encoder.d_model")?)?,
            n_layers: num("encoder.n_layers", get("encoder.n_layers")?)?,
            n_heads: num("encoder.n_heads", get("encoder.n_heads")?)?,
            ff_dim: num("encoder.ff_dim", get("encoder.ff_dim")?)?,
            dropout: num("encoder.dropout", get("encoder.dropout")?)?,
            lambda_min: num("encoder.lambda_min", get("encoder.lambda_min")?)?,
            lambda_max: num("encoder.lambda_max", get("encoder.lambda_max")?)?,
        };
        let (decoder, vocab) = if kv.contains_key("decoder.n_layers") {
            let d = DecoderConfig {
                d_model: encoder.d_model,
                n_layers: num("decoder.n_layers", get("decoder.n_layers")?)?,
                n_heads: num("decoder.n_heads", get("decoder.n_heads")?)?,
                ff_dim: num("decoder.ff_dim", get("decoder.ff_dim")?)?,
                max_len: num("decoder.max_len", get("decoder.max_len")?)?,
                max_charge: num("decoder.max_charge", get("decoder.max_charge")?)?,
                dropout: num("decoder.dropout", get("decoder.dropout")?)?,
            };
            let mut mods = Vec::new();
            for item in get("decoder.vocab")?.split(',').filter(|s| !s.is_empty()) {
                let (r, delta) = item
                    .split_once(':')
                    .ok_or_else(|| Error::Format(format!("bad vocabulary entry {item:?}")))?;
                let residue = r.chars().next().ok_or_else(|| Error::Format("empty residue".into()))?;
                mods.push(Token {
                    residue,
                    delta: num("decoder.vocab", delta)?,
                });
            }
            let vocab = Vocabulary::with_modifications(mods).map_err(|e| Error::Format(e.to_string()))?;
            (Some(d), vocab)
        } else {
            (None, Vocabulary::default())
        };
        let heads = get("heads")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let cfg = Self {
            encoder,
            decoder,
            vocab,
            heads,
            head_hidden: num("head.hidden", get("head.hidden")?)?,
        };
        cfg.validate().map_err(|e| Error::Format(format!("invalid checkpoint config: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore<f32>,
    pub encoder: SpectrumEncoder,
    pub decoder: Option<PeptideDecoder>,
    pub heads: Vec<(String, DenseHead)>,
}

fn register_all(cfg: &ModelConfig, store: &mut ParamStore<f32>, rng: &mut dyn rand::RngCore) {
    SpectrumEncoder::init(&cfg.encoder, store, rng);
    if let Some(d) = &cfg.decoder {
        PeptideDecoder::init(d, cfg.vocab.clone(), store, rng);
    }
    for h in &cfg.heads {
        DenseHead::init(store, rng, h, cfg.encoder.d_model, cfg.head_hidden);
    }
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        register_all(&config, &mut store, &mut rng);
        Self::bind(config, store)
    }

    pub fn bind(config: ModelConfig, store: ParamStore<f32>) -> Result<Self> {
        let encoder = SpectrumEncoder::bind(&config.encoder, &store)?;
        let decoder = match &config.decoder {
            Some(d) => Some(PeptideDecoder::bind(d, config.vocab.clone(), &store)?),
            None => None,
        };
        let heads = config
            .heads
            .iter()
            .map(|h| Ok((h.clone(), DenseHead::bind(&store, h, config.encoder.d_model, config.head_hidden)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            store,
            encoder,
            decoder,
            heads,
        })
    }

    pub fn head(&self, task: &str) -> Option<&DenseHead> {
        self.heads.iter().find(|(t, _)| t == task).map(|(_, h)| h)
    }

    /// Adds a freshly initialized head (or replaces an existing one).
    pub fn add_head(&mut self, task: &str, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = DenseHead::init(&mut self.store, &mut rng, task, self.config.encoder.d_model, self.config.head_hidden);
        if let Some(slot) = self.heads.iter_mut().find(|(t, _)| t == task) {
            slot.1 = head;
        } else {
            self.config.heads.push(task.to_string());
            self.heads.push((task.to_string(), head));
        }
        Ok(())
    }

    /// Copies a head's tensors from a separately trained store.
    pub fn import_head(&mut self, task: &str, from: &ParamStore<f32>) -> Result<()> {
        if self.head(task).is_none() {
            self.add_head(task, 0)?;
        }
        self.store.copy_prefix_from(from, &format!("{}.", crate::train::head_prefix(task)))
    }

    /// Pooled embeddings, one per spectrum.
    pub fn embed(&self, spectra: &[ProcessedSpectrum]) -> Result<Vec<Vec<f32>>> {
        self.encoder.embed_spectra(&self.store, spectra)
    }

    /// Head probabilities for the given spectra.
    pub fn predict(&self, task: &str, spectra: &[ProcessedSpectrum]) -> Result<Vec<f64>> {
        let head = self
            .head(task)
            .ok_or_else(|| Error::Config(format!("model has no head for task {task}")))?;
        let emb = self.embed(spectra)?;
        Ok(head
            .logits(&self.store, &emb)?
            .into_iter()
            .map(crate::train::sigmoid)
            .collect())
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let text = self.config.to_text();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(text.len() as u32).to_le_bytes())?;
        w.write_all(text.as_bytes())?;
        w.write_all(&(self.store.len() as u32).to_le_bytes())?;
        for (_, name, t) in self.store.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&2u32.to_le_bytes())?;
            w.write_all(&(t.rows as u32).to_le_bytes())?;
            w.write_all(&(t.cols as u32).to_le_bytes())?;
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.save(&mut out).expect("writing to memory");
        out
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor::new(&bytes, "checkpoint");
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = cur.u32()? as usize;
        let text = std::str::from_utf8(cur.take(len)?).map_err(|_| Error::Format("config block is not UTF-8".into()))?;
        let config = ModelConfig::from_text(text)?;
        let count = cur.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let n = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(n)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = cur.u32()? as usize;
            let dims: Vec<usize> = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<_>>()?;
            let (rows, cols) = match dims[..] {
                [c] => (1, c),
                [r, c] => (r, c),
                _ => return Err(Error::Format(format!("tensor {name} has unsupported rank {rank}"))),
            };
            let raw = cur.take(rows * cols * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if tensors.insert(name.clone(), Mat::from_vec(rows, cols, data)).is_some() {
                return Err(Error::Format(format!("tensor {name} appears twice")));
            }
        }
        cur.finish()?;
        let mut store = ParamStore::new();
        for (name, rows, cols) in required_shapes(|s, rng| register_all(&config, s, rng)) {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))?;
            if t.shape() != (rows, cols) {
                return Err(Error::Format(format!(
                    "tensor {name} has shape {:?}, config requires ({rows}, {cols})",
                    t.shape()
                )));
            }
            store.insert(name, t);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }
        Self::bind(config, store)
    }

    /// Loads and checks the architecture against `expected` (heads excluded).
    pub fn load_expecting<R: Read>(r: R, expected: &ModelConfig) -> Result<Self> {
        let model = Self::load(r)?;
        let strip = |c: &ModelConfig| ModelConfig {
            heads: Vec::new(),
            ..c.clone()
        };
        let (got, want) = (strip(&model.config).to_text(), strip(expected).to_text());
        if got != want {
            let diff = got
                .lines()
                .zip(want.lines())
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("{a} (expected {b})"))
                .unwrap_or_else(|| "decoder presence differs".into());
            return Err(Error::Format(format!("checkpoint config mismatch: {diff}")));
        }
        Ok(model)
    }
}

//! Autoregressive peptide decoder over encoder peak memory.
//!
//! Position 0 of the decoder input carries the precursor: the sinusoidal
//! encoding of its m/z plus a learned per-charge vector. Later positions are
//! amino-acid token embeddings with a sinusoidal position code. The decoder
//! supplies the de novo sequencing loss used for pre-training and for
//! multi-task fine-tuning.

use std::io::BufRead;

use rand::RngCore;

use crate::blocks::{self, dropout, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::chem::{residue_mass, Peptide, CANONICAL_RESIDUES, PHOSPHO_DELTA};
use crate::encoder::encode_mz;
use crate::error::{Error, Result};
use crate::nn::{Graph, Initializer, Mat, ParamId, ParamStore, Scalar, Var};

pub const PREFIX: &str = "decoder";
const MOD_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub residue: char,
    pub delta: f64,
}

/// Output vocabulary: canonical residues, modified variants, then EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
}

impl Default for Vocabulary {
    /// Canonical residues plus phospho-S/T/Y.
    fn default() -> Self {
        let mods = ['S', 'T', 'Y'].map(|r| Token {
            residue: r,
            delta: PHOSPHO_DELTA,
        });
        Self::with_modifications(mods.to_vec()).expect("default vocabulary is valid")
    }
}

impl Vocabulary {
    pub fn with_modifications(mods: Vec<Token>) -> Result<Self> {
        let mut tokens: Vec<Token> = CANONICAL_RESIDUES
            .iter()
            .map(|&r| Token { residue: r, delta: 0.0 })
            .collect();
        for m in mods {
            if residue_mass(m.residue).is_none() {
                return Err(Error::Config(format!("modified token on unknown residue {}", m.residue)));
            }
            if !m.delta.is_finite() || m.delta == 0.0 {
                return Err(Error::Config(format!("modification delta for {} must be non-zero", m.residue)));
            }
            tokens.push(m);
        }
        Ok(Self { tokens })
    }

    /// Reads modified variants from a `token\tmass_delta` TSV (header first).
    pub fn from_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut mods = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let (tok, delta) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(format!("vocabulary line {}", i + 1), "expected token<TAB>mass_delta"))?;
            let mut chars = tok.trim().chars();
            let (Some(residue), None) = (chars.next(), chars.next()) else {
                return Err(Error::parse(format!("vocabulary line {}", i + 1), format!("bad token {tok:?}")));
            };
            let delta: f64 = delta
                .trim()
                .parse()
                .map_err(|_| Error::parse(format!("vocabulary line {}", i + 1), format!("bad delta {delta:?}")))?;
            mods.push(Token { residue, delta });
        }
        Self::with_modifications(mods)
    }

    /// Number of output classes, EOS included.
    pub fn size(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn eos(&self) -> usize {
        self.tokens.len()
    }

    /// Sentinel id used to pad token sequences; never predicted.
    pub fn pad(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn token(&self, id: usize) -> Option<&Token> {
        self.tokens.get(id)
    }

    pub fn tokenize(&self, p: &Peptide) -> Result<Vec<usize>> {
        (0..p.len())
            .map(|i| {
                let residue = p.residues()[i];
                let delta = p.delta_at(i);
                self.tokens
                    .iter()
                    .position(|t| t.residue == residue && (t.delta - delta).abs() < MOD_TOLERANCE)
                    .ok_or_else(|| Error::Vocab(format!("{residue}{delta:+}")))
            })
            .collect()
    }

    /// Builds a peptide from token ids up to the first EOS; `None` when empty.
    pub fn detokenize(&self, ids: &[usize]) -> Option<Peptide> {
        let mut residues = Vec::new();
        let mut mods = Vec::new();
        for &id in ids {
            let Some(t) = self.tokens.get(id) else { break };
            if t.delta != 0.0 {
                mods.push((residues.len(), t.delta));
            }
            residues.push(t.residue);
        }
        Peptide::new(residues, mods).ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub max_charge: usize,
    pub dropout: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            ff_dim: 256,
            max_len: 30,
            max_charge: 10,
            dropout: 0.0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self, encoder_d_model: usize) -> Result<()> {
        if self.d_model != encoder_d_model {
            return Err(Error::Config("decoder.d_model must equal encoder.d_model".into()));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 || self.d_model % 2 != 0 {
            return Err(Error::Config("decoder.d_model must be even and divisible by decoder.n_heads".into()));
        }
        if self.n_layers == 0 || self.ff_dim == 0 || self.max_charge == 0 {
            return Err(Error::Config("decoder layer count, ff_dim and max_charge must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("decoder.dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Precursor information conditioning the decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precursor {
    pub mz: f64,
    pub charge: u32,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
    norm3: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct PeptideDecoder {
    cfg: DecoderConfig,
    vocab: Vocabulary,
    aa_embed: ParamId,
    charge_embed: ParamId,
    layers: Vec<DecoderLayer>,
    output: Linear,
}

// Wavelengths for token positions: the classic 10000-based transformer scale.
const POS_LAMBDA_MIN: f64 = 2.0 * std::f64::consts::PI;
const POS_LAMBDA_MAX: f64 = 2.0 * std::f64::consts::PI * 10000.0;
// Precursor m/z uses the same encoding as peaks.
const MZ_LAMBDA_MIN: f64 = 0.001;
const MZ_LAMBDA_MAX: f64 = 10000.0;

impl PeptideDecoder {
    pub fn init<F: Scalar>(cfg: &DecoderConfig, vocab: Vocabulary, store: &mut ParamStore<F>, rng: &mut dyn RngCore) -> Self {
        let d = cfg.d_model;
        let v = vocab.size();
        let aa_embed = store.insert(format!("{PREFIX}.aa_embed"), Initializer::Uniform(0.1).build(rng, v, d));
        let charge_embed = store.insert(
            format!("{PREFIX}.charge_embed"),
            Initializer::Uniform(0.1).build(rng, cfg.max_charge + 1, d),
        );
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("{PREFIX}.layers.{l}");
                DecoderLayer {
                    self_attn: MultiHeadAttention::init(store, rng, &format!("{p}.self_attn"), d, cfg.n_heads),
                    norm1: LayerNorm::init(store, rng, &format!("{p}.norm1"), d),
                    cross_attn: MultiHeadAttention::init(store, rng, &format!("{p}.cross_attn"), d, cfg.n_heads),
                    norm2: LayerNorm::init(store, rng, &format!("{p}.norm2"), d),
                    ff: FeedForward::init(store, rng, &format!("{p}.ff"), d, cfg.ff_dim),
                    norm3: LayerNorm::init(store, rng, &format!("{p}.norm3"), d),
                }
            })
            .collect();
        let output = Linear::init(store, rng, &format!("{PREFIX}.output"), d, v);
        Self {
            cfg: cfg.clone(),
            vocab,
            aa_embed,
            charge_embed,
            layers,
            output,
        }
    }

    pub fn bind<F: Scalar>(cfg: &DecoderConfig, vocab: Vocabulary, store: &ParamStore<F>) -> Result<Self> {
        let d = cfg.d_model;
        let v = vocab.size();
        let aa_embed = blocks::bind(store, &format!("{PREFIX}.aa_embed"), v, d)?;
        let charge_embed = blocks::bind(store, &format!("{PREFIX}.charge_embed"), cfg.max_charge + 1, d)?;
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("{PREFIX}.layers.{l}");
                Ok(DecoderLayer {
                    self_attn: MultiHeadAttention::bind(store, &format!("{p}.self_attn"), d, cfg.n_heads)?,
                    norm1: LayerNorm::bind(store, &format!("{p}.norm1"), d)?,
                    cross_attn: MultiHeadAttention::bind(store, &format!("{p}.cross_attn"), d, cfg.n_heads)?,
                    norm2: LayerNorm::bind(store, &format!("{p}.norm2"), d)?,
                    ff: FeedForward::bind(store, &format!("{p}.ff"), d, cfg.ff_dim)?,
                    norm3: LayerNorm::bind(store, &format!("{p}.norm3"), d)?,
                })
            })
            .collect::<Result<_>>()?;
        let output = Linear::bind(store, &format!("{PREFIX}.output"), d, v)?;
        Ok(Self {
            cfg: cfg.clone(),
            vocab,
            aa_embed,
            charge_embed,
            layers,
            output,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// Parameter ids of the output projection (weight, bias).
    pub fn output_params(&self) -> (ParamId, ParamId) {
        (self.output.w, self.output.b)
    }

    /// Logits for every position of `[precursor, prefix...]`, shape
    /// `(prefix.len() + 1) × vocab.size()`; row `i` predicts token `i`.
    pub fn logits<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        memory: Var,
        precursor: Precursor,
        prefix: &[usize],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let d = self.cfg.d_model;
        let charge = (precursor.charge as usize).min(self.cfg.max_charge);
        let mass = g.input(Mat::from_f64(1, d, &encode_mz(precursor.mz, d, MZ_LAMBDA_MIN, MZ_LAMBDA_MAX)));
        let charge_table = g.param(self.charge_embed);
        let charge_vec = g.gather_rows(charge_table, &[charge]);
        let first = g.add(mass, charge_vec);
        let mut x = if prefix.is_empty() {
            first
        } else {
            if let Some(&bad) = prefix.iter().find(|&&t| t >= self.vocab.size()) {
                return Err(Error::Vocab(format!("token id {bad}")));
            }
            let table = g.param(self.aa_embed);
            let tokens = g.gather_rows(table, prefix);
            let mut pos = Vec::with_capacity(prefix.len() * d);
            for i in 0..prefix.len() {
                pos.extend(blocks::sinusoidal((i + 1) as f64, d, POS_LAMBDA_MIN, POS_LAMBDA_MAX));
            }
            let pos = g.input(Mat::from_f64(prefix.len(), d, &pos));
            let tokens = g.add(tokens, pos);
            g.concat_rows(&[first, tokens])
        };
        let p = self.cfg.dropout;
        for layer in &self.layers {
            let a = layer.self_attn.forward(g, x, x, true);
            let a = dropout(g, a, p, rng.as_deref_mut());
            let s = g.add(x, a);
            x = layer.norm1.forward(g, s);
            let c = layer.cross_attn.forward(g, x, memory, false);
            let c = dropout(g, c, p, rng.as_deref_mut());
            let s = g.add(x, c);
            x = layer.norm2.forward(g, s);
            let f = layer.ff.forward(g, x);
            let f = dropout(g, f, p, rng.as_deref_mut());
            let s = g.add(x, f);
            x = layer.norm3.forward(g, s);
        }
        Ok(self.output.forward(g, x))
    }

    /// Teacher-forced mean token cross-entropy over the target tokens and EOS.
    pub fn sequencing_loss<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        memory: Var,
        precursor: Precursor,
        target: &Peptide,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let tokens = self.vocab.tokenize(target)?;
        if tokens.len() > self.cfg.max_len {
            return Err(Error::Vocab(format!(
                "peptide length {} exceeds decoder max_len {}",
                tokens.len(),
                self.cfg.max_len
            )));
        }
        self.token_loss(g, memory, precursor, &tokens, rng)
    }

    pub fn token_loss<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        memory: Var,
        precursor: Precursor,
        tokens: &[usize],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let logits = self.logits(g, memory, precursor, tokens, rng)?;
        let mut targets = tokens.to_vec();
        targets.push(self.vocab.eos());
        Ok(g.cross_entropy(logits, &targets))
    }

    /// Argmax decoding until EOS or `max_len` tokens.
    pub fn greedy_decode<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        memory: &Mat<F>,
        precursor: Precursor,
        max_len: usize,
    ) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        while out.len() < max_len {
            let mut g = Graph::inference(store);
            let mem = g.input(memory.clone());
            let logits = self.logits(&mut g, mem, precursor, &out, None)?;
            let lv = g.value(logits);
            let last = lv.row(lv.rows - 1);
            let best = last
                .iter()
                .enumerate()
                .fold((0, F::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0;
            if best == self.vocab.eos() {
                break;
            }
            out.push(best);
        }
        Ok(out)
    }
}

/// Fraction of positions where the predicted token equals the true one,
/// over the longer of the two sequences.
pub fn aa_accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    let denom = predicted.len().max(truth.len());
    if denom == 0 {
        return 1.0;
    }
    let matches = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    matches as f64 / denom as f64
}

/// [`aa_accuracy`] over peptides, comparing residues and modification deltas.
pub fn peptide_aa_accuracy(predicted: &Peptide, truth: &Peptide) -> f64 {
    let denom = predicted.len().max(truth.len());
    let matches = (0..predicted.len().min(truth.len()))
        .filter(|&i| {
            predicted.residues()[i] == truth.residues()[i]
                && (predicted.delta_at(i) - truth.delta_at(i)).abs() < MOD_TOLERANCE
        })
        .count();
    matches as f64 / denom as f64
}

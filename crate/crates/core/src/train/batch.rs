//! Per-example graphs, gradients averaged over a batch in input order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{mean_gradients, smooth_label, DenovoExample};
use crate::denovo::{PeptideDecoder, Precursor};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Gradients, Graph};
use crate::preprocess::ProcessedSpectrum;
use crate::train::DenseHead;

/// Dropout stream for one example of one step; `None` when dropout is off.
pub(crate) fn example_rng(dropout: f64, seed: u64, step: usize, idx: usize) -> Option<ChaCha8Rng> {
    (dropout > 0.0).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d50f);
        rng.set_stream(((step as u64) << 32) | idx as u64);
        rng
    })
}

pub(crate) fn precursor_of(s: &ProcessedSpectrum) -> Precursor {
    Precursor {
        mz: s.precursor_mz,
        charge: s.precursor_charge,
    }
}

/// Mean smoothed BCE of a head on top of the encoder, with its gradient.
pub(crate) fn classify_grads(
    model: &Model,
    head: &DenseHead,
    batch: &[(&ProcessedSpectrum, u8)],
    eps: f64,
    seed: u64,
    step: usize,
) -> Result<(f64, Gradients<f32>)> {
    let dropout = model.config.encoder.dropout;
    let parts: Vec<(f64, Gradients<f32>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, (s, y))| {
            let mut rng = example_rng(dropout, seed, step, i);
            let mut g = Graph::new(&model.store);
            let enc = model
                .encoder
                .forward_spectrum(&mut g, s, rng.as_mut().map(|r| r as &mut dyn RngCore))?;
            let z = head.forward(&mut g, enc.pooled);
            let loss = g.bce_with_logits(z, &[smooth_label(*y, eps) as f32]);
            Ok((g.scalar(loss) as f64, g.backward(loss)?))
        })
        .collect::<Result<_>>()?;
    Ok(reduce(parts, model.store.len()))
}

fn reduce(parts: Vec<(f64, Gradients<f32>)>, n_params: usize) -> (f64, Gradients<f32>) {
    let n = parts.len().max(1) as f64;
    let loss = parts.iter().map(|(l, _)| l).sum::<f64>() / n;
    (loss, mean_gradients(parts.into_iter().map(|(_, g)| g).collect(), n_params))
}

pub(crate) fn decoder_of(model: &Model) -> Result<&PeptideDecoder> {
    model
        .decoder
        .as_ref()
        .ok_or_else(|| Error::Config("model has no peptide decoder".into()))
}

/// Mean de novo sequencing loss with its gradient.
pub(crate) fn denovo_grads(model: &Model, batch: &[&DenovoExample], seed: u64, step: usize) -> Result<(f64, Gradients<f32>)> {
    let decoder = decoder_of(model)?;
    let dropout = model.config.encoder.dropout.max(decoder.config().dropout);
    let parts: Vec<(f64, Gradients<f32>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut rng = example_rng(dropout, seed, step, i);
            let mut g = Graph::new(&model.store);
            let enc = model
                .encoder
                .forward_spectrum(&mut g, &ex.spectrum, rng.as_mut().map(|r| r as &mut dyn RngCore))?;
            let loss = decoder.sequencing_loss(
                &mut g,
                enc.memory,
                precursor_of(&ex.spectrum),
                &ex.peptide,
                rng.as_mut().map(|r| r as &mut dyn RngCore),
            )?;
            Ok((g.scalar(loss) as f64, g.backward(loss)?))
        })
        .collect::<Result<_>>()?;
    Ok(reduce(parts, model.store.len()))
}

/// Mean de novo loss without gradients.
pub(crate) fn denovo_loss(model: &Model, examples: &[DenovoExample]) -> Result<f64> {
    let decoder = decoder_of(model)?;
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let mut g = Graph::inference(&model.store);
            let enc = model.encoder.forward_spectrum(&mut g, &ex.spectrum, None)?;
            let loss = decoder.sequencing_loss(&mut g, enc.memory, precursor_of(&ex.spectrum), &ex.peptide, None)?;
            Ok(g.scalar(loss) as f64)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Weighted sum of gradient sets.
pub(crate) fn combine(parts: Vec<(f64, Gradients<f32>)>, n_params: usize) -> Gradients<f32> {
    let mut total = Gradients::new(n_params);
    for (w, mut g) in parts {
        g.scale(w as f32);
        total.merge(g);
    }
    total
}

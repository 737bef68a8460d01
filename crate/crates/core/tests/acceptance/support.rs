use std::time::{Duration, Instant};

use specfm::encoder::EncoderConfig;
use specfm::model::{Model, ModelConfig};
use specfm::msio::Spectrum;
use specfm::preprocess::{preprocess_spectrum, PreprocessConfig, ProcessedSpectrum};
use specfm::synthgen::{gen_dataset, SynthConfig, SynthTask};
use specfm::train::{pretrain_denovo, DenovoExample, TrainConfig};

pub const PRETRAIN_BUDGET: Duration = Duration::from_secs(600);

pub struct Labeled {
    pub raw: Vec<Spectrum>,
    pub spectra: Vec<ProcessedSpectrum>,
    pub labels: Vec<u8>,
}

pub fn labeled(task: SynthTask, n: usize, seed: u64) -> Labeled {
    let pcfg = PreprocessConfig::default();
    let records = gen_dataset(&SynthConfig::new(task, n, seed)).unwrap();
    Labeled {
        spectra: records.iter().map(|r| preprocess_spectrum(&r.spectrum, &pcfg).unwrap()).collect(),
        labels: records.iter().map(|r| r.label.unwrap()).collect(),
        raw: records.into_iter().map(|r| r.spectrum).collect(),
    }
}

pub fn denovo(n: usize, seed: u64) -> Vec<DenovoExample> {
    let pcfg = PreprocessConfig::default();
    gen_dataset(&SynthConfig::new(SynthTask::Denovo, n, seed))
        .unwrap()
        .into_iter()
        .map(|r| DenovoExample {
            spectrum: preprocess_spectrum(&r.spectrum, &pcfg).unwrap(),
            peptide: r.peptide,
        })
        .collect()
}

pub struct Pretrained {
    pub model: Model,
    pub took: Duration,
    pub first_loss: f64,
    pub last_loss: f64,
}

/// Lazily built state shared between criteria.
#[derive(Default)]
pub struct Shared {
    pretrained: Option<Pretrained>,
}

pub fn pretrain_config() -> TrainConfig {
    let steps = 2800;
    TrainConfig {
        lr: 1e-3,
        batch_size: 32,
        warmup_steps: 100,
        cosine_half_period: steps - 100,
        max_steps: steps,
        validate_every: 500,
        seed: 11,
        ..Default::default()
    }
}

impl Shared {
    /// Desk-config encoder and decoder pre-trained on 20k synthetic de novo spectra.
    pub fn pretrained(&mut self) -> &Pretrained {
        self.pretrained.get_or_insert_with(|| {
            let train = denovo(20_000, 101);
            let valid = denovo(200, 102);
            let start = Instant::now();
            let mut model = Model::init(ModelConfig::with_decoder(EncoderConfig::default()), 7).unwrap();
            let fit = pretrain_denovo(&mut model, &train, &valid, &pretrain_config()).unwrap();
            Pretrained {
                model,
                took: start.elapsed(),
                first_loss: fit.log.first().map_or(f64::NAN, |e| e.loss),
                last_loss: fit.log.last().map_or(f64::NAN, |e| e.loss),
            }
        })
    }
}

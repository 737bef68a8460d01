//! Run configuration as a `key = value` text file.
//!
//! Every key belongs to one section (`encoder`, `decoder`, `train`, `gbdt`,
//! `preprocess`, `synth`, `head`, `multitask`). Unknown keys are rejected and
//! the resolved values are validated by the owning types.

use std::fmt::Display;
use std::str::FromStr;

use crate::baselines::GbdtConfig;
use crate::denovo::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::preprocess::PreprocessConfig;
use crate::synthgen::{SynthConfig, SynthTask};
use crate::train::TrainConfig;

/// Generator settings other than task, size and seed, which come from the
/// command line.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub peptide_len: (usize, usize),
    pub charges: Vec<u32>,
    pub noise_peaks: (usize, usize),
    pub noise_mz: (f64, f64),
    /// `None` uses the task's own default rate.
    pub positive_rate: Option<f64>,
    pub denovo_phospho_rate: f64,
    pub neutral_loss_prob: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let d = SynthConfig::new(SynthTask::Denovo, 0, 0);
        Self {
            peptide_len: d.peptide_len,
            charges: d.charges,
            noise_peaks: d.noise_peaks,
            noise_mz: d.noise_mz,
            positive_rate: None,
            denovo_phospho_rate: d.denovo_phospho_rate,
            neutral_loss_prob: d.neutral_loss_prob,
        }
    }
}

impl SynthSettings {
    pub fn for_task(&self, task: SynthTask, n: usize, seed: u64) -> SynthConfig {
        let mut c = SynthConfig::new(task, n, seed);
        c.peptide_len = self.peptide_len;
        c.charges = self.charges.clone();
        c.noise_peaks = self.noise_peaks;
        c.noise_mz = self.noise_mz;
        if let Some(r) = self.positive_rate {
            c.positive_rate = r;
        }
        c.denovo_phospho_rate = self.denovo_phospho_rate;
        c.neutral_loss_prob = self.neutral_loss_prob;
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
    pub gbdt: GbdtConfig,
    pub preprocess: PreprocessConfig,
    pub synth: SynthSettings,
    pub head_hidden: usize,
    pub denovo_weight: f64,
    /// Per-task loss weights for multi-task fine-tuning, in task order.
    pub task_weights: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let encoder = EncoderConfig::default();
        Self {
            head_hidden: encoder.d_model,
            decoder: DecoderConfig {
                d_model: encoder.d_model,
                ..DecoderConfig::default()
            },
            encoder,
            train: TrainConfig::default(),
            gbdt: GbdtConfig::default(),
            preprocess: PreprocessConfig::default(),
            synth: SynthSettings::default(),
            denovo_weight: 1.0,
            task_weights: Vec::new(),
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: invalid value {v:?}")))
}

fn pair<T: FromStr>(key: &str, v: &str) -> Result<(T, T)> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("{key}: expected two comma-separated values, got {v:?}")))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key. Values are checked for syntax here and for range in
    /// [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let (e, d, t, g, p, s) = (
            &mut self.encoder,
            &mut self.decoder,
            &mut self.train,
            &mut self.gbdt,
            &mut self.preprocess,
            &mut self.synth,
        );
        match key {
            "encoder.d_model" => e.d_model = num(key, v)?,
            "encoder.n_layers" => e.n_layers = num(key, v)?,
            "encoder.n_heads" => e.n_heads = num(key, v)?,
            "encoder.ff_dim" => e.ff_dim = num(key, v)?,
            "encoder.dropout" => e.dropout = num(key, v)?,
            "encoder.lambda_min" => e.lambda_min = num(key, v)?,
            "encoder.lambda_max" => e.lambda_max = num(key, v)?,
            "decoder.n_layers" => d.n_layers = num(key, v)?,
            "decoder.n_heads" => d.n_heads = num(key, v)?,
            "decoder.ff_dim" => d.ff_dim = num(key, v)?,
            "decoder.max_len" => d.max_len = num(key, v)?,
            "decoder.max_charge" => d.max_charge = num(key, v)?,
            "decoder.dropout" => d.dropout = num(key, v)?,
            "train.lr" => t.lr = num(key, v)?,
            "train.weight_decay" => t.weight_decay = num(key, v)?,
            "train.batch_size" => t.batch_size = num(key, v)?,
            "train.label_smoothing" => t.label_smoothing = num(key, v)?,
            "train.warmup_steps" => t.warmup_steps = num(key, v)?,
            "train.cosine_half_period" => t.cosine_half_period = num(key, v)?,
            "train.patience_epochs" => t.patience_epochs = num(key, v)?,
            "train.max_epochs" => t.max_epochs = num(key, v)?,
            "train.max_steps" => t.max_steps = num(key, v)?,
            "train.validate_every" => t.validate_every = num(key, v)?,
            "train.seed" => t.seed = num(key, v)?,
            "gbdt.max_depth" => g.max_depth = num(key, v)?,
            "gbdt.eta" => g.eta = num(key, v)?,
            "gbdt.lambda_l2" => g.lambda_l2 = num(key, v)?,
            "gbdt.min_child_weight" => g.min_child_weight = num(key, v)?,
            "gbdt.max_rounds" => g.max_rounds = num(key, v)?,
            "gbdt.early_stopping_rounds" => g.early_stopping_rounds = num(key, v)?,
            "preprocess.encoder_mz_min" => p.encoder_mz_min = num(key, v)?,
            "preprocess.encoder_mz_max" => p.encoder_mz_max = num(key, v)?,
            "preprocess.max_peaks" => p.max_peaks = num(key, v)?,
            "preprocess.bin_lo" => p.bin_lo = num(key, v)?,
            "preprocess.bin_hi" => p.bin_hi = num(key, v)?,
            "preprocess.n_bins" => p.n_bins = num(key, v)?,
            "preprocess.oxonium_tolerance_ppm" => p.oxonium_tolerance_ppm = num(key, v)?,
            "preprocess.oxonium_tolerance_floor" => p.oxonium_tolerance_floor = num(key, v)?,
            "synth.peptide_len" => s.peptide_len = pair(key, v)?,
            "synth.charges" => s.charges = list(key, v)?,
            "synth.noise_peaks" => s.noise_peaks = pair(key, v)?,
            "synth.noise_mz" => s.noise_mz = pair(key, v)?,
            "synth.positive_rate" => {
                s.positive_rate = if v == "task-default" { None } else { Some(num(key, v)?) }
            }
            "synth.denovo_phospho_rate" => s.denovo_phospho_rate = num(key, v)?,
            "synth.neutral_loss_prob" => s.neutral_loss_prob = num(key, v)?,
            "head.hidden" => self.head_hidden = num(key, v)?,
            "multitask.denovo_weight" => self.denovo_weight = num(key, v)?,
            "multitask.task_weights" => self.task_weights = list(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Resolved values in a fixed key order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (e, d, t, g, p, s) = (&self.encoder, &self.decoder, &self.train, &self.gbdt, &self.preprocess, &self.synth);
        vec![
            ("encoder.d_model", e.d_model.to_string()),
            ("encoder.n_layers", e.n_layers.to_string()),
            ("encoder.n_heads", e.n_heads.to_string()),
            ("encoder.ff_dim", e.ff_dim.to_string()),
            ("encoder.dropout", e.dropout.to_string()),
            ("encoder.lambda_min", e.lambda_min.to_string()),
            ("encoder.lambda_max", e.lambda_max.to_string()),
            ("decoder.n_layers", d.n_layers.to_string()),
            ("decoder.n_heads", d.n_heads.to_string()),
            ("decoder.ff_dim", d.ff_dim.to_string()),
            ("decoder.max_len", d.max_len.to_string()),
            ("decoder.max_charge", d.max_charge.to_string()),
            ("decoder.dropout", d.dropout.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.weight_decay", t.weight_decay.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.label_smoothing", t.label_smoothing.to_string()),
            ("train.warmup_steps", t.warmup_steps.to_string()),
            ("train.cosine_half_period", t.cosine_half_period.to_string()),
            ("train.patience_epochs", t.patience_epochs.to_string()),
            ("train.max_epochs", t.max_epochs.to_string()),
            ("train.max_steps", t.max_steps.to_string()),
            ("train.validate_every", t.validate_every.to_string()),
            ("train.seed", t.seed.to_string()),
            ("gbdt.max_depth", g.max_depth.to_string()),
            ("gbdt.eta", g.eta.to_string()),
            ("gbdt.lambda_l2", g.lambda_l2.to_string()),
            ("gbdt.min_child_weight", g.min_child_weight.to_string()),
            ("gbdt.max_rounds", g.max_rounds.to_string()),
            ("gbdt.early_stopping_rounds", g.early_stopping_rounds.to_string()),
            ("preprocess.encoder_mz_min", p.encoder_mz_min.to_string()),
            ("preprocess.encoder_mz_max", p.encoder_mz_max.to_string()),
            ("preprocess.max_peaks", p.max_peaks.to_string()),
            ("preprocess.bin_lo", p.bin_lo.to_string()),
            ("preprocess.bin_hi", p.bin_hi.to_string()),
            ("preprocess.n_bins", p.n_bins.to_string()),
            ("preprocess.oxonium_tolerance_ppm", p.oxonium_tolerance_ppm.to_string()),
            ("preprocess.oxonium_tolerance_floor", p.oxonium_tolerance_floor.to_string()),
            ("synth.peptide_len", format!("{},{}", s.peptide_len.0, s.peptide_len.1)),
            ("synth.charges", join(&s.charges)),
            ("synth.noise_peaks", format!("{},{}", s.noise_peaks.0, s.noise_peaks.1)),
            ("synth.noise_mz", format!("{},{}", s.noise_mz.0, s.noise_mz.1)),
            (
                "synth.positive_rate",
                s.positive_rate.map_or("task-default".to_string(), |r| r.to_string()),
            ),
            ("synth.denovo_phospho_rate", s.denovo_phospho_rate.to_string()),
            ("synth.neutral_loss_prob", s.neutral_loss_prob.to_string()),
            ("head.hidden", self.head_hidden.to_string()),
            ("multitask.denovo_weight", self.denovo_weight.to_string()),
            ("multitask.task_weights", join(&self.task_weights)),
        ]
    }

    /// Applies `key = value` lines on top of the current values. Blank lines
    /// and `#` comments are skipped; a key may appear only once per text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("config line {}: duplicate key {k:?}", i + 1)));
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Defaults, then `file_text`, then `overrides`; validated at the end.
    pub fn resolve(file_text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        if let Some(t) = file_text {
            c.apply_text(t)?;
        }
        for (k, v) in overrides {
            c.set(k, v)?;
        }
        c.decoder.d_model = c.encoder.d_model;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate(self.encoder.d_model)?;
        self.train.validate()?;
        self.gbdt.validate()?;
        self.preprocess.validate()?;
        self.synth.for_task(SynthTask::Phospho, 1, 0).validate()?;
        if let Some(r) = self.synth.positive_rate {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config("synth.positive_rate must be in [0, 1]".into()));
            }
        }
        if self.head_hidden == 0 {
            return Err(Error::Config("head.hidden must be positive".into()));
        }
        if !(self.denovo_weight >= 0.0) || self.task_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("multitask weights must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let mut c = RunConfig::default();
        c.set("train.lr", "0.0001").unwrap();
        c.set("synth.charges", "2,3,4").unwrap();
        c.set("synth.positive_rate", "0.3").unwrap();
        let back = RunConfig::resolve(Some(&c.to_text()), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::resolve(Some(&RunConfig::default().to_text()), &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn precedence_defaults_file_flags() {
        let file = "train.lr = 0.01\ntrain.batch_size = 4 # small\n";
        let flags = vec![("train.lr".to_string(), "0.5".to_string())];
        let c = RunConfig::resolve(Some(file), &flags).unwrap();
        assert_eq!(c.train.lr, 0.5);
        assert_eq!(c.train.batch_size, 4);
        assert_eq!(c.train.warmup_steps, TrainConfig::default().warmup_steps);
    }

    #[test]
    fn rejects_unknown_bad_and_invalid() {
        for text in ["encoder.width = 3", "train.lr = fast", "train.lr 0.1", "gbdt.eta = 0", "encoder.n_heads = 3", "train.lr = 1\ntrain.lr = 2"] {
            assert!(
                matches!(RunConfig::resolve(Some(text), &[]), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn every_dumped_key_is_settable() {
        let mut c = RunConfig::default();
        for (k, v) in RunConfig::default().entries() {
            c.set(k, &v).unwrap();
        }
    }
}

//! Deterministic synthetic spectra with planted, verifiable label signals.
//!
//! Each record draws from its own ChaCha stream keyed by (seed, index), so
//! records can be generated in any order or in parallel with identical output.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chem::{fragment_mzs, peptide_mass, precursor_mz, Peptide, CANONICAL_RESIDUES, PHOSPHO_DELTA, PHOSPHO_NEUTRAL_LOSS};
use crate::error::{Error, Result};
use crate::msio::{LabelRecord, Peak, PeptideRecord, Spectrum, Task};

pub const OXONIUM_204: f64 = 204.0867;
pub const OXONIUM_138: f64 = 138.0550;
pub const OXONIUM_366: f64 = 366.1395;
pub const OXONIUM_144: f64 = 144.0655;

const MAX_RESAMPLE: usize = 1000;
const PHOSPHO_SITES: [char; 3] = ['S', 'T', 'Y'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthTask {
    Quality,
    Chimera,
    Phospho,
    Glyco,
    Denovo,
}

impl SynthTask {
    pub fn name(self) -> &'static str {
        match self {
            SynthTask::Quality => "quality",
            SynthTask::Chimera => "chimera",
            SynthTask::Phospho => "phospho",
            SynthTask::Glyco => "glyco",
            SynthTask::Denovo => "denovo",
        }
    }

    pub fn label_task(self) -> Option<Task> {
        match self {
            SynthTask::Quality => Some(Task::Quality),
            SynthTask::Chimera => Some(Task::Chimera),
            SynthTask::Phospho => Some(Task::Phospho),
            SynthTask::Glyco => Some(Task::Glyco),
            SynthTask::Denovo => None,
        }
    }

    pub fn default_positive_rate(self) -> f64 {
        match self {
            SynthTask::Quality => 0.40,
            SynthTask::Chimera => 0.45,
            SynthTask::Phospho => 0.54,
            SynthTask::Glyco => 0.102,
            SynthTask::Denovo => 0.0,
        }
    }
}

impl fmt::Display for SynthTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quality" => Ok(SynthTask::Quality),
            "chimera" => Ok(SynthTask::Chimera),
            "phospho" => Ok(SynthTask::Phospho),
            "glyco" => Ok(SynthTask::Glyco),
            "denovo" => Ok(SynthTask::Denovo),
            _ => Err(Error::Config(format!("unknown synthetic task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub task: SynthTask,
    pub n: usize,
    pub seed: u64,
    pub peptide_len: (usize, usize),
    pub charges: Vec<u32>,
    pub noise_peaks: (usize, usize),
    pub noise_mz: (f64, f64),
    pub positive_rate: f64,
    /// Fraction of de novo peptides carrying a phosphorylated S/T/Y.
    pub denovo_phospho_rate: f64,
    pub neutral_loss_prob: f64,
}

impl SynthConfig {
    pub fn new(task: SynthTask, n: usize, seed: u64) -> Self {
        Self {
            task,
            n,
            seed,
            peptide_len: (7, 20),
            charges: vec![2, 3],
            noise_peaks: (5, 40),
            noise_mz: (140.0, 2000.0),
            positive_rate: task.default_positive_rate(),
            denovo_phospho_rate: 0.25,
            neutral_loss_prob: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.peptide_len;
        if lo < 2 || lo > hi {
            return Err(Error::Config("synth.peptide_len must satisfy 2 <= min <= max".into()));
        }
        if self.charges.is_empty() || self.charges.contains(&0) {
            return Err(Error::Config("synth.charges must be non-empty and positive".into()));
        }
        if self.noise_peaks.0 > self.noise_peaks.1 {
            return Err(Error::Config("synth.noise_peaks range is empty".into()));
        }
        if !(self.noise_mz.0 < self.noise_mz.1) {
            return Err(Error::Config("synth.noise_mz range is empty".into()));
        }
        if self.task != SynthTask::Denovo && !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return Err(Error::Config("synth.positive_rate must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.denovo_phospho_rate) || !(0.0..=1.0).contains(&self.neutral_loss_prob) {
            return Err(Error::Config("synth probabilities must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn run_id(&self) -> String {
        format!("synth-{}-s{}", self.task, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPeak {
    pub mz: f64,
    pub intensity: f64,
    /// `b3`, `y5`, `b2'` (second peptide), `neutral_loss` or `oxonium`.
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub index: usize,
    pub task: SynthTask,
    pub label: Option<u8>,
    pub peptides: Vec<String>,
    pub fragment_keep: Option<f64>,
    pub chimera_scale: Option<f64>,
    pub planted: Vec<PlantedPeak>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub spectrum: Spectrum,
    pub peptide: Peptide,
    pub label: Option<u8>,
    pub provenance: Provenance,
}

impl SynthRecord {
    pub fn label_record(&self) -> Option<LabelRecord> {
        Some(LabelRecord {
            run_id: self.spectrum.run_id.clone(),
            scan_id: self.spectrum.scan_id.clone(),
            task: self.provenance.task.label_task()?,
            label: self.label?,
        })
    }
}

fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_peptide(rng: &mut ChaCha8Rng, len: (usize, usize)) -> Peptide {
    let n = rng.gen_range(len.0..=len.1);
    let residues = (0..n).map(|_| *CANONICAL_RESIDUES.choose(rng).expect("non-empty")).collect();
    Peptide::new(residues, Vec::new()).expect("canonical residues")
}

fn draw_phospho_candidate(rng: &mut ChaCha8Rng, len: (usize, usize)) -> Result<Peptide> {
    for _ in 0..MAX_RESAMPLE {
        let p = draw_peptide(rng, len);
        if p.residues().iter().any(|r| PHOSPHO_SITES.contains(r)) {
            return Ok(p);
        }
    }
    Err(Error::Config(format!(
        "no peptide with an S/T/Y site after {MAX_RESAMPLE} draws"
    )))
}

fn phosphorylate(rng: &mut ChaCha8Rng, p: &Peptide) -> Peptide {
    let sites: Vec<usize> = (0..p.len()).filter(|&i| PHOSPHO_SITES.contains(&p.residues()[i])).collect();
    let site = *sites.choose(rng).expect("peptide has a site");
    Peptide::new(p.residues().to_vec(), vec![(site, PHOSPHO_DELTA)]).expect("valid site")
}

fn fragment_peaks(rng: &mut ChaCha8Rng, p: &Peptide, keep: f64, tag: &str) -> Vec<PlantedPeak> {
    let mut frags = fragment_mzs(p, 1).expect("valid peptide");
    frags.shuffle(rng);
    let k = (keep * frags.len() as f64).round() as usize;
    let mut kept: Vec<PlantedPeak> = frags
        .into_iter()
        .take(k)
        .map(|f| PlantedPeak {
            mz: f.mz,
            intensity: rng.gen_range(0.1..=1.0),
            kind: format!("{}{}{tag}", f.series, f.index),
        })
        .collect();
    kept.sort_by(|a, b| a.mz.total_cmp(&b.mz));
    kept
}

fn noise(rng: &mut ChaCha8Rng, count: usize, range: (f64, f64)) -> Vec<Peak> {
    (0..count)
        .map(|_| Peak::new(rng.gen_range(range.0..range.1), rng.gen_range(0.05..=0.5)))
        .collect()
}

/// Generates record `index` of a dataset.
pub fn gen_record(cfg: &SynthConfig, index: usize) -> Result<SynthRecord> {
    let mut rng = record_rng(cfg.seed, index);
    let (nlo, nhi) = cfg.noise_peaks;
    let mid = (nlo + nhi) / 2;
    let charge = *cfg.charges.choose(&mut rng).expect("validated");
    let label = (cfg.task != SynthTask::Denovo).then(|| u8::from(rng.gen_bool(cfg.positive_rate)));
    let positive = label == Some(1);

    let mut peptides = Vec::new();
    let mut planted = Vec::new();
    let mut fragment_keep = None;
    let mut chimera_scale = None;
    let mut noise_count = rng.gen_range(nlo..=nhi);

    let peptide = match cfg.task {
        SynthTask::Quality => {
            let p = draw_peptide(&mut rng, cfg.peptide_len);
            let q = if positive { rng.gen_range(0.7..=1.0) } else { rng.gen_range(0.0..=0.3) };
            noise_count = if positive { rng.gen_range(nlo..=mid) } else { rng.gen_range(mid.min(nhi)..=nhi) };
            planted.extend(fragment_peaks(&mut rng, &p, q, ""));
            fragment_keep = Some(q);
            p
        }
        SynthTask::Chimera => {
            let p = draw_peptide(&mut rng, cfg.peptide_len);
            let q = rng.gen_range(0.7..=1.0);
            planted.extend(fragment_peaks(&mut rng, &p, q, ""));
            fragment_keep = Some(q);
            if positive {
                let second = loop {
                    let s = draw_peptide(&mut rng, cfg.peptide_len);
                    if s != p {
                        break s;
                    }
                };
                let alpha = rng.gen_range(0.3..=1.0);
                for mut pk in fragment_peaks(&mut rng, &second, q, "'") {
                    pk.intensity *= alpha;
                    planted.push(pk);
                }
                chimera_scale = Some(alpha);
                peptides.push(second.to_string());
            }
            p
        }
        SynthTask::Phospho => {
            let base = draw_phospho_candidate(&mut rng, cfg.peptide_len)?;
            let p = if positive { phosphorylate(&mut rng, &base) } else { base };
            let q = rng.gen_range(0.7..=1.0);
            planted.extend(fragment_peaks(&mut rng, &p, q, ""));
            fragment_keep = Some(q);
            if positive && rng.gen_bool(cfg.neutral_loss_prob) {
                let prec = precursor_mz(peptide_mass(&p)?, charge)?;
                planted.push(PlantedPeak {
                    mz: prec - PHOSPHO_NEUTRAL_LOSS / charge as f64,
                    intensity: rng.gen_range(0.1..=1.0),
                    kind: "neutral_loss".into(),
                });
            }
            p
        }
        SynthTask::Glyco => {
            let p = draw_peptide(&mut rng, cfg.peptide_len);
            let q = rng.gen_range(0.7..=1.0);
            planted.extend(fragment_peaks(&mut rng, &p, q, ""));
            fragment_keep = Some(q);
            let i138 = rng.gen_range(0.1..=1.0);
            for (mz, intensity) in [
                (OXONIUM_204, rng.gen_range(0.1..=1.0)),
                (OXONIUM_138, i138),
                (OXONIUM_366, rng.gen_range(0.1..=1.0)),
            ] {
                planted.push(PlantedPeak {
                    mz,
                    intensity,
                    kind: "oxonium".into(),
                });
            }
            if positive {
                let i144 = (i138 * rng.gen_range(0.8..=1.2)).min(1.0);
                planted.push(PlantedPeak {
                    mz: OXONIUM_144,
                    intensity: i144,
                    kind: "oxonium".into(),
                });
            }
            p
        }
        SynthTask::Denovo => {
            let mut p = draw_peptide(&mut rng, cfg.peptide_len);
            if rng.gen_bool(cfg.denovo_phospho_rate) && p.residues().iter().any(|r| PHOSPHO_SITES.contains(r)) {
                p = phosphorylate(&mut rng, &p);
            }
            planted.extend(fragment_peaks(&mut rng, &p, 1.0, ""));
            noise_count = 0;
            p
        }
    };
    peptides.insert(0, peptide.to_string());

    let mut peaks: Vec<Peak> = planted.iter().map(|p| Peak::new(p.mz, p.intensity)).collect();
    peaks.extend(noise(&mut rng, noise_count, cfg.noise_mz));
    let prec = precursor_mz(peptide_mass(&peptide)?, charge)?;
    let spectrum = Spectrum::new(cfg.run_id(), format!("scan={index}"), prec, charge, peaks);
    Ok(SynthRecord {
        spectrum,
        peptide,
        label,
        provenance: Provenance {
            index,
            task: cfg.task,
            label,
            peptides,
            fragment_keep,
            chimera_scale,
            planted,
        },
    })
}

pub fn gen_dataset(cfg: &SynthConfig) -> Result<Vec<SynthRecord>> {
    cfg.validate()?;
    (0..cfg.n).into_par_iter().map(|i| gen_record(cfg, i)).collect()
}

fn has_peak(s: &Spectrum, mz: f64, intensity: f64) -> bool {
    s.peaks.iter().any(|p| p.mz == mz && p.intensity == intensity)
}

fn fragments_match(p: &Peptide, planted: &[PlantedPeak], tag: &str) -> bool {
    let Ok(frags) = fragment_mzs(p, 1) else { return false };
    planted.iter().filter(|pk| is_fragment(&pk.kind, tag)).all(|pk| {
        frags
            .iter()
            .any(|f| format!("{}{}{tag}", f.series, f.index) == pk.kind && (f.mz - pk.mz).abs() < 1e-6)
    })
}

fn is_fragment(kind: &str, tag: &str) -> bool {
    let Some(body) = kind.strip_suffix(tag) else { return false };
    if body.ends_with('\'') || body.len() < 2 {
        return false;
    }
    (body.starts_with('b') || body.starts_with('y')) && body[1..].chars().all(|c| c.is_ascii_digit())
}

/// Re-derives the label from provenance and checks that every planted peak
/// is present in the spectrum.
pub fn verify_record(r: &SynthRecord) -> bool {
    let pv = &r.provenance;
    if r.label != pv.label || pv.peptides.first() != Some(&r.peptide.to_string()) {
        return false;
    }
    if !pv.planted.iter().all(|pk| has_peak(&r.spectrum, pk.mz, pk.intensity)) {
        return false;
    }
    if !fragments_match(&r.peptide, &pv.planted, "") {
        return false;
    }
    let derived = match pv.task {
        SynthTask::Quality => pv.fragment_keep.map(|q| u8::from(q >= 0.5)),
        SynthTask::Chimera => {
            if pv.peptides.len() == 2 {
                let Ok(second) = pv.peptides[1].parse::<Peptide>() else { return false };
                if !fragments_match(&second, &pv.planted, "'") {
                    return false;
                }
            }
            Some(u8::from(pv.peptides.len() == 2))
        }
        SynthTask::Phospho => {
            if !r.peptide.residues().iter().any(|c| PHOSPHO_SITES.contains(c)) {
                return false;
            }
            Some(u8::from(
                r.peptide.mods().iter().any(|&(_, d)| (d - PHOSPHO_DELTA).abs() < 1e-9),
            ))
        }
        SynthTask::Glyco => {
            let has = |mz: f64| pv.planted.iter().any(|p| p.kind == "oxonium" && p.mz == mz);
            if !(has(OXONIUM_204) && has(OXONIUM_138) && has(OXONIUM_366)) {
                return false;
            }
            Some(u8::from(has(OXONIUM_144)))
        }
        SynthTask::Denovo => {
            let Ok(frags) = fragment_mzs(&r.peptide, 1) else { return false };
            let all_fragments = r
                .spectrum
                .peaks
                .iter()
                .all(|p| frags.iter().any(|f| (f.mz - p.mz).abs() < 1e-6));
            if !all_fragments {
                return false;
            }
            None
        }
    };
    derived == r.label
}

pub fn write_provenance<W: Write>(mut w: W, records: &[SynthRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(&r.provenance).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn label_records(records: &[SynthRecord]) -> Vec<LabelRecord> {
    records.iter().filter_map(SynthRecord::label_record).collect()
}

pub fn peptide_records(records: &[SynthRecord]) -> Vec<PeptideRecord> {
    records
        .iter()
        .map(|r| PeptideRecord {
            run_id: r.spectrum.run_id.clone(),
            scan_id: r.spectrum.scan_id.clone(),
            peptide: r.peptide.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TASKS: [SynthTask; 5] = [
        SynthTask::Quality,
        SynthTask::Chimera,
        SynthTask::Phospho,
        SynthTask::Glyco,
        SynthTask::Denovo,
    ];

    #[test]
    fn generator_verifier_closure() {
        for task in TASKS {
            for seed in [1, 2] {
                let recs = gen_dataset(&SynthConfig::new(task, 300, seed)).unwrap();
                for r in &recs {
                    assert!(verify_record(r), "{task} seed {seed} index {}", r.provenance.index);
                    assert!(r.spectrum.peaks.iter().all(|p| p.intensity > 0.0 && p.intensity <= 1.0));
                }
            }
        }
    }

    #[test]
    fn flipped_label_fails_verification() {
        for task in &TASKS[..4] {
            let mut r = gen_record(&SynthConfig::new(*task, 10, 3), 4).unwrap();
            let flipped = r.label.map(|l| 1 - l);
            r.label = flipped;
            r.provenance.label = flipped;
            assert!(!verify_record(&r), "{task}");
        }
    }

    #[test]
    fn deleting_144_fails_verification() {
        let cfg = SynthConfig::new(SynthTask::Glyco, 200, 5);
        let mut r = gen_dataset(&cfg).unwrap().into_iter().find(|r| r.label == Some(1)).unwrap();
        r.spectrum.peaks.retain(|p| p.mz != OXONIUM_144);
        assert!(!verify_record(&r));
    }

    #[test]
    fn order_independent_and_deterministic() {
        let cfg = SynthConfig::new(SynthTask::Chimera, 50, 9);
        let all = gen_dataset(&cfg).unwrap();
        assert_eq!(gen_record(&cfg, 37).unwrap(), all[37]);
        assert_eq!(gen_dataset(&cfg).unwrap(), all);
    }

    #[test]
    fn denovo_peaks_are_fragments() {
        let recs = gen_dataset(&SynthConfig::new(SynthTask::Denovo, 200, 4)).unwrap();
        assert!(recs.iter().any(|r| !r.peptide.mods().is_empty()));
        for r in &recs {
            let frags = fragment_mzs(&r.peptide, 1).unwrap();
            assert_eq!(r.spectrum.peaks.len(), frags.len());
            for p in &r.spectrum.peaks {
                assert!(frags.iter().any(|f| (f.mz - p.mz).abs() < 1e-6));
            }
        }
    }

    #[test]
    fn phospho_rate_within_binomial_bounds() {
        let recs = gen_dataset(&SynthConfig::new(SynthTask::Phospho, 10_000, 11)).unwrap();
        let pos = recs.iter().filter(|r| r.label == Some(1)).count() as f64;
        let sigma = (10_000.0f64 * 0.54 * 0.46).sqrt();
        assert!((pos - 5400.0).abs() < 3.0 * sigma, "{pos}");
    }

    #[test]
    fn glyco_o_class_pairs_138_and_144() {
        let recs = gen_dataset(&SynthConfig::new(SynthTask::Glyco, 500, 6)).unwrap();
        for r in recs.iter().filter(|r| r.label == Some(1)) {
            let find = |mz: f64| r.provenance.planted.iter().find(|p| p.mz == mz).unwrap().intensity;
            let ratio = find(OXONIUM_144) / find(OXONIUM_138);
            assert!(ratio <= 1.2 + 1e-12 && (ratio >= 0.8 - 1e-12 || find(OXONIUM_144) == 1.0));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SynthConfig::new(SynthTask::Quality, 10, 0);
        cfg.positive_rate = 1.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = SynthConfig::new(SynthTask::Phospho, 10, 0);
        cfg.peptide_len = (9, 3);
        assert!(cfg.validate().is_err());
        assert_eq!("denovo".parse::<SynthTask>().unwrap(), SynthTask::Denovo);
    }
}

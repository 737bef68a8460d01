//! Encoder input conditioning, fixed-width m/z binning and oxonium-ion
//! feature extraction.

use std::io::BufRead;

use crate::error::{Error, Result};
use crate::msio::{Peak, Spectrum};

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub encoder_mz_min: f64,
    pub encoder_mz_max: f64,
    pub max_peaks: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub n_bins: usize,
    pub oxonium_tolerance_ppm: f64,
    pub oxonium_tolerance_floor: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            encoder_mz_min: 50.0,
            encoder_mz_max: 2500.0,
            max_peaks: 150,
            bin_lo: 140.0,
            bin_hi: 2000.0,
            n_bins: 100,
            oxonium_tolerance_ppm: 10.0,
            oxonium_tolerance_floor: 0.005,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.encoder_mz_min < self.encoder_mz_max) {
            return Err(Error::Config("preprocess.encoder_mz_min must be below encoder_mz_max".into()));
        }
        if !(self.bin_lo < self.bin_hi) {
            return Err(Error::Config("preprocess.bin_lo must be below bin_hi".into()));
        }
        if self.n_bins == 0 {
            return Err(Error::Config("preprocess.n_bins must be at least 1".into()));
        }
        if self.max_peaks == 0 {
            return Err(Error::Config("preprocess.max_peaks must be at least 1".into()));
        }
        if self.oxonium_tolerance_ppm < 0.0 || self.oxonium_tolerance_floor < 0.0 {
            return Err(Error::Config("oxonium tolerances must be non-negative".into()));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.bin_hi - self.bin_lo) / self.n_bins as f64
    }
}

/// Encoder-ready peaks: (m/z, intensity) with the intensity vector at unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedSpectrum {
    pub peaks: Vec<(f64, f64)>,
    pub precursor_mz: f64,
    pub precursor_charge: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntensityTransform {
    Sqrt,
    Identity,
}

/// Range filter, top-N selection, intensity transform and unit-norm scaling.
pub fn condition_peaks(
    peaks: &[(f64, f64)],
    cfg: &PreprocessConfig,
    transform: IntensityTransform,
) -> Option<Vec<(f64, f64)>> {
    let mut kept: Vec<(f64, f64)> = peaks
        .iter()
        .copied()
        .filter(|&(mz, _)| mz >= cfg.encoder_mz_min && mz <= cfg.encoder_mz_max)
        .collect();
    if kept.len() > cfg.max_peaks {
        // Highest intensity first, ties broken by ascending m/z.
        kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
        kept.truncate(cfg.max_peaks);
    }
    if transform == IntensityTransform::Sqrt {
        for p in &mut kept {
            p.1 = p.1.sqrt();
        }
    }
    let norm = kept.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
    if kept.is_empty() || norm == 0.0 || !norm.is_finite() {
        return None;
    }
    for p in &mut kept {
        p.1 /= norm;
    }
    kept.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(kept)
}

pub fn preprocess_spectrum(s: &Spectrum, cfg: &PreprocessConfig) -> Result<ProcessedSpectrum> {
    let raw: Vec<(f64, f64)> = s.peaks.iter().map(|p| (p.mz, p.intensity)).collect();
    let peaks = condition_peaks(&raw, cfg, IntensityTransform::Sqrt)
        .ok_or_else(|| Error::EmptySpectrum(format!("{}/{}", s.run_id, s.scan_id)))?;
    Ok(ProcessedSpectrum {
        peaks,
        precursor_mz: s.precursor_mz,
        precursor_charge: s.effective_charge(),
    })
}

/// Sums raw intensities into `n_bins` equal-width bins over `[bin_lo, bin_hi)`.
pub fn bin_spectrum(s: &Spectrum, cfg: &PreprocessConfig) -> Vec<f64> {
    bin_peaks(&s.peaks, cfg)
}

pub fn bin_peaks(peaks: &[Peak], cfg: &PreprocessConfig) -> Vec<f64> {
    let mut bins = vec![0.0; cfg.n_bins];
    let w = cfg.bin_width();
    for p in peaks {
        if p.mz < cfg.bin_lo || p.mz >= cfg.bin_hi {
            continue;
        }
        // Rounding can push values just below bin_hi onto n_bins.
        let idx = (((p.mz - cfg.bin_lo) / w).floor() as usize).min(cfg.n_bins - 1);
        bins[idx] += p.intensity;
    }
    bins
}

pub const OXONIUM_138: f64 = 138.0550;
pub const OXONIUM_144: f64 = 144.0655;

/// Ordered reference oxonium ions; the order defines the feature vector layout.
#[derive(Debug, Clone, PartialEq)]
pub struct OxoniumTable {
    ions: Vec<(String, f64)>,
    idx_138: usize,
    idx_144: usize,
}

pub const OXONIUM_TABLE_SIZE: usize = 54;

const DEFAULT_OXONIUM_TSV: &str = include_str!("../data/oxonium.tsv");

impl Default for OxoniumTable {
    fn default() -> Self {
        Self::from_tsv(DEFAULT_OXONIUM_TSV.as_bytes()).expect("bundled oxonium table is valid")
    }
}

impl OxoniumTable {
    pub fn new(ions: Vec<(String, f64)>) -> Result<Self> {
        if ions.len() != OXONIUM_TABLE_SIZE {
            return Err(Error::Config(format!(
                "oxonium table needs {OXONIUM_TABLE_SIZE} ions, found {}",
                ions.len()
            )));
        }
        if ions.windows(2).any(|w| !(w[0].1 < w[1].1)) {
            return Err(Error::Config("oxonium m/z values must be strictly increasing".into()));
        }
        let find = |target: f64| {
            ions.iter()
                .position(|(_, mz)| (mz - target).abs() < 1e-3)
                .ok_or_else(|| Error::Config(format!("oxonium table lacks the {target} ion")))
        };
        let idx_138 = find(OXONIUM_138)?;
        let idx_144 = find(OXONIUM_144)?;
        Ok(Self { ions, idx_138, idx_144 })
    }

    /// Reads a `name\tmz` TSV with a header line.
    pub fn from_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut ions = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let (name, mz) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(format!("oxonium line {}", i + 1), "expected name<TAB>mz"))?;
            let mz: f64 = mz
                .trim()
                .parse()
                .map_err(|_| Error::parse(format!("oxonium line {}", i + 1), format!("bad m/z {mz:?}")))?;
            ions.push((name.to_string(), mz));
        }
        Self::new(ions)
    }

    pub fn ions(&self) -> &[(String, f64)] {
        &self.ions
    }

    pub fn index_138(&self) -> usize {
        self.idx_138
    }

    pub fn index_144(&self) -> usize {
        self.idx_144
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OxoniumFeatures {
    pub intensities: Vec<f64>,
    /// I144 / (I138 + I144 + 1e-9); high for GalNAc-only (O-glyco-like) spectra.
    pub score_o_glyco: f64,
}

pub fn extract_oxonium(s: &Spectrum, table: &OxoniumTable, cfg: &PreprocessConfig) -> OxoniumFeatures {
    let intensities: Vec<f64> = table
        .ions
        .iter()
        .map(|&(_, ref_mz)| {
            let tol = (cfg.oxonium_tolerance_ppm * ref_mz * 1e-6).max(cfg.oxonium_tolerance_floor);
            s.peaks
                .iter()
                .filter(|p| (p.mz - ref_mz).abs() <= tol)
                .map(|p| p.intensity)
                .fold(0.0, f64::max)
        })
        .collect();
    let i138 = intensities[table.idx_138];
    let i144 = intensities[table.idx_144];
    OxoniumFeatures {
        score_o_glyco: i144 / (i138 + i144 + 1e-9),
        intensities,
    }
}

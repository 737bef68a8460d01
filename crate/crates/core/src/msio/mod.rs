//! Spectrum file formats (MGF, mzML subset), label tables and the binary
//! embedding matrix format.

mod embeddings;
mod labels;
mod mgf;
mod mzml;

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

pub use embeddings::{read_embeddings, read_row_index, write_embeddings, write_row_index, EmbeddingMatrix};
pub use labels::{
    join_labels, read_labels, read_peptides, write_labels, write_peptides, LabelRecord, PeptideRecord, Task,
};
pub use mgf::{parse_mgf, write_mgf};
pub use mzml::parse_mzml;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub mz: f64,
    pub intensity: f64,
}

impl Peak {
    pub fn new(mz: f64, intensity: f64) -> Self {
        Self { mz, intensity }
    }

    pub fn is_valid(&self) -> bool {
        self.mz.is_finite() && self.intensity.is_finite() && self.mz > 0.0 && self.intensity >= 0.0
    }
}

/// One MS/MS scan. Peaks are kept sorted ascending by m/z.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub run_id: String,
    pub scan_id: String,
    pub precursor_mz: f64,
    /// 0 when unknown.
    pub precursor_charge: u32,
    pub peaks: Vec<Peak>,
}

/// Charge assumed downstream when a spectrum's charge is unknown.
pub const DEFAULT_CHARGE: u32 = 2;

impl Spectrum {
    pub fn new(
        run_id: impl Into<String>,
        scan_id: impl Into<String>,
        precursor_mz: f64,
        precursor_charge: u32,
        mut peaks: Vec<Peak>,
    ) -> Self {
        sort_peaks(&mut peaks);
        Self {
            run_id: run_id.into(),
            scan_id: scan_id.into(),
            precursor_mz,
            precursor_charge,
            peaks,
        }
    }

    /// Charge with the unknown (0) case mapped to [`DEFAULT_CHARGE`].
    pub fn effective_charge(&self) -> u32 {
        if self.precursor_charge == 0 {
            DEFAULT_CHARGE
        } else {
            self.precursor_charge
        }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.run_id, &self.scan_id)
    }
}

pub(crate) fn sort_peaks(peaks: &mut [Peak]) {
    peaks.sort_by(|a, b| a.mz.total_cmp(&b.mz));
}

/// Reads a spectrum file, choosing the parser by extension (`.mgf`, `.mzml`).
/// The run id for MGF input is the file stem.
pub fn read_spectra(path: &Path) -> Result<Vec<Spectrum>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let reader = BufReader::new(File::open(path)?);
    match ext.as_str() {
        "mgf" => {
            let run_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            parse_mgf(reader, run_id)
        }
        "mzml" => parse_mzml(reader),
        _ => Err(Error::Config(format!(
            "unrecognized spectrum file extension for {}",
            path.display()
        ))),
    }
}

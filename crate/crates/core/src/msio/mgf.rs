use std::io::{BufRead, Write};

use super::{Peak, Spectrum};
use crate::error::{Error, Result};

struct Block {
    start_line: usize,
    title: Option<String>,
    pepmass: Option<f64>,
    charge: u32,
    peaks: Vec<Peak>,
}

fn parse_charge(value: &str, line_no: usize) -> Result<u32> {
    // "2+", "3", or "2+ and 3+"; only the first charge is kept.
    let first = value.split(|c: char| c.is_whitespace() || c == ',').next().unwrap_or("");
    let digits = first.trim_end_matches(['+', '-']);
    if digits.is_empty() {
        return Ok(0);
    }
    digits
        .parse()
        .map_err(|_| Error::parse(format!("line {line_no}"), format!("bad CHARGE value {value:?}")))
}

/// Parses MGF text. Each `BEGIN IONS`/`END IONS` block becomes one spectrum
/// whose scan id is its `TITLE`.
pub fn parse_mgf<R: BufRead>(reader: R, run_id: &str) -> Result<Vec<Spectrum>> {
    let mut out = Vec::new();
    let mut current: Option<Block> = None;
    let mut line_no = 0;
    for line in reader.lines() {
        line_no += 1;
        let line = line.map_err(|e| Error::parse(format!("line {line_no}"), e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(block) = current.as_mut() else {
            if line == "BEGIN IONS" {
                current = Some(Block {
                    start_line: line_no,
                    title: None,
                    pepmass: None,
                    charge: 0,
                    peaks: Vec::new(),
                });
            }
            // Anything else outside a block (comments, global params) is ignored.
            continue;
        };
        if line == "END IONS" {
            let block = current.take().unwrap();
            let pepmass = block.pepmass.ok_or_else(|| {
                Error::parse(
                    format!("line {}", block.start_line),
                    "PEPMASS missing from spectrum block",
                )
            })?;
            let scan_id = block.title.unwrap_or_else(|| out.len().to_string());
            out.push(Spectrum::new(run_id, scan_id, pepmass, block.charge, block.peaks));
            continue;
        }
        if line == "BEGIN IONS" {
            return Err(Error::parse(format!("line {line_no}"), "nested BEGIN IONS"));
        }
        let starts_alpha = line.as_bytes()[0].is_ascii_alphabetic();
        if starts_alpha {
            if let Some((key, value)) = line.split_once('=') {
                match key.trim().to_ascii_uppercase().as_str() {
                    "TITLE" => block.title = Some(value.trim().to_string()),
                    "PEPMASS" => {
                        let first = value.split_whitespace().next().unwrap_or("");
                        let mz: f64 = first.parse().map_err(|_| {
                            Error::parse(format!("line {line_no}"), format!("bad PEPMASS value {value:?}"))
                        })?;
                        block.pepmass = Some(mz);
                    }
                    "CHARGE" => block.charge = parse_charge(value.trim(), line_no)?,
                    _ => {}
                }
                continue;
            }
        }
        let mut fields = line.split_whitespace();
        let parsed = match (fields.next(), fields.next()) {
            (Some(a), Some(b)) => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
            _ => None,
        };
        let Some((mz, intensity)) = parsed else {
            return Err(Error::parse(format!("line {line_no}"), format!("bad peak line {line:?}")));
        };
        let peak = Peak::new(mz, intensity);
        if !peak.is_valid() {
            return Err(Error::parse(format!("line {line_no}"), format!("invalid peak {line:?}")));
        }
        block.peaks.push(peak);
    }
    if let Some(block) = current {
        return Err(Error::parse(
            format!("line {}", block.start_line),
            "END IONS missing before end of input",
        ));
    }
    Ok(out)
}

/// Writes spectra as MGF. Numbers use the shortest representation that
/// parses back to the identical `f64`.
pub fn write_mgf<W: Write>(mut w: W, spectra: &[Spectrum]) -> Result<()> {
    for s in spectra {
        writeln!(w, "BEGIN IONS")?;
        writeln!(w, "TITLE={}", s.scan_id)?;
        writeln!(w, "PEPMASS={}", s.precursor_mz)?;
        if s.precursor_charge > 0 {
            writeln!(w, "CHARGE={}+", s.precursor_charge)?;
        }
        for p in &s.peaks {
            writeln!(w, "{} {}", p.mz, p.intensity)?;
        }
        writeln!(w, "END IONS")?;
    }
    Ok(())
}

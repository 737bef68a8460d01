use std::io::{Read, BufRead};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use flate2::read::ZlibDecoder;
use roxmltree::{Document, Node};

use super::{Peak, Spectrum};
use crate::error::{Error, Result};

const MS_LEVEL: &str = "MS:1000511";
const MZ_ARRAY: &str = "MS:1000514";
const INTENSITY_ARRAY: &str = "MS:1000515";
const FLOAT32: &str = "MS:1000521";
const FLOAT64: &str = "MS:1000523";
const ZLIB: &str = "MS:1000574";
const NO_COMPRESSION: &str = "MS:1000576";
const SELECTED_ION_MZ: &str = "MS:1000744";
const CHARGE_STATE: &str = "MS:1000041";
// Integer arrays and the numpress family.
const UNSUPPORTED: &[&str] = &[
    "MS:1000519",
    "MS:1000522",
    "MS:1002312",
    "MS:1002313",
    "MS:1002314",
    "MS:1002746",
    "MS:1002747",
    "MS:1002748",
];

#[derive(Clone, Copy)]
enum Precision {
    F32,
    F64,
}

fn children<'a, 'i>(node: Node<'a, 'i>, name: &'static str) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(move |n| n.tag_name().name() == name)
}

fn cv_params<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = (&'a str, Option<&'a str>)> {
    children(node, "cvParam").filter_map(|cv| cv.attribute("accession").map(|a| (a, cv.attribute("value"))))
}

fn decode_array(node: Node, spectrum_id: &str) -> Result<Option<(bool, Vec<f64>)>> {
    let err = |msg: String| Error::parse(format!("spectrum {spectrum_id}"), msg);
    let mut kind = None;
    let mut precision = None;
    let mut zlib = false;
    for (acc, _) in cv_params(node) {
        match acc {
            MZ_ARRAY => kind = Some(true),
            INTENSITY_ARRAY => kind = Some(false),
            FLOAT32 => precision = Some(Precision::F32),
            FLOAT64 => precision = Some(Precision::F64),
            ZLIB => zlib = true,
            NO_COMPRESSION => zlib = false,
            a if UNSUPPORTED.contains(&a) => return Err(err(format!("unsupported binary encoding {a}"))),
            _ => {}
        }
    }
    let Some(is_mz) = kind else {
        return Ok(None);
    };
    let precision = precision.ok_or_else(|| err("binary array without float precision".into()))?;
    let text: String = children(node, "binary")
        .next()
        .and_then(|b| b.text())
        .unwrap_or("")
        .chars()
        .filter(|c| !c.is_ascii_whitespace())
        .collect();
    let raw = STANDARD
        .decode(text.as_bytes())
        .map_err(|e| err(format!("base64 decode failed: {e}")))?;
    let bytes = if zlib {
        let mut out = Vec::new();
        ZlibDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| err(format!("zlib decompression failed: {e}")))?;
        out
    } else {
        raw
    };
    let values = match precision {
        Precision::F32 => {
            if bytes.len() % 4 != 0 {
                return Err(err(format!("{} bytes is not a whole number of 32-bit floats", bytes.len())));
            }
            bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect()
        }
        Precision::F64 => {
            if bytes.len() % 8 != 0 {
                return Err(err(format!("{} bytes is not a whole number of 64-bit floats", bytes.len())));
            }
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        }
    };
    Ok(Some((is_mz, values)))
}

fn parse_spectrum(node: Node, run_id: &str) -> Result<Option<Spectrum>> {
    let id = node.attribute("id").unwrap_or("").to_string();
    let err = |msg: String| Error::parse(format!("spectrum {id}"), msg);
    let has_precursor = node.descendants().any(|n| n.tag_name().name() == "precursor");
    let mut ms_level = if has_precursor { 2 } else { 1 };
    for (acc, value) in cv_params(node) {
        if acc == MS_LEVEL {
            ms_level = value
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err("bad ms level value".into()))?;
        }
    }
    if ms_level != 2 {
        return Ok(None);
    }

    let mut precursor_mz = 0.0;
    let mut charge = 0;
    if let Some(ion) = node.descendants().find(|n| n.tag_name().name() == "selectedIon") {
        for (acc, value) in cv_params(ion) {
            match acc {
                SELECTED_ION_MZ => {
                    precursor_mz = value
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| err("bad selected ion m/z".into()))?
                }
                CHARGE_STATE => {
                    charge = value
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| err("bad charge state".into()))?
                }
                _ => {}
            }
        }
    }

    let mut mzs = None;
    let mut intensities = None;
    for list in node.descendants().filter(|n| n.tag_name().name() == "binaryDataArray") {
        if let Some((is_mz, values)) = decode_array(list, &id)? {
            if is_mz {
                mzs = Some(values);
            } else {
                intensities = Some(values);
            }
        }
    }
    let (mzs, intensities) = match (mzs, intensities) {
        (Some(m), Some(i)) => (m, i),
        (None, None) => (Vec::new(), Vec::new()),
        _ => return Err(err("spectrum needs both m/z and intensity arrays".into())),
    };
    if mzs.len() != intensities.len() {
        return Err(err(format!(
            "m/z array has {} values but intensity array has {}",
            mzs.len(),
            intensities.len()
        )));
    }
    let peaks: Vec<Peak> = mzs.into_iter().zip(intensities).map(|(m, i)| Peak::new(m, i)).collect();
    if let Some(p) = peaks.iter().find(|p| !p.is_valid()) {
        return Err(err(format!("invalid peak ({}, {})", p.mz, p.intensity)));
    }
    Ok(Some(Spectrum::new(run_id, id.clone(), precursor_mz, charge, peaks)))
}

/// Parses the MS2 spectra of an mzML document (plain or indexed).
pub fn parse_mzml<R: BufRead>(mut reader: R) -> Result<Vec<Spectrum>> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::parse("mzML", e.to_string()))?;
    let doc = Document::parse(&text).map_err(|e| Error::parse("mzML", e.to_string()))?;
    let run_id = doc
        .descendants()
        .find(|n| n.tag_name().name() == "run")
        .and_then(|n| n.attribute("id"))
        .unwrap_or("run")
        .to_string();
    let mut out = Vec::new();
    for list in doc.descendants().filter(|n| n.tag_name().name() == "spectrumList") {
        for node in children(list, "spectrum") {
            if let Some(s) = parse_spectrum(node, &run_id)? {
                out.push(s);
            }
        }
    }
    Ok(out)
}

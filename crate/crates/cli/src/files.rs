//! File plumbing shared by the subcommands.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use specfm::chem::Peptide;
use specfm::config::RunConfig;
use specfm::msio::{
    read_embeddings, read_labels, read_peptides, read_row_index, read_spectra, EmbeddingMatrix, LabelRecord, Spectrum, Task,
};
use specfm::preprocess::{preprocess_spectrum, PreprocessConfig, ProcessedSpectrum};
use specfm::train::DenovoExample;
use specfm::{Error, Result};

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn parse_task(name: &str) -> Result<Task> {
    name.parse().map_err(|_| Error::Config(format!("unknown task {name:?}")))
}

pub fn read_label_files(paths: &[PathBuf]) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_labels(open(p)?)?);
    }
    Ok(out)
}

type Key = (String, String);

fn label_index(records: &[LabelRecord], task: Task) -> HashMap<Key, u8> {
    records
        .iter()
        .filter(|r| r.task == task)
        .map(|r| ((r.run_id.clone(), r.scan_id.clone()), r.label))
        .collect()
}

/// Spectra from `paths` that carry a `task` label, with their labels.
pub fn labeled_spectra(paths: &[PathBuf], records: &[LabelRecord], task: Task) -> Result<(Vec<Spectrum>, Vec<u8>)> {
    let index = label_index(records, task);
    let mut spectra = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        for s in read_spectra(p)? {
            if let Some(&l) = index.get(&(s.run_id.clone(), s.scan_id.clone())) {
                spectra.push(s);
                labels.push(l);
            }
        }
    }
    if spectra.is_empty() {
        let names: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::DegenerateInput(format!("no {task} labels match spectra in {}", names.join(", "))));
    }
    Ok((spectra, labels))
}

pub fn read_all_spectra(paths: &[PathBuf]) -> Result<Vec<Spectrum>> {
    let mut out = Vec::new();
    for p in paths {
        out.extend(read_spectra(p)?);
    }
    Ok(out)
}

pub fn preprocess_all(spectra: &[Spectrum], cfg: &PreprocessConfig) -> Result<Vec<ProcessedSpectrum>> {
    spectra.iter().map(|s| preprocess_spectrum(s, cfg)).collect()
}

/// Spectra joined with peptide annotations, preprocessed for training.
pub fn denovo_examples(spectra: &[PathBuf], peptides: &[PathBuf], cfg: &PreprocessConfig) -> Result<Vec<DenovoExample>> {
    let mut index: HashMap<Key, Peptide> = HashMap::new();
    for p in peptides {
        for r in read_peptides(open(p)?)? {
            index.insert((r.run_id, r.scan_id), r.peptide);
        }
    }
    let mut out = Vec::new();
    for s in read_all_spectra(spectra)? {
        if let Some(peptide) = index.get(&(s.run_id.clone(), s.scan_id.clone())) {
            out.push(DenovoExample {
                spectrum: preprocess_spectrum(&s, cfg)?,
                peptide: peptide.clone(),
            });
        }
    }
    if out.is_empty() && !spectra.is_empty() {
        return Err(Error::DegenerateInput("no peptide annotations match the de novo spectra".into()));
    }
    Ok(out)
}

pub fn row_index_path(emb: &Path) -> PathBuf {
    let mut s = emb.as_os_str().to_owned();
    s.push(".tsv");
    PathBuf::from(s)
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingMatrix> {
    let mut m = read_embeddings(open(path)?)?;
    read_row_index(open(&row_index_path(path))?, &mut m)?;
    Ok(m)
}

/// Embedding rows that carry a `task` label.
pub fn labeled_embeddings(path: &Path, records: &[LabelRecord], task: Task) -> Result<(Vec<Vec<f32>>, Vec<u8>)> {
    let m = read_embedding_file(path)?;
    let index = label_index(records, task);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, key) in m.rows.iter().enumerate() {
        if let Some(&l) = index.get(key) {
            x.push(m.row(i).to_vec());
            y.push(l);
        }
    }
    if x.is_empty() {
        return Err(Error::DegenerateInput(format!("no {task} labels match rows of {}", path.display())));
    }
    Ok((x, y))
}

const SCORES_HEADER: &str = "run_id\tscan_id\tscore";

pub fn write_scores(path: &Path, keys: &[(String, String)], scores: &[f64]) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "{SCORES_HEADER}")?;
        for ((run, scan), s) in keys.iter().zip(scores) {
            writeln!(w, "{run}\t{scan}\t{s}")?;
        }
        Ok(())
    })
}

pub fn read_scores(path: &Path) -> Result<Vec<((String, String), f64)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let ctx = format!("{} line {}", path.display(), i + 1);
        if i == 0 {
            if line.trim_end() != SCORES_HEADER {
                return Err(Error::Parse {
                    context: ctx,
                    message: format!("unexpected scores header {line:?}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim_end().split('\t').collect();
        let score = match f[..] {
            [_, _, s] => s.parse::<f64>().ok(),
            _ => None,
        }
        .ok_or_else(|| Error::Parse {
            context: ctx,
            message: "expected run_id, scan_id and a numeric score".into(),
        })?;
        out.push(((f[0].to_string(), f[1].to_string()), score));
    }
    Ok(out)
}

pub fn keys(spectra: &[Spectrum]) -> Vec<(String, String)> {
    spectra.iter().map(|s| (s.run_id.clone(), s.scan_id.clone())).collect()
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    std::io::copy(&mut open(path)?, &mut h)?;
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Run manifest: the command, the resolved configuration and a digest of
/// every input file, written next to the primary output as `<out>.manifest`.
pub fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, inputs: &[&Path]) -> Result<()> {
    let mut path = out.as_os_str().to_owned();
    path.push(".manifest");
    let mut digests = Vec::new();
    for p in inputs {
        digests.push((p.display().to_string(), sha256_file(p)?));
    }
    write_with(Path::new(&path), |w| {
        writeln!(w, "command = {command}")?;
        write!(w, "{}", cfg.to_text())?;
        for (p, d) in &digests {
            writeln!(w, "input = {p} sha256:{d}")?;
        }
        Ok(())
    })
}

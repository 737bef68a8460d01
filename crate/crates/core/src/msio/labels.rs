use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Spectrum;
use crate::chem::Peptide;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Quality,
    Chimera,
    Phospho,
    Glyco,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Quality, Task::Chimera, Task::Phospho, Task::Glyco];

    pub fn name(self) -> &'static str {
        match self {
            Task::Quality => "quality",
            Task::Chimera => "chimera",
            Task::Phospho => "phospho",
            Task::Glyco => "glyco",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::parse("task", format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRecord {
    pub run_id: String,
    pub scan_id: String,
    pub task: Task,
    pub label: u8,
}

const LABEL_HEADER: &str = "run_id\tscan_id\ttask\tlabel";

/// Reads a label TSV with header `run_id\tscan_id\ttask\tlabel`.
pub fn read_labels<R: BufRead>(reader: R) -> Result<Vec<LabelRecord>> {
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim_end() == LABEL_HEADER => {}
        Some((_, Ok(h))) => return Err(Error::parse("line 1", format!("unexpected label header {h:?}"))),
        Some((_, Err(e))) => return Err(Error::parse("line 1", e.to_string())),
        None => return Err(Error::parse("line 1", "missing label header")),
    }
    let mut seen: HashMap<(String, String, Task), u8> = HashMap::new();
    let mut out = Vec::new();
    for (i, line) in lines {
        let ctx = format!("line {}", i + 1);
        let line = line.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(&ctx, format!("expected 4 fields, found {}", fields.len())));
        }
        let task: Task = fields[2].parse().map_err(|_| Error::parse(&ctx, format!("unknown task {:?}", fields[2])))?;
        let label = match fields[3] {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(&ctx, format!("label must be 0 or 1, found {other:?}"))),
        };
        let record = LabelRecord {
            run_id: fields[0].to_string(),
            scan_id: fields[1].to_string(),
            task,
            label,
        };
        match seen.entry((record.run_id.clone(), record.scan_id.clone(), task)) {
            Entry::Occupied(_) => {
                return Err(Error::DuplicateLabel {
                    run_id: record.run_id,
                    scan_id: record.scan_id,
                    task: task.to_string(),
                })
            }
            Entry::Vacant(v) => {
                v.insert(label);
            }
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_labels<W: Write>(mut w: W, records: &[LabelRecord]) -> Result<()> {
    writeln!(w, "{LABEL_HEADER}")?;
    for r in records {
        writeln!(w, "{}\t{}\t{}\t{}", r.run_id, r.scan_id, r.task, r.label)?;
    }
    Ok(())
}

/// Pairs spectra with their label for `task`; spectra without one are dropped.
pub fn join_labels(spectra: Vec<Spectrum>, records: &[LabelRecord], task: Task) -> Vec<(Spectrum, u8)> {
    let index: HashMap<(&str, &str), u8> = records
        .iter()
        .filter(|r| r.task == task)
        .map(|r| ((r.run_id.as_str(), r.scan_id.as_str()), r.label))
        .collect();
    spectra
        .into_iter()
        .filter_map(|s| {
            let label = index.get(&(s.run_id.as_str(), s.scan_id.as_str())).copied()?;
            Some((s, label))
        })
        .collect()
}

/// Peptide annotation for de novo training: `run_id\tscan_id\tpeptide`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeptideRecord {
    pub run_id: String,
    pub scan_id: String,
    pub peptide: Peptide,
}

const PEPTIDE_HEADER: &str = "run_id\tscan_id\tpeptide";

pub fn read_peptides<R: BufRead>(reader: R) -> Result<Vec<PeptideRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let ctx = format!("line {}", i + 1);
        let line = line.map_err(|e| Error::parse(&ctx, e.to_string()))?;
        if i == 0 {
            if line.trim_end() != PEPTIDE_HEADER {
                return Err(Error::parse(ctx, format!("unexpected peptide header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(ctx, format!("expected 3 fields, found {}", fields.len())));
        }
        let peptide = fields[2]
            .parse()
            .map_err(|e: Error| Error::parse(&ctx, e.to_string()))?;
        out.push(PeptideRecord {
            run_id: fields[0].to_string(),
            scan_id: fields[1].to_string(),
            peptide,
        });
    }
    Ok(out)
}

pub fn write_peptides<W: Write>(mut w: W, records: &[PeptideRecord]) -> Result<()> {
    writeln!(w, "{PEPTIDE_HEADER}")?;
    for r in records {
        writeln!(w, "{}\t{}\t{}", r.run_id, r.scan_id, r.peptide)?;
    }
    Ok(())
}

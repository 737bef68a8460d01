//! Monoisotopic masses, peptide mass arithmetic and b/y fragment generation.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const PROTON_MASS: f64 = 1.007276;
pub const WATER_MASS: f64 = 18.010565;
/// Mass of HPO3.
pub const PHOSPHO_DELTA: f64 = 79.966331;
/// Neutral loss of H3PO4 from phosphorylated precursors.
pub const PHOSPHO_NEUTRAL_LOSS: f64 = 97.976896;

/// The 20 canonical residues in a fixed order.
pub const CANONICAL_RESIDUES: [char; 20] = [
    'G', 'A', 'S', 'P', 'V', 'T', 'C', 'L', 'I', 'N', 'D', 'Q', 'K', 'E', 'M', 'H', 'F', 'R', 'Y',
    'W',
];

/// Monoisotopic residue mass for a canonical amino acid.
pub fn residue_mass(aa: char) -> Option<f64> {
    let m = match aa {
        'G' => 57.021464,
        'A' => 71.037114,
        'S' => 87.032028,
        'P' => 97.052764,
        'V' => 99.068414,
        'T' => 101.047679,
        'C' => 103.009185,
        'L' => 113.084064,
        'I' => 113.084064,
        'N' => 114.042927,
        'D' => 115.026943,
        'Q' => 128.058578,
        'K' => 128.094963,
        'E' => 129.042593,
        'M' => 131.040485,
        'H' => 137.058912,
        'F' => 147.068414,
        'R' => 156.101111,
        'Y' => 163.063329,
        'W' => 186.079313,
        _ => return None,
    };
    Some(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IonSeries {
    B,
    Y,
}

impl fmt::Display for IonSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IonSeries::B => f.write_str("b"),
            IonSeries::Y => f.write_str("y"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub series: IonSeries,
    /// Number of residues in the fragment (b_i / y_i).
    pub index: usize,
    pub mz: f64,
}

/// An amino-acid sequence with additive per-residue modification deltas.
///
/// Text form places a signed delta in brackets after the modified residue,
/// e.g. `PEPS[+79.966331]IDE`.
#[derive(Debug, Clone, PartialEq)]
pub struct Peptide {
    residues: Vec<char>,
    mods: Vec<(usize, f64)>,
}

impl Peptide {
    pub fn new(residues: Vec<char>, mut mods: Vec<(usize, f64)>) -> Result<Self> {
        if residues.is_empty() {
            return Err(Error::InvalidPeptide("empty sequence".into()));
        }
        if let Some(&bad) = residues.iter().find(|&&aa| residue_mass(aa).is_none()) {
            return Err(Error::InvalidPeptide(format!("unknown residue '{bad}'")));
        }
        if let Some(&(pos, _)) = mods.iter().find(|(pos, _)| *pos >= residues.len()) {
            return Err(Error::InvalidPeptide(format!(
                "modification position {pos} beyond sequence length {}",
                residues.len()
            )));
        }
        if mods.iter().any(|(_, d)| !d.is_finite()) {
            return Err(Error::InvalidPeptide("non-finite modification delta".into()));
        }
        mods.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self { residues, mods })
    }

    pub fn unmodified(seq: &str) -> Result<Self> {
        Self::new(seq.chars().collect(), Vec::new())
    }

    pub fn residues(&self) -> &[char] {
        &self.residues
    }

    pub fn mods(&self) -> &[(usize, f64)] {
        &self.mods
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    /// Residue mass at `i` including any modification deltas on it.
    pub fn position_mass(&self, i: usize) -> f64 {
        let base = residue_mass(self.residues[i]).expect("validated residue");
        base + self
            .mods
            .iter()
            .filter(|(p, _)| *p == i)
            .map(|(_, d)| d)
            .sum::<f64>()
    }

    /// Modification delta at position `i` (0 when unmodified).
    pub fn delta_at(&self, i: usize) -> f64 {
        self.mods
            .iter()
            .filter(|(p, _)| *p == i)
            .map(|(_, d)| d)
            .sum()
    }
}

impl fmt::Display for Peptide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, aa) in self.residues.iter().enumerate() {
            write!(f, "{aa}")?;
            for (_, d) in self.mods.iter().filter(|(p, _)| *p == i) {
                write!(f, "[{d:+}]")?;
            }
        }
        Ok(())
    }
}

impl FromStr for Peptide {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut residues = Vec::new();
        let mut mods = Vec::new();
        let mut chars = s.trim().chars().peekable();
        while let Some(c) = chars.next() {
            if c == '[' {
                let mut buf = String::new();
                loop {
                    match chars.next() {
                        Some(']') => break,
                        Some(x) => buf.push(x),
                        None => {
                            return Err(Error::InvalidPeptide(format!("unterminated modification in {s:?}")))
                        }
                    }
                }
                if residues.is_empty() {
                    return Err(Error::InvalidPeptide(format!("modification before first residue in {s:?}")));
                }
                let delta: f64 = buf
                    .parse()
                    .map_err(|_| Error::InvalidPeptide(format!("bad modification delta {buf:?}")))?;
                mods.push((residues.len() - 1, delta));
            } else {
                residues.push(c);
            }
        }
        Peptide::new(residues, mods)
    }
}

/// Neutral monoisotopic mass: residues + modification deltas + water.
pub fn peptide_mass(p: &Peptide) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::InvalidPeptide("empty sequence".into()));
    }
    let residues: f64 = (0..p.len()).map(|i| p.position_mass(i)).sum();
    Ok(residues + WATER_MASS)
}

/// m/z of an ion with the given neutral mass and charge.
pub fn precursor_mz(neutral_mass: f64, charge: u32) -> Result<f64> {
    if charge == 0 {
        return Err(Error::InvalidCharge(0));
    }
    let z = f64::from(charge);
    Ok((neutral_mass + z * PROTON_MASS) / z)
}

/// b and y fragment m/z values for every internal cleavage site, b ions first.
pub fn fragment_mzs(p: &Peptide, frag_charge: u32) -> Result<Vec<Fragment>> {
    if frag_charge == 0 {
        return Err(Error::InvalidCharge(0));
    }
    let n = p.len();
    if n < 2 {
        return Ok(Vec::new());
    }
    let z = f64::from(frag_charge);
    let masses: Vec<f64> = (0..n).map(|i| p.position_mass(i)).collect();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for m in &masses {
        prefix.push(prefix.last().unwrap() + m);
    }
    let total = prefix[n];
    let mut out = Vec::with_capacity(2 * (n - 1));
    for i in 1..n {
        out.push(Fragment {
            series: IonSeries::B,
            index: i,
            mz: (prefix[i] + z * PROTON_MASS) / z,
        });
    }
    for i in 1..n {
        // y_i carries the last i residues.
        let suffix = total - prefix[n - i];
        out.push(Fragment {
            series: IonSeries::Y,
            index: i,
            mz: (suffix + WATER_MASS + z * PROTON_MASS) / z,
        });
    }
    Ok(out)
}

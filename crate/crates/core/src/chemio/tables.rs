//! Comma-separated tables: no quoting, `#` comment lines and blank lines
//! skipped, fields trimmed of surrounding whitespace.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_smiles, Molecule, SmilesError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CsvError {
    #[error("missing or malformed header (expected 'smiles,<value>[,...]')")]
    MissingHeader,
    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse number '{text}'")]
    BadNumber { line: usize, text: String },
    #[error("line {line}: non-finite value in column '{column}'")]
    NonFiniteValue { line: usize, column: String },
    #[error("line {line}: label must be 0 or 1, got '{text}'")]
    BadLabel { line: usize, text: String },
    #[error("line {line}: {source}")]
    ParseError {
        line: usize,
        #[source]
        source: SmilesError,
    },
}

impl CsvError {
    pub fn line(&self) -> Option<usize> {
        match self {
            CsvError::MissingHeader => None,
            CsvError::ColumnCount { line, .. }
            | CsvError::BadNumber { line, .. }
            | CsvError::NonFiniteValue { line, .. }
            | CsvError::BadLabel { line, .. }
            | CsvError::ParseError { line, .. } => Some(*line),
        }
    }
}

/// Molecules with one real-valued label each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub assay_id: String,
    pub molecules: Vec<Molecule>,
    pub values: Vec<f64>,
}

impl LabeledSet {
    pub fn new(assay_id: impl Into<String>, molecules: Vec<Molecule>, values: Vec<f64>) -> Self {
        assert_eq!(molecules.len(), values.len(), "parallel lists");
        assert!(values.iter().all(|v| v.is_finite()), "finite labels");
        Self {
            assay_id: assay_id.into(),
            molecules,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            assay_id: self.assay_id.clone(),
            molecules: idx.iter().map(|&i| self.molecules[i].clone()).collect(),
            values: idx.iter().map(|&i| self.values[i]).collect(),
        }
    }
}

/// Molecules with `K` named target columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyTable {
    pub targets: Vec<String>,
    pub molecules: Vec<Molecule>,
    /// Row-major `len × K`.
    pub values: Vec<Vec<f64>>,
}

impl PropertyTable {
    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    /// Column `k` as a single-target set.
    pub fn labeled_set(&self, k: usize, assay_id: impl Into<String>) -> LabeledSet {
        LabeledSet::new(
            assay_id,
            self.molecules.clone(),
            self.values.iter().map(|r| r[k]).collect(),
        )
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

fn split(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

/// Parses `smiles,v1[,v2...]` with a mandatory header row.
pub fn load_property_csv(text: &str) -> Result<PropertyTable, CsvError> {
    let mut lines = data_lines(text);
    let (_, header) = lines.next().ok_or(CsvError::MissingHeader)?;
    let cols = split(header);
    if cols.len() < 2 || !cols[0].eq_ignore_ascii_case("smiles") || cols.iter().any(|c| c.is_empty())
    {
        return Err(CsvError::MissingHeader);
    }
    let targets: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    let mut molecules = Vec::new();
    let mut values = Vec::new();
    for (line, raw) in lines {
        let f = split(raw);
        if f.len() != cols.len() {
            return Err(CsvError::ColumnCount {
                line,
                expected: cols.len(),
                found: f.len(),
            });
        }
        let mol = parse_smiles(f[0]).map_err(|source| CsvError::ParseError { line, source })?;
        let mut row = Vec::with_capacity(targets.len());
        for (k, text) in f[1..].iter().enumerate() {
            let v: f64 = text.parse().map_err(|_| CsvError::BadNumber {
                line,
                text: text.to_string(),
            })?;
            if !v.is_finite() {
                return Err(CsvError::NonFiniteValue {
                    line,
                    column: targets[k].clone(),
                });
            }
            row.push(v);
        }
        molecules.push(mol);
        values.push(row);
    }
    Ok(PropertyTable {
        targets,
        molecules,
        values,
    })
}

/// Writes a property table in the format accepted by [`load_property_csv`].
pub fn write_property_csv(targets: &[&str], rows: &[(String, Vec<f64>)]) -> String {
    let mut out = format!("smiles,{}\n", targets.join(","));
    for (s, v) in rows {
        out.push_str(s);
        for x in v {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

/// One pairwise ranking judgment. `label == 0` means the property of
/// `smiles1` is greater than that of `smiles2`; `1` otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairRankRecord {
    pub smiles1: String,
    pub smiles2: String,
    pub label: u8,
}

impl PairRankRecord {
    pub fn new(smiles1: impl Into<String>, smiles2: impl Into<String>, label: u8) -> Self {
        assert!(label <= 1, "label must be 0 or 1");
        Self {
            smiles1: smiles1.into(),
            smiles2: smiles2.into(),
            label,
        }
    }

    /// Same judgment with the two molecules swapped.
    pub fn swapped(&self) -> Self {
        Self {
            smiles1: self.smiles2.clone(),
            smiles2: self.smiles1.clone(),
            label: 1 - self.label,
        }
    }
}

pub const PAIR_HEADER: &str = "smiles1,smiles2,prediction";

/// Parses `smiles1,smiles2,prediction` rows; a leading header row is optional.
pub fn load_pair_csv(text: &str) -> Result<Vec<PairRankRecord>, CsvError> {
    let mut out = Vec::new();
    for (idx, (line, raw)) in data_lines(text).enumerate() {
        let f = split(raw);
        if idx == 0 && f == ["smiles1", "smiles2", "prediction"] {
            continue;
        }
        if f.len() != 3 {
            return Err(CsvError::ColumnCount {
                line,
                expected: 3,
                found: f.len(),
            });
        }
        for s in &f[..2] {
            parse_smiles(s).map_err(|source| CsvError::ParseError { line, source })?;
        }
        let label = match f[2] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(CsvError::BadLabel {
                    line,
                    text: other.to_string(),
                })
            }
        };
        out.push(PairRankRecord::new(f[0], f[1], label));
    }
    Ok(out)
}

/// Canonical pair CSV: header row, then one `smiles1,smiles2,label` per line.
pub fn serialize_pair_csv(records: &[PairRankRecord]) -> String {
    let mut out = String::with_capacity(32 * (records.len() + 1));
    out.push_str(PAIR_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{},{},{}", r.smiles1, r.smiles2, r.label);
    }
    out
}

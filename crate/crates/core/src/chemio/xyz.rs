use std::fmt::Write as _;

use thiserror::Error;

use super::{Element, Molecule};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum XyzError {
    #[error("atom count line declares {expected} atoms, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("line {line}: cannot parse number '{text}'")]
    BadNumber { line: usize, text: String },
    #[error("line {line}: unknown element '{symbol}'")]
    UnknownElement { line: usize, symbol: String },
}

impl XyzError {
    /// 1-based line of the failure, when it has one.
    pub fn line(&self) -> Option<usize> {
        match self {
            XyzError::CountMismatch { .. } => None,
            XyzError::BadNumber { line, .. } | XyzError::UnknownElement { line, .. } => {
                Some(*line)
            }
        }
    }
}

/// Parses the standard XYZ layout: count line, comment line, then
/// `Symbol x y z` rows in ångström. Extra columns after `z` are ignored.
pub fn read_xyz(text: &str) -> Result<Molecule, XyzError> {
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("").trim();
    let expected: usize = first.parse().map_err(|_| XyzError::BadNumber {
        line: 1,
        text: first.to_string(),
    })?;
    let _comment = lines.next();
    // The count line is untrusted; never reserve more rows than the text holds.
    let cap = expected.min(text.len() / 2);
    let mut atoms = Vec::with_capacity(cap);
    let mut coords = Vec::with_capacity(cap);
    let mut found = 0;
    for (i, raw) in lines.enumerate() {
        let line = i + 3;
        let mut fields = raw.split_whitespace();
        let Some(sym) = fields.next() else { continue };
        found += 1;
        if found > expected {
            continue;
        }
        let e = Element::from_symbol(sym).ok_or_else(|| XyzError::UnknownElement {
            line,
            symbol: sym.to_string(),
        })?;
        let mut p = [0.0; 3];
        for slot in p.iter_mut() {
            let f = fields.next().ok_or_else(|| XyzError::BadNumber {
                line,
                text: String::new(),
            })?;
            *slot = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| XyzError::BadNumber {
                    line,
                    text: f.to_string(),
                })?;
        }
        atoms.push(e);
        coords.push(p);
    }
    if found != expected || expected == 0 {
        return Err(XyzError::CountMismatch { expected, found });
    }
    Ok(Molecule::new(atoms, Some(coords), None).expect("validated atoms and coordinates"))
}

/// Debug writer; coordinates use shortest round-trip formatting.
pub fn write_xyz(mol: &Molecule, comment: &str) -> String {
    let mut out = format!("{}\n{}\n", mol.n_atoms(), comment.replace('\n', " "));
    let zero = [0.0; 3];
    for (i, a) in mol.atoms().iter().enumerate() {
        let p = mol.coords().map(|c| c[i]).unwrap_or(zero);
        let _ = writeln!(out, "{} {} {} {}", a.symbol(), p[0], p[1], p[2]);
    }
    out
}

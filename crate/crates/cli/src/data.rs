//! File loading with path-qualified errors.

use std::path::{Path, PathBuf};

use molevers::chemio::{
    load_pair_csv, load_property_csv, parse_smiles, read_xyz, with_synthetic_coords, LabeledSet,
    Molecule, PairRankRecord, PropertyTable,
};
use molevers::training::{load_checkpoint, Checkpoint};
use molevers::encoder::EncoderConfig;

use crate::error::{CliError, Result};

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::from(e).at(path))
}

pub fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// `*.ext` files directly inside `dir`, sorted by name.
pub fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::from(e).at(dir))?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::from(e).at(dir))?.path();
        if p.is_file() && has_ext(&p, ext) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// SMILES list: one per line, blank lines and `#` comments skipped.
pub fn parse_smiles_list(text: &str) -> std::result::Result<Vec<Molecule>, CliError> {
    let mut mols = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let m = parse_smiles(s).map_err(|e| {
            let inner = CliError::from(e);
            CliError::format(format!("line {}, {}", i + 1, inner.msg))
        })?;
        mols.push(m);
    }
    Ok(mols)
}

fn strip(mols: Vec<Molecule>, strip_h: bool) -> Vec<Molecule> {
    if strip_h {
        mols.iter().map(Molecule::strip_hydrogens).collect()
    } else {
        mols
    }
}

/// Molecules from a directory of `.xyz` files, one `.xyz` file, a property
/// CSV, or a SMILES list.
pub fn load_molecules(path: &Path, strip_h: bool) -> Result<Vec<Molecule>> {
    let mols = if path.is_dir() {
        let files = files_with_ext(path, "xyz")?;
        if files.is_empty() {
            return Err(CliError::format("no .xyz files").at(path));
        }
        files
            .iter()
            .map(|f| read_xyz(&read_text(f)?).map_err(|e| CliError::from(e).at(f)))
            .collect::<Result<Vec<_>>>()?
    } else if has_ext(path, "xyz") {
        vec![read_xyz(&read_text(path)?).map_err(|e| CliError::from(e).at(path))?]
    } else if has_ext(path, "csv") {
        load_table(path, false)?.molecules
    } else {
        parse_smiles_list(&read_text(path)?).map_err(|e| e.at(path))?
    };
    if mols.is_empty() {
        return Err(CliError::format("no molecules").at(path));
    }
    Ok(strip(mols, strip_h))
}

/// Gives every coordinate-free molecule helix coordinates, or fails when
/// synthesis is off.
pub fn with_coords(mols: Vec<Molecule>, synthesize: bool) -> Result<Vec<Molecule>> {
    mols.into_iter()
        .enumerate()
        .map(|(i, m)| {
            if m.coords().is_some() {
                Ok(m)
            } else if synthesize {
                with_synthetic_coords(m).map_err(|e| CliError::format(e.to_string()))
            } else {
                Err(CliError::format(format!(
                    "molecule {i} has no coordinates; set stage1.synthesize_coords"
                )))
            }
        })
        .collect()
}

pub fn load_table(path: &Path, strip_h: bool) -> Result<PropertyTable> {
    let mut t = load_property_csv(&read_text(path)?).map_err(|e| CliError::from(e).at(path))?;
    t.molecules = strip(t.molecules, strip_h);
    Ok(t)
}

/// First target column of a property CSV.
pub fn load_labeled(path: &Path, assay_id: &str, strip_h: bool) -> Result<LabeledSet> {
    let t = load_table(path, strip_h)?;
    if t.is_empty() {
        return Err(CliError::format("no data rows").at(path));
    }
    Ok(t.labeled_set(0, assay_id))
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairRankRecord>> {
    load_pair_csv(&read_text(path)?).map_err(|e| CliError::from(e).at(path))
}

/// Loads a checkpoint, requiring its embedded encoder config to match.
pub fn load_model(path: &Path, encoder: &EncoderConfig) -> Result<Checkpoint> {
    let ck = load_checkpoint(path, Some(encoder)).map_err(|e| CliError::from(e).at(path))?;
    ck.validate().map_err(|e| CliError::from(e).at(path))?;
    Ok(ck)
}

pub fn check_sizes(mols: &[Molecule], encoder: &EncoderConfig) -> Result<()> {
    if let Some((i, m)) = mols
        .iter()
        .enumerate()
        .find(|(_, m)| m.n_atoms() > encoder.max_atoms)
    {
        return Err(CliError::shape(format!(
            "molecule {i} has {} atoms, encoder max_atoms is {}",
            m.n_atoms(),
            encoder.max_atoms
        )));
    }
    Ok(())
}

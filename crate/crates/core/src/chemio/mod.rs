//! Molecule ingestion: SMILES subset, XYZ, property and pair CSV tables.
//!
//! Every parser here is a pure function of its input text.

mod helix;
mod smiles;
mod tables;
mod xyz;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use helix::{helix_coords, with_synthetic_coords};
pub use smiles::{parse_smiles, parse_smiles_graph, Bond, BondOrder, SmilesError, SmilesGraph};
pub use tables::{
    load_pair_csv, load_property_csv, serialize_pair_csv, write_property_csv, CsvError,
    LabeledSet, PairRankRecord, PropertyTable, PAIR_HEADER,
};
pub use xyz::{read_xyz, write_xyz, XyzError};

/// Atom types in model-vocabulary order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    C,
    N,
    O,
    F,
    S,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 9] = [
        Element::H,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    /// Number of atom classes predicted by the masked-atom head.
    pub const COUNT: usize = 9;

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    /// Case-sensitive element symbol lookup (`Cl`, not `CL`).
    pub fn from_symbol(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|e| e.symbol() == s)
    }

    pub fn is_heavy(self) -> bool {
        self != Element::H
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MoleculeError {
    #[error("molecule has no atoms")]
    Empty,
    #[error("coordinate rows ({coords}) do not match atom count ({atoms})")]
    CoordCount { atoms: usize, coords: usize },
    #[error("non-finite coordinate at atom {0}")]
    NonFinite(usize),
}

/// Atom-type sequence with optional 3D positions in ångström.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    atoms: Vec<Element>,
    coords: Option<Vec<[f64; 3]>>,
    smiles: Option<String>,
}

impl Molecule {
    pub fn new(
        atoms: Vec<Element>,
        coords: Option<Vec<[f64; 3]>>,
        smiles: Option<String>,
    ) -> Result<Self, MoleculeError> {
        if atoms.is_empty() {
            return Err(MoleculeError::Empty);
        }
        if let Some(c) = &coords {
            if c.len() != atoms.len() {
                return Err(MoleculeError::CoordCount {
                    atoms: atoms.len(),
                    coords: c.len(),
                });
            }
            if let Some(i) = c.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(MoleculeError::NonFinite(i));
            }
        }
        Ok(Self {
            atoms,
            coords,
            smiles,
        })
    }

    pub fn atoms(&self) -> &[Element] {
        &self.atoms
    }

    pub fn atom_ids(&self) -> Vec<usize> {
        self.atoms.iter().map(|a| a.id()).collect()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn coords(&self) -> Option<&[[f64; 3]]> {
        self.coords.as_deref()
    }

    pub fn smiles(&self) -> Option<&str> {
        self.smiles.as_deref()
    }

    pub fn with_coords(mut self, coords: Vec<[f64; 3]>) -> Result<Self, MoleculeError> {
        self.coords = Some(coords);
        Self::new(self.atoms, self.coords, self.smiles)
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.is_heavy()).count()
    }

    pub fn count(&self, e: Element) -> usize {
        self.atoms.iter().filter(|&&a| a == e).count()
    }

    /// Drops hydrogen atoms (and their coordinates). A molecule made only of
    /// hydrogens is returned unchanged so it stays non-empty.
    pub fn strip_hydrogens(&self) -> Molecule {
        let keep: Vec<usize> = (0..self.atoms.len())
            .filter(|&i| self.atoms[i].is_heavy())
            .collect();
        if keep.is_empty() || keep.len() == self.atoms.len() {
            return self.clone();
        }
        Molecule {
            atoms: keep.iter().map(|&i| self.atoms[i]).collect(),
            coords: self
                .coords
                .as_ref()
                .map(|c| keep.iter().map(|&i| c[i]).collect()),
            smiles: self.smiles.clone(),
        }
    }

    /// Stable text key: the source SMILES when present, else the atom symbols.
    pub fn key(&self) -> String {
        match &self.smiles {
            Some(s) => s.clone(),
            None => self.atoms.iter().map(|a| a.symbol()).collect(),
        }
    }
}

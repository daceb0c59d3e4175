//! SMILES subset: organic-subset atoms `C N O F S Cl Br I`, aromatic `c n o s`,
//! bracket atoms with H-count and charge, bonds `- = # :`, branches,
//! ring-closure digits (`0-9` and `%nn`) and `.` separators. Stereochemistry,
//! isotopes and wildcards are rejected.
//!
//! Implicit hydrogens are never materialized; a bracketed `[H]` is an atom.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{Element, Molecule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES")]
    EmptyInput,
    #[error("unknown element '{symbol}' at index {index}")]
    UnknownElement { index: usize, symbol: String },
    #[error("unmatched ring closure {label} at index {index}")]
    UnmatchedRingClosure { index: usize, label: u32 },
    #[error("unbalanced parenthesis at index {index}")]
    UnbalancedParenthesis { index: usize },
    #[error("unsupported or unexpected character '{ch}' at index {index}")]
    Unexpected { index: usize, ch: char },
}

impl SmilesError {
    /// Byte offset of the offending character.
    pub fn index(&self) -> usize {
        match self {
            SmilesError::EmptyInput => 0,
            SmilesError::UnknownElement { index, .. }
            | SmilesError::UnmatchedRingClosure { index, .. }
            | SmilesError::UnbalancedParenthesis { index }
            | SmilesError::Unexpected { index, .. } => *index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

/// Parsed atoms plus the bond list used for validation.
#[derive(Debug, Clone, PartialEq)]
pub struct SmilesGraph {
    pub atoms: Vec<Element>,
    pub aromatic: Vec<bool>,
    pub bonds: Vec<Bond>,
}

pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    let g = parse_smiles_graph(text)?;
    Ok(Molecule::new(g.atoms, None, Some(text.to_string())).expect("non-empty atoms"))
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    graph: SmilesGraph,
    prev: Option<usize>,
    pending_bond: Option<(usize, BondOrder)>,
    branches: Vec<(usize, Option<usize>)>,
    rings: BTreeMap<u32, (usize, usize, Option<BondOrder>)>,
}

pub fn parse_smiles_graph(text: &str) -> Result<SmilesGraph, SmilesError> {
    if text.is_empty() {
        return Err(SmilesError::EmptyInput);
    }
    if let Some((i, ch)) = text.char_indices().find(|(_, c)| !c.is_ascii()) {
        return Err(SmilesError::Unexpected { index: i, ch });
    }
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        graph: SmilesGraph {
            atoms: Vec::new(),
            aromatic: Vec::new(),
            bonds: Vec::new(),
        },
        prev: None,
        pending_bond: None,
        branches: Vec::new(),
        rings: BTreeMap::new(),
    };
    p.run()?;
    Ok(p.graph)
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn unexpected(&self, index: usize) -> SmilesError {
        SmilesError::Unexpected {
            index,
            ch: self.src.get(index).map(|&b| b as char).unwrap_or('\0'),
        }
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                b'(' => {
                    if self.prev.is_none() || self.pending_bond.is_some() {
                        return Err(self.unexpected(at));
                    }
                    self.branches.push((at, self.prev));
                    self.pos += 1;
                    if self.peek() == Some(b')') {
                        return Err(self.unexpected(self.pos));
                    }
                }
                b')' => {
                    let (_, anchor) = self
                        .branches
                        .pop()
                        .ok_or(SmilesError::UnbalancedParenthesis { index: at })?;
                    if self.pending_bond.is_some() {
                        return Err(self.unexpected(at));
                    }
                    self.prev = anchor;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' => {
                    if self.prev.is_none() || self.pending_bond.is_some() {
                        return Err(self.unexpected(at));
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    self.pending_bond = Some((at, order));
                    self.pos += 1;
                }
                b'.' => {
                    if self.prev.is_none() || self.pending_bond.is_some() {
                        return Err(self.unexpected(at));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                b'[' => self.bracket_atom()?,
                _ => self.organic_atom()?,
            }
        }
        if let Some((at, _)) = self.pending_bond {
            return Err(self.unexpected(at));
        }
        if let Some(&(at, _)) = self.branches.first() {
            return Err(SmilesError::UnbalancedParenthesis { index: at });
        }
        if let Some((&label, &(at, _, _))) = self.rings.iter().min_by_key(|(_, v)| v.0) {
            return Err(SmilesError::UnmatchedRingClosure { index: at, label });
        }
        if self.graph.atoms.is_empty() {
            return Err(SmilesError::EmptyInput);
        }
        Ok(())
    }

    fn add_atom(&mut self, e: Element, aromatic: bool) {
        let idx = self.graph.atoms.len();
        self.graph.atoms.push(e);
        self.graph.aromatic.push(aromatic);
        if let Some(prev) = self.prev {
            let order = self
                .pending_bond
                .take()
                .map(|(_, o)| o)
                .unwrap_or_else(|| self.implicit_order(prev, idx));
            self.graph.bonds.push(Bond {
                a: prev,
                b: idx,
                order,
            });
        }
        self.pending_bond = None;
        self.prev = Some(idx);
    }

    fn implicit_order(&self, a: usize, b: usize) -> BondOrder {
        if self.graph.aromatic[a] && self.graph.aromatic[b] {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn organic_atom(&mut self) -> Result<(), SmilesError> {
        let at = self.pos;
        let c = self.src[at];
        let next = self.src.get(at + 1).copied();
        let (e, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => (Element::Cl, false, 2),
            (b'B', Some(b'r')) => (Element::Br, false, 2),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b's', _) => (Element::S, true, 1),
            (c, _) if c.is_ascii_alphabetic() || c == b'*' => {
                let mut end = at + 1;
                if c.is_ascii_uppercase() {
                    while end < self.src.len() && self.src[end].is_ascii_lowercase() {
                        end += 1;
                        if end - at == 2 {
                            break;
                        }
                    }
                }
                return Err(SmilesError::UnknownElement {
                    index: at,
                    symbol: String::from_utf8_lossy(&self.src[at..end]).into_owned(),
                });
            }
            _ => return Err(self.unexpected(at)),
        };
        self.pos += len;
        self.add_atom(e, aromatic);
        Ok(())
    }

    fn bracket_atom(&mut self) -> Result<(), SmilesError> {
        let open = self.pos;
        let close = self.src[open..]
            .iter()
            .position(|&b| b == b']')
            .map(|o| open + o)
            .ok_or_else(|| self.unexpected(open))?;
        let mut i = open + 1;
        let body = &self.src[..close];
        if i >= close {
            return Err(self.unexpected(i));
        }
        if body[i].is_ascii_digit() {
            // isotopes are outside the subset
            return Err(self.unexpected(i));
        }
        let sym_start = i;
        let (e, aromatic) = if body[i].is_ascii_lowercase() {
            let e = match body[i] {
                b'c' => Element::C,
                b'n' => Element::N,
                b'o' => Element::O,
                b's' => Element::S,
                _ => {
                    return Err(SmilesError::UnknownElement {
                        index: i,
                        symbol: (body[i] as char).to_string(),
                    })
                }
            };
            i += 1;
            (e, true)
        } else if body[i].is_ascii_uppercase() {
            let mut end = i + 1;
            if end < close && body[end].is_ascii_lowercase() {
                end += 1;
            }
            let sym = std::str::from_utf8(&body[i..end]).expect("ascii");
            let e = Element::from_symbol(sym).ok_or_else(|| SmilesError::UnknownElement {
                index: sym_start,
                symbol: sym.to_string(),
            })?;
            i = end;
            (e, false)
        } else {
            return Err(self.unexpected(i));
        };
        // optional H count
        if i < close && body[i] == b'H' {
            i += 1;
            while i < close && body[i].is_ascii_digit() {
                i += 1;
            }
        }
        // optional charge
        if i < close && (body[i] == b'+' || body[i] == b'-') {
            let sign = body[i];
            i += 1;
            if i < close && body[i].is_ascii_digit() {
                while i < close && body[i].is_ascii_digit() {
                    i += 1;
                }
            } else {
                while i < close && body[i] == sign {
                    i += 1;
                }
            }
        }
        if i != close {
            return Err(self.unexpected(i));
        }
        self.pos = close + 1;
        self.add_atom(e, aromatic);
        Ok(())
    }

    fn ring_closure(&mut self) -> Result<(), SmilesError> {
        let at = self.pos;
        let Some(prev) = self.prev else {
            return Err(self.unexpected(at));
        };
        let label = if self.src[at] == b'%' {
            let d = self.src.get(at + 1..at + 3).ok_or_else(|| self.unexpected(at))?;
            if !d.iter().all(u8::is_ascii_digit) {
                return Err(self.unexpected(at));
            }
            self.pos += 3;
            u32::from(d[0] - b'0') * 10 + u32::from(d[1] - b'0')
        } else {
            self.pos += 1;
            u32::from(self.src[at] - b'0')
        };
        let bond = self.pending_bond.take().map(|(_, o)| o);
        match self.rings.remove(&label) {
            Some((_, other, open_bond)) => {
                if other == prev {
                    return Err(SmilesError::UnmatchedRingClosure { index: at, label });
                }
                let order = bond
                    .or(open_bond)
                    .unwrap_or_else(|| self.implicit_order(other, prev));
                self.graph.bonds.push(Bond {
                    a: other,
                    b: prev,
                    order,
                });
            }
            None => {
                self.rings.insert(label, (at, prev, bond));
            }
        }
        Ok(())
    }
}

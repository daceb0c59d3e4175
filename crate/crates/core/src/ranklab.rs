//! Pairwise ranking labels: a descriptor-driven mock provider standing in for
//! an external ranker, label quality statistics, and the gate that decides
//! whether finetuning may use the labels.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use thiserror::Error;

use crate::chemio::{parse_smiles, Element, LabeledSet, Molecule, PairRankRecord, SmilesError};

/// Default gate threshold on |τ|.
pub const GATE_THRESHOLD: f64 = 0.4;
/// Default maximum number of training pairs scored for the gate.
pub const DEFAULT_PAIR_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RankError {
    #[error("cannot parse pair SMILES '{smiles}': {source}")]
    Smiles {
        smiles: String,
        #[source]
        source: SmilesError,
    },
    #[error("no truth value for '{0}'")]
    MissingTruth(String),
    #[error("need at least 2 distinct molecules, got {0}")]
    TooFewMolecules(usize),
    #[error("flip probability must lie in [0, 1], got {0}")]
    BadFlipProb(f64),
    #[error("unknown descriptor '{0}' (known: heavy_atom_count, hetero_fraction, synthetic_logp_proxy)")]
    UnknownDescriptor(String),
}

/// Cheap molecular descriptors the mock provider ranks by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Descriptor {
    HeavyAtomCount,
    /// Non-carbon share of heavy atoms.
    HeteroFraction,
    /// Additive per-element contributions loosely shaped like a lipophilicity
    /// estimate.
    SyntheticLogpProxy,
}

impl Descriptor {
    pub const ALL: [Descriptor; 3] = [
        Descriptor::HeavyAtomCount,
        Descriptor::HeteroFraction,
        Descriptor::SyntheticLogpProxy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Descriptor::HeavyAtomCount => "heavy_atom_count",
            Descriptor::HeteroFraction => "hetero_fraction",
            Descriptor::SyntheticLogpProxy => "synthetic_logp_proxy",
        }
    }

    pub fn eval(self, mol: &Molecule) -> f64 {
        match self {
            Descriptor::HeavyAtomCount => mol.heavy_atom_count() as f64,
            Descriptor::HeteroFraction => {
                let heavy = mol.heavy_atom_count();
                if heavy == 0 {
                    0.0
                } else {
                    (heavy - mol.count(Element::C)) as f64 / heavy as f64
                }
            }
            Descriptor::SyntheticLogpProxy => mol.atoms().iter().map(|&e| logp_weight(e)).sum(),
        }
    }
}

fn logp_weight(e: Element) -> f64 {
    match e {
        Element::H => 0.0,
        Element::C => 0.5,
        Element::N => -1.0,
        Element::O => -1.0,
        Element::F => 0.4,
        Element::S => 0.6,
        Element::Cl => 0.9,
        Element::Br => 1.1,
        Element::I => 1.3,
    }
}

impl fmt::Display for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Descriptor {
    type Err = RankError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Descriptor::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| RankError::UnknownDescriptor(s.to_string()))
    }
}

/// Anything that labels SMILES pairs with the `0 if p₁ > p₂ else 1` rule.
pub trait RankProvider {
    fn rank_pairs(&mut self, pairs: &[(String, String)]) -> Result<Vec<PairRankRecord>, RankError>;
}

fn parse(smiles: &str) -> Result<Molecule, RankError> {
    parse_smiles(smiles).map_err(|source| RankError::Smiles {
        smiles: smiles.to_string(),
        source,
    })
}

/// Labels each pair by `1{d(m₁) ≤ d(m₂)}` (ties give 1) and flips each label
/// independently with probability `q`. One uniform draw is consumed per
/// pair whatever `q` is.
pub fn mock_rank_labels<R: Rng + ?Sized>(
    pairs: &[(String, String)],
    descriptor: &dyn Fn(&Molecule) -> f64,
    q: f64,
    rng: &mut R,
) -> Result<Vec<PairRankRecord>, RankError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(RankError::BadFlipProb(q));
    }
    pairs
        .iter()
        .map(|(a, b)| {
            let da = descriptor(&parse(a)?);
            let db = descriptor(&parse(b)?);
            let mut label = u8::from(da <= db);
            if rng.gen::<f64>() < q {
                label = 1 - label;
            }
            Ok(PairRankRecord::new(a.clone(), b.clone(), label))
        })
        .collect()
}

/// Mock provider over a named descriptor with its own RNG.
pub struct MockRankProvider<R> {
    pub descriptor: Descriptor,
    pub flip_prob: f64,
    rng: R,
}

impl<R: Rng> MockRankProvider<R> {
    pub fn new(descriptor: Descriptor, flip_prob: f64, rng: R) -> Result<Self, RankError> {
        if !(0.0..=1.0).contains(&flip_prob) {
            return Err(RankError::BadFlipProb(flip_prob));
        }
        Ok(Self {
            descriptor,
            flip_prob,
            rng,
        })
    }
}

impl<R: Rng> RankProvider for MockRankProvider<R> {
    fn rank_pairs(&mut self, pairs: &[(String, String)]) -> Result<Vec<PairRankRecord>, RankError> {
        let d = self.descriptor;
        mock_rank_labels(pairs, &|m| d.eval(m), self.flip_prob, &mut self.rng)
    }
}

/// Agreement of pair labels with true property values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankQuality {
    pub n_pairs: usize,
    /// Pairs whose truth values differ; the denominator of τ.
    pub n_decided: usize,
    pub accuracy: f64,
    pub tau: f64,
    pub abs_tau: f64,
}

/// Truth values keyed by SMILES.
pub fn truth_map(set: &LabeledSet) -> HashMap<String, f64> {
    set.molecules
        .iter()
        .zip(&set.values)
        .map(|(m, &v)| (smiles_of(m), v))
        .collect()
}

fn smiles_of(m: &Molecule) -> String {
    m.smiles().map(str::to_string).unwrap_or_else(|| m.key())
}

/// Scores `records` against `truth`. A record is correct when its label
/// equals the rule applied to the truth values (ties count as label 1).
/// τ = (concordant − discordant) / decided over pairs without truth ties;
/// accuracy is over all pairs. τ is 0 when no pair is decided.
pub fn pairwise_tau(
    records: &[PairRankRecord],
    truth: &HashMap<String, f64>,
) -> Result<RankQuality, RankError> {
    let look = |s: &str| {
        truth
            .get(s)
            .copied()
            .ok_or_else(|| RankError::MissingTruth(s.to_string()))
    };
    let mut correct = 0usize;
    let mut conc = 0i64;
    let mut disc = 0i64;
    for r in records {
        let (t1, t2) = (look(&r.smiles1)?, look(&r.smiles2)?);
        let want = u8::from(t1 <= t2);
        let ok = r.label == want;
        correct += usize::from(ok);
        if t1 != t2 {
            if ok {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    let decided = (conc + disc) as usize;
    let tau = if decided == 0 {
        0.0
    } else {
        (conc - disc) as f64 / decided as f64
    };
    Ok(RankQuality {
        n_pairs: records.len(),
        n_decided: decided,
        accuracy: if records.is_empty() {
            0.0
        } else {
            correct as f64 / records.len() as f64
        },
        tau,
        abs_tau: tau.abs(),
    })
}

/// True iff `abs_tau` strictly exceeds `threshold`.
pub fn gate(quality: &RankQuality, threshold: f64) -> bool {
    quality.abs_tau > threshold
}

/// Unordered pairs of distinct SMILES in `set`, each written with the
/// lexicographically smaller SMILES first and the list sorted. When there are
/// more than `cap` pairs, a uniform sample of exactly `cap` is returned.
pub fn generate_all_pairs<R: Rng + ?Sized>(
    set: &LabeledSet,
    cap: usize,
    rng: &mut R,
) -> Result<Vec<(String, String)>, RankError> {
    let uniq: Vec<String> = set
        .molecules
        .iter()
        .map(smiles_of)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n = uniq.len();
    if n < 2 {
        return Err(RankError::TooFewMolecules(n));
    }
    let total = n * (n - 1) / 2;
    let pair_at = |k: usize| {
        // Row-major enumeration of i < j.
        let mut i = 0;
        let mut rem = k;
        while rem >= n - 1 - i {
            rem -= n - 1 - i;
            i += 1;
        }
        (uniq[i].clone(), uniq[i + 1 + rem].clone())
    };
    let mut ks: Vec<usize> = if total <= cap {
        (0..total).collect()
    } else {
        index::sample(rng, total, cap).into_vec()
    };
    ks.sort_unstable();
    Ok(ks.into_iter().map(pair_at).collect())
}

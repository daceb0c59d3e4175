//! Synthetic molecules and labels for tests, demos and the benchmark suite.
//!
//! Molecules are random concatenations of small SMILES fragments, placed on
//! the deterministic helix. Properties are linear in per-element atom counts
//! plus a term in the mean pair distance, so a model has to read both the
//! atom types and the geometry.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::chemio::{parse_smiles, with_synthetic_coords, Element, LabeledSet, Molecule};
use crate::corruption::stream;

const CHAIN: &[&str] = &[
    "C", "C", "C", "CC", "N", "O", "C(=O)", "C(C)", "C(O)", "C(F)", "C(Cl)", "S", "C(N)",
    "c1ccccc1", "C1CC1", "C(Br)", "c1ccncc1",
];
const TAIL: &[&str] = &["C", "O", "N", "F", "Cl", "C#N", "C(=O)O", "Br", "I"];

/// A random SMILES string with between `min_heavy` and `max_heavy` heavy
/// atoms (the upper bound may be exceeded by one fragment's size when the
/// lower bound forces growth).
pub fn random_smiles<R: Rng + ?Sized>(rng: &mut R, min_heavy: usize, max_heavy: usize) -> String {
    let target = rng.gen_range(min_heavy..=max_heavy.max(min_heavy));
    loop {
        let mut s = String::new();
        let mut n = 0;
        while n + 1 < target {
            let frag = CHAIN[rng.gen_range(0..CHAIN.len())];
            let size = heavy_in(frag);
            if n + size >= target && n >= min_heavy.saturating_sub(1) {
                break;
            }
            s.push_str(frag);
            n += size;
        }
        let tail = TAIL[rng.gen_range(0..TAIL.len())];
        s.push_str(tail);
        n += heavy_in(tail);
        if n >= min_heavy {
            return s;
        }
    }
}

fn heavy_in(frag: &str) -> usize {
    parse_smiles(frag).map(|m| m.heavy_atom_count()).unwrap_or(0)
}

/// Parsed molecule with helix coordinates.
pub fn synth_molecule(smiles: &str) -> Molecule {
    let m = parse_smiles(smiles).expect("generator emits valid SMILES");
    with_synthetic_coords(m).expect("non-empty molecule")
}

/// `n` distinct random molecules.
pub fn random_molecules(n: usize, min_heavy: usize, max_heavy: usize, seed: u64) -> Vec<Molecule> {
    let mut rng = stream(seed, 0, 7);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = random_smiles(&mut rng, min_heavy, max_heavy);
        if seen.insert(s.clone()) {
            out.push(synth_molecule(&s));
        }
    }
    out
}

/// Mean distance over unordered atom pairs; zero for a single atom.
pub fn mean_pair_distance(mol: &Molecule) -> f64 {
    let Some(c) = mol.coords() else {
        return 0.0;
    };
    let n = c.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = (0..3).map(|k| (c[i][k] - c[j][k]).powi(2)).sum();
            sum += d2.sqrt();
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

/// `Σ_e w_e · count_e + γ · mean pair distance`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProperty {
    pub element_weights: [f64; Element::COUNT],
    pub distance_weight: f64,
}

impl LinearProperty {
    /// The fixed property used by the end-to-end benefit experiment.
    pub fn reference() -> Self {
        //                 H    C    N     O     F    S    Cl   Br   I
        let element_weights = [0.0, 0.3, -0.8, -0.6, 0.4, 0.7, 0.9, 1.1, 1.3];
        Self {
            element_weights,
            distance_weight: 0.5,
        }
    }

    /// Random weights, standard normal per element and on the distance term.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut element_weights = [0.0; Element::COUNT];
        for w in element_weights.iter_mut().skip(1) {
            *w = rng.sample(StandardNormal);
        }
        Self {
            element_weights,
            distance_weight: rng.sample(StandardNormal),
        }
    }

    pub fn eval(&self, mol: &Molecule) -> f64 {
        let counts: f64 = Element::ALL
            .iter()
            .map(|&e| self.element_weights[e.id()] * mol.count(e) as f64)
            .sum();
        counts + self.distance_weight * mean_pair_distance(mol)
    }

    pub fn label(&self, assay_id: &str, mols: Vec<Molecule>) -> LabeledSet {
        let values = mols.iter().map(|m| self.eval(m)).collect();
        LabeledSet::new(assay_id, mols, values)
    }
}

/// Names of the three auxiliary targets of [`aux_targets`].
pub const AUX_NAMES: [&str; 3] = ["homo_proxy", "lumo_proxy", "dipole_proxy"];

/// Three cheap stand-ins for quantum-chemical labels: two linear functionals
/// of counts and geometry and one nonlinear heteroatom-geometry mix.
pub fn aux_targets(mol: &Molecule) -> Vec<f64> {
    let c = |e| mol.count(e) as f64;
    let d = mean_pair_distance(mol);
    let heavy = mol.heavy_atom_count().max(1) as f64;
    let hetero = heavy - c(Element::C);
    let halogen = c(Element::F) + c(Element::Cl) + c(Element::Br) + c(Element::I);
    vec![
        0.2 * c(Element::C) - 0.5 * c(Element::N) - 0.4 * c(Element::O) + 0.3 * d,
        0.1 * c(Element::C) + 0.6 * halogen + 0.4 * c(Element::S) - 0.2 * d,
        (hetero / heavy) * d + 0.1 * halogen,
    ]
}

/// Suite shape for [`synthetic_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteSpec {
    pub n_assays: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub min_heavy: usize,
    pub max_heavy: usize,
    pub seed: u64,
}

impl Default for SuiteSpec {
    /// 22 small assays, like the low-data benchmark the protocol targets.
    fn default() -> Self {
        Self {
            n_assays: 22,
            min_size: 16,
            max_size: 40,
            min_heavy: 4,
            max_heavy: 12,
            seed: 0,
        }
    }
}

/// Assays `assay_00`, `assay_01`, … each with its own random
/// [`LinearProperty`] and molecule set.
pub fn synthetic_suite(spec: &SuiteSpec) -> Vec<LabeledSet> {
    (0..spec.n_assays)
        .map(|a| {
            let mut rng = stream(spec.seed, a as u64, 8);
            let n = rng.gen_range(spec.min_size..=spec.max_size);
            let prop = LinearProperty::random(&mut rng);
            let mols = random_molecules(n, spec.min_heavy, spec.max_heavy, rng.gen());
            prop.label(&format!("assay_{a:02}"), mols)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_smiles_parse_in_range() {
        let mut rng = stream(3, 0, 0);
        for _ in 0..500 {
            let s = random_smiles(&mut rng, 4, 12);
            let m = parse_smiles(&s).unwrap_or_else(|e| panic!("{s}: {e}"));
            assert!(m.heavy_atom_count() >= 4, "{s}");
            assert!(m.heavy_atom_count() <= 12 + 6, "{s}");
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let spec = SuiteSpec {
            n_assays: 3,
            ..SuiteSpec::default()
        };
        assert_eq!(synthetic_suite(&spec), synthetic_suite(&spec));
        assert_eq!(synthetic_suite(&spec)[2].assay_id, "assay_02");
    }

    #[test]
    fn two_atom_distance() {
        let m = Molecule::new(vec![Element::C, Element::O], Some(vec![[0.0; 3], [3.0, 4.0, 0.0]]), None)
            .unwrap();
        assert_eq!(mean_pair_distance(&m), 5.0);
    }
}

//! Stage-1 input corruption: atom masking and Gaussian noising with a noise
//! scale drawn per molecule per step.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::chemio::Molecule;
use crate::encoder::{pair_distance, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorruptionError {
    #[error("maximum noise scale must be positive, got {0}")]
    NonPositiveA(f64),
    #[error("mask ratio must lie in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("cannot mask an empty molecule")]
    EmptyMolecule,
    #[error("molecule has no coordinates")]
    MissingCoordinates,
    #[error(transparent)]
    Geometry(#[from] ModelError),
}

/// Draws σ uniformly from `[0, a)`.
pub fn sample_sigma<R: Rng + ?Sized>(rng: &mut R, a: f64) -> Result<f64, CorruptionError> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(CorruptionError::NonPositiveA(a));
    }
    Ok(rng.gen_range(0.0..a))
}

/// Number of masked atoms: `max(1, round(r·N))`, rounding half away from zero.
pub fn mask_count(n: usize, r: f64) -> usize {
    ((r * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Uniform sample without replacement of atom positions, sorted ascending.
/// Positions index atoms, never the readout token.
pub fn mask_atoms<R: Rng + ?Sized>(
    mol: &Molecule,
    r: f64,
    rng: &mut R,
) -> Result<Vec<usize>, CorruptionError> {
    if !(r > 0.0 && r < 1.0) {
        return Err(CorruptionError::BadRatio(r));
    }
    let n = mol.n_atoms();
    if n == 0 {
        return Err(CorruptionError::EmptyMolecule);
    }
    let mut idx = index::sample(rng, n, mask_count(n, r)).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Noise draws and the noisy geometry derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Noised {
    /// One scalar per atom, added to every embedding channel.
    pub eps1: Vec<f64>,
    pub eps2: Vec<[f64; 3]>,
    pub noisy_coords: Vec<[f64; 3]>,
    pub noisy_dist: Vec<f64>,
}

/// `ε₁ ~ N(0, σ²)` per atom, `ε₂ ~ N(0, σ²)` per coordinate component.
/// Draws are `σ·z` with standard normal `z`, so σ = 0 yields exact zeros.
pub fn add_noise<R: Rng + ?Sized>(
    mol: &Molecule,
    sigma: f64,
    rng: &mut R,
) -> Result<Noised, CorruptionError> {
    let coords = mol.coords().ok_or(CorruptionError::MissingCoordinates)?;
    let n = coords.len();
    let draw = |rng: &mut R| sigma * rng.sample::<f64, _>(StandardNormal);
    let eps1: Vec<f64> = (0..n).map(|_| draw(rng)).collect();
    let eps2: Vec<[f64; 3]> = (0..n).map(|_| [draw(rng), draw(rng), draw(rng)]).collect();
    let noisy_coords: Vec<[f64; 3]> = coords
        .iter()
        .zip(&eps2)
        .map(|(p, e)| [p[0] + e[0], p[1] + e[1], p[2] + e[2]])
        .collect();
    let noisy_dist = pair_distance(&noisy_coords)?;
    Ok(Noised {
        eps1,
        eps2,
        noisy_coords,
        noisy_dist,
    })
}

/// One stage-1 training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedBatch {
    pub atom_ids: Vec<usize>,
    pub mask_idx: Vec<usize>,
    /// True atom ids at `mask_idx`, in the same order.
    pub clean_atoms: Vec<usize>,
    pub sigma: f64,
    pub clean_coords: Vec<[f64; 3]>,
    pub clean_dist: Vec<f64>,
    pub noise: Noised,
}

impl CorruptedBatch {
    pub fn n_atoms(&self) -> usize {
        self.atom_ids.len()
    }
}

/// How σ is chosen for each molecule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaPolicy {
    /// `σ ~ U(0, a)` drawn per molecule per step.
    Dynamic { a: f64 },
    /// The same σ for every molecule and step.
    Fixed(f64),
}

/// Masks, draws σ, then noises, all from one RNG stream.
pub fn corrupt<R: Rng + ?Sized>(
    mol: &Molecule,
    mask_ratio: f64,
    sigma: SigmaPolicy,
    rng: &mut R,
) -> Result<CorruptedBatch, CorruptionError> {
    let coords = mol.coords().ok_or(CorruptionError::MissingCoordinates)?;
    let atom_ids = mol.atom_ids();
    let mask_idx = mask_atoms(mol, mask_ratio, rng)?;
    let clean_atoms = mask_idx.iter().map(|&i| atom_ids[i]).collect();
    let sigma = match sigma {
        SigmaPolicy::Dynamic { a } => sample_sigma(rng, a)?,
        SigmaPolicy::Fixed(s) => s,
    };
    let noise = add_noise(mol, sigma, rng)?;
    Ok(CorruptedBatch {
        atom_ids,
        mask_idx,
        clean_atoms,
        sigma,
        clean_coords: coords.to_vec(),
        clean_dist: pair_distance(coords)?,
        noise,
    })
}

/// Mixes `(seed, step, slot)` into an independent stream seed (SplitMix64
/// finalizer applied after each word).
pub fn derive_seed(seed: u64, step: u64, slot: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ step) ^ slot)
}

pub fn stream(seed: u64, step: u64, slot: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, step, slot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemio::{parse_smiles, with_synthetic_coords};

    #[test]
    fn mask_count_rule() {
        assert_eq!(mask_count(10, 0.15), 2);
        assert_eq!(mask_count(1, 0.15), 1);
        assert_eq!(mask_count(3, 0.15), 1);
        assert_eq!(mask_count(20, 0.15), 3);
    }

    #[test]
    fn zero_sigma_is_exact() {
        let mol = with_synthetic_coords(parse_smiles("CCO").unwrap()).unwrap();
        let mut rng = stream(1, 0, 0);
        let nz = add_noise(&mol, 0.0, &mut rng).unwrap();
        assert_eq!(nz.noisy_coords, mol.coords().unwrap());
        assert_eq!(nz.noisy_dist, pair_distance(mol.coords().unwrap()).unwrap());
        assert!(nz.eps1.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn missing_coordinates() {
        let mol = parse_smiles("CC").unwrap();
        let mut rng = stream(0, 0, 0);
        assert_eq!(
            add_noise(&mol, 1.0, &mut rng),
            Err(CorruptionError::MissingCoordinates)
        );
    }

    #[test]
    fn bad_scale() {
        let mut rng = stream(0, 0, 0);
        assert_eq!(
            sample_sigma(&mut rng, 0.0),
            Err(CorruptionError::NonPositiveA(0.0))
        );
    }

    #[test]
    fn streams_differ_by_slot() {
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 3));
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
    }
}

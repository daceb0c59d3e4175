//! Deterministic stand-in geometry for molecules that only have a SMILES.
//!
//! Atoms are placed on a helix with a 1.5 Å axial pitch per full turn; the
//! radius, angular step and phase come from a SHA-256 digest of the molecule
//! key, so the layout is identical across runs and platforms.

use sha2::{Digest, Sha256};

use super::{Molecule, MoleculeError};

pub const HELIX_PITCH: f64 = 1.5;

fn unit(bytes: &[u8]) -> f64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[..8]);
    (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64
}

/// Helix coordinates for `n` atoms keyed by `key`.
pub fn helix_coords(key: &str, n: usize) -> Vec<[f64; 3]> {
    let digest = Sha256::digest(key.as_bytes());
    let radius = 1.2 + 0.6 * unit(&digest[0..8]);
    let step = (95.0 + 30.0 * unit(&digest[8..16])).to_radians();
    let phase = std::f64::consts::TAU * unit(&digest[16..24]);
    let rise = HELIX_PITCH * step / std::f64::consts::TAU;
    (0..n)
        .map(|i| {
            let t = phase + step * i as f64;
            [radius * t.cos(), radius * t.sin(), rise * i as f64]
        })
        .collect()
}

/// Returns `mol` unchanged if it has coordinates, else with helix coordinates.
pub fn with_synthetic_coords(mol: Molecule) -> Result<Molecule, MoleculeError> {
    if mol.coords().is_some() {
        return Ok(mol);
    }
    let coords = helix_coords(&mol.key(), mol.n_atoms());
    mol.with_coords(coords)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_non_degenerate() {
        let a = helix_coords("CCO", 5);
        assert_eq!(a, helix_coords("CCO", 5));
        assert_ne!(a, helix_coords("CCN", 5));
        for i in 0..5 {
            for j in 0..i {
                let d: f64 = (0..3).map(|k| (a[i][k] - a[j][k]).powi(2)).sum::<f64>().sqrt();
                assert!(d > 0.5, "atoms {i},{j} too close: {d}");
            }
        }
    }
}

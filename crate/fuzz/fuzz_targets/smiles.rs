#![no_main]

use libfuzzer_sys::fuzz_target;
use molevers::chemio::{parse_smiles, parse_smiles_graph};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = parse_smiles(s) {
        let g = parse_smiles_graph(s).expect("graph parse agrees with molecule parse");
        assert_eq!(g.atoms.len(), m.n_atoms());
    }
});

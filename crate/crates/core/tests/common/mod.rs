//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use std::path::Path;

use diffcore::{Real, Tensor, Var};
use molevers::chemio::{read_xyz, Element, Molecule};
use molevers::corruption::stream;
use molevers::encoder::{init_params, EncoderConfig, ParamStore, Session};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// O(n²) Kendall τ-b by direct pair classification.
pub fn brute_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut conc, mut disc, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 && dy == 0.0 {
                tie_x += 1;
                tie_y += 1;
            } else if dx == 0.0 {
                tie_x += 1;
            } else if dy == 0.0 {
                tie_y += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = (((n0 - tie_x) * (n0 - tie_y)) as f64).sqrt();
    (denom > 0.0).then(|| (conc - disc) as f64 / denom)
}

/// The RDKit heavy-atom conformers, sorted by file name.
pub fn conformers() -> Vec<Molecule> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/conformers");
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .expect("fixture dir")
        .map(|e| e.expect("entry").path())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| read_xyz(&std::fs::read_to_string(p).expect("read")).expect("valid xyz"))
        .collect()
}

/// One encoder layer, width 4: big enough to exercise every code path,
/// small enough for exhaustive finite differences.
pub fn tiny_cfg() -> EncoderConfig {
    EncoderConfig {
        n_layers: 1,
        embed_dim: 4,
        ffn_dim: 8,
        n_heads: 2,
        vocab_size: Element::COUNT,
        n_dist_kernels: 3,
        max_atoms: 16,
        n_aux_targets: 2,
    }
}

/// Seeded init plus N(0, scale²) on every entry, so zero-initialized heads
/// pass gradient back into the encoders.
pub fn perturbed_params<T: Real>(cfg: &EncoderConfig, seed: u64, scale: f64) -> ParamStore<T> {
    let mut p = init_params::<T>(cfg, seed);
    let mut rng = stream(seed, 0, 99);
    for (_, t) in p.iter_mut() {
        for v in t.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = *v + T::lit(scale * z);
        }
    }
    p
}

/// Random heavy-atom molecule with `n` atoms spread over a 4 Å box and at
/// least 0.8 Å between atoms.
pub fn random_molecule(rng: &mut ChaCha8Rng, n: usize) -> Molecule {
    let heavy = &Element::ALL[1..];
    let atoms: Vec<Element> = (0..n).map(|_| heavy[rng.gen_range(0..heavy.len())]).collect();
    let mut coords: Vec<[f64; 3]> = Vec::with_capacity(n);
    while coords.len() < n {
        let p = [
            rng.gen_range(0.0..4.0),
            rng.gen_range(0.0..4.0),
            rng.gen_range(0.0..4.0),
        ];
        let far = coords
            .iter()
            .all(|q| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>() > 0.64);
        if far {
            coords.push(p);
        }
    }
    Molecule::new(atoms, Some(coords), None).expect("valid molecule")
}

/// Random proper rotation (unit quaternion) and a translation in ±5 Å.
pub fn rigid_transform(rng: &mut ChaCha8Rng) -> ([[f64; 3]; 3], [f64; 3]) {
    let mut q: [f64; 4] = [0.0; 4];
    for v in &mut q {
        *v = rng.sample(StandardNormal);
    }
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let r = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    let t = [0, 1, 2].map(|_| rng.gen_range(-5.0..5.0));
    (r, t)
}

pub fn apply(r: &[[f64; 3]; 3], t: &[f64; 3], p: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| (0..3).map(|k| r[i][k] * p[k]).sum::<f64>() + t[i])
}

/// Norm-wise relative error between reverse-mode gradients and central
/// differences (step 1e-5) on `samples` random parameter entries among
/// those that receive a gradient.
pub fn composite_check(
    params: &ParamStore<f64>,
    build: &dyn Fn(&mut Session<'_, f64>) -> Var,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    const H: f64 = 1e-5;
    let grads = {
        let mut s = Session::train(params);
        let loss = build(&mut s);
        let g = s.g.backward(loss).expect("scalar loss");
        s.param_grads(&g)
    };
    let names: Vec<&String> = grads.keys().collect();
    let eval = |p: &ParamStore<f64>| -> f64 {
        let mut s = Session::eval(p);
        let loss = build(&mut s);
        s.value(loss).item()
    };
    let mut work = params.clone();
    let mut analytic = Vec::with_capacity(samples);
    let mut numeric = Vec::with_capacity(samples);
    for _ in 0..samples {
        let name = names[rng.gen_range(0..names.len())];
        let g: &Tensor<f64> = &grads[name];
        let j = rng.gen_range(0..g.numel());
        let x0 = params.get(name).expect("param").data()[j];
        work.get_mut(name).expect("param").data_mut()[j] = x0 + H;
        let fp = eval(&work);
        work.get_mut(name).expect("param").data_mut()[j] = x0 - H;
        let fm = eval(&work);
        work.get_mut(name).expect("param").data_mut()[j] = x0;
        analytic.push(g.data()[j]);
        numeric.push((fp - fm) / (2.0 * H));
    }
    diffcore::max_relative_error(&analytic, &numeric, 1e-8)
}

//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! `cargo test -p molevers --test acceptance --release` runs all ten;
//! trailing numbers (`-- 3 7`) select a subset. Exits non-zero when any
//! selected criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use diffcore::Var;
use molevers::chemio::{load_pair_csv, serialize_pair_csv, LabeledSet, Molecule};
use molevers::corruption::{
    add_noise, corrupt, mask_atoms, mask_count, sample_sigma, stream,
};
use molevers::encoder::{
    branching_forward, encode_primary, init_params, map_head, pair_distance, BranchInputs,
    EncoderConfig, ParamStore, Session, is_denoising_branch,
};
use molevers::evalbench::*;
use molevers::ranklab::{
    gate, mock_rank_labels, pairwise_tau, truth_map, RankQuality, GATE_THRESHOLD,
};
use molevers::synth::{aux_targets, random_molecules, synthetic_suite, LinearProperty, SuiteSpec};
use molevers::training::*;
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "gradient suite", c1_gradients),
        (2, "decoupling and flow", c2_decoupling),
        (3, "geometry", c3_geometry),
        (4, "corruption statistics", c4_corruption),
        (5, "stage-1 smoke training", c5_stage1_smoke),
        (6, "Bayes-denoiser oracle", c6_bayes),
        (7, "metrics oracle", c7_metrics),
        (8, "ranking protocol", c8_ranking),
        (9, "two-stage benefit", c9_two_stage),
        (10, "protocol fidelity", c10_protocol),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!o.pass);
        println!(
            "criterion {id:>2} {:<24} {} ({:.1}s) {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn c1_gradients() -> Outcome {
    const CASES: usize = 50;
    const TOL: f64 = 1e-4;
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    for r in diffcore::gradsuite::run(1, CASES).expect("primitive suite") {
        if r.max_rel_error > worst {
            worst = r.max_rel_error;
            worst_name = r.name.to_string();
        }
    }
    let n_prims = diffcore::gradsuite::primitive_names().len();

    let cfg = tiny_cfg();
    let tc = TrainConfig {
        mask_ratio: 0.3,
        max_sigma: 2.0,
        ..TrainConfig::default()
    };
    let coupled = TrainConfig {
        branching: false,
        ..tc.clone()
    };
    type Builder = fn(&EncoderConfig, &TrainConfig, &TrainConfig, &[Molecule], &mut rand_chacha::ChaCha8Rng) -> Box<dyn Fn(&mut Session<'_, f64>) -> Var>;
    let composites: [(&str, Builder); 5] = [
        ("stage1 branching loss", |cfg, tc, _, m, rng| {
            let cb = corrupt(&m[0], tc.mask_ratio, tc.sigma_policy(), rng).unwrap();
            let (cfg, tc) = (cfg.clone(), tc.clone());
            Box::new(move |s| stage1_loss(s, &cfg, &tc, &cb, cb.mask_idx.len(), 1).unwrap().0)
        }),
        ("stage1 coupled loss", |cfg, _, tc, m, rng| {
            let cb = corrupt(&m[0], tc.mask_ratio, tc.sigma_policy(), rng).unwrap();
            let (cfg, tc) = (cfg.clone(), tc.clone());
            Box::new(move |s| stage1_loss(s, &cfg, &tc, &cb, cb.mask_idx.len(), 1).unwrap().0)
        }),
        ("stage2 auxiliary head", |cfg, _, _, m, rng| {
            let ids = m[0].atom_ids();
            let d = pair_distance(m[0].coords().unwrap()).unwrap();
            let z: Vec<f64> = (0..cfg.n_aux_targets).map(|_| rng.sample(StandardNormal)).collect();
            let cfg = cfg.clone();
            Box::new(move |s| stage2_loss(s, &cfg, &ids, &d, &z, 1).unwrap())
        }),
        ("finetune regression", |cfg, _, _, m, rng| {
            let ids = m[0].atom_ids();
            let d = pair_distance(m[0].coords().unwrap()).unwrap();
            let z: f64 = rng.sample(StandardNormal);
            let cfg = cfg.clone();
            Box::new(move |s| finetune_loss(s, &cfg, &ids, &d, z, 1).unwrap())
        }),
        ("pair ranking BCE", |cfg, _, _, m, rng| {
            let a = (m[0].atom_ids(), pair_distance(m[0].coords().unwrap()).unwrap());
            let b = (m[1].atom_ids(), pair_distance(m[1].coords().unwrap()).unwrap());
            let label = rng.gen_range(0..2u8);
            let cfg = cfg.clone();
            Box::new(move |s| pair_loss(s, &cfg, (&a.0, &a.1), (&b.0, &b.1), label, 1.0).unwrap())
        }),
    ];
    let mut comp_worst = BTreeMap::new();
    for (k, (name, build)) in composites.iter().enumerate() {
        let mut w = 0.0f64;
        for case in 0..CASES {
            let mut rng = stream(11, k as u64, case as u64);
            let mols = [
                random_molecule(&mut rng, 2 + case % 4),
                random_molecule(&mut rng, 2 + (case + 1) % 4),
            ];
            let params: ParamStore<f64> = perturbed_params(&cfg, 1000 + case as u64, 0.3);
            let f = build(&cfg, &tc, &coupled, &mols, &mut rng);
            w = w.max(composite_check(&params, &*f, 24, &mut rng));
        }
        comp_worst.insert(*name, w);
    }
    let comp_max = comp_worst.values().copied().fold(0.0, f64::max);
    let elapsed = t0.elapsed();
    outcome(
        worst < TOL && comp_max < TOL && elapsed < Duration::from_secs(120),
        format!(
            "{n_prims} primitives x {CASES} cases, worst {worst:.2e} ({worst_name}); \
             {} composites x {CASES} cases, worst {comp_max:.2e}; {:.1}s",
            comp_worst.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn branch_inputs_for(mol: &Molecule, rng: &mut rand_chacha::ChaCha8Rng) -> (Vec<usize>, Vec<usize>, Vec<f64>, molevers::corruption::Noised, f64) {
    let masked = mask_atoms(mol, 0.15, rng).unwrap();
    let sigma = sample_sigma(rng, 10.0).unwrap();
    let noise = add_noise(mol, sigma, rng).unwrap();
    let dist = pair_distance(mol.coords().unwrap()).unwrap();
    (mol.atom_ids(), masked, dist, noise, sigma)
}

fn c2_decoupling() -> Outcome {
    let cfg = EncoderConfig::desk();
    let mut identical = 0;
    let mut flows = 0;
    let mut blocked = 0;
    for seed in 0..10u64 {
        let mut rng = stream(22, seed, 0);
        let mol = random_molecule(&mut rng, 4 + seed as usize % 5);
        let (ids, masked, dist, noise, sigma) = branch_inputs_for(&mol, &mut rng);
        let inp = BranchInputs {
            atom_ids: &ids,
            masked: &masked,
            clean_dist: &dist,
            eps1: &noise.eps1,
            noisy_coords: &noise.noisy_coords,
            noisy_dist: &noise.noisy_dist,
            sigma,
        };
        let full: ParamStore<f32> = perturbed_params(&cfg, seed, 0.05);
        let primary_only = full.filtered(|k| !is_denoising_branch(k));

        let mut s = Session::eval(&full);
        let out = branching_forward(&mut s, &cfg, &inp, true).unwrap();
        let with_branch = (s.value(out.features).clone(), s.value(out.map_logits).clone());
        let mut s2 = Session::eval(&primary_only);
        let f = encode_primary(&mut s2, &cfg, &ids, &masked, &dist).unwrap();
        let l = map_head(&mut s2, f).unwrap();
        let bits = |t: &diffcore::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        if bits(&with_branch.0) == bits(s2.value(f)) && bits(&with_branch.1) == bits(s2.value(l)) {
            identical += 1;
        }

        // Denoising loss alone, with and without the aggregator path.
        for use_agg in [true, false] {
            let mut s = Session::train(&full);
            let out = branching_forward(&mut s, &cfg, &inp, use_agg).unwrap();
            let n = ids.len();
            let eps = s.constant_f64(&[n, 1], &noise.eps1).unwrap();
            let dx = s.g.sub(out.denoise.eps_hat, eps).unwrap();
            let dx = s.g.square(dx);
            let lx = s.g.mean(dx);
            let flat: Vec<f64> = mol.coords().unwrap().iter().flatten().copied().collect();
            let p = s.constant_f64(&[n, 3], &flat).unwrap();
            let dp = s.g.sub(out.denoise.p_hat, p).unwrap();
            let dp = s.g.smooth_l1(dp);
            let lp = s.g.mean(dp);
            let d = s.constant_f64(&[n, n], &dist).unwrap();
            let dd = s.g.sub(out.denoise.d_hat, d).unwrap();
            let dd = s.g.smooth_l1(dd);
            let ld = s.g.mean(dd);
            let loss = s.g.add(lx, lp).unwrap();
            let loss = s.g.add(loss, ld).unwrap();
            let grads = s.g.backward(loss).unwrap();
            let pg = s.param_grads(&grads);
            let nonzero = pg.iter().any(|(k, g)| {
                k.starts_with("primary.") && k != "primary.embed" && g.data().iter().any(|v| *v != 0.0)
            });
            match (use_agg, nonzero) {
                (true, true) => flows += 1,
                (false, false) => blocked += 1,
                _ => {}
            }
        }
    }
    outcome(
        identical == 10 && flows == 10 && blocked == 10,
        format!(
            "bit-identical primary outputs {identical}/10; denoise grad reaches primary stack via PMA {flows}/10; \
             none without PMA {blocked}/10"
        ),
    )
}

fn c3_geometry() -> Outcome {
    let cfg = EncoderConfig::desk();
    let mut dist_err = 0.0f64;
    let mut eq_err = 0.0f64;
    let mut sym = true;
    let mut min_update = f64::INFINITY;
    let params: ParamStore<f32> = perturbed_params(&cfg, 3, 0.05);
    for k in 0..20u64 {
        let mut rng = stream(33, k, 0);
        let mol = random_molecule(&mut rng, 3 + k as usize % 6);
        let (r, t) = rigid_transform(&mut rng);
        let coords = mol.coords().unwrap();
        let moved: Vec<[f64; 3]> = coords.iter().map(|p| apply(&r, &t, p)).collect();
        let d0 = pair_distance(coords).unwrap();
        let d1 = pair_distance(&moved).unwrap();
        dist_err = d0.iter().zip(&d1).map(|(a, b)| (a - b).abs()).fold(dist_err, f64::max);

        let (ids, masked, dist, noise, _) = branch_inputs_for(&mol, &mut rng);
        let sigma = 0.8;
        let noisy_moved: Vec<[f64; 3]> = noise.noisy_coords.iter().map(|p| apply(&r, &t, p)).collect();
        let noisy_moved_dist = pair_distance(&noisy_moved).unwrap();
        let run = |nc: &[[f64; 3]], nd: &[f64]| {
            let inp = BranchInputs {
                atom_ids: &ids,
                masked: &masked,
                clean_dist: &dist,
                eps1: &noise.eps1,
                noisy_coords: nc,
                noisy_dist: nd,
                sigma,
            };
            let mut s = Session::eval(&params);
            let out = branching_forward(&mut s, &cfg, &inp, true).unwrap();
            (s.value(out.denoise.p_hat).clone(), s.value(out.denoise.d_hat).clone())
        };
        let (p0, dh) = run(&noise.noisy_coords, &noise.noisy_dist);
        let (p1, _) = run(&noisy_moved, &noisy_moved_dist);
        let n = ids.len();
        for i in 0..n {
            let a = [0, 1, 2].map(|c| f64::from(p0.data()[i * 3 + c]));
            let want = apply(&r, &t, &a);
            let upd: f64 = (0..3).map(|c| (a[c] - noise.noisy_coords[i][c]).abs()).sum();
            min_update = min_update.min(upd);
            for c in 0..3 {
                eq_err = eq_err.max((f64::from(p1.data()[i * 3 + c]) - want[c]).abs());
            }
            for j in 0..n {
                sym &= dh.data()[i * n + j].to_bits() == dh.data()[j * n + i].to_bits();
            }
        }
    }
    outcome(
        dist_err <= 1e-9 && eq_err <= 1e-4 && sym && min_update > 0.0,
        format!(
            "20 rigid transforms: distance drift {dist_err:.1e}, P-hat equivariance error {eq_err:.1e} (f32), \
             D-hat symmetric {sym}, smallest nonzero update {min_update:.1e}"
        ),
    )
}

fn c4_corruption() -> Outcome {
    const DRAWS: usize = 100_000;
    let mut rng = stream(44, 0, 0);
    let a = 10.0;
    let sig: Vec<f64> = (0..DRAWS).map(|_| sample_sigma(&mut rng, a).unwrap()).collect();
    let mean = sig.iter().sum::<f64>() / DRAWS as f64;
    let in_range = sig.iter().all(|&s| (0.0..a).contains(&s));
    let frac_u = sig.iter().filter(|&&s| s < 1.0).count() as f64 / DRAWS as f64;
    let frac_n = (0..DRAWS)
        .filter(|_| (a * rng.sample::<f64, _>(StandardNormal)).abs() < 1.0)
        .count() as f64
        / DRAWS as f64;
    let moments = (mean - a / 2.0).abs() <= 0.01 * a / 2.0 && in_range;
    let fig = (frac_u - 0.10).abs() <= 0.01 && (frac_n - 0.0797).abs() <= 0.01 && frac_u > frac_n;

    let counts_ok = mask_count(10, 0.15) == 2 && mask_count(1, 0.15) == 1 && mask_count(20, 0.15) == 3;
    let mol = random_molecule(&mut rng, 10);
    let mut hits = [0usize; 10];
    for trial in 0..10_000u64 {
        let mut r = stream(45, trial, 0);
        for i in mask_atoms(&mol, 0.15, &mut r).unwrap() {
            hits[i] += 1;
        }
    }
    let freq_dev = hits
        .iter()
        .map(|&h| (h as f64 / 10_000.0 - 0.2).abs())
        .fold(0.0, f64::max);

    let mut eps = Vec::with_capacity(DRAWS);
    let big = random_molecule(&mut rng, 10);
    while eps.len() < DRAWS {
        let nz = add_noise(&big, 2.0, &mut rng).unwrap();
        eps.extend(nz.eps2.iter().flatten().copied());
    }
    eps.truncate(DRAWS);
    let sd = (eps.iter().map(|e| e * e).sum::<f64>() / DRAWS as f64).sqrt();
    outcome(
        moments && fig && counts_ok && freq_dev <= 0.02 && (sd - 2.0).abs() <= 0.02,
        format!(
            "mean sigma {mean:.4} (want 5 +/- 0.05); P(sigma<1) uniform {frac_u:.4} vs |N(0,10)| {frac_n:.4}; \
             mask counts ok {counts_ok}; max position freq deviation {freq_dev:.4}; eps2 sd at sigma=2 {sd:.4}"
        ),
    )
}

fn c5_stage1_smoke() -> Outcome {
    let t0 = Instant::now();
    let mols = conformers();
    let cfg = EncoderConfig::desk();
    let tc = TrainConfig {
        lr: 1e-3,
        steps: 300,
        max_sigma: 1.0,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut st: TrainState<f32> = TrainState::new(cfg.clone(), 0).unwrap();
    train_stage1(&mut st, &tc, &mols, |_, _, _| {}).unwrap();
    let acc = map_accuracy(&st.params, &cfg, &mols, tc.mask_ratio, 20, 99).unwrap();
    let (pred, noisy) = denoise_eval(&st.params, &cfg, &tc, &mols, 1.0, 100, 7).unwrap();
    let ratio = pred / noisy;
    let elapsed = t0.elapsed();
    outcome(
        acc >= 0.95 && ratio <= 0.5 && elapsed < Duration::from_secs(600),
        format!(
            "masked-atom accuracy {acc:.3} (>= 0.95: {}); coordinate error ratio {ratio:.3} \
             (mean |P-hat - P| {pred:.3} vs |P-tilde - P| {noisy:.3}, <= 0.5: {}); {:.0}s",
            acc >= 0.95,
            ratio <= 0.5,
            elapsed.as_secs_f64()
        ),
    )
}

fn c6_bayes() -> Outcome {
    let pts = [vec![-1.0], vec![1.0]];
    let single = bayes_denoiser(&[2.7], &[vec![0.3]], 0.4) == vec![0.3];
    let midpoint = bayes_denoiser(&[0.0], &pts, 1.0)[0] == 0.0;
    // Independent closed form: weights exp(-(0.5 -+ 1)^2 / 2).
    let (wp, wm) = ((-0.125f64).exp(), (-1.125f64).exp());
    let closed = (wp - wm) / (wp + wm);
    let got = bayes_denoiser(&[0.5], &pts, 1.0)[0];
    let value = (got - closed).abs() < 1e-12 && (got - 0.4621).abs() < 5e-5;

    let probe: Vec<f64> = (0..=16).map(|i| -2.0 + 0.25 * i as f64).collect();
    let run = train_toy_denoiser(&[-1.0, 1.0], 1.0, &probe, &[0, 50, 200, 800, 2000], 512, 5e-3, 0);
    let monotone = run.deviations.windows(2).all(|w| w[1] < w[0]);
    outcome(
        single && midpoint && value && monotone,
        format!(
            "single point {single}, midpoint {midpoint}, m=0.5 -> {got:.6} (closed form {closed:.6}); \
             toy deviation at steps {:?}: {}",
            run.checkpoints,
            run.deviations.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>().join(" > ")
        ),
    )
}

fn c7_metrics() -> Outcome {
    let mut rng = stream(77, 0, 0);
    let mut agree = 0;
    for k in 0..200 {
        let n = rng.gen_range(2..=50);
        let tied = k % 2 == 0;
        let mut draw = || -> f64 {
            if tied {
                f64::from(rng.gen_range(0..5))
            } else {
                rng.sample(StandardNormal)
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw()).collect();
        let y: Vec<f64> = (0..n).map(|_| draw()).collect();
        let fast = kendall_tau_b(&x, &y).ok();
        if fast.map(f64::to_bits) == brute_tau_b(&x, &y).map(f64::to_bits) {
            agree += 1;
        }
    }
    let t: Vec<f64> = (0..30).map(|_| rng.sample(StandardNormal)).collect();
    let m = t.iter().sum::<f64>() / t.len() as f64;
    let r2_perfect = (r2(&t, &t).unwrap() - 1.0).abs() <= 1e-12;
    let r2_mean = r2(&vec![m; t.len()], &t).unwrap().abs() <= 1e-12;
    let mae_cases = mae(&[1.0, 3.0], &[2.0, 2.0]).unwrap() == 1.0
        && mae(&t, &t).unwrap() == 0.0
        && mae(&[0.5, -1.0, 4.0], &[1.0, 1.0, 1.0]).unwrap() == 5.5 / 3.0;
    outcome(
        agree == 200 && r2_perfect && r2_mean && mae_cases,
        format!(
            "tau-b equals brute force on {agree}/200 vectors; R2 perfect {r2_perfect}, mean predictor {r2_mean}; \
             MAE hand cases {mae_cases}"
        ),
    )
}

fn c8_ranking() -> Outcome {
    let mols = random_molecules(40, 3, 10, 88);
    let values: Vec<f64> = (0..mols.len()).map(|i| (i as f64 * 0.37).sin() * 10.0 + i as f64 * 1e-3).collect();
    let set = LabeledSet::new("rank", mols, values);
    let truth = truth_map(&set);
    let lookup = |m: &Molecule| truth[m.smiles().unwrap()];
    let mut rng = stream(88, 0, 0);
    let pairs = molevers::ranklab::generate_all_pairs(&set, 10_000, &mut rng).unwrap();

    let q0 = mock_rank_labels(&pairs, &lookup, 0.0, &mut rng).unwrap();
    let semantics = q0
        .iter()
        .all(|r| (r.label == 0) == (truth[&r.smiles1] > truth[&r.smiles2]));
    let round_trip = load_pair_csv(&serialize_pair_csv(&q0)).unwrap() == q0;
    let qual0 = pairwise_tau(&q0, &truth).unwrap();

    let q1 = mock_rank_labels(&pairs, &lookup, 1.0, &mut rng).unwrap();
    let qual1 = pairwise_tau(&q1, &truth).unwrap();
    let inverted = qual1.accuracy == 0.0 && qual1.abs_tau == 1.0;

    let at = |t: f64| RankQuality {
        n_pairs: 10,
        n_decided: 10,
        accuracy: (t + 1.0) / 2.0,
        tau: t,
        abs_tau: t.abs(),
    };
    let strict = !gate(&at(0.40), GATE_THRESHOLD) && gate(&at(0.41), GATE_THRESHOLD) && !gate(&at(-0.40), GATE_THRESHOLD);
    outcome(
        semantics && round_trip && qual0.accuracy == 1.0 && inverted && strict,
        format!(
            "{} pairs: q=0 label 0 iff p1 > p2 {semantics}, CSV round trip {round_trip}, accuracy {}; \
             q=1 accuracy {} abs_tau {}; gate 0.40 closed and 0.41 open {strict}",
            pairs.len(),
            qual0.accuracy,
            qual1.accuracy,
            qual1.abs_tau
        ),
    )
}

fn median(v: &[f64]) -> f64 {
    BoxStats::from_values(v).unwrap().median
}

fn c9_two_stage() -> Outcome {
    let t0 = Instant::now();
    let cfg = EncoderConfig::desk();
    let corpus = random_molecules(200, 4, 12, 1000);

    let s1 = TrainConfig {
        lr: 1e-3,
        steps: 400,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut st: TrainState<f32> = TrainState::new(cfg.clone(), 0).unwrap();
    train_stage1(&mut st, &s1, &corpus, |_, _, _| {}).unwrap();
    let stage1 = Checkpoint::from_state(&st, "stage1").without_denoising_branch();

    let aux: Vec<Vec<f64>> = corpus.iter().map(aux_targets).collect();
    let s2 = TrainConfig {
        lr: 1e-3,
        epochs: 20,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut st2: TrainState<f32> = stage1.clone().into_state();
    train_stage2(&mut st2, &s2, &corpus, &aux, |_, _, _| {}).unwrap();
    let stage12 = Checkpoint::from_state(&st2, "stage2");

    let scratch = Checkpoint {
        stage: "scratch".into(),
        step: 0,
        seed: 0,
        encoder: cfg.clone(),
        params: init_params::<f32>(&cfg, 0).filtered(|k| !is_denoising_branch(k)),
        aux_norm: None,
        target_norm: None,
    };
    let ft = TrainConfig {
        lr: 1e-3,
        epochs: 50,
        ..TrainConfig::default()
    };
    let prop = LinearProperty::reference();
    let variants = [("scratch", scratch), ("stage1", stage1), ("stage1+2", stage12)];
    let mut maes: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    for seed in 0..5u64 {
        let set = prop.label("reference", random_molecules(50, 4, 12, 2000 + seed));
        let (tr, te) = split_indices(set.len(), seed, "reference", 0);
        let (train, test) = (set.subset(&tr), set.subset(&te));
        for (k, (name, ck)) in variants.iter().enumerate() {
            let f = FinetuneFactory {
                name: name.to_string(),
                base: ck.clone(),
                train: ft.clone(),
                ranking: None,
            };
            let p = f.fit_predict(&train, &test, seed).unwrap();
            maes[k].push(mae(&p.predictions, &test.values).unwrap());
        }
    }
    let med: Vec<f64> = maes.iter().map(|m| median(m)).collect();
    let elapsed = t0.elapsed();
    outcome(
        med[2] <= med[0] && med[2] <= med[1] && elapsed < Duration::from_secs(1800),
        format!(
            "median test MAE over 5 seeds (25 train labels): scratch {:.4}, stage1 {:.4}, stage1+2 {:.4}; {:.0}s",
            med[0],
            med[1],
            med[2],
            elapsed.as_secs_f64()
        ),
    )
}

fn c10_protocol() -> Outcome {
    let suite = synthetic_suite(&SuiteSpec::default());
    let cfg = EncoderConfig {
        n_layers: 2,
        embed_dim: 32,
        ffn_dim: 64,
        n_heads: 4,
        ..EncoderConfig::desk()
    };
    let pool: Vec<Molecule> = suite.iter().flat_map(|a| a.molecules.clone()).collect();
    let mut st: TrainState<f32> = TrainState::new(cfg.clone(), 0).unwrap();
    let s1 = TrainConfig {
        lr: 1e-3,
        steps: 30,
        ..TrainConfig::default()
    };
    train_stage1(&mut st, &s1, &pool, |_, _, _| {}).unwrap();
    let factory = FinetuneFactory {
        name: "pretrained".into(),
        base: Checkpoint::from_state(&st, "stage1").without_denoising_branch(),
        train: TrainConfig {
            lr: 1e-3,
            epochs: 50,
            ..TrainConfig::default()
        },
        ranking: None,
    };
    let protocol = Protocol { n_splits: 3, seed: 0 };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut reports = Vec::new();
    for d in &dirs {
        let r = run_benchmark(&suite, &factory, &protocol).unwrap();
        emit_report(&r, d.path(), &[]).unwrap();
        reports.push(r);
    }
    let files = ["results.json", "summary.csv", "boxplot.csv"];
    let identical = files.iter().all(|f| {
        std::fs::read(dirs[0].path().join(f)).unwrap() == std::fs::read(dirs[1].path().join(f)).unwrap()
    });
    let report = &reports[0];
    let mut splits_ok = true;
    for a in &suite {
        let cells: Vec<_> = report.cells.iter().filter(|c| c.assay_id == a.assay_id).collect();
        splits_ok &= cells.len() == 3;
        for c in cells {
            splits_ok &= c.n_train == a.len().div_ceil(2) && c.n_test == a.len() / 2;
        }
    }
    // Last-epoch metrics: an independent finetune of one cell reproduces it.
    let a = &suite[0];
    let (tr, te) = split_indices(a.len(), 0, &a.assay_id, 2);
    let fitted = factory
        .fit_predict(&a.subset(&tr), &a.subset(&te), cell_seed(0, &a.assay_id, 2))
        .unwrap();
    let redo = mae(&fitted.predictions, &a.subset(&te).values).unwrap();
    let cell = report.cells.iter().find(|c| c.assay_id == a.assay_id && c.split_id == 2).unwrap();
    let last_epoch = redo == cell.mae;
    let loaded = load_report(&dirs[0].path().join("results.json")).unwrap() == *report;
    outcome(
        identical && splits_ok && last_epoch && loaded && report.cells.len() == 66,
        format!(
            "{} assays, {} cells, 3 half splits each {splits_ok}; byte-identical rerun {identical}; \
             last-epoch cell reproduced {last_epoch}; results.json round trip {loaded}; median MAE {:.4}",
            suite.len(),
            report.cells.len(),
            report.aggregates["mae"].median
        ),
    )
}

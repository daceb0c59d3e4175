use std::collections::BTreeMap;

use diffcore::{Real, Tensor, Var};
use rand::Rng;
use rayon::prelude::*;

use super::{accumulate, epoch_order, lr_schedule, TrainConfig, TrainError, TrainState};
use crate::chemio::Molecule;
use crate::corruption::{add_noise, corrupt, mask_atoms, stream, CorruptedBatch};
use crate::encoder::{
    branching_forward, coupled_forward, encode_primary, map_head, pair_distance, BranchInputs,
    EncoderConfig, ParamStore, Session,
};

/// Batch-level stage-1 losses. `total` is the sum of the per-molecule graph
/// losses; it equals `l_map + α_X·l_x + α_P·l_p + α_D·l_d` up to rounding.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stage1Losses {
    pub total: f64,
    pub l_map: f64,
    pub l_x: f64,
    pub l_p: f64,
    pub l_d: f64,
    pub map_accuracy: f64,
    pub n_masked: usize,
}

/// One molecule's pieces of the stage-1 objective: summed masked-atom
/// cross-entropy, correct argmax count, and the unweighted denoising terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stage1Parts {
    pub ce_sum: f64,
    pub correct: usize,
    pub l_x: f64,
    pub l_p: f64,
    pub l_d: f64,
}

fn scalar<T: Real>(s: &Session<'_, T>, v: Var) -> f64 {
    s.value(v).item().to_f64().unwrap_or(f64::NAN)
}

/// Builds one molecule's share of the batch loss:
/// `CE_sum / total_masked + (α_X·L_X + α_P·L_P + α_D·L_D) / batch_len`.
/// Summing this over the batch gives the batch objective, so per-molecule
/// gradients add up to the batch gradient.
pub fn stage1_loss<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    tc: &TrainConfig,
    cb: &CorruptedBatch,
    total_masked: usize,
    batch_len: usize,
) -> Result<(Var, Stage1Parts), TrainError> {
    let n = cb.n_atoms();
    let v = cfg.vocab_size;
    let inp = BranchInputs {
        atom_ids: &cb.atom_ids,
        masked: &cb.mask_idx,
        clean_dist: &cb.clean_dist,
        eps1: &cb.noise.eps1,
        noisy_coords: &cb.noise.noisy_coords,
        noisy_dist: &cb.noise.noisy_dist,
        sigma: cb.sigma,
    };
    let out = if tc.branching {
        branching_forward(s, cfg, &inp, true)?
    } else {
        coupled_forward(s, cfg, &inp)?
    };

    let rows = s.g.gather(out.map_logits, &cb.mask_idx)?;
    let lsm = s.g.log_softmax(rows)?;
    let m = cb.mask_idx.len();
    let mut onehot = vec![0.0; m * v];
    for (r, &a) in cb.clean_atoms.iter().enumerate() {
        onehot[r * v + a] = 1.0;
    }
    let onehot = s.constant_f64(&[m, v], &onehot)?;
    let picked = s.g.mul(lsm, onehot)?;
    let ll = s.g.sum(picked);
    let ce = s.g.neg(ll);
    let logits = s.value(rows);
    let correct = (0..m)
        .filter(|&r| {
            let row = &logits.data()[r * v..(r + 1) * v];
            let best = (0..v)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(std::cmp::Ordering::Equal))
                .unwrap_or(0);
            best == cb.clean_atoms[r]
        })
        .count();

    let eps = s.constant_f64(&[n, 1], &cb.noise.eps1)?;
    let dx = s.g.sub(out.denoise.eps_hat, eps)?;
    let dx = s.g.square(dx);
    let lx = s.g.mean(dx);

    let flat: Vec<f64> = cb.clean_coords.iter().flatten().copied().collect();
    let p = s.constant_f64(&[n, 3], &flat)?;
    let dp = s.g.sub(out.denoise.p_hat, p)?;
    let dp = s.g.smooth_l1(dp);
    let lp = s.g.mean(dp);

    let d = s.constant_f64(&[n, n], &cb.clean_dist)?;
    let dd = s.g.sub(out.denoise.d_hat, d)?;
    let dd = s.g.smooth_l1(dd);
    let diag: Vec<bool> = (0..n * n).map(|i| i / n == i % n).collect();
    let dd = s.g.masked_fill(dd, &diag, T::zero())?;
    let dd = s.g.sum(dd);
    let off = (n * (n - 1)).max(1);
    let ld = s.g.scale(dd, T::one() / T::lit(off as f64));

    let map_term = s.g.scale(ce, T::one() / T::lit(total_masked as f64));
    let inv_b = 1.0 / batch_len as f64;
    let wx = s.g.scale(lx, T::lit(tc.alpha_x * inv_b));
    let wp = s.g.scale(lp, T::lit(tc.alpha_p * inv_b));
    let wd = s.g.scale(ld, T::lit(tc.alpha_d * inv_b));
    let loss = s.g.add(map_term, wx)?;
    let loss = s.g.add(loss, wp)?;
    let loss = s.g.add(loss, wd)?;

    let parts = Stage1Parts {
        ce_sum: scalar(s, ce),
        correct,
        l_x: scalar(s, lx),
        l_p: scalar(s, lp),
        l_d: scalar(s, ld),
    };
    Ok((loss, parts))
}

/// Indices of the molecules in the batch for `step`: each epoch is a
/// seed-deterministic permutation cut into consecutive batches.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let per_epoch = n.div_ceil(batch_size).max(1) as u64;
    let order = epoch_order(seed, step / per_epoch, n);
    let start = (step % per_epoch) as usize * batch_size;
    order[start..(start + batch_size).min(n)].to_vec()
}

/// Corrupted instances for `step`. Each molecule's RNG stream derives from
/// `(seed, step, slot)` only.
pub fn corrupt_for_step(
    mols: &[Molecule],
    tc: &TrainConfig,
    step: u64,
) -> Result<Vec<CorruptedBatch>, TrainError> {
    batch_indices(mols.len(), tc.batch_size, tc.seed, step)
        .into_iter()
        .enumerate()
        .map(|(slot, i)| {
            let mut rng = stream(tc.seed, step, slot as u64);
            Ok(corrupt(&mols[i], tc.mask_ratio, tc.sigma_policy(), &mut rng)?)
        })
        .collect()
}

/// One optimizer step on `batch`, step `t` of `total_steps` in the
/// polynomial learning-rate decay.
pub fn stage1_step<T: Real>(
    state: &mut TrainState<T>,
    tc: &TrainConfig,
    batch: &[CorruptedBatch],
    t: u64,
    total_steps: u64,
) -> Result<Stage1Losses, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let total_masked: usize = batch.iter().map(|b| b.mask_idx.len()).sum();
    let cfg = &state.encoder;
    let params = &state.params;
    let results: Vec<Result<(f64, Stage1Parts, BTreeMap<String, Tensor<T>>), TrainError>> = batch
        .par_iter()
        .map(|cb| {
            let mut s = Session::train(params);
            let (loss, parts) = stage1_loss(&mut s, cfg, tc, cb, total_masked, batch.len())?;
            let grads = s.g.backward(loss)?;
            Ok((scalar(&s, loss), parts, s.param_grads(&grads)))
        })
        .collect();

    let mut out = Stage1Losses {
        n_masked: total_masked,
        ..Default::default()
    };
    let mut acc = BTreeMap::new();
    let mut ce = 0.0;
    let mut correct = 0;
    for (cb, r) in batch.iter().zip(results) {
        let (loss, parts, grads) = r?;
        let finite = loss.is_finite() && grads.values().all(|g| g.is_finite());
        if !finite {
            return Err(TrainError::NonFiniteLoss {
                step: t,
                sigma: Some(cb.sigma),
            });
        }
        out.total += loss;
        ce += parts.ce_sum;
        correct += parts.correct;
        out.l_x += parts.l_x;
        out.l_p += parts.l_p;
        out.l_d += parts.l_d;
        accumulate(&mut acc, grads);
    }
    let b = batch.len() as f64;
    out.l_map = ce / total_masked as f64;
    out.l_x /= b;
    out.l_p /= b;
    out.l_d /= b;
    out.map_accuracy = correct as f64 / total_masked as f64;
    let lr = lr_schedule(tc.lr, t, total_steps, tc.poly_decay_power);
    state.apply(&acc, lr);
    Ok(out)
}

/// Runs `tc.steps` stage-1 steps over `mols`, calling `on_step` after each
/// with the step index, losses and learning rate used.
pub fn train_stage1<T: Real>(
    state: &mut TrainState<T>,
    tc: &TrainConfig,
    mols: &[Molecule],
    mut on_step: impl FnMut(u64, &Stage1Losses, f64),
) -> Result<Stage1Losses, TrainError> {
    tc.validate()?;
    if mols.is_empty() {
        return Err(TrainError::EmptyData);
    }
    state.reset_optimizer();
    let total = tc.steps as u64;
    let mut last = Stage1Losses::default();
    for t in 0..total {
        let batch = corrupt_for_step(mols, tc, t)?;
        last = stage1_step(state, tc, &batch, t, total)?;
        on_step(t, &last, lr_schedule(tc.lr, t, total, tc.poly_decay_power));
    }
    Ok(last)
}

/// Masked-atom accuracy of the primary branch on fresh masks drawn from
/// `seed`, over `rounds` passes through `mols`. The primary branch sees
/// clean distances.
pub fn map_accuracy<T: Real>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    mols: &[Molecule],
    mask_ratio: f64,
    rounds: u64,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for round in 0..rounds {
        for (i, mol) in mols.iter().enumerate() {
            let coords = mol.coords().ok_or(TrainError::MissingCoordinates(i))?;
            let mut rng = stream(seed, round, i as u64);
            let masked = mask_atoms(mol, mask_ratio, &mut rng)?;
            let ids = mol.atom_ids();
            let dist = pair_distance(coords)?;
            let mut s = Session::eval(params);
            let f = encode_primary(&mut s, cfg, &ids, &masked, &dist)?;
            let logits = map_head(&mut s, f)?;
            let t = s.value(logits);
            let v = cfg.vocab_size;
            for &m in &masked {
                let row = &t.data()[m * v..(m + 1) * v];
                let best = (0..v)
                    .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(std::cmp::Ordering::Equal))
                    .unwrap_or(0);
                correct += usize::from(best == ids[m]);
                total += 1;
            }
        }
    }
    Ok(correct as f64 / total.max(1) as f64)
}

/// Mean coordinate errors over `draws` fresh corruptions with σ ~ U(0, σ_max):
/// returns `(mean ‖P̂ − P‖, mean ‖P̃ − P‖)` with Frobenius norms.
pub fn denoise_eval<T: Real>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    tc: &TrainConfig,
    mols: &[Molecule],
    sigma_max: f64,
    draws: usize,
    seed: u64,
) -> Result<(f64, f64), TrainError> {
    let mut pred_err = 0.0;
    let mut noisy_err = 0.0;
    for k in 0..draws {
        let i = k % mols.len();
        let mol = &mols[i];
        let coords = mol.coords().ok_or(TrainError::MissingCoordinates(i))?;
        let mut rng = stream(seed, k as u64, u64::MAX - 1);
        let masked = mask_atoms(mol, tc.mask_ratio, &mut rng)?;
        let sigma = rng.gen_range(0.0..=sigma_max);
        let noise = add_noise(mol, sigma, &mut rng)?;
        let ids = mol.atom_ids();
        let clean_dist = pair_distance(coords)?;
        let inp = BranchInputs {
            atom_ids: &ids,
            masked: &masked,
            clean_dist: &clean_dist,
            eps1: &noise.eps1,
            noisy_coords: &noise.noisy_coords,
            noisy_dist: &noise.noisy_dist,
            sigma,
        };
        let mut s = Session::eval(params);
        let out = if tc.branching {
            branching_forward(&mut s, cfg, &inp, true)?
        } else {
            coupled_forward(&mut s, cfg, &inp)?
        };
        let p_hat = s.value(out.denoise.p_hat);
        let mut e_pred = 0.0;
        let mut e_noisy = 0.0;
        for (a, (p, q)) in coords.iter().zip(&noise.noisy_coords).enumerate() {
            for c in 0..3 {
                let ph = p_hat.data()[a * 3 + c].to_f64().unwrap_or(f64::NAN);
                e_pred += (ph - p[c]).powi(2);
                e_noisy += (q[c] - p[c]).powi(2);
            }
        }
        pred_err += e_pred.sqrt();
        noisy_err += e_noisy.sqrt();
    }
    let n = draws.max(1) as f64;
    Ok((pred_err / n, noisy_err / n))
}

use std::collections::BTreeMap;

use diffcore::{Real, Tensor, Var};
use rayon::prelude::*;

use super::{
    accumulate, epoch_order, lr_schedule, prepare, steps_per_epoch, NormStats, Prepared,
    TrainConfig, TrainError, TrainState,
};
use crate::chemio::Molecule;
use crate::corruption::derive_seed;
use crate::encoder::{aux_head, encode_primary, EncoderConfig, ParamStore, Session};

/// One molecule's share of the stage-2 batch loss: squared error over the
/// K z-scored targets divided by `K · batch_len`. Only the primary encoder
/// and the auxiliary head enter the graph.
pub fn stage2_loss<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    ids: &[usize],
    dist: &[f64],
    z: &[f64],
    batch_len: usize,
) -> Result<Var, TrainError> {
    let f = encode_primary(s, cfg, ids, &[], dist)?;
    let y = aux_head(s, f)?;
    let t = s.constant_f64(&[1, z.len()], z)?;
    let d = s.g.sub(y, t)?;
    let d = s.g.square(d);
    let l = s.g.sum(d);
    Ok(s.g.scale(l, T::one() / T::lit((z.len() * batch_len) as f64)))
}

/// One optimizer step over the molecules `idx`; returns the batch loss.
fn step_on<T: Real>(
    state: &mut TrainState<T>,
    prep: &[Prepared],
    z: &[Vec<f64>],
    idx: &[usize],
    lr: f64,
    step: u64,
) -> Result<f64, TrainError> {
    let cfg = &state.encoder;
    let params = &state.params;
    let results: Vec<Result<(f64, BTreeMap<String, Tensor<T>>), TrainError>> = idx
        .par_iter()
        .map(|&i| {
            let mut s = Session::train(params);
            let loss = stage2_loss(&mut s, cfg, &prep[i].ids, &prep[i].dist, &z[i], idx.len())?;
            let grads = s.g.backward(loss)?;
            let v = s.value(loss).item().to_f64().unwrap_or(f64::NAN);
            Ok((v, s.param_grads(&grads)))
        })
        .collect();
    let mut total = 0.0;
    let mut acc = BTreeMap::new();
    for r in results {
        let (v, g) = r?;
        if !v.is_finite() || !g.values().all(|t| t.is_finite()) {
            return Err(TrainError::NonFiniteLoss { step, sigma: None });
        }
        total += v;
        accumulate(&mut acc, g);
    }
    state.apply(&acc, lr);
    Ok(total)
}

/// Public single-step entry: z-scores `targets` with the state's auxiliary
/// statistics and takes one step on the whole slice.
pub fn stage2_step<T: Real>(
    state: &mut TrainState<T>,
    mols: &[Molecule],
    targets: &[Vec<f64>],
    lr: f64,
) -> Result<f64, TrainError> {
    let norm = state.aux_norm.clone().ok_or(TrainError::EmptyData)?;
    let prep = prepare(&super::ensure_coords(mols)?)?;
    let z = zscore(&norm, targets)?;
    let idx: Vec<usize> = (0..mols.len()).collect();
    let step = state.step;
    step_on(state, &prep, &z, &idx, lr, step)
}

fn zscore(norm: &NormStats, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, TrainError> {
    rows.iter()
        .map(|r| {
            if r.len() != norm.mean.len() {
                return Err(TrainError::LengthMismatch {
                    what: "auxiliary targets",
                    expected: norm.mean.len(),
                    found: r.len(),
                });
            }
            Ok(r.iter().enumerate().map(|(k, &v)| norm.normalize(k, v)).collect())
        })
        .collect()
}

/// Stage-2 loop: fits per-target statistics on `targets` (rows of K values),
/// stores them in the state, then runs `tc.epochs` epochs of shuffled
/// minibatches. Molecules without coordinates get the helix placement.
/// Returns the mean batch loss of every epoch.
pub fn train_stage2<T: Real>(
    state: &mut TrainState<T>,
    tc: &TrainConfig,
    mols: &[Molecule],
    targets: &[Vec<f64>],
    mut on_epoch: impl FnMut(u64, f64, f64),
) -> Result<Vec<f64>, TrainError> {
    tc.validate()?;
    if mols.is_empty() {
        return Err(TrainError::EmptyData);
    }
    if targets.len() != mols.len() {
        return Err(TrainError::LengthMismatch {
            what: "auxiliary target rows",
            expected: mols.len(),
            found: targets.len(),
        });
    }
    let k = state.encoder.n_aux_targets;
    let columns: Vec<Vec<f64>> = (0..k)
        .map(|c| targets.iter().map(|r| r.get(c).copied().unwrap_or(f64::NAN)).collect())
        .collect();
    if let Some(r) = targets.iter().find(|r| r.len() != k) {
        return Err(TrainError::LengthMismatch {
            what: "auxiliary targets",
            expected: k,
            found: r.len(),
        });
    }
    let norm = NormStats::fit(&columns)?;
    let z = zscore(&norm, targets)?;
    state.aux_norm = Some(norm);
    state.reset_optimizer();

    let prep = prepare(&super::ensure_coords(mols)?)?;
    let per = steps_per_epoch(mols.len(), tc.batch_size);
    let total = (tc.epochs * per) as u64;
    let seed = derive_seed(tc.seed, 2, 0);
    let mut history = Vec::with_capacity(tc.epochs);
    let mut t = 0u64;
    for e in 0..tc.epochs as u64 {
        let order = epoch_order(seed, e, mols.len());
        let mut sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            lr = lr_schedule(tc.lr, t, total, tc.poly_decay_power);
            sum += step_on(state, &prep, &z, chunk, lr, t)?;
            t += 1;
        }
        let mean = sum / per as f64;
        on_epoch(e, mean, lr);
        history.push(mean);
    }
    Ok(history)
}

/// Denormalized auxiliary predictions, one K-vector per molecule.
pub fn predict_aux<T: Real>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    norm: &NormStats,
    mols: &[Molecule],
) -> Result<Vec<Vec<f64>>, TrainError> {
    let prep = prepare(&super::ensure_coords(mols)?)?;
    prep.par_iter()
        .map(|p| {
            let mut s = Session::eval(params);
            let f = encode_primary(&mut s, cfg, &p.ids, &[], &p.dist)?;
            let y = aux_head(&mut s, f)?;
            Ok(s.value(y)
                .data()
                .iter()
                .enumerate()
                .map(|(k, v)| norm.denormalize(k, v.to_f64().unwrap_or(f64::NAN)))
                .collect())
        })
        .collect()
}

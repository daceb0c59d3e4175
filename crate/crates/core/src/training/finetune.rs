use std::collections::{BTreeMap, HashMap};

use diffcore::{Real, Tensor, Var};
use rand::Rng;
use rayon::prelude::*;

use super::{
    accumulate, epoch_order, lr_schedule, prepare, steps_per_epoch, NormStats, Prepared,
    TrainConfig, TrainError, TrainState,
};
use crate::chemio::{LabeledSet, Molecule, PairRankRecord};
use crate::corruption::{derive_seed, stream};
use crate::encoder::{downstream_head, encode_primary, pair_logit, EncoderConfig, ParamStore, Session};

/// Inputs of a finetuning run.
#[derive(Debug, Clone, Copy)]
pub struct FinetuneData<'a> {
    pub train: &'a LabeledSet,
    /// Ranking pairs, already gated by the caller. `None` trains on
    /// regression labels alone.
    pub pairs: Option<&'a [PairRankRecord]>,
    /// Extra molecules pair SMILES may refer to (for example unlabeled test
    /// molecules). Training molecules are always resolvable.
    pub pair_pool: &'a [Molecule],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneReport {
    /// Mean batch loss of every epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean pair BCE of every epoch, empty when the ranking term is off.
    pub epoch_rank_losses: Vec<f64>,
    pub rank_used: bool,
}

/// One molecule's regression share: `(ŷ − z)² / batch_len`.
pub fn finetune_loss<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    ids: &[usize],
    dist: &[f64],
    z: f64,
    batch_len: usize,
) -> Result<Var, TrainError> {
    let f = encode_primary(s, cfg, ids, &[], dist)?;
    let (y, _) = downstream_head(s, f)?;
    let t = s.constant_f64(&[1, 1], &[z])?;
    let d = s.g.sub(y, t)?;
    let d = s.g.square(d);
    let l = s.g.sum(d);
    Ok(s.g.scale(l, T::one() / T::lit(batch_len as f64)))
}

/// Binary cross-entropy of one ranking pair on the logit `ℓ = s(m₂) − s(m₁)`,
/// written as `softplus(ℓ) − y·ℓ`, scaled by `weight`.
pub fn pair_loss<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    first: (&[usize], &[f64]),
    second: (&[usize], &[f64]),
    label: u8,
    weight: f64,
) -> Result<Var, TrainError> {
    let f1 = encode_primary(s, cfg, first.0, &[], first.1)?;
    let (_, s1) = downstream_head(s, f1)?;
    let f2 = encode_primary(s, cfg, second.0, &[], second.1)?;
    let (_, s2) = downstream_head(s, f2)?;
    let l = pair_logit(s, s1, s2)?;
    let sp = s.g.softplus(l);
    let yl = s.g.scale(l, T::lit(f64::from(label)));
    let bce = s.g.sub(sp, yl)?;
    let bce = s.g.sum(bce);
    Ok(s.g.scale(bce, T::lit(weight)))
}

enum Item {
    Reg(usize),
    Pair(usize),
}

struct Job<'a> {
    prep: &'a [Prepared],
    z: &'a [f64],
    pairs: &'a [(usize, usize, u8)],
    n_reg: usize,
    n_pair: usize,
    beta: f64,
}

/// Runs one optimizer step; returns `(regression part, rank part)` of the
/// batch loss.
fn step_on<T: Real>(
    state: &mut TrainState<T>,
    job: &Job<'_>,
    items: &[Item],
    lr: f64,
    step: u64,
) -> Result<(f64, f64), TrainError> {
    let cfg = &state.encoder;
    let params = &state.params;
    let results: Vec<Result<(bool, f64, BTreeMap<String, Tensor<T>>), TrainError>> = items
        .par_iter()
        .map(|it| {
            let mut s = Session::train(params);
            let (is_pair, loss) = match *it {
                Item::Reg(i) => {
                    let p = &job.prep[i];
                    let l = finetune_loss(&mut s, cfg, &p.ids, &p.dist, job.z[i], job.n_reg)?;
                    (false, l)
                }
                Item::Pair(k) => {
                    let (a, b, y) = job.pairs[k];
                    let (pa, pb) = (&job.prep[a], &job.prep[b]);
                    let w = job.beta / job.n_pair as f64;
                    let l = pair_loss(
                        &mut s,
                        cfg,
                        (&pa.ids, &pa.dist),
                        (&pb.ids, &pb.dist),
                        y,
                        w,
                    )?;
                    (true, l)
                }
            };
            let grads = s.g.backward(loss)?;
            let v = s.value(loss).item().to_f64().unwrap_or(f64::NAN);
            Ok((is_pair, v, s.param_grads(&grads)))
        })
        .collect();
    let mut reg = 0.0;
    let mut rank = 0.0;
    let mut acc = BTreeMap::new();
    for r in results {
        let (is_pair, v, g) = r?;
        if !v.is_finite() || !g.values().all(|t| t.is_finite()) {
            return Err(TrainError::NonFiniteLoss { step, sigma: None });
        }
        if is_pair {
            rank += v;
        } else {
            reg += v;
        }
        accumulate(&mut acc, g);
    }
    state.apply(&acc, lr);
    Ok((reg, rank))
}

/// Finetunes the primary encoder and downstream heads for `tc.epochs`
/// epochs and leaves the last-epoch parameters in `state`.
///
/// Labels are z-scored with training statistics stored in
/// `state.target_norm`. When pairs are given and `tc.beta_rank > 0`, every
/// step also draws `batch_size` pairs with replacement from a separate RNG
/// stream and adds `β · mean BCE`; otherwise the run is bit-identical to one
/// without pairs.
pub fn finetune<T: Real>(
    state: &mut TrainState<T>,
    tc: &TrainConfig,
    data: FinetuneData<'_>,
    mut on_epoch: impl FnMut(u64, f64, f64),
) -> Result<FinetuneReport, TrainError> {
    tc.validate()?;
    let train = data.train;
    if train.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let norm = NormStats::fit(&[train.values.clone()])?;
    let z: Vec<f64> = train.values.iter().map(|&v| norm.normalize(0, v)).collect();
    state.target_norm = Some(norm);
    state.reset_optimizer();

    let n = train.len();
    let mut mols: Vec<Molecule> = train.molecules.clone();
    let mut pairs = Vec::new();
    let use_pairs = tc.beta_rank > 0.0 && data.pairs.is_some_and(|p| !p.is_empty());
    if use_pairs {
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, m) in mols.iter().enumerate() {
            if let Some(s) = m.smiles() {
                index.entry(s.to_string()).or_insert(i);
            }
        }
        let mut resolve = |smi: &str, mols: &mut Vec<Molecule>| -> Result<usize, TrainError> {
            if let Some(&i) = index.get(smi) {
                return Ok(i);
            }
            let m = data
                .pair_pool
                .iter()
                .find(|m| m.smiles() == Some(smi))
                .ok_or_else(|| TrainError::UnresolvablePairSmiles(smi.to_string()))?;
            mols.push(m.clone());
            index.insert(smi.to_string(), mols.len() - 1);
            Ok(mols.len() - 1)
        };
        for r in data.pairs.unwrap_or(&[]) {
            let a = resolve(&r.smiles1, &mut mols)?;
            let b = resolve(&r.smiles2, &mut mols)?;
            pairs.push((a, b, r.label));
        }
    }
    let mols = super::ensure_coords(&mols)?;
    let prep = prepare(&mols)?;

    let per = steps_per_epoch(n, tc.batch_size);
    let total = (tc.epochs * per) as u64;
    let seed = derive_seed(tc.seed, 3, 0);
    let pair_seed = derive_seed(tc.seed, 4, 0);
    let n_pair = tc.batch_size.min(pairs.len().max(1));
    let job = Job {
        prep: &prep,
        z: &z,
        pairs: &pairs,
        n_reg: 0,
        n_pair,
        beta: tc.beta_rank,
    };
    let mut report = FinetuneReport {
        epoch_losses: Vec::with_capacity(tc.epochs),
        epoch_rank_losses: Vec::new(),
        rank_used: use_pairs,
    };
    let mut t = 0u64;
    for e in 0..tc.epochs as u64 {
        let order = epoch_order(seed, e, n);
        let mut sum = 0.0;
        let mut rank_sum = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            let mut items: Vec<Item> = chunk.iter().map(|&i| Item::Reg(i)).collect();
            if use_pairs {
                let mut rng = stream(pair_seed, t, 0);
                items.extend((0..n_pair).map(|_| Item::Pair(rng.gen_range(0..pairs.len()))));
            }
            lr = lr_schedule(tc.lr, t, total, tc.poly_decay_power);
            let job = Job {
                n_reg: chunk.len(),
                ..job
            };
            let (reg, rank) = step_on(state, &job, &items, lr, t)?;
            sum += reg + rank;
            rank_sum += rank;
            t += 1;
        }
        let mean = sum / per as f64;
        on_epoch(e, mean, lr);
        report.epoch_losses.push(mean);
        if use_pairs {
            report.epoch_rank_losses.push(rank_sum / per as f64);
        }
    }
    Ok(report)
}

/// Denormalized regression predictions.
pub fn predict<T: Real>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    norm: &NormStats,
    mols: &[Molecule],
) -> Result<Vec<f64>, TrainError> {
    let mols = super::ensure_coords(mols)?;
    let prep = prepare(&mols)?;
    prep.par_iter()
        .map(|p| {
            let mut s = Session::eval(params);
            let f = encode_primary(&mut s, cfg, &p.ids, &[], &p.dist)?;
            let (y, _) = downstream_head(&mut s, f)?;
            Ok(norm.denormalize(0, s.value(y).item().to_f64().unwrap_or(f64::NAN)))
        })
        .collect()
}

/// Ranking scores `s(m)`.
pub fn rank_scores<T: Real>(
    params: &ParamStore<T>,
    cfg: &EncoderConfig,
    mols: &[Molecule],
) -> Result<Vec<f64>, TrainError> {
    let mols = super::ensure_coords(mols)?;
    let prep = prepare(&mols)?;
    prep.par_iter()
        .map(|p| {
            let mut s = Session::eval(params);
            let f = encode_primary(&mut s, cfg, &p.ids, &[], &p.dist)?;
            let (_, sc) = downstream_head(&mut s, f)?;
            Ok(s.value(sc).item().to_f64().unwrap_or(f64::NAN))
        })
        .collect()
}

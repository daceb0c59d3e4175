//! Losses, optimizer, schedule and the three training loops: stage-1
//! masked-atom plus denoising pretraining, stage-2 auxiliary regression, and
//! downstream finetuning with an optional pairwise ranking term.

mod checkpoint;
mod finetune;
mod metrics;
mod optim;
mod stage1;
mod stage2;

use std::collections::BTreeMap;

use diffcore::{DiffError, Real, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemio::{with_synthetic_coords, Molecule};
use crate::corruption::{CorruptionError, SigmaPolicy};
use crate::encoder::{init_params, EncoderConfig, ModelError, ParamStore};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use finetune::{
    finetune, finetune_loss, pair_loss, predict, rank_scores, FinetuneData, FinetuneReport,
};
pub use metrics::{MetricsLog, MetricsRecord};
pub use optim::{lr_schedule, Adam};
pub use stage1::{
    batch_indices, corrupt_for_step, denoise_eval, map_accuracy, stage1_loss, stage1_step,
    train_stage1, Stage1Losses, Stage1Parts,
};
pub use stage2::{predict_aux, stage2_loss, stage2_step, train_stage2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} (sigma = {sigma:?})")]
    NonFiniteLoss { step: u64, sigma: Option<f64> },
    #[error("target column {0} has standard deviation below 1e-12")]
    DegenerateStd(usize),
    #[error("pair SMILES '{0}' does not resolve to a known molecule")]
    UnresolvablePairSmiles(String),
    #[error("no training data")]
    EmptyData,
    #[error("molecule {0} has no coordinates")]
    MissingCoordinates(usize),
    #[error("{what}: expected {expected} values, got {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

impl From<DiffError> for TrainError {
    fn from(e: DiffError) -> Self {
        TrainError::Model(e.into())
    }
}

/// Optimizer, schedule, loss-weight and corruption settings shared by all
/// three loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub poly_decay_power: f64,
    pub batch_size: usize,
    /// Stage-1 optimizer steps.
    pub steps: usize,
    /// Stage-2 and finetuning epochs.
    pub epochs: usize,
    pub alpha_x: f64,
    pub alpha_p: f64,
    pub alpha_d: f64,
    pub beta_rank: f64,
    pub mask_ratio: f64,
    /// Upper end `a` of the σ distribution, or the fixed σ when
    /// `dynamic_sigma` is off.
    pub max_sigma: f64,
    pub dynamic_sigma: bool,
    /// Separate denoising encoder fed by the aggregator. Off means one
    /// encoder serves both tasks.
    pub branching: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            poly_decay_power: 1.0,
            batch_size: 8,
            steps: 2000,
            epochs: 50,
            alpha_x: 1.0,
            alpha_p: 1.0,
            alpha_d: 1.0,
            beta_rank: 1.0,
            mask_ratio: 0.15,
            max_sigma: 10.0,
            dynamic_sigma: true,
            branching: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-size run: batch 32 and one million stage-1 steps.
    pub fn paper() -> Self {
        Self {
            batch_size: 32,
            steps: 1_000_000,
            ..Self::default()
        }
    }

    pub fn sigma_policy(&self) -> SigmaPolicy {
        if self.dynamic_sigma {
            SigmaPolicy::Dynamic { a: self.max_sigma }
        } else {
            SigmaPolicy::Fixed(self.max_sigma)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if [self.alpha_x, self.alpha_p, self.alpha_d, self.beta_rank]
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return bad("loss weights must be finite and >= 0");
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad("mask_ratio must lie in (0, 1)");
        }
        if !(self.max_sigma > 0.0 && self.max_sigma.is_finite()) {
            return bad("max_sigma must be positive");
        }
        if !(self.poly_decay_power >= 0.0 && self.poly_decay_power.is_finite()) {
            return bad("poly_decay_power must be >= 0");
        }
        Ok(())
    }
}

/// Per-column mean and standard deviation used to z-score targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population statistics of each column.
    pub fn fit(columns: &[Vec<f64>]) -> Result<Self, TrainError> {
        let mut mean = Vec::with_capacity(columns.len());
        let mut std = Vec::with_capacity(columns.len());
        for (k, col) in columns.iter().enumerate() {
            if col.is_empty() {
                return Err(TrainError::EmptyData);
            }
            let n = col.len() as f64;
            let m = col.iter().sum::<f64>() / n;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            if !(s >= 1e-12) {
                return Err(TrainError::DegenerateStd(k));
            }
            mean.push(m);
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, k: usize, v: f64) -> f64 {
        (v - self.mean[k]) / self.std[k]
    }

    pub fn denormalize(&self, k: usize, z: f64) -> f64 {
        z * self.std[k] + self.mean[k]
    }
}

/// Everything a loop mutates: parameters, optimizer moments, the global step
/// counter and the target statistics fitted so far.
#[derive(Debug, Clone)]
pub struct TrainState<T: Real = f32> {
    pub encoder: EncoderConfig,
    pub params: ParamStore<T>,
    pub opt: Adam<T>,
    pub step: u64,
    pub seed: u64,
    pub aux_norm: Option<NormStats>,
    pub target_norm: Option<NormStats>,
}

impl<T: Real> TrainState<T> {
    pub fn new(encoder: EncoderConfig, seed: u64) -> Result<Self, TrainError> {
        encoder.validate().map_err(TrainError::Config)?;
        let params = init_params(&encoder, seed);
        Ok(Self::from_params(encoder, params, seed))
    }

    pub fn from_params(encoder: EncoderConfig, params: ParamStore<T>, seed: u64) -> Self {
        Self {
            encoder,
            params,
            opt: Adam::default(),
            step: 0,
            seed,
            aux_norm: None,
            target_norm: None,
        }
    }

    /// Fresh optimizer moments, used at the start of each stage.
    pub fn reset_optimizer(&mut self) {
        self.opt = Adam::default();
    }

    /// Applies one Adam update from summed gradients.
    pub fn apply(&mut self, grads: &BTreeMap<String, Tensor<T>>, lr: f64) {
        self.opt.step(&mut self.params, grads, lr);
        self.step += 1;
    }
}

/// Copy of `mols` in which every molecule without coordinates receives the
/// deterministic helix placement.
pub fn ensure_coords(mols: &[Molecule]) -> Result<Vec<Molecule>, TrainError> {
    mols.iter()
        .enumerate()
        .map(|(i, m)| {
            if m.coords().is_some() {
                Ok(m.clone())
            } else {
                with_synthetic_coords(m.clone()).map_err(|_| TrainError::MissingCoordinates(i))
            }
        })
        .collect()
}

/// Adds `src` into `acc` entry by entry.
pub(crate) fn accumulate<T: Real>(
    acc: &mut BTreeMap<String, Tensor<T>>,
    src: BTreeMap<String, Tensor<T>>,
) {
    for (k, g) in src {
        match acc.get_mut(&k) {
            Some(a) => {
                for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                    *x = *x + *y;
                }
            }
            None => {
                acc.insert(k, g);
            }
        }
    }
}

/// Seed-deterministic permutation of `0..n` for one epoch.
pub(crate) fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::corruption::stream(seed, epoch, u64::MAX));
    idx
}

/// Atom ids and clean distances of one molecule, computed once per loop.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub ids: Vec<usize>,
    pub dist: Vec<f64>,
}

pub(crate) fn prepare(mols: &[Molecule]) -> Result<Vec<Prepared>, TrainError> {
    mols.iter()
        .enumerate()
        .map(|(i, m)| {
            let coords = m.coords().ok_or(TrainError::MissingCoordinates(i))?;
            Ok(Prepared {
                ids: m.atom_ids(),
                dist: crate::encoder::pair_distance(coords)?,
            })
        })
        .collect()
}

/// Steps per epoch for `n` items in batches of `b`.
pub(crate) fn steps_per_epoch(n: usize, b: usize) -> usize {
    n.div_ceil(b).max(1)
}

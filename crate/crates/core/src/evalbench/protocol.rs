use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{kendall_tau_b, mae, r2, BoxStats, EvalError};
use crate::chemio::LabeledSet;
use crate::corruption::{derive_seed, stream};
use crate::ranklab::{
    gate, generate_all_pairs, pairwise_tau, truth_map, Descriptor, MockRankProvider, RankProvider,
};
use crate::training::{finetune, predict, Checkpoint, FinetuneData, TrainConfig, TrainState};

/// Split protocol settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub n_splits: usize,
    pub seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self { n_splits: 3, seed: 0 }
    }
}

/// Seed of one (assay, split) cell; depends on nothing else.
pub fn cell_seed(seed: u64, assay_id: &str, split_id: usize) -> u64 {
    let digest = Sha256::digest(assay_id.as_bytes());
    let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    derive_seed(derive_seed(seed, h, 0), split_id as u64, 1)
}

/// Random half split of `0..n`: a seed-derived shuffle whose first
/// `ceil(n/2)` entries form the training side. Both sides are returned
/// sorted.
pub fn split_indices(n: usize, seed: u64, assay_id: &str, split_id: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(cell_seed(seed, assay_id, split_id), 0, 0));
    let n_train = n.div_ceil(2);
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Gate outcome of a cell that was offered ranking labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRanking {
    pub n_pairs: usize,
    pub accuracy: f64,
    pub abs_tau: f64,
    pub gate_open: bool,
}

/// Test predictions of one fitted model.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub predictions: Vec<f64>,
    pub ranking: Option<CellRanking>,
}

/// Builds a model on a training split and predicts the test split. `seed` is
/// the cell seed; implementations must depend on nothing else.
pub trait ModelFactory: Sync {
    fn name(&self) -> &str;
    fn fit_predict(&self, train: &LabeledSet, test: &LabeledSet, seed: u64) -> Result<Fitted, EvalError>;
}

/// Returns the test truth. Useful to check the plumbing.
pub struct OracleFactory;

impl ModelFactory for OracleFactory {
    fn name(&self) -> &str {
        "oracle"
    }

    fn fit_predict(&self, _: &LabeledSet, test: &LabeledSet, _: u64) -> Result<Fitted, EvalError> {
        Ok(Fitted {
            predictions: test.values.clone(),
            ranking: None,
        })
    }
}

/// Predicts the training mean everywhere.
pub struct MeanFactory;

impl ModelFactory for MeanFactory {
    fn name(&self) -> &str {
        "train_mean"
    }

    fn fit_predict(&self, train: &LabeledSet, test: &LabeledSet, _: u64) -> Result<Fitted, EvalError> {
        let m = train.values.iter().sum::<f64>() / train.len() as f64;
        Ok(Fitted {
            predictions: vec![m; test.len()],
            ranking: None,
        })
    }
}

/// Mock ranking labels offered to every cell, gated on the training split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingSpec {
    pub descriptor: Descriptor,
    pub flip_prob: f64,
    pub threshold: f64,
    pub pair_cap: usize,
}

/// Finetunes a copy of a pretrained checkpoint on each training split.
#[derive(Debug, Clone)]
pub struct FinetuneFactory {
    pub name: String,
    pub base: Checkpoint,
    /// `seed` is replaced by the cell seed.
    pub train: TrainConfig,
    pub ranking: Option<RankingSpec>,
}

impl ModelFactory for FinetuneFactory {
    fn name(&self) -> &str {
        &self.name
    }

    fn fit_predict(&self, train: &LabeledSet, test: &LabeledSet, seed: u64) -> Result<Fitted, EvalError> {
        let mut state: TrainState<f32> = self.base.clone().into_state();
        let tc = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let mut pairs = None;
        let mut ranking = None;
        if let Some(spec) = &self.ranking {
            let candidates = generate_all_pairs(train, spec.pair_cap, &mut stream(seed, 5, 0))?;
            let mut provider =
                MockRankProvider::new(spec.descriptor, spec.flip_prob, stream(seed, 6, 0))?;
            let records = provider.rank_pairs(&candidates)?;
            let q = pairwise_tau(&records, &truth_map(train))?;
            let open = gate(&q, spec.threshold);
            ranking = Some(CellRanking {
                n_pairs: q.n_pairs,
                accuracy: q.accuracy,
                abs_tau: q.abs_tau,
                gate_open: open,
            });
            if open {
                pairs = Some(records);
            }
        }
        finetune(
            &mut state,
            &tc,
            FinetuneData {
                train,
                pairs: pairs.as_deref(),
                pair_pool: &[],
            },
            |_, _, _| {},
        )?;
        let norm = state.target_norm.clone().expect("finetune sets target stats");
        let predictions = predict(&state.params, &state.encoder, &norm, &test.molecules)?;
        Ok(Fitted {
            predictions,
            ranking,
        })
    }
}

/// Last-epoch test metrics of one (assay, split) cell. `r2` is absent when
/// the test truth is constant and `tau_b` when either side is all tied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub assay_id: String,
    pub split_id: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub mae: f64,
    pub r2: Option<f64>,
    pub tau_b: Option<f64>,
    pub ranking: Option<CellRanking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub protocol: Protocol,
    pub cells: Vec<CellResult>,
    /// Box statistics per metric (`mae`, `r2`, `tau_b`) over all cells where
    /// the metric is defined.
    pub aggregates: BTreeMap<String, BoxStats>,
}

impl EvalReport {
    /// Mean MAE over the splits of each assay, keyed by assay id.
    pub fn assay_mae(&self) -> BTreeMap<String, f64> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for c in &self.cells {
            let e = acc.entry(c.assay_id.clone()).or_default();
            e.0 += c.mae;
            e.1 += 1;
        }
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }
}

fn optional(r: Result<f64, EvalError>) -> Result<Option<f64>, EvalError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(EvalError::ZeroVariance | EvalError::AllTied) => Ok(None),
        Err(e) => Err(e),
    }
}

fn run_cell(
    set: &LabeledSet,
    split_id: usize,
    factory: &dyn ModelFactory,
    protocol: &Protocol,
) -> Result<CellResult, EvalError> {
    let (tr, te) = split_indices(set.len(), protocol.seed, &set.assay_id, split_id);
    let train = set.subset(&tr);
    let test = set.subset(&te);
    let fitted = factory.fit_predict(&train, &test, cell_seed(protocol.seed, &set.assay_id, split_id))?;
    let pred = &fitted.predictions;
    Ok(CellResult {
        assay_id: set.assay_id.clone(),
        split_id,
        n_train: train.len(),
        n_test: test.len(),
        mae: mae(pred, &test.values)?,
        r2: optional(r2(pred, &test.values))?,
        tau_b: optional(kendall_tau_b(pred, &test.values))?,
        ranking: fitted.ranking,
    })
}

/// Runs every assay through `protocol.n_splits` random half splits. Cells
/// run in parallel; each depends only on `(protocol.seed, assay_id,
/// split_id)`, so the report is a pure function of its inputs.
pub fn run_benchmark(
    assays: &[LabeledSet],
    factory: &dyn ModelFactory,
    protocol: &Protocol,
) -> Result<EvalReport, EvalError> {
    if let Some(a) = assays.iter().find(|a| a.len() < 4) {
        return Err(EvalError::TooFewMolecules(a.assay_id.clone()));
    }
    let jobs: Vec<(usize, usize)> = (0..assays.len())
        .flat_map(|a| (0..protocol.n_splits).map(move |s| (a, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(a, s)| {
            run_cell(&assays[a], s, factory, protocol).map_err(|e| EvalError::Cell {
                assay: assays[a].assay_id.clone(),
                split: s,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut aggregates = BTreeMap::new();
    let columns: [(&str, Vec<f64>); 3] = [
        ("mae", cells.iter().map(|c| c.mae).collect()),
        ("r2", cells.iter().filter_map(|c| c.r2).collect()),
        ("tau_b", cells.iter().filter_map(|c| c.tau_b).collect()),
    ];
    for (name, vals) in columns {
        if !vals.is_empty() {
            aggregates.insert(name.to_string(), BoxStats::from_values(&vals)?);
        }
    }
    Ok(EvalReport {
        model: factory.name().to_string(),
        protocol: *protocol,
        cells,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_split_favours_train() {
        let (tr, te) = split_indices(7, 1, "a", 0);
        assert_eq!((tr.len(), te.len()), (4, 3));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn splits_differ_across_ids() {
        assert_ne!(split_indices(20, 0, "a", 0), split_indices(20, 0, "a", 1));
        assert_ne!(split_indices(20, 0, "a", 0), split_indices(20, 0, "b", 0));
    }
}

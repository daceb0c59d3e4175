use std::collections::BTreeMap;

use diffcore::{Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::EncoderConfig;

/// Name prefixes of the two transformer stacks.
pub const PRIMARY: &str = "primary";
pub const DENOISE: &str = "denoise";

/// Prefixes of every parameter that only exists for the stage-1 denoising
/// branch and is dropped once stage 1 is over.
pub const DENOISING_BRANCH: [&str; 4] = ["denoise.", "denoise_head.", "aggregator.", "sigma_embed."];

pub fn is_denoising_branch(name: &str) -> bool {
    DENOISING_BRANCH.iter().any(|p| name.starts_with(p))
}

/// Named parameter arrays, iterated in sorted-name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.map.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.map.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            map: self.map.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|t| t.is_finite())
    }

    /// Copy keeping only parameters for which `keep` returns true.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> Self {
        Self {
            map: self
                .map
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// SHA-256 over names, shapes and little-endian `f64` values of every
    /// parameter whose name satisfies `select`.
    pub fn checksum(&self, select: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.map.iter().filter(|(k, _)| select(k)) {
            h.update(k.as_bytes());
            for d in v.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.data() {
                h.update(x.to_f64().unwrap_or(f64::NAN).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Expected shape of every parameter for `cfg`.
pub fn param_shapes(cfg: &EncoderConfig) -> BTreeMap<String, Vec<usize>> {
    let c = cfg.embed_dim;
    let f = cfg.ffn_dim;
    let h = cfg.n_heads;
    let k = cfg.n_dist_kernels;
    let mut s = BTreeMap::new();
    let mut put = |name: String, shape: Vec<usize>| {
        s.insert(name, shape);
    };
    put(format!("{PRIMARY}.embed"), vec![cfg.vocab_size + 1, c]);
    put(format!("{PRIMARY}.mol_token"), vec![1, c]);
    for enc in [PRIMARY, DENOISE] {
        put(format!("{enc}.kernel.mean"), vec![k]);
        put(format!("{enc}.kernel.width"), vec![k]);
        put(format!("{enc}.pair.w"), vec![k, h]);
        put(format!("{enc}.pair.b"), vec![h]);
        put(format!("{enc}.pair.null"), vec![h]);
        for l in 0..cfg.n_layers {
            let p = format!("{enc}.layer{l}");
            for ln in ["ln1", "ln2"] {
                put(format!("{p}.{ln}.g"), vec![c]);
                put(format!("{p}.{ln}.b"), vec![c]);
            }
            for w in ["q", "k", "v", "o"] {
                put(format!("{p}.attn.w{w}"), vec![c, c]);
                put(format!("{p}.attn.b{w}"), vec![c]);
            }
            put(format!("{p}.ffn.w1"), vec![c, f]);
            put(format!("{p}.ffn.b1"), vec![f]);
            put(format!("{p}.ffn.w2"), vec![f, c]);
            put(format!("{p}.ffn.b2"), vec![c]);
        }
    }
    put("aggregator.query".into(), vec![1, c]);
    for w in ["k", "v", "o"] {
        put(format!("aggregator.w{w}"), vec![c, c]);
        put(format!("aggregator.b{w}"), vec![c]);
    }
    put("sigma_embed.w1".into(), vec![1, c]);
    put("sigma_embed.b1".into(), vec![c]);
    put("sigma_embed.w2".into(), vec![c, c]);
    put("sigma_embed.b2".into(), vec![c]);
    put("map_head.w1".into(), vec![c, c]);
    put("map_head.b1".into(), vec![c]);
    put("map_head.w2".into(), vec![c, cfg.vocab_size]);
    put("map_head.b2".into(), vec![cfg.vocab_size]);
    put("denoise_head.eps.w1".into(), vec![c, c]);
    put("denoise_head.eps.b1".into(), vec![c]);
    put("denoise_head.eps.w2".into(), vec![c, 1]);
    put("denoise_head.eps.b2".into(), vec![1]);
    put("denoise_head.pair.wh".into(), vec![c, c]);
    put("denoise_head.pair.bh".into(), vec![c]);
    put("denoise_head.pair.wr".into(), vec![k, c]);
    put("denoise_head.pair.wd".into(), vec![1, c]);
    put("denoise_head.pair.b".into(), vec![c]);
    for head in ["coord", "dist"] {
        put(format!("denoise_head.{head}.w1"), vec![c, c]);
        put(format!("denoise_head.{head}.b1"), vec![c]);
        put(format!("denoise_head.{head}.w2"), vec![c, 1]);
        put(format!("denoise_head.{head}.b2"), vec![1]);
    }
    put("aux_head.w1".into(), vec![c, c]);
    put("aux_head.b1".into(), vec![c]);
    put("aux_head.w2".into(), vec![c, cfg.n_aux_targets]);
    put("aux_head.b2".into(), vec![cfg.n_aux_targets]);
    put("downstream.w1".into(), vec![c, c]);
    put("downstream.b1".into(), vec![c]);
    put("downstream.reg.w".into(), vec![c, 1]);
    put("downstream.reg.b".into(), vec![1]);
    put("downstream.rank.w".into(), vec![c, 1]);
    put("downstream.rank.b".into(), vec![1]);
    s
}

/// Final projections of every head start at zero.
fn is_zero_init(name: &str) -> bool {
    matches!(
        name,
        "map_head.w2"
            | "denoise_head.eps.w2"
            | "denoise_head.coord.w2"
            | "denoise_head.dist.w2"
            | "aux_head.w2"
            | "downstream.reg.w"
            | "downstream.rank.w"
    )
}

/// Seeded initialization: fan-in scaled normal weights, zero biases, unit
/// layer-norm gains, kernel means spread uniformly over 0–12 Å with unit
/// widths, and zero head outputs.
pub fn init_params<T: Real>(cfg: &EncoderConfig, seed: u64) -> ParamStore<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in param_shapes(cfg) {
        let n: usize = shape.iter().product();
        let last = name.rsplit('.').next().unwrap_or("");
        let data: Vec<f64> = if is_zero_init(&name) {
            vec![0.0; n]
        } else if name.ends_with("kernel.mean") {
            let k = n.max(2) - 1;
            (0..n).map(|i| 12.0 * i as f64 / k as f64).collect()
        } else if name.ends_with("kernel.width") || name.ends_with(".g") {
            vec![1.0; n]
        } else if last.starts_with('b') || name.ends_with("pair.null") {
            vec![0.0; n]
        } else {
            let std = match name.as_str() {
                n if n.ends_with(".embed") || n.ends_with("mol_token") || n.ends_with("query") => {
                    1.0
                }
                _ => 1.0 / (shape[0] as f64).sqrt(),
            };
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * std
                })
                .collect()
        };
        store.insert(
            name,
            Tensor::from_f64(&shape, &data).expect("shape from table"),
        );
    }
    store
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_matches_shape_table() {
        let cfg = EncoderConfig::desk();
        let p = init_params::<f32>(&cfg, 0);
        let shapes = param_shapes(&cfg);
        assert_eq!(p.len(), shapes.len());
        for (k, v) in p.iter() {
            assert_eq!(v.shape(), shapes[k].as_slice(), "{k}");
        }
        assert!(p.all_finite());
        assert!(p.get("downstream.reg.w").unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let cfg = EncoderConfig::desk();
        let a = init_params::<f64>(&cfg, 3);
        let b = init_params::<f64>(&cfg, 3);
        assert_eq!(a.checksum(|_| true), b.checksum(|_| true));
        let c = init_params::<f64>(&cfg, 4);
        assert_ne!(a.checksum(|_| true), c.checksum(|_| true));
    }

    #[test]
    fn branch_prefixes() {
        assert!(is_denoising_branch("denoise.layer0.ffn.w1"));
        assert!(is_denoising_branch("aggregator.query"));
        assert!(!is_denoising_branch("primary.embed"));
        assert!(!is_denoising_branch("downstream.w1"));
    }
}

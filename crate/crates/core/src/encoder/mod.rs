//! Branching encoder: a primary masked-atom transformer, a denoising
//! transformer fed an attention-pooled summary of the primary features, and
//! the heads read off either stack.
//!
//! Both stacks are pre-norm transformers whose self-attention logits receive
//! an additive per-head bias computed from pairwise distances through a bank
//! of Gaussian kernels. Token 0 of every stack is a readout token: the
//! learned `[MOL]` embedding in the primary stack, the pooled-summary plus
//! noise-scale token in the denoising stack.

mod config;
mod params;
mod session;

use diffcore::{DiffError, Real, Var};
use thiserror::Error;

pub use config::EncoderConfig;
pub use params::{
    init_params, is_denoising_branch, param_shapes, ParamStore, DENOISE, DENOISING_BRANCH,
    PRIMARY,
};
pub use session::Session;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] DiffError),
    #[error("missing parameter '{0}'")]
    MissingParam(String),
    #[error("non-finite coordinate at atom {0}")]
    NonFiniteCoordinate(usize),
    #[error("molecule has {n} atoms, more than max_atoms {max}")]
    TooManyAtoms { n: usize, max: usize },
    #[error("molecule has no atoms")]
    Empty,
}

/// Row-major `N × N` Euclidean distances. Each unordered pair is computed once
/// and mirrored so the matrix is exactly symmetric with a zero diagonal.
pub fn pair_distance(coords: &[[f64; 3]]) -> Result<Vec<f64>, ModelError> {
    if let Some(i) = coords.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
        return Err(ModelError::NonFiniteCoordinate(i));
    }
    let n = coords.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let v = (0..3)
                .map(|k| (coords[i][k] - coords[j][k]).powi(2))
                .sum::<f64>()
                .sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(d)
}

fn linear<T: Real>(s: &mut Session<'_, T>, x: Var, w: &str, b: &str) -> Result<Var, ModelError> {
    let w = s.p(w)?;
    let b = s.p(b)?;
    let y = s.g.matmul(x, w)?;
    Ok(s.g.add(y, b)?)
}

fn layer_norm<T: Real>(s: &mut Session<'_, T>, x: Var, prefix: &str) -> Result<Var, ModelError> {
    let g = s.p(&format!("{prefix}.g"))?;
    let b = s.p(&format!("{prefix}.b"))?;
    let y = s.g.layer_norm(x, T::lit(LN_EPS))?;
    let y = s.g.mul(y, g)?;
    Ok(s.g.add(y, b)?)
}

fn mlp2<T: Real>(s: &mut Session<'_, T>, x: Var, prefix: &str) -> Result<Var, ModelError> {
    let h = linear(s, x, &format!("{prefix}.w1"), &format!("{prefix}.b1"))?;
    let h = s.g.gelu(h);
    linear(s, h, &format!("{prefix}.w2"), &format!("{prefix}.b2"))
}

/// `(T, C)` → `(H, T, C/H)`.
fn split_heads<T: Real>(s: &mut Session<'_, T>, x: Var, heads: usize) -> Result<Var, ModelError> {
    let shape = s.g.shape(x).to_vec();
    let (t, c) = (shape[0], shape[1]);
    let x = s.g.reshape(x, &[t, heads, c / heads])?;
    Ok(s.g.permute(x, &[1, 0, 2])?)
}

/// `(H, T, d)` → `(T, H·d)`.
fn merge_heads<T: Real>(s: &mut Session<'_, T>, x: Var) -> Result<Var, ModelError> {
    let shape = s.g.shape(x).to_vec();
    let (h, t, d) = (shape[0], shape[1], shape[2]);
    let x = s.g.permute(x, &[1, 0, 2])?;
    Ok(s.g.reshape(x, &[t, h * d])?)
}

/// Scaled dot-product attention over already-projected `(H, T, d)` inputs.
fn attend<T: Real>(
    s: &mut Session<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    bias: Option<Var>,
) -> Result<Var, ModelError> {
    let d = *s.g.shape(q).last().expect("rank 3");
    let kt = s.g.transpose(k)?;
    let scores = s.g.matmul(q, kt)?;
    let mut scores = s.g.scale(scores, T::one() / T::lit(d as f64).sqrt());
    if let Some(b) = bias {
        scores = s.g.add(scores, b)?;
    }
    let attn = s.g.softmax(scores)?;
    Ok(s.g.matmul(attn, v)?)
}

fn self_attention<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    x: Var,
    bias: Var,
    prefix: &str,
) -> Result<Var, ModelError> {
    let h = cfg.n_heads;
    let q = linear(s, x, &format!("{prefix}.wq"), &format!("{prefix}.bq"))?;
    let k = linear(s, x, &format!("{prefix}.wk"), &format!("{prefix}.bk"))?;
    let v = linear(s, x, &format!("{prefix}.wv"), &format!("{prefix}.bv"))?;
    let q = split_heads(s, q, h)?;
    let k = split_heads(s, k, h)?;
    let v = split_heads(s, v, h)?;
    let o = attend(s, q, k, v, Some(bias))?;
    let o = merge_heads(s, o)?;
    linear(s, o, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
}

/// Gaussian kernel responses `exp(-((d - μ_k)/w_k)² / 2)` for every pair:
/// shape `(N, N, K)`.
pub fn kernel_features<T: Real>(
    s: &mut Session<'_, T>,
    enc: &str,
    dist: &[f64],
    n: usize,
) -> Result<Var, ModelError> {
    let d = s.constant_f64(&[n, n, 1], dist)?;
    let mean = s.p(&format!("{enc}.kernel.mean"))?;
    let width = s.p(&format!("{enc}.kernel.width"))?;
    let z = s.g.sub(d, mean)?;
    let z = s.g.div(z, width)?;
    let z = s.g.square(z);
    let z = s.g.scale(z, T::lit(-0.5));
    Ok(s.g.exp(z))
}

/// Per-head additive attention bias of shape `(H, N+1, N+1)`. Row and
/// column 0 (the readout token) carry a learned per-head null bias.
pub fn embed_pairs<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    enc: &str,
    dist: &[f64],
    n: usize,
) -> Result<Var, ModelError> {
    let h = cfg.n_heads;
    let k = cfg.n_dist_kernels;
    let feats = kernel_features(s, enc, dist, n)?;
    let feats = s.g.reshape(feats, &[n * n, k])?;
    let proj = linear(s, feats, &format!("{enc}.pair.w"), &format!("{enc}.pair.b"))?;
    let proj = s.g.reshape(proj, &[n, n, h])?;
    let proj = s.g.permute(proj, &[2, 0, 1])?;
    let null = s.p(&format!("{enc}.pair.null"))?;
    let null = s.g.reshape(null, &[h, 1, 1])?;
    let col = s.g.broadcast_to(null, &[h, n, 1])?;
    let body = s.g.concat(&[col, proj], 2)?;
    let row = s.g.broadcast_to(null, &[h, 1, n + 1])?;
    Ok(s.g.concat(&[row, body], 1)?)
}

/// Runs the `enc` transformer stack over `tokens` `(T, C)`.
pub fn encoder_stack<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    enc: &str,
    tokens: Var,
    bias: Var,
) -> Result<Var, ModelError> {
    let mut x = tokens;
    for l in 0..cfg.n_layers {
        let p = format!("{enc}.layer{l}");
        let h = layer_norm(s, x, &format!("{p}.ln1"))?;
        let a = self_attention(s, cfg, h, bias, &format!("{p}.attn"))?;
        x = s.g.add(x, a)?;
        let h = layer_norm(s, x, &format!("{p}.ln2"))?;
        let f = linear(s, h, &format!("{p}.ffn.w1"), &format!("{p}.ffn.b1"))?;
        let f = s.g.gelu(f);
        let f = linear(s, f, &format!("{p}.ffn.w2"), &format!("{p}.ffn.b2"))?;
        x = s.g.add(x, f)?;
    }
    Ok(x)
}

fn check_atoms(cfg: &EncoderConfig, n: usize) -> Result<(), ModelError> {
    if n == 0 {
        return Err(ModelError::Empty);
    }
    if n > cfg.max_atoms {
        return Err(ModelError::TooManyAtoms {
            n,
            max: cfg.max_atoms,
        });
    }
    Ok(())
}

/// Atom embeddings `X` (no masking), shape `(N, C)`.
pub fn atom_embeddings<T: Real>(
    s: &mut Session<'_, T>,
    atom_ids: &[usize],
) -> Result<Var, ModelError> {
    let table = s.p(&format!("{PRIMARY}.embed"))?;
    Ok(s.g.gather(table, atom_ids)?)
}

/// Primary features `F = φ^p(X^m, D)` of shape `(N+1, C)`; positions listed
/// in `masked` read the `[MASK]` embedding row.
pub fn encode_primary<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    atom_ids: &[usize],
    masked: &[usize],
    dist: &[f64],
) -> Result<Var, ModelError> {
    let n = atom_ids.len();
    check_atoms(cfg, n)?;
    let mut ids = atom_ids.to_vec();
    for &m in masked {
        ids[m] = cfg.mask_id();
    }
    let x = atom_embeddings(s, &ids)?;
    let mol = s.p(&format!("{PRIMARY}.mol_token"))?;
    let tokens = s.g.concat(&[mol, x], 0)?;
    let bias = embed_pairs(s, cfg, PRIMARY, dist, n)?;
    encoder_stack(s, cfg, PRIMARY, tokens, bias)
}

/// Atom tokens (rows `1..=N`) of a stack output.
pub fn atom_tokens<T: Real>(s: &mut Session<'_, T>, f: Var) -> Result<Var, ModelError> {
    let t = s.g.shape(f)[0];
    Ok(s.g.slice(f, 0, 1, t)?)
}

/// Readout token (row 0) of a stack output, shape `(1, C)`.
pub fn readout_token<T: Real>(s: &mut Session<'_, T>, f: Var) -> Result<Var, ModelError> {
    Ok(s.g.slice(f, 0, 0, 1)?)
}

/// Masked-atom logits `(N, vocab_size)` over atom classes only.
pub fn map_head<T: Real>(s: &mut Session<'_, T>, f: Var) -> Result<Var, ModelError> {
    let atoms = atom_tokens(s, f)?;
    mlp2(s, atoms, "map_head")
}

/// Pooling by multi-head attention: one learned query cross-attends over all
/// `N+1` tokens of `F`. Output `(1, C)`.
pub fn aggregate<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    f: Var,
) -> Result<Var, ModelError> {
    let h = cfg.n_heads;
    let q = s.p("aggregator.query")?;
    let k = linear(s, f, "aggregator.wk", "aggregator.bk")?;
    let v = linear(s, f, "aggregator.wv", "aggregator.bv")?;
    let q = split_heads(s, q, h)?;
    let k = split_heads(s, k, h)?;
    let v = split_heads(s, v, h)?;
    let o = attend(s, q, k, v, None)?;
    let o = merge_heads(s, o)?;
    linear(s, o, "aggregator.wo", "aggregator.bo")
}

/// Two-layer MLP embedding of the scalar noise scale, shape `(1, C)`.
pub fn sigma_embed<T: Real>(s: &mut Session<'_, T>, sigma: f64) -> Result<Var, ModelError> {
    let x = s.constant_f64(&[1, 1], &[sigma])?;
    mlp2(s, x, "sigma_embed")
}

/// Denoising features `G = φ^d([agg; X̃], D̃, σ)`; `agg_token` already carries
/// the pooled primary summary plus the σ embedding.
pub fn encode_denoise<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    x_noisy: Var,
    noisy_dist: &[f64],
    agg_token: Var,
) -> Result<Var, ModelError> {
    let n = s.g.shape(x_noisy)[0];
    check_atoms(cfg, n)?;
    let tokens = s.g.concat(&[agg_token, x_noisy], 0)?;
    let bias = embed_pairs(s, cfg, DENOISE, noisy_dist, n)?;
    encoder_stack(s, cfg, DENOISE, tokens, bias)
}

/// Outputs of the denoising head.
#[derive(Debug, Clone, Copy)]
pub struct DenoiseOutput {
    /// Predicted embedding noise `ε̂₁`, `(N, 1)`.
    pub eps_hat: Var,
    /// `X̃ − ε̂₁`, `(N, C)`.
    pub x_hat: Var,
    /// Equivariant coordinate estimate, `(N, 3)`.
    pub p_hat: Var,
    /// Symmetric distance estimate with zero diagonal, `(N, N)`.
    pub d_hat: Var,
    /// Symmetric pair weights driving the coordinate update, `(N, N)`.
    pub pair_weights: Var,
}

/// Denoising head.
///
/// Pair features combine `h_i ⊙ h_j` (from the atom tokens of `G`) with the
/// noisy-distance kernel features and a linear term in the raw noisy
/// distance, so every pair readout is symmetric in `(i, j)`. Coordinates are updated along difference vectors,
/// `P̂_i = P̃_i + Σ_j w_ij (P̃_i − P̃_j) / N`, which makes the estimate exactly
/// translation and rotation equivariant because `w` depends only on
/// invariant inputs.
pub fn denoise_head<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    g: Var,
    x_noisy: Var,
    noisy_coords: &[[f64; 3]],
    noisy_dist: &[f64],
) -> Result<DenoiseOutput, ModelError> {
    let n = noisy_coords.len();
    let c = cfg.embed_dim;
    let k = cfg.n_dist_kernels;
    let atoms = atom_tokens(s, g)?;

    let eps_hat = mlp2(s, atoms, "denoise_head.eps")?;
    let x_hat = s.g.sub(x_noisy, eps_hat)?;

    let h = linear(s, atoms, "denoise_head.pair.wh", "denoise_head.pair.bh")?;
    let hi = s.g.reshape(h, &[n, 1, c])?;
    let hj = s.g.reshape(h, &[1, n, c])?;
    let prod = s.g.mul(hi, hj)?;
    let rbf = kernel_features(s, DENOISE, noisy_dist, n)?;
    let rbf = s.g.reshape(rbf, &[n * n, k])?;
    let wr = s.p("denoise_head.pair.wr")?;
    let r = s.g.matmul(rbf, wr)?;
    let raw = s.constant_f64(&[n * n, 1], noisy_dist)?;
    let wd = s.p("denoise_head.pair.wd")?;
    let rd = s.g.matmul(raw, wd)?;
    let r = s.g.add(r, rd)?;
    let r = s.g.reshape(r, &[n, n, c])?;
    let pf = s.g.add(prod, r)?;
    let pb = s.p("denoise_head.pair.b")?;
    let pf = s.g.add(pf, pb)?;
    let pf = s.g.gelu(pf);
    let pf = s.g.reshape(pf, &[n * n, c])?;

    let w = mlp2(s, pf, "denoise_head.coord")?;
    let w3 = s.g.reshape(w, &[n, n, 1])?;
    let mut delta = Vec::with_capacity(n * n * 3);
    for pi in noisy_coords {
        for pj in noisy_coords {
            delta.extend((0..3).map(|a| pi[a] - pj[a]));
        }
    }
    let delta = s.constant_f64(&[n, n, 3], &delta)?;
    let upd = s.g.mul(w3, delta)?;
    let upd = s.g.sum_axis(upd, 1)?;
    let upd = s.g.scale(upd, T::one() / T::lit(n as f64));
    let flat: Vec<f64> = noisy_coords.iter().flatten().copied().collect();
    let p_noisy = s.constant_f64(&[n, 3], &flat)?;
    let p_hat = s.g.add(p_noisy, upd)?;

    let dr = mlp2(s, pf, "denoise_head.dist")?;
    let dr = s.g.reshape(dr, &[n, n])?;
    let drt = s.g.transpose(dr)?;
    let sym = s.g.add(dr, drt)?;
    let sym = s.g.scale(sym, T::lit(0.5));
    let diag: Vec<bool> = (0..n * n).map(|i| i / n == i % n).collect();
    let sym = s.g.masked_fill(sym, &diag, T::zero())?;
    let d_noisy = s.constant_f64(&[n, n], noisy_dist)?;
    let d_hat = s.g.add(d_noisy, sym)?;

    let pair_weights = s.g.reshape(w, &[n, n])?;
    Ok(DenoiseOutput {
        eps_hat,
        x_hat,
        p_hat,
        d_hat,
        pair_weights,
    })
}

/// Auxiliary-property head on the `[MOL]` token, shape `(1, K)`.
pub fn aux_head<T: Real>(s: &mut Session<'_, T>, f: Var) -> Result<Var, ModelError> {
    let mol = readout_token(s, f)?;
    mlp2(s, mol, "aux_head")
}

/// Downstream regression output and ranking score, both `(1, 1)`, sharing
/// one MLP trunk over the `[MOL]` token.
pub fn downstream_head<T: Real>(s: &mut Session<'_, T>, f: Var) -> Result<(Var, Var), ModelError> {
    let mol = readout_token(s, f)?;
    let h = linear(s, mol, "downstream.w1", "downstream.b1")?;
    let h = s.g.gelu(h);
    let reg = linear(s, h, "downstream.reg.w", "downstream.reg.b")?;
    let score = linear(s, h, "downstream.rank.w", "downstream.rank.b")?;
    Ok((reg, score))
}

/// Ranking logit `s(m₂) − s(m₁)`; its sigmoid is the probability that the
/// second molecule's property is at least the first's (label 1).
pub fn pair_logit<T: Real>(
    s: &mut Session<'_, T>,
    score1: Var,
    score2: Var,
) -> Result<Var, ModelError> {
    Ok(s.g.sub(score2, score1)?)
}

/// Stage-1 forward pass inputs for one molecule.
#[derive(Debug, Clone, Copy)]
pub struct BranchInputs<'a> {
    pub atom_ids: &'a [usize],
    pub masked: &'a [usize],
    pub clean_dist: &'a [f64],
    pub eps1: &'a [f64],
    pub noisy_coords: &'a [[f64; 3]],
    pub noisy_dist: &'a [f64],
    pub sigma: f64,
}

/// Stage-1 forward outputs for one molecule.
#[derive(Debug, Clone, Copy)]
pub struct BranchOutputs {
    pub features: Var,
    pub map_logits: Var,
    pub pooled: Var,
    pub denoise_features: Var,
    pub denoise: DenoiseOutput,
}

/// Full branching forward pass. `use_aggregator = false` replaces the pooled
/// summary with zeros (denoiser conditioned on σ alone).
pub fn branching_forward<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    inp: &BranchInputs<'_>,
    use_aggregator: bool,
) -> Result<BranchOutputs, ModelError> {
    let n = inp.atom_ids.len();
    let features = encode_primary(s, cfg, inp.atom_ids, inp.masked, inp.clean_dist)?;
    let map_logits = map_head(s, features)?;

    let pooled = if use_aggregator {
        aggregate(s, cfg, features)?
    } else {
        s.constant(diffcore::Tensor::zeros(&[1, cfg.embed_dim]))
    };
    let sig = sigma_embed(s, inp.sigma)?;
    let agg_token = s.g.add(pooled, sig)?;
    let x = atom_embeddings(s, inp.atom_ids)?;
    let eps = s.constant_f64(&[n, 1], inp.eps1)?;
    let x_noisy = s.g.add(x, eps)?;
    let g = encode_denoise(s, cfg, x_noisy, inp.noisy_dist, agg_token)?;
    let denoise = denoise_head(s, cfg, g, x_noisy, inp.noisy_coords, inp.noisy_dist)?;
    Ok(BranchOutputs {
        features,
        map_logits,
        pooled,
        denoise_features: g,
        denoise,
    })
}

/// Single-encoder ablation: the primary stack sees masked, noised embeddings
/// and noisy distances, and both heads read its output. No aggregator and no
/// σ token are involved.
pub fn coupled_forward<T: Real>(
    s: &mut Session<'_, T>,
    cfg: &EncoderConfig,
    inp: &BranchInputs<'_>,
) -> Result<BranchOutputs, ModelError> {
    let n = inp.atom_ids.len();
    check_atoms(cfg, n)?;
    let mut ids = inp.atom_ids.to_vec();
    for &m in inp.masked {
        ids[m] = cfg.mask_id();
    }
    let x = atom_embeddings(s, &ids)?;
    let eps = s.constant_f64(&[n, 1], inp.eps1)?;
    let x_noisy = s.g.add(x, eps)?;
    let mol = s.p(&format!("{PRIMARY}.mol_token"))?;
    let tokens = s.g.concat(&[mol, x_noisy], 0)?;
    let bias = embed_pairs(s, cfg, PRIMARY, inp.noisy_dist, n)?;
    let features = encoder_stack(s, cfg, PRIMARY, tokens, bias)?;
    let map_logits = map_head(s, features)?;
    let denoise = denoise_head(s, cfg, features, x_noisy, inp.noisy_coords, inp.noisy_dist)?;
    let pooled = readout_token(s, features)?;
    Ok(BranchOutputs {
        features,
        map_logits,
        pooled,
        denoise_features: features,
        denoise,
    })
}

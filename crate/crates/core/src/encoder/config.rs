use serde::{Deserialize, Serialize};

use crate::chemio::Element;

/// Shape hyperparameters of the branching encoder and its heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub n_heads: usize,
    /// Atom classes; the embedding table has one extra row for `[MASK]`.
    pub vocab_size: usize,
    pub n_dist_kernels: usize,
    pub max_atoms: usize,
    /// Auxiliary regression targets read by the stage-2 head.
    #[serde(default = "default_aux")]
    pub n_aux_targets: usize,
}

fn default_aux() -> usize {
    3
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    /// Small CPU-sized configuration.
    pub fn desk() -> Self {
        Self {
            n_layers: 4,
            embed_dim: 64,
            ffn_dim: 256,
            n_heads: 4,
            vocab_size: Element::COUNT,
            n_dist_kernels: 16,
            max_atoms: 64,
            n_aux_targets: 3,
        }
    }

    /// Full-size architecture: 15 layers, width 512, FFN 2048.
    pub fn paper() -> Self {
        Self {
            n_layers: 15,
            embed_dim: 512,
            ffn_dim: 2048,
            n_heads: 64,
            vocab_size: Element::COUNT,
            n_dist_kernels: 16,
            max_atoms: 128,
            n_aux_targets: 3,
        }
    }

    /// Row of the embedding table used for masked atoms.
    pub fn mask_id(&self) -> usize {
        self.vocab_size
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("n_layers", self.n_layers),
            ("embed_dim", self.embed_dim),
            ("ffn_dim", self.ffn_dim),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("n_dist_kernels", self.n_dist_kernels),
            ("max_atoms", self.max_atoms),
            ("n_aux_targets", self.n_aux_targets),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be >= 1"));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            ));
        }
        if self.vocab_size < Element::COUNT {
            return Err(format!(
                "vocab_size {} smaller than the {} atom classes",
                self.vocab_size,
                Element::COUNT
            ));
        }
        Ok(())
    }
}

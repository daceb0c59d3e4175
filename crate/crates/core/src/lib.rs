//! Two-stage molecular pretraining with a branching encoder.
//!
//! Stage 1 trains a primary masked-atom encoder jointly with a denoising
//! encoder that sees an attention-pooled summary of the primary features.
//! Stage 2 keeps only the primary encoder and fits auxiliary properties.
//! Downstream finetuning regresses assay labels and can add a pairwise
//! ranking loss whose labels are gated on their rank correlation.

pub mod chemio;
pub mod config;
pub mod corruption;
pub mod encoder;
pub mod evalbench;
pub mod ranklab;
pub mod synth;
pub mod training;

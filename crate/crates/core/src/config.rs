//! Run configuration document shared by every CLI command.
//!
//! One JSON object with optional per-command sections. Each `train` block
//! and the `encoder` block are overlays: keys given replace the matching keys
//! of the preset (desk, or paper when `paper_scale` is set), unknown keys are
//! errors. The run seed lives at the top level only.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::encoder::EncoderConfig;
use crate::ranklab::{Descriptor, DEFAULT_PAIR_CAP, GATE_THRESHOLD};
use crate::training::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("i/o error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("config section '{section}': {msg}")]
    Invalid { section: String, msg: String },
    #[error("config references missing path {0}")]
    MissingPath(PathBuf),
}

fn invalid(section: &str, msg: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        section: section.to_string(),
        msg: msg.to_string(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    paper_scale: bool,
    #[serde(default = "yes")]
    strip_hydrogens: bool,
    #[serde(default)]
    encoder: Map<String, Value>,
    stage1: Option<RawStage1>,
    stage2: Option<RawTrain>,
    finetune: Option<RawFinetune>,
    eval: Option<RawEval>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage1 {
    data: PathBuf,
    #[serde(default)]
    synthesize_coords: bool,
    #[serde(default)]
    train: Map<String, Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    #[serde(default)]
    train: Map<String, Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFinetune {
    #[serde(default)]
    train: Map<String, Value>,
    #[serde(default = "yes")]
    use_pairs: bool,
    #[serde(default = "gate_default")]
    gate_threshold: f64,
}

fn gate_default() -> f64 {
    GATE_THRESHOLD
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEval {
    #[serde(default = "splits_default")]
    n_splits: usize,
    ranking: Option<RankingSection>,
}

fn splits_default() -> usize {
    3
}

/// Mock ranking labels generated inside each evaluation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingSection {
    pub descriptor: String,
    #[serde(default)]
    pub flip_prob: f64,
    #[serde(default = "cap_default")]
    pub pair_cap: usize,
}

fn cap_default() -> usize {
    DEFAULT_PAIR_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage1Section {
    /// Directory of `.xyz` files, one `.xyz` file, a property CSV, or a
    /// SMILES list (one per line).
    pub data: PathBuf,
    /// Place atoms on the deterministic helix when the data has no
    /// coordinates.
    pub synthesize_coords: bool,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinetuneSection {
    pub train: TrainConfig,
    pub use_pairs: bool,
    pub gate_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSection {
    pub n_splits: usize,
    pub ranking: Option<RankingSection>,
}

/// Resolved configuration: presets applied, every train block validated
/// and seeded with the run seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub paper_scale: bool,
    pub strip_hydrogens: bool,
    pub encoder: EncoderConfig,
    pub stage1: Option<Stage1Section>,
    pub stage2: Option<TrainConfig>,
    pub finetune: Option<FinetuneSection>,
    pub eval: Option<EvalSection>,
}

fn overlay<T>(section: &str, preset: &T, keys: Map<String, Value>) -> Result<T, ConfigError>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut base = match serde_json::to_value(preset) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("presets serialize to objects"),
    };
    for (k, v) in keys {
        if !base.contains_key(&k) {
            return Err(invalid(section, format!("unknown key '{k}'")));
        }
        base.insert(k, v);
    }
    serde_json::from_value(Value::Object(base)).map_err(|e| invalid(section, e))
}

impl RunConfig {
    fn train(&self, section: &str, keys: Map<String, Value>) -> Result<TrainConfig, ConfigError> {
        if keys.contains_key("seed") {
            return Err(invalid(section, "the seed is set once, at the top level"));
        }
        let preset = if self.paper_scale {
            TrainConfig::paper()
        } else {
            TrainConfig::default()
        };
        let mut tc: TrainConfig = overlay(section, &preset, keys)?;
        tc.seed = self.seed;
        tc.validate().map_err(|e| invalid(section, e))?;
        Ok(tc)
    }

    /// Replaces the run seed in every section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let Some(s) = &mut self.stage1 {
            s.train.seed = seed;
        }
        if let Some(t) = &mut self.stage2 {
            t.seed = seed;
        }
        if let Some(f) = &mut self.finetune {
            f.train.seed = seed;
        }
        self
    }

    pub fn descriptor(&self) -> Result<Option<Descriptor>, ConfigError> {
        self.eval
            .as_ref()
            .and_then(|e| e.ranking.as_ref())
            .map(|r| r.descriptor.parse().map_err(|e| invalid("eval.ranking", e)))
            .transpose()
    }
}

/// Parses and resolves a configuration document without touching the file
/// system.
pub fn parse_run_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: Raw = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let enc_preset = if raw.paper_scale {
        EncoderConfig::paper()
    } else {
        EncoderConfig::desk()
    };
    let encoder: EncoderConfig = overlay("encoder", &enc_preset, raw.encoder)?;
    encoder.validate().map_err(|e| invalid("encoder", e))?;
    let mut cfg = RunConfig {
        seed: raw.seed,
        paper_scale: raw.paper_scale,
        strip_hydrogens: raw.strip_hydrogens,
        encoder,
        stage1: None,
        stage2: None,
        finetune: None,
        eval: None,
    };
    if let Some(s) = raw.stage1 {
        cfg.stage1 = Some(Stage1Section {
            train: cfg.train("stage1", s.train)?,
            data: s.data,
            synthesize_coords: s.synthesize_coords,
        });
    }
    if let Some(s) = raw.stage2 {
        cfg.stage2 = Some(cfg.train("stage2", s.train)?);
    }
    if let Some(f) = raw.finetune {
        if !(f.gate_threshold >= 0.0 && f.gate_threshold <= 1.0) {
            return Err(invalid("finetune", "gate_threshold must lie in [0, 1]"));
        }
        cfg.finetune = Some(FinetuneSection {
            train: cfg.train("finetune", f.train)?,
            use_pairs: f.use_pairs,
            gate_threshold: f.gate_threshold,
        });
    }
    if let Some(e) = raw.eval {
        if e.n_splits == 0 {
            return Err(invalid("eval", "n_splits must be >= 1"));
        }
        if let Some(r) = &e.ranking {
            if !(0.0..=1.0).contains(&r.flip_prob) {
                return Err(invalid("eval.ranking", "flip_prob must lie in [0, 1]"));
            }
        }
        cfg.eval = Some(EvalSection {
            n_splits: e.n_splits,
            ranking: e.ranking,
        });
    }
    cfg.descriptor()?;
    Ok(cfg)
}

/// Reads `path`, resolves relative data paths against its directory and
/// checks that they exist.
pub fn load_run_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let mut cfg = parse_run_config(&std::fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    if let Some(s) = &mut cfg.stage1 {
        if s.data.is_relative() {
            s.data = base.join(&s.data);
        }
        if !s.data.exists() {
            return Err(ConfigError::MissingPath(s.data.clone()));
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_desk() {
        let c = parse_run_config("{}").unwrap();
        assert_eq!(c.encoder, EncoderConfig::desk());
        assert!(c.strip_hydrogens && c.stage1.is_none());
    }

    #[test]
    fn overlays_replace_preset_keys() {
        let c = parse_run_config(
            r#"{"seed": 7, "paper_scale": true, "encoder": {"n_layers": 2},
                "stage2": {"train": {"epochs": 5}}}"#,
        )
        .unwrap();
        assert_eq!(c.encoder.n_layers, 2);
        assert_eq!(c.encoder.embed_dim, 512);
        let t = c.stage2.unwrap();
        assert_eq!((t.epochs, t.batch_size, t.seed), (5, 32, 7));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            r#"{"sede": 1}"#,
            r#"{"encoder": {"layers": 2}}"#,
            r#"{"stage2": {"train": {"lr_max": 1}}}"#,
            r#"{"finetune": {"gate": 0.4}}"#,
        ] {
            assert!(parse_run_config(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn section_seed_is_rejected() {
        let e = parse_run_config(r#"{"stage2": {"train": {"seed": 3}}}"#).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { .. }));
    }

    #[test]
    fn syntax_error_has_position() {
        let e = parse_run_config("{\n  \"seed\": ,\n}").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 2, .. }));
    }
}

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub stage: String,
    /// Optimizer step (stage 1) or epoch (stage 2, finetune).
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_map: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_rank: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_accuracy: Option<f64>,
}

impl MetricsRecord {
    pub fn new(stage: &str, step: u64, lr: f64, loss: f64) -> Self {
        Self {
            stage: stage.to_string(),
            step,
            lr,
            loss,
            l_map: None,
            l_x: None,
            l_p: None,
            l_d: None,
            l_rank: None,
            map_accuracy: None,
        }
    }
}

/// Line-delimited JSON sink.
pub struct MetricsLog<W: Write> {
    out: W,
}

impl<W: Write> MetricsLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, rec: &MetricsRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Result file written by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub command: String,
    pub version: String,
    /// The fully resolved configuration the run used.
    pub config: Value,
    pub results: Value,
    /// Timings; the only part of a document that differs between reruns.
    pub wall_clock: Value,
}

impl Document {
    pub fn new(command: &str, config: Value, results: Value, wall_clock: Value) -> Self {
        Document {
            command: command.to_string(),
            version: expoloss::VERSION.to_string(),
            config,
            results,
            wall_clock,
        }
    }

    pub fn to_pretty_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("documents are plain JSON");
        s.push('\n');
        s
    }

    /// Copy with the wall-clock field cleared, for comparing reruns.
    pub fn without_wall_clock(&self) -> Document {
        Document {
            wall_clock: Value::Null,
            ..self.clone()
        }
    }
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len();
        if n == 0 {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std, n }
    }
}

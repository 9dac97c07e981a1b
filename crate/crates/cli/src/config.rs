//! Experiment configuration: JSON schema, validation with pointer paths,
//! and assembly of the core model specification.

use crate::dupkeys::find_duplicate_keys;
use mdplab_core::models::{FamilySpec, ModelSpec};
use mdplab_core::speed::SpeedSequence;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Check,
    Simulate,
    Blocks,
    Rate,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TaskKind::Check => "check",
            TaskKind::Simulate => "simulate",
            TaskKind::Blocks => "blocks",
            TaskKind::Rate => "rate",
        };
        f.write_str(s)
    }
}

/// The model section `{"family": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(flatten)]
    pub family: FamilySpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub speed: Option<SpeedSequence>,
    #[serde(default)]
    pub n_grid: Vec<u64>,
    /// Task-specific parameters; parsed by the task runners.
    #[serde(default)]
    pub params: serde_json::Value,
    /// Master seed; wall-clock seeding is not supported.
    pub seed: u64,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    /// Assemble the core model document from the config sections.
    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| CliError::config("/model", "this task needs a model section"))?;
        let speed = self
            .speed
            .clone()
            .ok_or_else(|| CliError::config("/speed", "this task needs a speed section"))?;
        Ok(ModelSpec {
            family: model.family.clone(),
            speed,
            n_grid: self.n_grid.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub pointer: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("configuration invalid:\n{}", render(.violations))]
    Config { violations: Vec<Violation> },
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(#[from] mdplab_core::Error),
    #[error("cannot write output: {0}")]
    Output(String),
}

fn render(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("  {}: {}", v.pointer, v.message))
        .collect::<Vec<_>>()
        .join("\n")
}

impl CliError {
    pub fn config(pointer: &str, message: &str) -> Self {
        CliError::Config {
            violations: vec![Violation {
                pointer: pointer.into(),
                message: message.into(),
            }],
        }
    }

    /// Process exit code: 2 for usage/config problems, 1 is reserved for
    /// checker failures and produced by the run loop, not by errors.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

/// Read, scan, and validate a configuration. Returns the config plus
/// warnings (duplicate keys resolve last-wins and are reported, not fatal).
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Vec<String>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let warnings: Vec<String> = find_duplicate_keys(&text)
        .into_iter()
        .map(|p| format!("duplicate key {p}: the last value wins"))
        .collect();
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config {
        violations: vec![Violation {
            pointer: "/".into(),
            message: format!("not valid JSON: {e}"),
        }],
    })?;
    let mut violations = structural_violations(&value);
    if !violations.is_empty() {
        return Err(CliError::Config { violations });
    }
    let config: ExperimentConfig = match serde_json::from_value(value) {
        Ok(c) => c,
        Err(e) => {
            violations.push(Violation {
                pointer: "/".into(),
                message: e.to_string(),
            });
            return Err(CliError::Config { violations });
        }
    };
    // semantic checks that need the typed view
    if config.task != TaskKind::Rate {
        config.model_spec().and_then(|spec| {
            spec.build()
                .map_err(|err| CliError::config("/model", &err.to_string()))
        })?;
    }
    Ok((config, warnings))
}

/// Field-presence and shape checks collected all at once, so a bad config
/// reports every violation with its pointer.
fn structural_violations(value: &serde_json::Value) -> Vec<Violation> {
    let mut out = Vec::new();
    let Some(obj) = value.as_object() else {
        return vec![Violation {
            pointer: "/".into(),
            message: "top level must be an object".into(),
        }];
    };
    let task = match obj.get("task") {
        None => {
            out.push(Violation {
                pointer: "/task".into(),
                message: "missing required field".into(),
            });
            None
        }
        Some(serde_json::Value::String(s)) => {
            if ["check", "simulate", "blocks", "rate"].contains(&s.as_str()) {
                Some(s.clone())
            } else {
                out.push(Violation {
                    pointer: "/task".into(),
                    message: format!("unknown task `{s}` (expected check|simulate|blocks|rate)"),
                });
                None
            }
        }
        Some(_) => {
            out.push(Violation {
                pointer: "/task".into(),
                message: "must be a string".into(),
            });
            None
        }
    };
    match obj.get("seed") {
        None => out.push(Violation {
            pointer: "/seed".into(),
            message: "missing required field (wall-clock seeding is not supported)".into(),
        }),
        Some(v) if !v.is_u64() => out.push(Violation {
            pointer: "/seed".into(),
            message: "must be an unsigned integer".into(),
        }),
        _ => {}
    }
    let needs_model = matches!(task.as_deref(), Some("check" | "simulate" | "blocks"));
    if needs_model {
        for key in ["model", "speed", "n_grid"] {
            if !obj.contains_key(key) {
                out.push(Violation {
                    pointer: format!("/{key}"),
                    message: "missing required field for this task".into(),
                });
            }
        }
    }
    if let Some(grid) = obj.get("n_grid") {
        match grid.as_array() {
            Some(arr) => {
                let ns: Option<Vec<u64>> = arr.iter().map(|v| v.as_u64()).collect();
                match ns {
                    Some(ns) if needs_model && ns.is_empty() => out.push(Violation {
                        pointer: "/n_grid".into(),
                        message: "must not be empty".into(),
                    }),
                    Some(ns) => {
                        if ns.windows(2).any(|w| w[0] >= w[1]) {
                            out.push(Violation {
                                pointer: "/n_grid".into(),
                                message: "must be strictly increasing".into(),
                            });
                        }
                        if ns.contains(&0) {
                            out.push(Violation {
                                pointer: "/n_grid".into(),
                                message: "entries must be positive".into(),
                            });
                        }
                    }
                    None => out.push(Violation {
                        pointer: "/n_grid".into(),
                        message: "entries must be unsigned integers".into(),
                    }),
                }
            }
            None => out.push(Violation {
                pointer: "/n_grid".into(),
                message: "must be an array".into(),
            }),
        }
    }
    out
}

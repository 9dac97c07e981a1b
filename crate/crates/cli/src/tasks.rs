//! Task runners: parse task-specific parameters, drive the library, and
//! shape the results into report.json / report.csv payloads.

use crate::config::{CliError, ExperimentConfig, TaskKind};
use crate::report::TaskOutput;
use mdplab_core::conditions::{
    build_regularity, check_core, check_exp_counterexample, check_onecondm, check_sufficient,
    ConditionReport, CoreCheck, SufficientRoute, Verdict,
};
use mdplab_core::dependence::{couple_blocks, plan_blocks};
use mdplab_core::mc::{mdp_curve, CurveEvent, McConfig, Method};
use mdplab_core::models::TriangularArrayModel;
use mdplab_core::paths::{
    kernel_rate, rate_event_infimum, rate_i, rate_im, PathEvent, PiecewisePath, RateForm,
    RatePartition,
};
use mdplab_core::speed::SpeedSequence;
use serde::Deserialize;
use serde_json::json;

pub fn run_task(cfg: &ExperimentConfig, seed: u64) -> Result<TaskOutput, CliError> {
    match cfg.task {
        TaskKind::Check => run_check(cfg),
        TaskKind::Simulate => run_simulate(cfg, seed),
        TaskKind::Blocks => run_blocks(cfg, seed),
        TaskKind::Rate => run_rate(cfg),
    }
}

fn parse_params<T: serde::de::DeserializeOwned + Default>(
    value: &serde_json::Value,
) -> Result<T, CliError> {
    if value.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(value.clone()).map_err(|e| CliError::config("/params", &e.to_string()))
}

fn build_model(cfg: &ExperimentConfig) -> Result<(TriangularArrayModel, SpeedSequence), CliError> {
    let spec = cfg.model_spec()?;
    let speed = spec.speed.clone();
    let model = spec.build()?;
    Ok((model, speed))
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckParams {
    #[serde(default = "default_checks")]
    checks: Vec<String>,
    #[serde(default = "one")]
    epsilon: f64,
    #[serde(default = "three")]
    beta: f64,
    #[serde(default = "one")]
    c1: f64,
    /// Extends the tail-grid u range down to this epsilon.
    #[serde(default)]
    tail_epsilon: Option<f64>,
    /// Level for the counterexample necessity check.
    #[serde(default = "nine")]
    counterexample_level: f64,
}

impl Default for CheckParams {
    fn default() -> Self {
        CheckParams {
            checks: default_checks(),
            epsilon: 1.0,
            beta: 3.0,
            c1: 1.0,
            tail_epsilon: None,
            counterexample_level: 9.0,
        }
    }
}

fn default_checks() -> Vec<String> {
    [
        "lindeberg",
        "exp_banded",
        "exp_full",
        "tail_grid",
        "max_neg",
    ]
    .map(str::to_string)
    .to_vec()
}

fn one() -> f64 {
    1.0
}

fn three() -> f64 {
    3.0
}

fn nine() -> f64 {
    9.0
}

fn run_check(cfg: &ExperimentConfig) -> Result<TaskOutput, CliError> {
    let params: CheckParams = parse_params(&cfg.params)?;
    let (model, speed) = build_model(cfg)?;
    let mut reports: Vec<ConditionReport> = Vec::new();
    let mut extras = serde_json::Map::new();
    for name in &params.checks {
        match name.as_str() {
            "lindeberg" => reports.push(check_core(
                &model,
                &speed,
                CoreCheck::Lindeberg {
                    epsilon: params.epsilon,
                },
            )?),
            "exp_banded" => reports.push(check_core(
                &model,
                &speed,
                CoreCheck::ExpBanded { beta: params.beta },
            )?),
            "exp_full" => reports.push(check_core(
                &model,
                &speed,
                CoreCheck::ExpFull {
                    beta: params.beta,
                    epsilon: params.epsilon,
                },
            )?),
            "tail_grid" => reports.push(check_core(
                &model,
                &speed,
                CoreCheck::TailGrid {
                    beta: params.beta,
                    c1: params.c1,
                    epsilon: params.tail_epsilon,
                },
            )?),
            "max_neg" => reports.push(check_core(&model, &speed, CoreCheck::MaxNeg)?),
            "onecondm" => {
                let rc = build_regularity(&model, &speed)?;
                extras.insert("regularity".into(), serde_json::to_value(&rc).unwrap());
                reports.push(check_onecondm(&model, &speed, &rc)?);
            }
            "sufficient_iid" => {
                reports.extend(check_sufficient(&model, &speed, SufficientRoute::Iid)?)
            }
            "sufficient_linear" => reports.extend(check_sufficient(
                &model,
                &speed,
                SufficientRoute::LinearCoeffs,
            )?),
            "sufficient_envelope" => reports.extend(check_sufficient(
                &model,
                &speed,
                SufficientRoute::MomentEnvelope,
            )?),
            "counterexample" => {
                let c = check_exp_counterexample(&model, &speed, params.counterexample_level)?;
                extras.insert(
                    "counterexample".into(),
                    json!({
                        "limsup": c.limsup,
                        "threshold": c.threshold,
                        "necessity_violated": c.necessity_violated,
                    }),
                );
                reports.push(c.report);
            }
            other => {
                return Err(CliError::config(
                    "/params/checks",
                    &format!("unknown check `{other}`"),
                ))
            }
        }
    }
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| r.verdict == Verdict::Fail)
        .map(|r| r.condition_id.clone())
        .collect();
    let mut csv = String::from("condition_id,n,diagnostic,verdict\n");
    for r in &reports {
        let verdict = serde_json::to_value(r.verdict).unwrap();
        for (n, d) in r.n_grid.iter().zip(&r.diagnostics) {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                r.condition_id,
                n,
                d,
                verdict.as_str().unwrap()
            ));
        }
    }
    let mut report = json!({ "reports": reports });
    for (k, v) in extras {
        report[k] = v;
    }
    Ok(TaskOutput {
        report,
        csv,
        failed,
        stdout_line: None,
    })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EventSpec {
    #[default]
    Endpoint,
    Sup,
    Increment { t1: f64, t2: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateParams {
    #[serde(default)]
    event: EventSpec,
    t_grid: Vec<f64>,
    #[serde(default = "default_spb")]
    samples_per_batch: u64,
    #[serde(default = "default_batches")]
    batches: u64,
    /// auto (default), analytic, tilted, or crude.
    #[serde(default)]
    method: Option<String>,
}

impl Default for SimulateParams {
    fn default() -> Self {
        SimulateParams {
            event: EventSpec::Endpoint,
            t_grid: Vec::new(),
            samples_per_batch: default_spb(),
            batches: default_batches(),
            method: None,
        }
    }
}

fn default_spb() -> u64 {
    12_500
}

fn default_batches() -> u64 {
    8
}

fn run_simulate(cfg: &ExperimentConfig, seed: u64) -> Result<TaskOutput, CliError> {
    let params: SimulateParams = parse_params(&cfg.params)?;
    if params.t_grid.is_empty() {
        return Err(CliError::config("/params/t_grid", "must not be empty"));
    }
    let force = match params.method.as_deref() {
        None | Some("auto") => None,
        Some("analytic") => Some(Method::Analytic),
        Some("tilted") => Some(Method::Tilted),
        Some("crude") => Some(Method::Crude),
        Some(other) => {
            return Err(CliError::config(
                "/params/method",
                &format!("unknown method `{other}`"),
            ))
        }
    };
    let (model, speed) = build_model(cfg)?;
    let curve_event = match params.event {
        EventSpec::Endpoint => CurveEvent::Endpoint,
        EventSpec::Sup => CurveEvent::Sup,
        EventSpec::Increment { t1, t2 } => CurveEvent::Increment { t1, t2 },
    };
    let mc = McConfig::new(params.samples_per_batch, params.batches, seed);
    let cells = mdp_curve(&model, &speed, curve_event, &params.t_grid, &mc, force)?;
    let mut csv = String::from("n,a_n,t,method,p_hat,se,log_scaled,rate,gap\n");
    for c in &cells {
        let method = serde_json::to_value(c.method).unwrap();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            c.n,
            c.a_n,
            c.t,
            method.as_str().unwrap(),
            c.p_hat,
            c.se,
            c.log_scaled,
            c.rate,
            c.gap
        ));
    }
    Ok(TaskOutput {
        report: json!({ "cells": cells }),
        csv,
        failed: vec![],
        stdout_line: None,
    })
}

// ---------------------------------------------------------------------------
// blocks
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlocksParams {
    #[serde(default)]
    epsilon: Option<f64>,
    /// When the model carries a chain, also run the block coupling.
    #[serde(default)]
    couple_replicas: Option<u64>,
    #[serde(default)]
    tau_lags: Option<Vec<usize>>,
}

fn run_blocks(cfg: &ExperimentConfig, seed: u64) -> Result<TaskOutput, CliError> {
    let params: BlocksParams = parse_params(&cfg.params)?;
    let (model, speed) = build_model(cfg)?;
    let mut schemes = Vec::new();
    let mut csv = String::from("n,p,q,k,epsilon,eps2_n_an2,eps2_n_an_over_log\n");
    let mut couplings = Vec::new();
    for &n in model.n_grid() {
        let a_n = speed.value(n)?;
        let scheme = plan_blocks(n, a_n, params.epsilon)?;
        let diag = scheme.diagnostics(a_n);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            n,
            scheme.p,
            scheme.q,
            scheme.k,
            scheme.epsilon,
            diag.eps2_n_an2,
            diag.eps2_n_an_over_log
        ));
        if let (Some(chain), Some(replicas)) = (model.chain(), params.couple_replicas) {
            couplings.push(json!({
                "n": n,
                "report": couple_blocks(chain, &scheme, replicas, seed)?,
            }));
        }
        schemes.push(json!({ "scheme": scheme, "diagnostics": diag }));
    }
    let tau_profile = match model.chain() {
        Some(chain) => {
            let lags = params.tau_lags.unwrap_or_else(|| (1..=20).collect());
            Some(chain.tau_profile(&lags)?)
        }
        None => None,
    };
    Ok(TaskOutput {
        report: json!({
            "schemes": schemes,
            "tau_profile": tau_profile,
            "coupling": couplings,
        }),
        csv,
        failed: vec![],
        stdout_line: None,
    })
}

// ---------------------------------------------------------------------------
// rate
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct PartitionSpec {
    times: Vec<f64>,
    levels: Vec<f64>,
    #[serde(default = "default_form")]
    form: RateForm,
}

fn default_form() -> RateForm {
    RateForm::Levels
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RateParams {
    #[serde(default)]
    path: Option<serde_json::Value>,
    #[serde(default)]
    path_file: Option<String>,
    #[serde(default)]
    partition: Option<PartitionSpec>,
    #[serde(default)]
    events: Vec<PathEvent>,
    #[serde(default = "default_grid")]
    grid_size: usize,
    /// Optional (f(x), int K^2) rescaling of the path rate.
    #[serde(default)]
    kernel_scale: Option<(f64, f64)>,
}

fn default_grid() -> usize {
    64
}

fn run_rate(cfg: &ExperimentConfig) -> Result<TaskOutput, CliError> {
    let params: RateParams = parse_params(&cfg.params)?;
    let mut report = serde_json::Map::new();
    let mut csv = String::from("quantity,value\n");
    let mut stdout_line = None;

    let path_value: Option<serde_json::Value> = match (&params.path, &params.path_file) {
        (Some(v), _) => Some(v.clone()),
        (None, Some(file)) => {
            let text = std::fs::read_to_string(file).map_err(|e| CliError::Io {
                path: file.clone(),
                message: e.to_string(),
            })?;
            Some(serde_json::from_str(&text).map_err(|e| {
                CliError::config("/params/path_file", &format!("invalid path JSON: {e}"))
            })?)
        }
        (None, None) => None,
    };
    if let Some(v) = path_value {
        let path: PiecewisePath = serde_json::from_value(v)
            .map_err(|e| CliError::config("/params/path", &e.to_string()))?;
        let mut value = rate_i(&path);
        if let Some((fx, k2)) = params.kernel_scale {
            value = kernel_rate(value, fx, k2)?;
            report.insert("kernel_scale".into(), json!({ "fx": fx, "k2": k2 }));
        }
        report.insert("rate_i".into(), json!(value));
        csv.push_str(&format!("rate_i,{value}\n"));
        stdout_line = Some(format!("{value}"));
    }
    if let Some(p) = &params.partition {
        let partition = RatePartition {
            times: p.times.clone(),
            levels: p.levels.clone(),
        };
        let value = rate_im(&partition, p.form)?;
        report.insert("rate_im".into(), json!(value));
        csv.push_str(&format!("rate_im,{value}\n"));
        if stdout_line.is_none() {
            stdout_line = Some(format!("{value}"));
        }
    }
    if !params.events.is_empty() {
        let mut infima = Vec::new();
        for &event in &params.events {
            let inf = rate_event_infimum(event, params.grid_size)?;
            csv.push_str(&format!("event_infimum,{}\n", inf.closed_form));
            infima.push(json!({ "event": event, "infimum": inf }));
        }
        report.insert("event_infima".into(), serde_json::Value::Array(infima));
    }
    if report.is_empty() {
        return Err(CliError::config(
            "/params",
            "rate task needs a path, a partition, or events",
        ));
    }
    Ok(TaskOutput {
        report: serde_json::Value::Object(report),
        csv,
        failed: vec![],
        stdout_line,
    })
}

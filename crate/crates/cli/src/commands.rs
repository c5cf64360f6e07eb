use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use expoloss::bounds::{
    lemma2_mc_check, theorem2_confidence, theorem3_confidence, BoundQuery, Lemma2Config,
    LipschitzProfile,
};
use expoloss::gradcheck::{self, GradcheckReport};
use expoloss::optim::EpochMetrics;
use expoloss::{BaseLoss, LossSpec, TransformParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::{BoundsArgs, GradcheckArgs, Lemma2Args, TrainArgs, TransformPlotArgs};
use crate::config::resolve;
use crate::document::{Document, MeanStd};
use crate::experiment::{from_flags, run_cell, ExperimentConfig, Prepared, Run};
use crate::{write_text, CliError, Outcome, Result};

/// Published accuracies for the noisy-label benchmark, shipped for side by
/// side reporting only.
pub const TABLE2_REFERENCE: &str = include_str!("../data/table2_reference.json");

fn emit(doc: Document, out: Option<&Path>, failures: Vec<String>) -> Result<Outcome> {
    write_text(out, &doc.to_pretty_json())?;
    Ok(Outcome {
        document: Some(doc),
        failures,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformPlotConfig {
    pub losses: Vec<BaseLoss>,
    pub e: Vec<f64>,
    pub c: f64,
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

/// `yhat` followed by one column per (loss, e): the loss of label +1.
pub fn transform_plot_csv(cfg: &TransformPlotConfig) -> Result<String> {
    if cfg.steps < 2 {
        return Err(CliError::Config("steps must be at least 2".into()));
    }
    if !(cfg.min < cfg.max) {
        return Err(CliError::Config("min must be below max".into()));
    }
    if cfg.losses.iter().any(|l| !l.is_binary()) {
        return Err(CliError::Config(
            "transform-plot covers the binary margin losses".into(),
        ));
    }
    let mut specs = Vec::new();
    let mut header = vec!["yhat".to_string()];
    for &base in &cfg.losses {
        for &e in &cfg.e {
            specs.push(LossSpec::new(base, TransformParams::new(e, cfg.c)?));
            header.push(format!("{}_e{e}", base.name()));
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)
        .map_err(|e| CliError::Config(e.to_string()))?;
    for i in 0..cfg.steps {
        let x = cfg.min + (cfg.max - cfg.min) * i as f64 / (cfg.steps - 1) as f64;
        let mut row = vec![x.to_string()];
        for s in &specs {
            row.push(s.eval(&[x], 1)?.value.to_string());
        }
        w.write_record(&row)
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of numbers is utf-8"))
}

pub fn transform_plot(a: &TransformPlotArgs) -> Result<Outcome> {
    let c = &a.common;
    let flags = TransformPlotConfig {
        losses: match c.loss {
            Some(l) => vec![l],
            None => vec![BaseLoss::Logistic, BaseLoss::Hinge],
        },
        e: if c.e.is_empty() {
            vec![1.0, 0.75, 0.6]
        } else {
            c.e.clone()
        },
        c: c.c,
        min: a.min,
        max: a.max,
        steps: a.steps,
    };
    let (cfg, _) = resolve(flags, c.config.as_deref())?;
    write_text(c.out.as_deref(), &transform_plot_csv(&cfg)?)?;
    Ok(Outcome {
        document: None,
        failures: Vec::new(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    pub losses: Vec<BaseLoss>,
    pub e: Vec<f64>,
    pub c: f64,
    pub samples: usize,
    pub num_classes: usize,
    pub seed: u64,
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<Outcome> {
    let c = &a.common;
    let flags = GradcheckConfig {
        losses: match c.loss {
            Some(l) => vec![l],
            None => vec![BaseLoss::Logistic, BaseLoss::Hinge, BaseLoss::SoftmaxCe],
        },
        e: if c.e.is_empty() {
            vec![1.0, 0.75, 0.6]
        } else {
            c.e.clone()
        },
        c: c.c,
        samples: a.samples,
        num_classes: a.classes,
        seed: c.seed,
    };
    let (cfg, echo) = resolve(flags, c.config.as_deref())?;
    let started = Instant::now();
    let mut reports: Vec<GradcheckReport> = Vec::new();
    for &base in &cfg.losses {
        for &e in &cfg.e {
            let spec = LossSpec::new(base, TransformParams::new(e, cfg.c)?);
            reports.push(gradcheck::check_loss(
                &spec,
                cfg.samples,
                cfg.num_classes,
                cfg.seed,
            )?);
        }
    }
    let failures: Vec<String> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| {
            format!(
                "{} e={}: relative error {:e}",
                r.loss.base.name(),
                r.loss.transform.e(),
                r.max_relative_error
            )
        })
        .collect();
    let results = json!({
        "tolerance": gradcheck::TOLERANCE,
        "step": gradcheck::STEP,
        "kink_exclusion": gradcheck::KINK_EXCLUSION,
        "reports": reports,
        "pass": failures.is_empty(),
        "failures": failures,
    });
    let wall = json!({ "total_seconds": started.elapsed().as_secs_f64() });
    emit(
        Document::new("gradcheck", echo, results, wall),
        c.out.as_deref(),
        failures,
    )
}

fn checkpoint_path(base: &Path, seed: u64, many: bool) -> PathBuf {
    if !many {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = match base.extension().and_then(|s| s.to_str()) {
        Some(ext) => format!("{stem}.seed{seed}.{ext}"),
        None => format!("{stem}.seed{seed}"),
    };
    base.with_file_name(name)
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    seed: u64,
    #[serde(flatten)]
    metrics: &'a EpochMetrics,
}

fn aggregate(runs: &[Run]) -> Value {
    let pick = |f: fn(&EpochMetrics) -> f64| {
        MeanStd::of(&runs.iter().map(|r| f(&r.final_metrics)).collect::<Vec<_>>())
    };
    json!({
        "test_acc": pick(|m| m.test_acc),
        "train_acc": pick(|m| m.train_acc),
        "train_loss": pick(|m| m.train_loss),
    })
}

pub fn train(a: &TrainArgs) -> Result<Outcome> {
    let (cfg, echo) = resolve(from_flags(a, false)?, a.common.config.as_deref())?;
    cfg.validate()?;
    if cfg.e.len() != 1 || cfg.noise_rates.len() != 1 {
        return Err(CliError::Config(
            "train takes a single e and noise rate; use noise-bench for grids".into(),
        ));
    }
    let (e, rate) = (cfg.e[0], cfg.noise_rates[0]);
    let prepared = Prepared::new(&cfg)?;
    let started = Instant::now();

    let mut sink: Box<dyn std::io::Write> = match &a.metrics {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p).map_err(
            |err| CliError::Config(format!("cannot write {}: {err}", p.display())),
        )?)),
        None => Box::new(std::io::stdout()),
    };
    let mut runs = Vec::new();
    let mut seconds = Vec::new();
    for &seed in &cfg.seeds {
        let mut io_err = None;
        let (run, model, secs) = run_cell(&cfg, &prepared, e, rate, seed, |m| {
            let line =
                serde_json::to_string(&MetricsLine { seed, metrics: m }).expect("plain JSON");
            if let Err(err) = writeln!(sink, "{line}") {
                io_err.get_or_insert(err);
            }
        })?;
        if let Some(err) = io_err {
            return Err(err.into());
        }
        if let Some(p) = &a.checkpoint {
            model.save_json(checkpoint_path(p, seed, cfg.seeds.len() > 1))?;
        }
        runs.push(run);
        seconds.push(secs);
    }
    sink.flush()?;
    drop(sink);
    let results = json!({ "aggregate": aggregate(&runs), "runs": runs });
    let wall = json!({
        "total_seconds": started.elapsed().as_secs_f64(),
        "epoch_seconds": seconds,
    });
    emit(
        Document::new("train", echo, results, wall),
        a.common.out.as_deref(),
        Vec::new(),
    )
}

/// Runs the full (e, noise rate, seed) grid and assembles the document.
pub fn noise_bench_document(cfg: &ExperimentConfig, echo: Value) -> Result<Document> {
    cfg.validate()?;
    let prepared = Prepared::new(cfg)?;
    let started = Instant::now();
    let mut jobs = Vec::new();
    for &e in &cfg.e {
        for &rate in &cfg.noise_rates {
            for &seed in &cfg.seeds {
                jobs.push((e, rate, seed));
            }
        }
    }
    let done: Vec<(Run, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(e, rate, seed)| {
            run_cell(cfg, &prepared, e, rate, seed, |_| {}).map(|(r, _, s)| (r, s))
        })
        .collect::<Result<_>>()?;

    let per_cell = cfg.seeds.len();
    let mut cells = Vec::new();
    let mut mean = vec![vec![0.0; cfg.e.len()]; cfg.noise_rates.len()];
    let mut std = mean.clone();
    for (ci, chunk) in done.chunks(per_cell).enumerate() {
        let (ei, ri) = (ci / cfg.noise_rates.len(), ci % cfg.noise_rates.len());
        let runs: Vec<&Run> = chunk.iter().map(|(r, _)| r).collect();
        let accs: Vec<f64> = runs.iter().map(|r| r.final_metrics.test_acc).collect();
        let agg = MeanStd::of(&accs);
        mean[ri][ei] = agg.mean;
        std[ri][ei] = agg.std;
        cells.push(json!({
            "e": cfg.e[ei],
            "noise_rate": cfg.noise_rates[ri],
            "test_acc": agg,
            "runs": runs,
        }));
    }
    let reference: Value =
        serde_json::from_str(TABLE2_REFERENCE).expect("bundled reference parses");
    let results = json!({
        "cells": cells,
        "table": {
            "rows": "noise_rate",
            "columns": "e",
            "noise_rates": cfg.noise_rates,
            "e": cfg.e,
            "mean_test_acc": mean,
            "std_test_acc": std,
        },
        "reference": reference,
    });
    let wall = json!({
        "total_seconds": started.elapsed().as_secs_f64(),
        "epoch_seconds": done.iter().map(|(_, s)| s).collect::<Vec<_>>(),
    });
    Ok(Document::new("noise-bench", echo, results, wall))
}

pub fn noise_bench(a: &TrainArgs) -> Result<Outcome> {
    let (cfg, echo) = resolve(from_flags(a, true)?, a.common.config.as_deref())?;
    let doc = noise_bench_document(&cfg, echo)?;
    emit(doc, a.common.out.as_deref(), Vec::new())
}

pub fn bounds(a: &BoundsArgs) -> Result<Outcome> {
    let c = &a.common;
    let loss = match c.loss {
        Some(base) => {
            let e = c.e.first().copied().unwrap_or(1.0);
            Some(LossSpec::new(base, TransformParams::new(e, c.c)?))
        }
        None => None,
    };
    let l_r = match (a.l_r, loss) {
        (Some(v), _) => LipschitzProfile::Constant { value: v },
        (None, Some(loss)) => LipschitzProfile::UniformMargin {
            loss,
            quadrature_points: 200_000,
        },
        (None, None) => LipschitzProfile::Constant { value: 0.1 },
    };
    let flags = BoundQuery {
        n: a.n.unwrap_or(1e5),
        d: a.d.unwrap_or(5),
        m: a.m.unwrap_or(1.0),
        epsilon: a.epsilon.unwrap_or(0.3),
        l_l: a.l_l.or(loss.map(|l| l.lipschitz())).unwrap_or(1.0),
        c_l: a
            .c_l
            .or(loss.map(|l| l.c_l(2)))
            .unwrap_or(std::f64::consts::LN_2),
        l_r,
    };
    let (q, echo) = resolve(flags, c.config.as_deref())?;
    let started = Instant::now();
    let t2 = theorem2_confidence(&q)?;
    let t3 = theorem3_confidence(&q)?;
    let results = json!({
        "local_exceeds_global": t2.confidence > t3.confidence,
        "local": t2,
        "global": t3,
    });
    let wall = json!({ "total_seconds": started.elapsed().as_secs_f64() });
    emit(
        Document::new("bounds", echo, results, wall),
        c.out.as_deref(),
        Vec::new(),
    )
}

pub fn lemma2_mc(a: &Lemma2Args) -> Result<Outcome> {
    let c = &a.common;
    let mut flags = Lemma2Config::logistic_default(a.n, a.epsilon, a.rho, a.trials, c.seed);
    if let Some(base) = c.loss {
        let e = c.e.first().copied().unwrap_or(1.0);
        flags.loss = LossSpec::new(base, TransformParams::new(e, c.c)?);
    }
    if let Some(r) = a.reference_samples {
        flags.reference_samples = r;
    }
    let (cfg, echo) = resolve(flags, c.config.as_deref())?;
    let started = Instant::now();
    let report = lemma2_mc_check(&cfg)?;
    let failures = if report.pass {
        Vec::new()
    } else {
        vec![format!(
            "deviation frequency {} exceeds bound {} + slack {}",
            report.frequency, report.hoeffding_bound, report.binomial_slack
        )]
    };
    let results = serde_json::to_value(&report).map_err(|e| CliError::Config(e.to_string()))?;
    let wall = json!({ "total_seconds": started.elapsed().as_secs_f64() });
    emit(
        Document::new("lemma2-mc", echo, results, wall),
        c.out.as_deref(),
        failures,
    )
}

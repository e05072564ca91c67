//! The pipeline commands. Each reads its inputs from the output directory,
//! writes its artifacts there and records them in a manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gprda_core::arch::{Model, ModelKind};
use gprda_core::dataset::{
    generate_grid, generate_target, load_truth, save_truth, LabeledDataset, Specimen, TraceSet, TRUTH_FILE,
};
use gprda_core::fdtd::simulate_clean;
use gprda_core::hierarchy::{layered_order, run_hierarchy, CaseResult, HierPlan, HierSettings};
use gprda_core::metrics::{emit_report, summarize, EvalRow, Metrics};
use gprda_core::signal::LabelScaler;
use gprda_core::sobol::{first_order_indices, saltelli_matrices};
use gprda_core::train::{train_any, Supervised};
use gprda_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{Approach, Experiment};
use crate::manifest::{files_under, write_manifest, Timing};

pub const SOURCE_DIR: &str = "source";
pub const TARGET_DIR: &str = "target";
pub const EVAL_DIR: &str = "eval";
pub const SOBOL_DIR: &str = "sobol";
pub const MODELS_DIR: &str = "models";
pub const HIER_DIR: &str = "hier";
pub const REPORT_DIR: &str = "report";
pub const ORDER_FILE: &str = "order.json";
pub const AUDIT_FILE: &str = "audit.json";

/// Sobol ranking consumed by the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolOrder {
    /// Hierarchy order: most sensitive layer first, then most sensitive
    /// parameter within it.
    pub order: Vec<String>,
    /// Time-mean first-order index per parameter, in space order.
    pub means: Vec<(String, f64)>,
}

/// Per-parameter metrics of every evaluated approach.
pub type Summary = Vec<(String, Vec<(String, Metrics)>)>;

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|_| Error::Dependency(path.to_path_buf()))?;
    Ok(serde_json::from_str(&text)?)
}

fn timed<T>(stage: &str, timings: &mut Vec<Timing>, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage))?;
    let seconds = start.elapsed().as_secs_f64();
    log::info!("{stage}: {seconds:.1} s");
    timings.push(Timing {
        stage: stage.to_string(),
        seconds,
    });
    Ok(out)
}

fn truth_path(out: &Path) -> PathBuf {
    out.join(EVAL_DIR).join(TRUTH_FILE)
}

fn scaler(exp: &Experiment) -> Result<LabelScaler> {
    LabelScaler::fit(&exp.config.space.ranges())
}

/// Simulates the source grid and the perturbed target scans. Target truth
/// goes to `eval/`, which only evaluation reads.
pub fn cmd_generate(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let c = &exp.config;
    let out = &exp.out;
    let mut timings = Vec::new();
    let source = timed("source grid", &mut timings, || {
        generate_grid(&c.space, &c.template, &c.source_radar, c.seed)
    })?;
    let target = timed("target scans", &mut timings, || {
        generate_target(
            &c.space,
            &c.template,
            &c.target_radar,
            &c.specimens,
            c.scans_per_case,
            c.seed,
        )
    })?;
    log::info!("{} source traces, {} target scans", source.len(), target.len());
    let (sdir, tdir) = (out.join(SOURCE_DIR), out.join(TARGET_DIR));
    for d in [&sdir, &tdir, &out.join(EVAL_DIR)] {
        mkdir(d)?;
    }
    source.save(&sdir)?;
    target.save(&tdir)?;
    save_truth(&truth_path(out), &c.space.names(), &c.specimens)?;
    let mut files = files_under(&sdir)?;
    files.extend(files_under(&tdir)?);
    files.push(truth_path(out));
    finish(exp, "generate", files, timings)
}

/// First-order indices of the clean source response over the grid.
pub fn cmd_sobol(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let c = &exp.config;
    let mut timings = Vec::new();
    let result = timed("sobol", &mut timings, || {
        let m = saltelli_matrices(c.sobol.n, &c.space, c.seed)?;
        first_order_indices(
            |row| Ok(simulate_clean(&c.space.apply(&c.template, row)?, &c.source_radar)?.samples),
            &c.space.names(),
            &m,
        )
    })?;
    if result.degenerate {
        return Err(Error::Degenerate(
            "every output sample of the Sobol model is constant".into(),
        ));
    }
    let layers: Vec<usize> = c
        .space
        .params
        .iter()
        .map(|p| p.binding.map_or(0, |b| b.layer))
        .collect();
    let order = SobolOrder {
        order: layered_order(&result.names, &result.means, &layers)?,
        means: result.names.iter().cloned().zip(result.means.iter().copied()).collect(),
    };
    log::info!(
        "sensitivity order: {:?} ({} evaluations)",
        order.order,
        result.evaluations
    );
    let dir = exp.out.join(SOBOL_DIR);
    mkdir(&dir)?;
    let dt = c.source_radar.output_dt();
    let (csv, svg, json) = (dir.join("sobol.csv"), dir.join("sobol.svg"), dir.join(ORDER_FILE));
    result.write_csv(dt, &csv)?;
    fs::write(&svg, result.svg(dt)).map_err(|e| Error::io(&svg, e))?;
    write_json(&json, &order)?;
    finish(exp, "sobol", vec![csv, svg, json], timings)
}

/// Trains one flat approach on the source grid, adapting to the target scans.
pub fn cmd_train(exp: &Experiment, approach: Approach) -> Result<Vec<PathBuf>> {
    if approach.is_hierarchical() {
        return Err(Error::Config(format!(
            "`{approach}` is hierarchical; use the hier command"
        )));
    }
    let c = &exp.config;
    let source = LabeledDataset::load(&exp.out.join(SOURCE_DIR))?;
    let target = TraceSet::load(&exp.out.join(TARGET_DIR))?;
    check_names(&source.names, exp)?;
    let scaler = scaler(exp)?;
    let targets: Vec<Vec<f64>> = source.labels.iter().map(|l| scaler.apply(l)).collect();
    let cfg = c.train_config();
    let mut timings = Vec::new();
    let (model, report) = timed(&format!("train {approach}"), &mut timings, || {
        let mut model = Model::build(approach.kind(), c.arch(source.names.len()), cfg.seed)?;
        let report = train_any(
            &mut model,
            Supervised {
                inputs: &source.inputs,
                targets: &targets,
            },
            &target.inputs,
            &cfg,
        )?;
        Ok((model, report))
    })?;
    let dir = exp.out.join(MODELS_DIR).join(approach.name());
    mkdir(&dir)?;
    model.save(&dir)?;
    report.write_csv(&dir.join("train.csv"))?;
    finish(exp, &format!("train_{approach}"), files_under(&dir)?, timings)
}

fn hier_order(exp: &Experiment) -> Result<Vec<String>> {
    match &exp.config.hierarchy.order {
        Some(o) => Ok(o.clone()),
        None => Ok(read_json::<SobolOrder>(&exp.out.join(SOBOL_DIR).join(ORDER_FILE))?.order),
    }
}

/// Runs the hierarchy with `variant` independently for every target case.
pub fn cmd_hier(exp: &Experiment, variant: ModelKind) -> Result<Vec<PathBuf>> {
    let approach = Approach::hier_of(variant)?;
    let c = &exp.config;
    let plan = HierPlan {
        order: hier_order(exp)?,
        variant,
        tolerance_steps: c.hierarchy.tolerance_steps,
    };
    let source = LabeledDataset::load(&exp.out.join(SOURCE_DIR))?;
    let target = TraceSet::load(&exp.out.join(TARGET_DIR))?;
    check_names(&source.names, exp)?;
    let settings = HierSettings {
        arch: c.arch(1),
        train: c.train_config(),
        scaler: scaler(exp)?,
        clamp: c.clamped(),
    };
    let mut timings = Vec::new();
    let cases = timed(&format!("hier {approach}"), &mut timings, || {
        run_hierarchy(&plan, &source, &target, &settings)
    })?;
    let dir = exp.out.join(HIER_DIR).join(approach.name());
    mkdir(&dir)?;
    write_json(&dir.join(AUDIT_FILE), &cases)?;
    write_stages(&dir.join("stages.csv"), &cases)?;
    finish(exp, &format!("hier_{approach}"), files_under(&dir)?, timings)
}

fn write_stages(path: &Path, cases: &[CaseResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(Error::from)?;
    w.write_record([
        "case",
        "stage",
        "parameter",
        "input_size",
        "estimate",
        "snapped",
        "pruned_size",
    ])?;
    for case in cases {
        for (k, s) in case.stages.iter().enumerate() {
            w.write_record([
                case.case.clone(),
                (k + 1).to_string(),
                s.param.clone(),
                s.input_size.to_string(),
                s.aggregate.to_string(),
                s.snapped.map(|v| v.to_string()).unwrap_or_default(),
                s.pruned_size.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_names(names: &[String], exp: &Experiment) -> Result<()> {
    if names != exp.config.space.names() {
        return Err(Error::Config(format!(
            "stored dataset parameters {names:?} do not match the config; regenerate"
        )));
    }
    Ok(())
}

fn truth_by_case(target: &TraceSet, names: &[String], specimens: &[Specimen]) -> Result<Vec<Vec<f64>>> {
    if names != target.names {
        return Err(Error::Config("truth parameters do not match the target scans".into()));
    }
    target
        .cases
        .iter()
        .map(|case| {
            specimens
                .iter()
                .find(|s| &s.name == case)
                .map(|s| s.values.clone())
                .ok_or_else(|| Error::Config(format!("no ground truth for case `{case}`")))
        })
        .collect()
}

/// Evaluation rows of one approach from its stored artifacts.
fn approach_rows(exp: &Experiment, approach: Approach, target: &TraceSet, truth: &[Vec<f64>]) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    if approach.is_hierarchical() {
        let path = exp.out.join(HIER_DIR).join(approach.name()).join(AUDIT_FILE);
        let cases: Vec<CaseResult> = read_json(&path)?;
        for case in &cases {
            let c = target
                .cases
                .iter()
                .position(|n| *n == case.case)
                .ok_or_else(|| Error::Config(format!("audit case `{}` is not a target case", case.case)))?;
            for s in &case.stages {
                let p = target
                    .names
                    .iter()
                    .position(|n| *n == s.param)
                    .ok_or_else(|| Error::Config(format!("audit parameter `{}` is unknown", s.param)))?;
                rows.push(EvalRow::from_scans(
                    approach.name(),
                    &case.case,
                    &s.param,
                    truth[c][p],
                    &s.estimates,
                )?);
            }
        }
    } else {
        let model = Model::load(&exp.out.join(MODELS_DIR).join(approach.name()))?;
        let scaler = scaler(exp)?;
        let predictions: Vec<Vec<f64>> = model
            .predict(&target.inputs)?
            .iter()
            .map(|r| scaler.invert(r))
            .collect();
        for (c, case) in target.cases.iter().enumerate() {
            let scans = target.scans_of(c);
            for (p, param) in target.names.iter().enumerate() {
                let values: Vec<f64> = scans.iter().map(|&i| predictions[i][p]).collect();
                rows.push(EvalRow::from_scans(approach.name(), case, param, truth[c][p], &values)?);
            }
        }
    }
    Ok(rows)
}

/// Scores every configured approach against the held-out truth.
pub fn cmd_eval(exp: &Experiment) -> Result<(Summary, Vec<PathBuf>)> {
    let target = TraceSet::load(&exp.out.join(TARGET_DIR))?;
    let (names, specimens) = load_truth(&truth_path(&exp.out))?;
    let truth = truth_by_case(&target, &names, &specimens)?;
    let mut timings = Vec::new();
    let rows = timed("eval", &mut timings, || {
        let mut rows = Vec::new();
        for &a in &exp.config.approaches {
            rows.extend(approach_rows(exp, a, &target, &truth).map_err(|e| e.in_stage(format!("approach {a}")))?);
        }
        Ok(rows)
    })?;
    let summary = summarize(&rows)?;
    let written = emit_report(&rows, &exp.out.join(REPORT_DIR))?;
    let files = finish(exp, "eval", written, timings)?;
    Ok((summary, files))
}

/// Generate, Sobol, every configured approach, then evaluation.
pub fn cmd_bench(exp: &Experiment) -> Result<Summary> {
    let mut timings = Vec::new();
    let mut files = Vec::new();
    files.extend(timed("generate", &mut timings, || cmd_generate(exp))?);
    files.extend(timed("sobol", &mut timings, || cmd_sobol(exp))?);
    for &a in &exp.config.approaches {
        let stage = format!("approach {a}");
        let produced = if a.is_hierarchical() {
            timed(&stage, &mut timings, || cmd_hier(exp, a.kind()))?
        } else {
            timed(&stage, &mut timings, || cmd_train(exp, a))?
        };
        files.extend(produced);
    }
    let (summary, produced) = timed("eval", &mut timings, || cmd_eval(exp))?;
    files.extend(produced);
    finish(exp, "bench", files, timings)?;
    Ok(summary)
}

/// Writes the command manifest; returns `files` plus the manifest itself.
fn finish(exp: &Experiment, command: &str, mut files: Vec<PathBuf>, timings: Vec<Timing>) -> Result<Vec<PathBuf>> {
    let m = write_manifest(
        &exp.out,
        command,
        &exp.config_sha256,
        exp.config.seed,
        files.clone(),
        timings,
    )?;
    files.push(m);
    Ok(files)
}

/// Plain-text table of `summary`, one block per parameter.
pub fn format_summary(summary: &Summary) -> String {
    let fmt = |v: f64| format!("{v:>10.4}");
    let mut s = String::new();
    for (param, per) in summary {
        s.push_str(&format!("{param}\n"));
        s.push_str(&format!(
            "  {:<14}{:>10}{:>10}{:>10}{:>10}{:>4}\n",
            "approach", "R", "bias", "rmse", "ubrmse", "n"
        ));
        for (a, m) in per {
            let r = m.r.map(fmt).unwrap_or_else(|| format!("{:>10}", "NA"));
            s.push_str(&format!(
                "  {a:<14}{r}{}{}{}{:>4}\n",
                fmt(m.bias),
                fmt(m.rmse),
                fmt(m.ubrmse),
                m.n
            ));
        }
    }
    s
}

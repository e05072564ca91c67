//! Sequential estimation: one single-output model per parameter in
//! sensitivity order, pruning the source grid to each estimate in turn.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, Model, ModelKind};
use crate::dataset::{LabeledDataset, TraceSet};
use crate::error::{Error, Result};
use crate::seed::derive;
use crate::signal::LabelScaler;
use crate::train::{train_any, Supervised, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierPlan {
    /// Estimation order, most sensitive first.
    pub order: Vec<String>,
    pub variant: ModelKind,
    /// Half-width of the retained window around the snapped value, in grid steps.
    #[serde(default)]
    pub tolerance_steps: usize,
}

impl HierPlan {
    pub fn validate(&self, names: &[String]) -> Result<()> {
        if self.order.is_empty() {
            return Err(Error::Config("hierarchy plan is empty".into()));
        }
        let mut seen = HashSet::new();
        for p in &self.order {
            if !names.contains(p) {
                return Err(Error::Config(format!("plan parameter `{p}` is not in the dataset")));
            }
            if !seen.insert(p) {
                return Err(Error::Config(format!("plan repeats parameter `{p}`")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub param: String,
    /// Source rows the stage model was trained on.
    pub input_size: usize,
    /// Physical-unit estimate per target scan, after clamping.
    pub estimates: Vec<f64>,
    /// Mean of `estimates`.
    pub aggregate: f64,
    /// Grid value nearest to `aggregate`; absent for the final stage.
    pub snapped: Option<f64>,
    /// Grid values of `param` kept for the next stage.
    pub retained: Vec<f64>,
    /// Rows left after pruning; equals `input_size` for the final stage.
    pub pruned_size: usize,
    pub final_regression: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: String,
    pub stages: Vec<StageResult>,
}

impl CaseResult {
    pub fn estimate_of(&self, param: &str) -> Option<&StageResult> {
        self.stages.iter().find(|s| s.param == param)
    }
}

/// Estimation order from per-parameter Sobol means: layers by descending
/// mean index of their parameters, then parameters by descending index
/// within each layer. Ties keep declared order.
pub fn layered_order(names: &[String], means: &[f64], layers: &[usize]) -> Result<Vec<String>> {
    if names.len() != means.len() || names.len() != layers.len() {
        return Err(Error::Shape("names, means and layers differ in length".into()));
    }
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::Degenerate("non-finite Sobol mean".into()));
    }
    let mut distinct: Vec<usize> = layers.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let score = |layer: usize| {
        let v: Vec<f64> = (0..names.len())
            .filter(|&i| layers[i] == layer)
            .map(|i| means[i])
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    // Layers in order of first declaration, then stably by score.
    distinct.sort_by_key(|&l| layers.iter().position(|&x| x == l));
    distinct.sort_by(|&a, &b| score(b).total_cmp(&score(a)));
    let mut order = Vec::with_capacity(names.len());
    for layer in distinct {
        let mut idx: Vec<usize> = (0..names.len()).filter(|&i| layers[i] == layer).collect();
        idx.sort_by(|&a, &b| means[b].total_cmp(&means[a]));
        order.extend(idx.into_iter().map(|i| names[i].clone()));
    }
    Ok(order)
}

/// Negative conductivity estimates are replaced by zero.
pub fn clamp_conductivity(estimate: f64) -> f64 {
    estimate.max(0.0)
}

/// Nearest value of the non-empty sorted `grid`; exact midpoints go to the
/// lower value.
pub fn snap(grid: &[f64], estimate: f64) -> f64 {
    let mut best = grid[0];
    for &g in &grid[1..] {
        if (g - estimate).abs() < (best - estimate).abs() {
            best = g;
        }
    }
    best
}

/// Keeps rows whose `param` label lies within `tolerance_steps` grid
/// positions of the grid value nearest to `estimate`. Returns the pruned
/// set and the snapped value.
pub fn prune_dataset(
    dataset: &LabeledDataset,
    param: &str,
    estimate: f64,
    tolerance_steps: usize,
) -> Result<(LabeledDataset, f64)> {
    let p = dataset.index_of(param)?;
    let grid = &dataset.grid[p];
    if grid.is_empty() || !estimate.is_finite() {
        return Err(Error::Pruning {
            param: param.to_string(),
            snapped: estimate,
            available: grid.clone(),
        });
    }
    let snapped = snap(grid, estimate);
    let at = grid.iter().position(|&g| g == snapped).expect("snapped onto grid");
    let lo = at.saturating_sub(tolerance_steps);
    let hi = (at + tolerance_steps).min(grid.len() - 1);
    let window = &grid[lo..=hi];
    let rows: Vec<usize> = (0..dataset.len())
        .filter(|&i| window.contains(&dataset.labels[i][p]))
        .collect();
    if rows.is_empty() {
        return Err(Error::Pruning {
            param: param.to_string(),
            snapped,
            available: grid.clone(),
        });
    }
    Ok((dataset.select(&rows), snapped))
}

/// Shared settings for every stage of every case.
#[derive(Debug, Clone)]
pub struct HierSettings {
    /// Base architecture; `outputs` is forced to 1 per stage.
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Global label scaling over all dataset parameters.
    pub scaler: LabelScaler,
    /// Parameters whose estimates are clamped at zero.
    pub clamp: Vec<String>,
}

/// Runs the plan for one case. Stage `k` trains with seed
/// `derive(train.seed, k)` and a batch no larger than its source set.
pub fn run_case(
    plan: &HierPlan,
    source: &LabeledDataset,
    target: &[Vec<f64>],
    settings: &HierSettings,
) -> Result<Vec<StageResult>> {
    let mut out = run_cases(plan, source, &[target.to_vec()], settings)?;
    Ok(out.pop().expect("one case"))
}

/// Scans in a content-defined order, so training does not depend on how
/// they were listed.
fn canonical(scans: Vec<&Vec<f64>>) -> Vec<Vec<f64>> {
    let mut scans = scans;
    scans.sort_by(|a, b| a.iter().map(|v| v.to_bits()).cmp(b.iter().map(|v| v.to_bits())));
    scans.into_iter().cloned().collect()
}

/// One stage model for the cases whose source subsets coincide, adapted to
/// all of their scans. Returns a result and the next subset per case.
fn run_group(
    plan: &HierPlan,
    k: usize,
    current: &LabeledDataset,
    cases: &[&[Vec<f64>]],
    settings: &HierSettings,
) -> Result<Vec<(StageResult, Option<LabeledDataset>)>> {
    let param = &plan.order[k];
    let p = current.index_of(param)?;
    let scaler = settings.scaler.select(&[p]);
    let targets: Vec<Vec<f64>> = current.labels.iter().map(|l| vec![scaler.apply_one(0, l[p])]).collect();
    let seed = derive(settings.train.seed, k as u64);
    let mut cfg = settings.train.clone();
    cfg.seed = seed;
    cfg.batch_size = cfg.batch_size.min(current.len());
    let mut arch = settings.arch.clone();
    arch.outputs = 1;
    let mut model = Model::build(plan.variant, arch, seed)?;
    let pooled = canonical(cases.iter().flat_map(|c| c.iter()).collect());
    let report = train_any(
        &mut model,
        Supervised {
            inputs: &current.inputs,
            targets: &targets,
        },
        &pooled,
        &cfg,
    )?;
    let clamp = settings.clamp.iter().any(|c| c == param);
    let last = k + 1 == plan.order.len();
    cases
        .iter()
        .map(|scans| {
            let estimates: Vec<f64> = model
                .predict(scans)?
                .into_iter()
                .map(|r| {
                    let v = scaler.invert_one(0, r[0]);
                    if clamp {
                        clamp_conductivity(v)
                    } else {
                        v
                    }
                })
                .collect();
            let mut sorted = estimates.clone();
            sorted.sort_by(f64::total_cmp);
            let aggregate = sorted.iter().sum::<f64>() / sorted.len() as f64;
            let (snapped, retained, next) = if last {
                (None, current.grid[p].clone(), None)
            } else {
                let (pruned, snapped) = prune_dataset(current, param, aggregate, plan.tolerance_steps)?;
                (Some(snapped), pruned.grid[p].clone(), Some(pruned))
            };
            let stage = StageResult {
                param: param.clone(),
                input_size: current.len(),
                estimates,
                aggregate,
                snapped,
                retained,
                pruned_size: next.as_ref().map_or(current.len(), LabeledDataset::len),
                final_regression: report.final_regression(),
            };
            Ok((stage, next))
        })
        .collect()
}

/// Runs the plan stage by stage over `cases`. Cases whose pruned source
/// subsets coincide share one stage model; every case keeps its own
/// estimates and pruning. Groups fan out over the current rayon pool.
fn run_cases(
    plan: &HierPlan,
    source: &LabeledDataset,
    cases: &[Vec<Vec<f64>>],
    settings: &HierSettings,
) -> Result<Vec<Vec<StageResult>>> {
    plan.validate(&source.names)?;
    if cases.iter().any(Vec::is_empty) {
        return Err(Error::Config("hierarchy case has no target scans".into()));
    }
    let mut current: Vec<LabeledDataset> = vec![source.clone(); cases.len()];
    // Snapped values so far; equal histories mean equal source subsets.
    let mut history: Vec<Vec<u64>> = vec![Vec::new(); cases.len()];
    let mut stages: Vec<Vec<StageResult>> = vec![Vec::new(); cases.len()];
    for (k, param) in plan.order.iter().enumerate() {
        let mut groups: BTreeMap<&[u64], Vec<usize>> = BTreeMap::new();
        for (c, h) in history.iter().enumerate() {
            groups.entry(h.as_slice()).or_default().push(c);
        }
        let groups: Vec<Vec<usize>> = groups.into_values().collect();
        let ctx = format!("hierarchy stage {} ({param})", k + 1);
        let results = groups
            .par_iter()
            .map(|members| {
                let scans: Vec<&[Vec<f64>]> = members.iter().map(|&c| cases[c].as_slice()).collect();
                run_group(plan, k, &current[members[0]], &scans, settings)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage(ctx.clone()))?;
        for (members, results) in groups.iter().zip(results) {
            log::info!(
                "{ctx}: {} case(s) trained on {} rows",
                members.len(),
                current[members[0]].len()
            );
            for (&c, (stage, next)) in members.iter().zip(results) {
                if let Some(s) = stage.snapped {
                    history[c].push(s.to_bits());
                }
                if let Some(next) = next {
                    current[c] = next;
                }
                stages[c].push(stage);
            }
        }
    }
    Ok(stages)
}

/// Runs every case of `target`; results are returned in case order.
pub fn run_hierarchy(
    plan: &HierPlan,
    source: &LabeledDataset,
    target: &TraceSet,
    settings: &HierSettings,
) -> Result<Vec<CaseResult>> {
    let cases: Vec<Vec<Vec<f64>>> = (0..target.cases.len()).map(|c| target.inputs_of(c)).collect();
    let stages = run_cases(plan, source, &cases, settings)?;
    Ok(target
        .cases
        .iter()
        .zip(stages)
        .map(|(case, stages)| CaseResult {
            case: case.clone(),
            stages,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_conductivity(-0.003), 0.0);
        assert_eq!(clamp_conductivity(0.02), 0.02);
        assert_eq!(clamp_conductivity(0.0), 0.0);
    }

    #[test]
    fn complex_layer_goes_first() {
        let names: Vec<String> = ["p2", "c2", "p1", "c1"].map(String::from).to_vec();
        let order = layered_order(&names, &[0.3, 0.01, 0.5, 0.1], &[0, 0, 1, 1]).unwrap();
        assert_eq!(order, ["p1", "c1", "p2", "c2"]);
        let single = layered_order(&names[..2], &[0.1, 0.2], &[0, 0]).unwrap();
        assert_eq!(single, ["c2", "p2"]);
        assert!(layered_order(&names, &[0.1], &[0]).is_err());
    }

    #[test]
    fn snap_ties_go_low() {
        let g = [3.0, 4.0, 5.0];
        assert_eq!(snap(&g, 3.5), 3.0);
        assert_eq!(snap(&g, 3.6), 4.0);
        assert_eq!(snap(&g, 100.0), 5.0);
        assert_eq!(snap(&g, -1.0), 3.0);
    }
}

//! Training procedures: supervised regression, adversarial adaptation, and
//! adaptation with signal reconstruction.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::{Model, ModelKind};
use crate::error::{Error, Result};
use crate::nn::{lambda_schedule, Group, Optimizer, OptimizerKind, Tape, Tensor};
use crate::seed::{derive, stream};

/// Traces held out per domain when measuring discriminator accuracy.
const ACCURACY_PROBE: usize = 64;

fn d_epochs() -> usize {
    60
}
fn d_batch() -> usize {
    32
}
fn d_lr0() -> f64 {
    1e-3
}
fn d_decay() -> f64 {
    0.9
}
fn d_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn d_recon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr0")]
    pub lr0: f64,
    #[serde(default = "d_decay")]
    pub lr_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_optimizer")]
    pub optimizer: OptimizerKind,
    /// Weight of the reconstruction loss in the total objective.
    #[serde(default = "d_recon")]
    pub recon_weight: f64,
    /// Fixed adversarial weight in place of the schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_override: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            batch_size: d_batch(),
            lr0: d_lr0(),
            lr_decay: d_decay(),
            seed: 0,
            optimizer: d_optimizer(),
            recon_weight: d_recon(),
            lambda_override: None,
        }
    }
}

impl TrainConfig {
    /// Zero epochs is accepted and trains nothing.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay {} outside (0, 1]", self.lr_decay)));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 {} must be positive", self.lr0)));
        }
        if !(self.recon_weight >= 0.0) {
            return Err(Error::Config("recon_weight must be non-negative".into()));
        }
        if let Some(l) = self.lambda_override {
            if !(l >= 0.0) {
                return Err(Error::Config("lambda_override must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub regression: f64,
    pub adversarial: Option<f64>,
    pub reconstruction: Option<f64>,
    /// λ at the last iteration of the epoch.
    pub lambda: Option<f64>,
    pub domain_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// λ per iteration; empty without an adversary.
    pub lambdas: Vec<f64>,
    pub iterations: usize,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn final_regression(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.regression)
    }

    /// Per-epoch losses as CSV; wall time is left out so the file is
    /// reproducible.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "epoch",
            "lr",
            "regression",
            "adversarial",
            "reconstruction",
            "lambda",
            "domain_accuracy",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.lr.to_string(),
                e.regression.to_string(),
                opt(e.adversarial),
                opt(e.reconstruction),
                opt(e.lambda),
                opt(e.domain_accuracy),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Labeled source traces with targets already in scaled units.
#[derive(Debug, Clone, Copy)]
pub struct Supervised<'a> {
    pub inputs: &'a [Vec<f64>],
    pub targets: &'a [Vec<f64>],
}

#[derive(Clone, Copy)]
struct Mode {
    adversarial: bool,
    reconstruction: bool,
}

/// Supervised training of a 1D CNN on source data.
pub fn train_cnn(model: &mut Model, source: Supervised, cfg: &TrainConfig) -> Result<TrainReport> {
    expect_kind(model, &[ModelKind::Cnn])?;
    run(
        model,
        source,
        None,
        cfg,
        Mode {
            adversarial: false,
            reconstruction: false,
        },
    )
}

/// Supervised training of the extractor and estimator of any model, with
/// every other block left untouched.
pub fn train_source_only(model: &mut Model, source: Supervised, cfg: &TrainConfig) -> Result<TrainReport> {
    run(
        model,
        source,
        None,
        cfg,
        Mode {
            adversarial: false,
            reconstruction: false,
        },
    )
}

pub fn train_dann(
    model: &mut Model,
    source: Supervised,
    target: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    expect_kind(model, &[ModelKind::Dann])?;
    run(
        model,
        source,
        Some(target),
        cfg,
        Mode {
            adversarial: true,
            reconstruction: false,
        },
    )
}

pub fn train_phydann(
    model: &mut Model,
    source: Supervised,
    target: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    expect_kind(model, &[ModelKind::PhyDann1, ModelKind::PhyDann2])?;
    run(
        model,
        source,
        Some(target),
        cfg,
        Mode {
            adversarial: true,
            reconstruction: true,
        },
    )
}

/// Dispatches on the model kind.
pub fn train_any(model: &mut Model, source: Supervised, target: &[Vec<f64>], cfg: &TrainConfig) -> Result<TrainReport> {
    match model.kind() {
        ModelKind::Cnn => train_cnn(model, source, cfg),
        ModelKind::Dann => train_dann(model, source, target, cfg),
        ModelKind::PhyDann1 | ModelKind::PhyDann2 => train_phydann(model, source, target, cfg),
    }
}

fn expect_kind(model: &Model, allowed: &[ModelKind]) -> Result<()> {
    if allowed.contains(&model.kind()) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{:?} cannot be trained as {:?}",
            model.kind(),
            allowed
        )))
    }
}

fn gather<'a>(rows: &'a [Vec<f64>], idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter().map(|&i| rows[i].as_slice()).collect()
}

fn run(
    model: &mut Model,
    source: Supervised,
    target: Option<&[Vec<f64>]>,
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let n_s = source.inputs.len();
    if source.targets.len() != n_s {
        return Err(Error::Shape(format!(
            "{n_s} source traces but {} label rows",
            source.targets.len()
        )));
    }
    if n_s < cfg.batch_size {
        return Err(Error::Config(format!(
            "source set of {n_s} traces is smaller than one batch of {}",
            cfg.batch_size
        )));
    }
    if let Some(bad) = source.targets.iter().find(|t| t.len() != model.config().outputs) {
        return Err(Error::Shape(format!(
            "label rows of width {} for a model with {} outputs",
            bad.len(),
            model.config().outputs
        )));
    }
    let target = match (mode.adversarial, target) {
        (true, Some(t)) if !t.is_empty() => t,
        (true, _) => return Err(Error::Config("adversarial training needs target traces".into())),
        (false, _) => &[][..],
    };

    let b = cfg.batch_size;
    let iters = n_s / b;
    let total = cfg.epochs * iters;
    let mut report = TrainReport {
        iterations: total,
        ..TrainReport::default()
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }

    let mut groups = vec![Group::Extractor, Group::Estimator];
    if mode.adversarial {
        groups.push(Group::Discriminator);
    }
    if mode.reconstruction {
        groups.push(Group::Reconstructor);
    }
    let mut optimizers: Vec<Optimizer> = groups
        .iter()
        .map(|&g| Optimizer::new(cfg.optimizer, &model.store, model.store.indices_of(g)))
        .collect();
    let disc_params = model.store.indices_of(Group::Discriminator);

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, stream::SOURCE_SHUFFLE));
    let mut target_rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, stream::TARGET_SAMPLING));
    let mut source_order: Vec<usize> = (0..n_s).collect();
    let mut target_order: Vec<usize> = (0..target.len()).collect();
    let with_replacement = target.len() < n_s;
    let variant2 = model.kind() == ModelKind::PhyDann2;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr(epoch);
        source_order.shuffle(&mut shuffle_rng);
        if mode.adversarial && !with_replacement {
            target_order.shuffle(&mut target_rng);
        }
        let (mut sum_reg, mut sum_adv, mut sum_rec) = (0.0, 0.0, 0.0);
        let mut lambda = 0.0;

        for k in 0..iters {
            let it = epoch * iters + k;
            let s_idx = &source_order[k * b..(k + 1) * b];
            let mut tape = Tape::new();
            let p = tape.bind(&model.store);
            let xs_t = Tensor::from_traces(&gather(source.inputs, s_idx))?;
            let ys = Tensor::from_rows(&gather(source.targets, s_idx))?;
            let xs = tape.constant(xs_t.clone());
            let fs = model.features(&mut tape, &p, xs)?;
            let es = model.estimate(&mut tape, &p, fs)?;
            let l_reg = tape.mse(es, &ys)?;
            sum_reg += tape.value(l_reg).data()[0];
            let mut loss = l_reg;

            if mode.adversarial {
                lambda = match cfg.lambda_override {
                    Some(l) => l,
                    None => lambda_schedule(it, total)?,
                };
                report.lambdas.push(lambda);
                let t_idx: Vec<usize> = if with_replacement {
                    (0..b).map(|_| target_rng.gen_range(0..target.len())).collect()
                } else {
                    target_order[k * b..(k + 1) * b].to_vec()
                };
                let xt_t = Tensor::from_traces(&gather(target, &t_idx))?;
                let xt = tape.constant(xt_t.clone());
                let ft = model.features(&mut tape, &p, xt)?;
                let ds = model.discriminate(&mut tape, &p, fs, lambda)?;
                let dt = model.discriminate(&mut tape, &p, ft, lambda)?;
                let ls = tape.cross_entropy(ds, &vec![0; b])?;
                let lt = tape.cross_entropy(dt, &vec![1; b])?;
                let l_adv = tape.add(ls, lt)?;
                sum_adv += tape.value(l_adv).data()[0];
                loss = tape.add(loss, l_adv)?;

                if mode.reconstruction {
                    let et = if variant2 {
                        model.estimate(&mut tape, &p, ft)?
                    } else {
                        es
                    };
                    let rs = model.reconstruct(&mut tape, &p, fs, es)?;
                    let rt = model.reconstruct(&mut tape, &p, ft, et)?;
                    let ms = tape.mse(rs, &xs_t)?;
                    let mt = tape.mse(rt, &xt_t)?;
                    let both = tape.add(ms, mt)?;
                    let l_rec = tape.scale(both, 0.5);
                    sum_rec += tape.value(l_rec).data()[0];
                    let weighted = tape.scale(l_rec, cfg.recon_weight);
                    loss = tape.add(loss, weighted)?;
                }
            }

            let grads = tape.backward(loss)?;
            let mut pg = tape.param_grads(&grads, &model.store);
            for &i in &disc_params {
                pg[i].scale(lambda);
            }
            for opt in &mut optimizers {
                opt.step(&mut model.store, &pg, lr);
            }
        }

        let mean = |s: f64| s / iters as f64;
        let domain_accuracy = if mode.adversarial {
            let ns = n_s.min(ACCURACY_PROBE);
            let nt = target.len().min(ACCURACY_PROBE);
            Some(model.domain_accuracy(&source.inputs[..ns], &target[..nt])?)
        } else {
            None
        };
        let stats = EpochStats {
            epoch,
            lr,
            regression: mean(sum_reg),
            adversarial: mode.adversarial.then(|| mean(sum_adv)),
            reconstruction: mode.reconstruction.then(|| mean(sum_rec)),
            lambda: mode.adversarial.then_some(lambda),
            domain_accuracy,
        };
        if !stats.regression.is_finite() {
            return Err(Error::Degenerate(format!(
                "non-finite regression loss at epoch {epoch}"
            )));
        }
        log::debug!("{:?} epoch {epoch}: {stats:?}", model.kind());
        report.epochs.push(stats);
    }
    report.wall_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

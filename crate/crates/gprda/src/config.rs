//! Experiment configuration: one JSON document, paths relative to its directory.

use std::fmt;
use std::path::{Path, PathBuf};

use gprda_core::arch::{ArchConfig, ModelKind};
use gprda_core::dataset::Specimen;
use gprda_core::fdtd::{LayerStack, RadarConfig};
use gprda_core::space::{ParameterSpace, Property};
use gprda_core::train::TrainConfig;
use gprda_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A retrieval approach: a flat model kind or a hierarchy over one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    Cnn,
    Dann,
    HierDann,
    PhyDann1,
    HierPhyDann1,
    PhyDann2,
    HierPhyDann2,
}

impl Approach {
    pub const ALL: [Approach; 7] = [
        Approach::Cnn,
        Approach::Dann,
        Approach::HierDann,
        Approach::PhyDann1,
        Approach::HierPhyDann1,
        Approach::PhyDann2,
        Approach::HierPhyDann2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Cnn => "cnn",
            Approach::Dann => "dann",
            Approach::HierDann => "hierdann",
            Approach::PhyDann1 => "phydann1",
            Approach::HierPhyDann1 => "hierphydann1",
            Approach::PhyDann2 => "phydann2",
            Approach::HierPhyDann2 => "hierphydann2",
        }
    }

    /// Underlying network kind.
    pub fn kind(self) -> ModelKind {
        match self {
            Approach::Cnn => ModelKind::Cnn,
            Approach::Dann | Approach::HierDann => ModelKind::Dann,
            Approach::PhyDann1 | Approach::HierPhyDann1 => ModelKind::PhyDann1,
            Approach::PhyDann2 | Approach::HierPhyDann2 => ModelKind::PhyDann2,
        }
    }

    pub fn is_hierarchical(self) -> bool {
        matches!(
            self,
            Approach::HierDann | Approach::HierPhyDann1 | Approach::HierPhyDann2
        )
    }

    /// The hierarchical approach built on `variant`.
    pub fn hier_of(variant: ModelKind) -> Result<Self> {
        match variant {
            ModelKind::Dann => Ok(Approach::HierDann),
            ModelKind::PhyDann1 => Ok(Approach::HierPhyDann1),
            ModelKind::PhyDann2 => Ok(Approach::HierPhyDann2),
            ModelKind::Cnn => Err(Error::Config("hierarchies need an adversarial variant".into())),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown approach `{s}`")))
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Hidden channel counts are divided by this; 1 is full width.
    #[serde(default = "d_divisor")]
    pub width_divisor: usize,
    #[serde(default = "d_slope")]
    pub leaky_slope: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            width_divisor: d_divisor(),
            leaky_slope: d_slope(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierSection {
    /// Estimation order; taken from the Sobol ranking when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<String>>,
    #[serde(default)]
    pub tolerance_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SobolSection {
    /// Base sample count of the Saltelli design.
    #[serde(default = "d_sobol_n")]
    pub n: usize,
}

impl Default for SobolSection {
    fn default() -> Self {
        Self { n: d_sobol_n() }
    }
}

fn d_divisor() -> usize {
    4
}

fn d_slope() -> f64 {
    0.01
}

fn d_sobol_n() -> usize {
    256
}

fn d_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Drives every random stream: gap realizations, Sobol design and training.
    pub seed: u64,
    #[serde(default = "d_out")]
    pub out_dir: PathBuf,
    /// Layer stack the parameters are written into.
    pub template: LayerStack,
    /// Source grid; every parameter is bound to one layer property.
    pub space: ParameterSpace,
    pub source_radar: RadarConfig,
    pub target_radar: RadarConfig,
    /// Held-out target parameter tuples, in `space` order.
    pub specimens: Vec<Specimen>,
    pub scans_per_case: usize,
    pub approaches: Vec<Approach>,
    #[serde(default)]
    pub model: ModelSection,
    /// Shared by every approach; `seed` is replaced by the experiment seed.
    pub train: TrainConfig,
    #[serde(default)]
    pub hierarchy: HierSection,
    #[serde(default)]
    pub sobol: SobolSection,
}

/// The source and target radars differ in waveform, frequency or a
/// perturbation knob.
fn has_gap(s: &RadarConfig, t: &RadarConfig) -> bool {
    s.waveform_kind != t.waveform_kind
        || s.center_frequency != t.center_frequency
        || s.gain != t.gain
        || s.noise_std != t.noise_std
        || s.time_jitter != t.time_jitter
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        self.template.validate()?;
        for p in &self.space.params {
            let b = p
                .binding
                .ok_or_else(|| Error::Config(format!("parameter `{}` is not bound to a layer", p.name)))?;
            if b.layer >= self.template.layers.len() {
                return Err(Error::Config(format!(
                    "parameter `{}` binds layer {} of a {}-layer template",
                    p.name,
                    b.layer,
                    self.template.layers.len()
                )));
            }
            if p.step.is_none() {
                return Err(Error::Config(format!(
                    "source parameter `{}` needs a grid step",
                    p.name
                )));
            }
        }
        self.source_radar.validate()?;
        self.target_radar.validate()?;
        if self.source_radar.trace_len != self.target_radar.trace_len
            || self.source_radar.time_window != self.target_radar.time_window
        {
            return Err(Error::Config(
                "source and target radars must share trace_len and time_window".into(),
            ));
        }
        if !has_gap(&self.source_radar, &self.target_radar) {
            return Err(Error::Config(
                "source and target radars must differ in at least one gap knob".into(),
            ));
        }
        if self.specimens.is_empty() || self.scans_per_case == 0 {
            return Err(Error::Config("need at least one specimen and one scan per case".into()));
        }
        for s in &self.specimens {
            if s.values.len() != self.space.len() {
                return Err(Error::Config(format!(
                    "specimen `{}` has {} values for {} parameters",
                    s.name,
                    s.values.len(),
                    self.space.len()
                )));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("specimen `{}` has a non-finite value", s.name)));
            }
            self.space.apply(&self.template, &s.values)?;
        }
        if self.approaches.is_empty() {
            return Err(Error::Config("approach list is empty".into()));
        }
        self.train.validate()?;
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.sobol.n < 2 {
            return Err(Error::Config("sobol.n must be at least 2".into()));
        }
        if let Some(order) = &self.hierarchy.order {
            gprda_core::hierarchy::HierPlan {
                order: order.clone(),
                variant: ModelKind::Dann,
                tolerance_steps: self.hierarchy.tolerance_steps,
            }
            .validate(&self.space.names())?;
        }
        // Building checks the trace is long enough for every stage.
        gprda_core::arch::Model::build(ModelKind::Cnn, self.arch(self.space.len()), 0).map(|_| ())
    }

    pub fn arch(&self, outputs: usize) -> ArchConfig {
        ArchConfig {
            trace_len: self.source_radar.trace_len,
            outputs,
            width_divisor: self.model.width_divisor,
            leaky_slope: self.model.leaky_slope,
        }
    }

    /// Training settings with the experiment seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Parameters whose estimates are clamped at zero.
    pub fn clamped(&self) -> Vec<String> {
        self.space
            .params
            .iter()
            .filter(|p| p.binding.is_some_and(|b| b.property == Property::Conductivity))
            .map(|p| p.name.clone())
            .collect()
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Output directory, relative to the working directory.
    pub out: Option<PathBuf>,
}

/// A validated configuration and where its artifacts go.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    /// SHA-256 of the resolved configuration.
    pub config_sha256: String,
}

impl Experiment {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let out = match &overrides.out {
            Some(o) => o.clone(),
            None => base.join(&config.out_dir),
        };
        Self::new(config, out)
    }

    pub fn new(config: ExperimentConfig, out: PathBuf) -> Result<Self> {
        config.validate()?;
        let canonical = serde_json::to_vec(&config)?;
        let config_sha256 = hex::encode(Sha256::digest(&canonical));
        Ok(Self {
            config,
            out,
            config_sha256,
        })
    }
}

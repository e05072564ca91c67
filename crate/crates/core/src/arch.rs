//! The four model families assembled from the autodiff layers.
//!
//! A 1D CNN is the feature extractor followed by the estimator head; DANN
//! adds a domain discriminator behind a gradient reversal; the physics-guided
//! variants add a signal reconstructor fed by the features (variant 1) or by
//! the features fused with the predicted parameters (variant 2).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::conv_output_len;
use crate::nn::{checkpoint, Group, ParameterStore, Tape, Tensor, Var};
use crate::seed::{derive, stream};

/// `(kernels, kernel size, stride)` at full width.
const EXTRACTOR: [(usize, usize, usize); 4] = [(32, 5, 5), (64, 5, 5), (128, 4, 4), (256, 4, 4)];
const ESTIMATOR: [(usize, usize, usize); 2] = [(512, 3, 3), (10240, 3, 3)];
const DISCRIMINATOR: [(usize, usize, usize); 2] = [(512, 3, 3), (1024, 3, 3)];
const RECONSTRUCTOR: [usize; 4] = [128, 64, 32, 1];
const RECON_KERNEL: usize = 3;
/// Upsampling targets at the reference trace length; other lengths scale
/// them proportionally and the last always equals the trace length.
const RECON_LENGTHS: [usize; 4] = [41, 164, 821, 6560];
const REFERENCE_LEN: usize = 6560;
const EMBED_HIDDEN: usize = 64;
const DOMAIN_CLASSES: usize = 2;
const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cnn,
    Dann,
    #[serde(rename = "phydann1")]
    PhyDann1,
    #[serde(rename = "phydann2")]
    PhyDann2,
}

impl ModelKind {
    pub fn has_discriminator(self) -> bool {
        !matches!(self, ModelKind::Cnn)
    }

    pub fn has_reconstructor(self) -> bool {
        matches!(self, ModelKind::PhyDann1 | ModelKind::PhyDann2)
    }
}

fn default_divisor() -> usize {
    1
}

fn default_slope() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub trace_len: usize,
    pub outputs: usize,
    /// Every hidden channel count is divided by this; 1 is full width.
    #[serde(default = "default_divisor")]
    pub width_divisor: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
}

impl ArchConfig {
    pub fn new(trace_len: usize, outputs: usize) -> Self {
        Self {
            trace_len,
            outputs,
            width_divisor: 1,
            leaky_slope: default_slope(),
        }
    }

    pub fn with_width_divisor(mut self, d: usize) -> Self {
        self.width_divisor = d;
        self
    }

    fn width(&self, full: usize) -> usize {
        (full / self.width_divisor).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.outputs == 0 {
            return Err(Error::Config("model needs at least one output".into()));
        }
        if self.width_divisor == 0 {
            return Err(Error::Config("width_divisor must be positive".into()));
        }
        if !(self.leaky_slope >= 0.0) {
            return Err(Error::Config("leaky_slope must be non-negative".into()));
        }
        Ok(())
    }
}

/// Printed shape of one layer, batch axis omitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerShape {
    pub block: &'static str,
    pub layer: &'static str,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Head {
    convs: Vec<Conv>,
    fc: Dense,
}

#[derive(Debug, Clone)]
struct Reconstructor {
    embed: Option<(Dense, Dense)>,
    /// Upsampling target followed by the convolution at that length.
    stages: Vec<(usize, Conv)>,
}

/// A built network: parameters plus the wiring needed to run them on a tape.
#[derive(Debug, Clone)]
pub struct Model {
    kind: ModelKind,
    config: ArchConfig,
    pub store: ParameterStore,
    extractor: Vec<Conv>,
    estimator: Head,
    discriminator: Option<Head>,
    reconstructor: Option<Reconstructor>,
    feature_shape: [usize; 2],
    layers: Vec<LayerShape>,
}

/// Outputs of one forward pass over a batch.
pub struct Forward {
    pub features: Var,
    pub estimate: Var,
}

struct Builder<'a> {
    config: &'a ArchConfig,
    store: ParameterStore,
    layers: Vec<LayerShape>,
    seed: u64,
}

impl Builder<'_> {
    fn rng(&self, group: Group) -> ChaCha8Rng {
        let s = match group {
            Group::Extractor => stream::INIT_EXTRACTOR,
            Group::Estimator => stream::INIT_ESTIMATOR,
            Group::Discriminator => stream::INIT_DISCRIMINATOR,
            Group::Reconstructor => stream::INIT_RECONSTRUCTOR,
        };
        ChaCha8Rng::seed_from_u64(derive(self.seed, s))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: &str,
        group: Group,
        block: &'static str,
        c_in: usize,
        len: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<(Conv, usize)> {
        let out_len = conv_output_len(len, kernel, stride, padding)?;
        let w = self
            .store
            .push_kaiming(&format!("{name}.w"), group, &[c_out, c_in, kernel], c_in * kernel, rng);
        let b = self.store.push_zeros(&format!("{name}.b"), group, &[c_out]);
        self.layers.push(LayerShape {
            block,
            layer: "conv",
            input: vec![c_in, len],
            output: vec![c_out, out_len],
        });
        Ok((Conv { w, b, stride, padding }, out_len))
    }

    fn dense(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: &str,
        group: Group,
        block: &'static str,
        n_in: usize,
        n_out: usize,
    ) -> Dense {
        let w = self
            .store
            .push_kaiming(&format!("{name}.w"), group, &[n_out, n_in], n_in, rng);
        let b = self.store.push_zeros(&format!("{name}.b"), group, &[n_out]);
        self.layers.push(LayerShape {
            block,
            layer: "linear",
            input: vec![n_in],
            output: vec![n_out],
        });
        Dense { w, b }
    }

    /// Conv stages then flatten and a linear layer. A stage whose input is
    /// shorter than its kernel collapses to kernel = stride = input length.
    fn head(
        &mut self,
        name: &str,
        group: Group,
        block: &'static str,
        spec: &[(usize, usize, usize)],
        feature: [usize; 2],
        outputs: usize,
    ) -> Result<Head> {
        let mut rng = self.rng(group);
        let [mut c, mut len] = feature;
        let mut convs = Vec::new();
        for (i, &(k_full, kernel, stride)) in spec.iter().enumerate() {
            let (kernel, stride) = if len < kernel { (len, len) } else { (kernel, stride) };
            let c_out = self.config.width(k_full);
            let (conv, out) = self.conv(
                &mut rng,
                &format!("{name}.conv{i}"),
                group,
                block,
                c,
                len,
                c_out,
                kernel,
                stride,
                0,
            )?;
            convs.push(conv);
            c = c_out;
            len = out;
        }
        self.layers.push(LayerShape {
            block,
            layer: "flatten",
            input: vec![c, len],
            output: vec![c * len],
        });
        let fc = self.dense(&mut rng, &format!("{name}.fc"), group, block, c * len, outputs);
        Ok(Head { convs, fc })
    }
}

impl Model {
    /// Builds `kind` for the given shape contract with seeded initialization.
    /// Each parameter group draws from its own stream, so shared blocks of
    /// different kinds start identical under the same seed.
    pub fn build(kind: ModelKind, config: ArchConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder {
            config: &config,
            store: ParameterStore::new(),
            layers: Vec::new(),
            seed,
        };

        let mut rng = b.rng(Group::Extractor);
        let mut extractor = Vec::new();
        let (mut c, mut len) = (1, config.trace_len);
        for (i, &(k_full, kernel, stride)) in EXTRACTOR.iter().enumerate() {
            if len < kernel {
                return Err(Error::Shape(format!(
                    "trace length {} too short: extractor stage {i} sees length {len} < kernel {kernel}",
                    config.trace_len
                )));
            }
            let c_out = config.width(k_full);
            let (conv, out) = b.conv(
                &mut rng,
                &format!("extractor.conv{i}"),
                Group::Extractor,
                "extractor",
                c,
                len,
                c_out,
                kernel,
                stride,
                0,
            )?;
            extractor.push(conv);
            c = c_out;
            len = out;
        }
        let feature_shape = [c, len];

        let estimator = b.head(
            "estimator",
            Group::Estimator,
            "estimator",
            &ESTIMATOR,
            feature_shape,
            config.outputs,
        )?;
        let discriminator = if kind.has_discriminator() {
            Some(b.head(
                "discriminator",
                Group::Discriminator,
                "discriminator",
                &DISCRIMINATOR,
                feature_shape,
                DOMAIN_CLASSES,
            )?)
        } else {
            None
        };

        let reconstructor = if kind.has_reconstructor() {
            let mut rng = b.rng(Group::Reconstructor);
            let embed = if kind == ModelKind::PhyDann2 {
                let hidden = config.width(EMBED_HIDDEN);
                let d1 = b.dense(
                    &mut rng,
                    "reconstructor.embed0",
                    Group::Reconstructor,
                    "reconstructor",
                    config.outputs,
                    hidden,
                );
                let d2 = b.dense(
                    &mut rng,
                    "reconstructor.embed1",
                    Group::Reconstructor,
                    "reconstructor",
                    hidden,
                    feature_shape[0],
                );
                b.layers.push(LayerShape {
                    block: "reconstructor",
                    layer: "sum",
                    input: feature_shape.to_vec(),
                    output: feature_shape.to_vec(),
                });
                Some((d1, d2))
            } else {
                None
            };
            let mut stages = Vec::new();
            let [mut c, mut len] = feature_shape;
            for (i, (&k_full, &full)) in RECONSTRUCTOR.iter().zip(&RECON_LENGTHS).enumerate() {
                let target = ((config.trace_len * full + REFERENCE_LEN / 2) / REFERENCE_LEN).max(1);
                b.layers.push(LayerShape {
                    block: "reconstructor",
                    layer: "upsample",
                    input: vec![c, len],
                    output: vec![c, target],
                });
                let c_out = if i + 1 == RECONSTRUCTOR.len() {
                    k_full
                } else {
                    config.width(k_full)
                };
                let (conv, out) = b.conv(
                    &mut rng,
                    &format!("reconstructor.conv{i}"),
                    Group::Reconstructor,
                    "reconstructor",
                    c,
                    target,
                    c_out,
                    RECON_KERNEL,
                    1,
                    RECON_KERNEL / 2,
                )?;
                stages.push((target, conv));
                c = c_out;
                len = out;
            }
            debug_assert_eq!(len, config.trace_len);
            Some(Reconstructor { embed, stages })
        } else {
            None
        };

        let (store, layers) = (b.store, b.layers);
        Ok(Self {
            kind,
            config,
            store,
            extractor,
            estimator,
            discriminator,
            reconstructor,
            feature_shape,
            layers,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn feature_shape(&self) -> [usize; 2] {
        self.feature_shape
    }

    /// Per-layer shapes in build order.
    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    fn slope(&self) -> f64 {
        self.config.leaky_slope
    }

    fn conv(&self, tape: &mut Tape, p: &[Var], x: Var, c: &Conv, act: bool) -> Result<Var> {
        let y = tape.conv1d(x, p[c.w], p[c.b], c.stride, c.padding)?;
        Ok(if act { tape.leaky_relu(y, self.slope()) } else { y })
    }

    fn head(&self, tape: &mut Tape, p: &[Var], x: Var, h: &Head) -> Result<Var> {
        let mut y = x;
        for c in &h.convs {
            y = self.conv(tape, p, y, c, true)?;
        }
        let flat = tape.flatten(y);
        tape.linear(flat, p[h.fc.w], p[h.fc.b])
    }

    /// `x: [B, 1, N] -> [B, C_f, L_f]`.
    pub fn features(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        let mut y = x;
        for c in &self.extractor {
            y = self.conv(tape, p, y, c, true)?;
        }
        Ok(y)
    }

    /// `features -> [B, M]` in scaled label units.
    pub fn estimate(&self, tape: &mut Tape, p: &[Var], features: Var) -> Result<Var> {
        self.head(tape, p, features, &self.estimator)
    }

    /// Domain logits `[B, 2]` behind a gradient reversal of weight `lambda`.
    pub fn discriminate(&self, tape: &mut Tape, p: &[Var], features: Var, lambda: f64) -> Result<Var> {
        let d = self
            .discriminator
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{:?} has no discriminator", self.kind)))?;
        let r = tape.grl(features, lambda);
        self.head(tape, p, r, d)
    }

    /// Reconstructed trace `[B, 1, N]`. Variant 2 fuses `estimate` into the
    /// features; variant 1 ignores it.
    pub fn reconstruct(&self, tape: &mut Tape, p: &[Var], features: Var, estimate: Var) -> Result<Var> {
        let r = self
            .reconstructor
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{:?} has no reconstructor", self.kind)))?;
        let mut y = features;
        if let Some((d1, d2)) = &r.embed {
            let h = tape.linear(estimate, p[d1.w], p[d1.b])?;
            let h = tape.leaky_relu(h, self.slope());
            let e = tape.linear(h, p[d2.w], p[d2.b])?;
            y = tape.sum_fuse(y, e)?;
        }
        let last = r.stages.len() - 1;
        for (i, (target, c)) in r.stages.iter().enumerate() {
            y = tape.upsample_linear(y, *target)?;
            y = self.conv(tape, p, y, c, i != last)?;
        }
        Ok(y)
    }

    /// Features and estimate for a batch already on the tape.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Forward> {
        let features = self.features(tape, p, x)?;
        let estimate = self.estimate(tape, p, features)?;
        Ok(Forward { features, estimate })
    }

    fn check_inputs(&self, inputs: &[Vec<f64>]) -> Result<()> {
        if let Some(bad) = inputs.iter().find(|r| r.len() != self.config.trace_len) {
            return Err(Error::Shape(format!(
                "model expects traces of length {}, got {}",
                self.config.trace_len,
                bad.len()
            )));
        }
        Ok(())
    }

    fn map_chunks<F>(&self, inputs: &[Vec<f64>], mut f: F) -> Result<Vec<Vec<f64>>>
    where
        F: FnMut(&mut Tape, &[Var], Var, usize) -> Result<Var>,
    {
        self.check_inputs(inputs)?;
        let mut out = Vec::with_capacity(inputs.len());
        for (k, chunk) in inputs.chunks(PREDICT_CHUNK).enumerate() {
            let mut tape = Tape::new();
            let p = tape.bind(&self.store);
            let x = tape.constant(Tensor::from_traces(chunk)?);
            let y = f(&mut tape, &p, x, k * PREDICT_CHUNK)?;
            out.extend(tape.value(y).rows().map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Scaled-unit estimates, one row per input trace.
    pub fn predict(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.map_chunks(inputs, |tape, p, x, _| {
            let f = self.features(tape, p, x)?;
            self.estimate(tape, p, f)
        })
    }

    pub fn domain_logits(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.map_chunks(inputs, |tape, p, x, _| {
            let f = self.features(tape, p, x)?;
            self.discriminate(tape, p, f, 0.0)
        })
    }

    /// Reconstructions of `inputs`. When `injected` is given, those rows
    /// replace the model's own estimates as the fused parameters.
    pub fn reconstruct_batch(&self, inputs: &[Vec<f64>], injected: Option<&[Vec<f64>]>) -> Result<Vec<Vec<f64>>> {
        if let Some(rows) = injected {
            if rows.len() != inputs.len() || rows.iter().any(|r| r.len() != self.config.outputs) {
                return Err(Error::Shape("injected parameters do not match the batch".into()));
            }
        }
        self.map_chunks(inputs, |tape, p, x, start| {
            let f = self.features(tape, p, x)?;
            let e = match injected {
                Some(rows) => {
                    let n = tape.shape(x)[0];
                    tape.constant(Tensor::from_rows(&rows[start..start + n])?)
                }
                None => self.estimate(tape, p, f)?,
            };
            self.reconstruct(tape, p, f, e)
        })
    }

    /// Fraction of traces the discriminator assigns to their true domain
    /// (class 0 for source, 1 for target).
    pub fn domain_accuracy(&self, source: &[Vec<f64>], target: &[Vec<f64>]) -> Result<f64> {
        let total = source.len() + target.len();
        if total == 0 {
            return Err(Error::Degenerate("domain accuracy of no traces".into()));
        }
        let mut correct = 0;
        for (set, label) in [(source, 0), (target, 1)] {
            if set.is_empty() {
                continue;
            }
            for row in self.domain_logits(set)? {
                let pred = usize::from(row[1] > row[0]);
                correct += usize::from(pred == label);
            }
        }
        Ok(correct as f64 / total as f64)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": self.kind,
            "arch": self.config,
            "layers": self.layers,
        });
        checkpoint::save(dir, &self.store, meta)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (store, meta) = checkpoint::load(dir)?;
        let kind: ModelKind = serde_json::from_value(meta["kind"].clone())?;
        let config: ArchConfig = serde_json::from_value(meta["arch"].clone())?;
        let mut model = Self::build(kind, config, 0)?;
        model.store.load_from(&store)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scale_lengths() {
        let m = Model::build(ModelKind::PhyDann1, ArchConfig::new(1640, 3).with_width_divisor(4), 1).unwrap();
        assert_eq!(m.feature_shape(), [64, 4]);
        let recon_out: Vec<_> = m
            .layers()
            .iter()
            .filter(|l| l.block == "reconstructor" && l.layer == "conv")
            .map(|l| l.output[1])
            .collect();
        assert_eq!(recon_out, vec![10, 41, 205, 1640]);
    }

    #[test]
    fn too_short_trace_is_shape_error() {
        let r = Model::build(ModelKind::Cnn, ArchConfig::new(100, 1), 0);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::build(ModelKind::PhyDann2, ArchConfig::new(400, 2).with_width_divisor(8), 9).unwrap();
        m.save(dir.path()).unwrap();
        let l = Model::load(dir.path()).unwrap();
        let x = vec![(0..400).map(|i| (i as f64 * 0.01).sin().abs()).collect::<Vec<f64>>()];
        assert_eq!(m.predict(&x).unwrap(), l.predict(&x).unwrap());
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Parameter groups of the adaptation models; each group has its own
/// optimizer state and initialization stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Extractor,
    Estimator,
    Discriminator,
    Reconstructor,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.params[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i].value
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn push(&mut self, name: &str, group: Group, value: Tensor) -> usize {
        self.params.push(Param {
            name: name.to_string(),
            group,
            value,
        });
        self.params.len() - 1
    }

    /// Weight drawn from U(-b, b), b = sqrt(6 / fan_in).
    pub fn push_kaiming<R: Rng>(
        &mut self,
        name: &str,
        group: Group,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> usize {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        self.push(name, group, t)
    }

    pub fn push_zeros(&mut self, name: &str, group: Group, shape: &[usize]) -> usize {
        self.push(name, group, Tensor::zeros(shape))
    }

    pub fn indices_of(&self, group: Group) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| self.params[i].group == group)
            .collect()
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Overwrites every value from `other`, which must have identical layout.
    pub fn load_from(&mut self, other: &ParameterStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::Shape("parameter stores differ in length".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Optimizer over a fixed subset of a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    indices: Vec<usize>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, store: &ParameterStore, indices: Vec<usize>) -> Self {
        let zeros = |i: &usize| vec![0.0; store.value(*i).len()];
        let (m, v) = match kind {
            OptimizerKind::Adam => (indices.iter().map(zeros).collect(), indices.iter().map(zeros).collect()),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self {
            kind,
            indices,
            m,
            v,
            t: 0,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// One update of the owned parameters; `grads` is aligned with the store.
    pub fn step(&mut self, store: &mut ParameterStore, grads: &[Tensor], lr: f64) {
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for &i in &self.indices {
                    for (w, g) in store.value_mut(i).data_mut().iter_mut().zip(grads[i].data()) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - BETA1.powi(self.t as i32);
                let c2 = 1.0 - BETA2.powi(self.t as i32);
                for (k, &i) in self.indices.iter().enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    let w = store.value_mut(i).data_mut();
                    for (j, &g) in grads[i].data().iter().enumerate() {
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        w[j] -= lr * mh / (vh.sqrt() + EPS);
                    }
                }
            }
        }
    }
}

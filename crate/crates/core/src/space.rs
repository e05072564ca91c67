//! Parameter spaces: named ranges, optionally discretized and bound to a
//! property of a layer stack.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdtd::LayerStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Permittivity,
    Conductivity,
    Thickness,
}

/// Which layer property a parameter drives; `layer` is 0-based, top first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub property: Property,
    pub layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDef {
    pub name: String,
    pub min: f64,
    pub max: f64,
    /// Grid spacing; `None` means continuous.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<Binding>,
}

impl ParameterDef {
    pub fn continuous(name: &str, min: f64, max: f64) -> Self {
        Self {
            name: name.to_string(),
            min,
            max,
            step: None,
            binding: None,
        }
    }

    pub fn stepped(name: &str, min: f64, max: f64, step: f64) -> Self {
        Self {
            step: Some(step),
            ..Self::continuous(name, min, max)
        }
    }

    /// Grid with `levels` equally spaced values including both ends.
    pub fn levels(name: &str, min: f64, max: f64, levels: usize) -> Self {
        Self::stepped(name, min, max, (max - min) / (levels.max(2) - 1) as f64)
    }

    pub fn bound(mut self, property: Property, layer: usize) -> Self {
        self.binding = Some(Binding { property, layer });
        self
    }

    /// Grid values `min, min + step, ...` not exceeding `max`; the last value
    /// is snapped onto `max` when it lands within rounding of it.
    pub fn values(&self) -> Result<Vec<f64>> {
        let step = self
            .step
            .ok_or_else(|| Error::Config(format!("parameter `{}` has no grid step", self.name)))?;
        let span = self.max - self.min;
        let count = (span / step * (1.0 + 1e-9)).floor() as usize;
        let mut v: Vec<f64> = (0..=count).map(|k| self.min + k as f64 * step).collect();
        if let Some(last) = v.last_mut() {
            if (*last - self.max).abs() <= 1e-9 * span.abs().max(1.0) {
                *last = self.max;
            }
        }
        Ok(v)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.step {
            Some(_) => {
                let values = self.values().expect("stepped");
                values[rng.gen_range(0..values.len())]
            }
            None => rng.gen_range(self.min..self.max),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.max > self.min) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Config(format!(
                "parameter `{}` needs max > min, got [{}, {}]",
                self.name, self.min, self.max
            )));
        }
        if let Some(step) = self.step {
            if !(step > 0.0) {
                return Err(Error::Config(format!(
                    "parameter `{}` needs a positive step",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterSpace {
    pub params: Vec<ParameterDef>,
}

impl ParameterSpace {
    pub fn new(params: Vec<ParameterDef>) -> Result<Self> {
        let space = Self { params };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::Config("parameter space is empty".into()));
        }
        let mut seen = HashSet::new();
        for p in &self.params {
            p.validate()?;
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Config(format!("duplicate parameter `{}`", p.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn ranges(&self) -> Vec<(f64, f64)> {
        self.params.iter().map(|p| (p.min, p.max)).collect()
    }

    /// Cartesian product of the grids, first parameter varying slowest.
    pub fn grid_points(&self) -> Result<Vec<Vec<f64>>> {
        let axes = self
            .params
            .iter()
            .map(ParameterDef::values)
            .collect::<Result<Vec<_>>>()?;
        let mut points = vec![Vec::with_capacity(axes.len())];
        for axis in &axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Ok(points)
    }

    /// Writes `values` into a copy of `template` according to each binding.
    pub fn apply(&self, template: &LayerStack, values: &[f64]) -> Result<LayerStack> {
        let mut stack = template.clone();
        for (p, &v) in self.params.iter().zip(values) {
            let b = p
                .binding
                .ok_or_else(|| Error::Config(format!("parameter `{}` is not bound to the stack", p.name)))?;
            let layer = stack
                .layers
                .get_mut(b.layer)
                .ok_or_else(|| Error::Config(format!("parameter `{}` binds missing layer {}", p.name, b.layer)))?;
            match b.property {
                Property::Permittivity => layer.relative_permittivity = v,
                Property::Conductivity => layer.conductivity = v,
                Property::Thickness => layer.thickness = v,
            }
        }
        stack.validate()?;
        Ok(stack)
    }
}

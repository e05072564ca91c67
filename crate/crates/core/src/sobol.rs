//! First-order Sobol indices of a vector-valued model by Saltelli sampling.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::plot;
use crate::seed::{derive, stream};
use crate::space::ParameterSpace;

/// Base matrices `A`, `B` and one hybrid per parameter: hybrid `i` is `A`
/// with column `i` taken from `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaltelliMatrices {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub hybrids: Vec<Vec<Vec<f64>>>,
}

impl SaltelliMatrices {
    pub fn n(&self) -> usize {
        self.a.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SobolResult {
    pub names: Vec<String>,
    pub n: usize,
    /// `indices[i][t]`: first-order index of parameter `i` at output sample `t`.
    pub indices: Vec<Vec<f64>>,
    /// Time mean of each row of `indices`.
    pub means: Vec<f64>,
    /// Output samples whose variance was too small to normalize by.
    pub masked: Vec<bool>,
    /// Every output sample was masked.
    pub degenerate: bool,
    /// Distinct model evaluations performed.
    pub evaluations: usize,
}

pub fn saltelli_matrices(n: usize, space: &ParameterSpace, seed: u64) -> Result<SaltelliMatrices> {
    if n < 2 {
        return Err(Error::Config(format!("Sobol sampling needs N >= 2, got {n}")));
    }
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, stream::SOBOL));
    let mut draw = || -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| space.params.iter().map(|p| p.sample(&mut rng)).collect())
            .collect()
    };
    let a = draw();
    let b = draw();
    let hybrids = (0..space.len())
        .map(|i| {
            a.iter()
                .zip(&b)
                .map(|(ra, rb)| {
                    let mut r = ra.clone();
                    r[i] = rb[i];
                    r
                })
                .collect()
        })
        .collect();
    Ok(SaltelliMatrices { a, b, hybrids })
}

fn key(row: &[f64]) -> Vec<u64> {
    row.iter().map(|v| v.to_bits()).collect()
}

/// Estimates `S_i(t)` for every output sample `t` of `model`.
///
/// `V_i = mean_j (f(B)_j - f̄)(f(B_A^i)_j - f(A)_j)` and `S_i = V_i / V`,
/// with `f̄` and `V` taken over the pooled `A ∪ B` evaluations. Identical
/// parameter rows are evaluated once.
pub fn first_order_indices<F>(model: F, names: &[String], m: &SaltelliMatrices) -> Result<SobolResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let n = m.n();
    if n < 2 || m.b.len() != n || m.hybrids.len() != names.len() {
        return Err(Error::Shape("inconsistent Saltelli matrices".into()));
    }

    let mut unique: Vec<&[f64]> = Vec::new();
    let mut slot: HashMap<Vec<u64>, usize> = HashMap::new();
    let all_rows = m.a.iter().chain(&m.b).chain(m.hybrids.iter().flatten());
    for row in all_rows {
        slot.entry(key(row)).or_insert_with(|| {
            unique.push(row);
            unique.len() - 1
        });
    }
    let outputs = unique.par_iter().map(|r| model(r)).collect::<Result<Vec<_>>>()?;
    let t_len = outputs[0].len();
    if t_len == 0 || outputs.iter().any(|o| o.len() != t_len) {
        return Err(Error::Shape("model outputs differ in length".into()));
    }
    let eval = |rows: &[Vec<f64>]| -> Vec<&Vec<f64>> { rows.iter().map(|r| &outputs[slot[&key(r)]]).collect() };
    let fa = eval(&m.a);
    let fb = eval(&m.b);

    let pooled = 2.0 * n as f64;
    let mut mean = vec![0.0; t_len];
    for f in fa.iter().chain(&fb) {
        for (acc, v) in mean.iter_mut().zip(f.iter()) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= pooled);
    let mut var = vec![0.0; t_len];
    for f in fa.iter().chain(&fb) {
        for ((acc, v), mu) in var.iter_mut().zip(f.iter()).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    var.iter_mut().for_each(|v| *v /= pooled);

    let max_var = var.iter().copied().fold(0.0, f64::max);
    let floor = (1e-12 * max_var).max(f64::MIN_POSITIVE);
    let masked: Vec<bool> = var.iter().map(|&v| v < floor).collect();
    let degenerate = masked.iter().all(|&m| m);

    let indices: Vec<Vec<f64>> = m
        .hybrids
        .iter()
        .map(|h| {
            let fh = eval(h);
            (0..t_len)
                .map(|t| {
                    if masked[t] {
                        return 0.0;
                    }
                    let vi = (0..n)
                        .map(|j| (fb[j][t] - mean[t]) * (fh[j][t] - fa[j][t]))
                        .sum::<f64>()
                        / n as f64;
                    vi / var[t]
                })
                .collect()
        })
        .collect();
    let means = indices.iter().map(|s| s.iter().sum::<f64>() / t_len as f64).collect();
    Ok(SobolResult {
        names: names.to_vec(),
        n,
        indices,
        means,
        masked,
        degenerate,
        evaluations: unique.len(),
    })
}

/// Parameter names by descending mean index; ties keep declared order.
pub fn rank_parameters(result: &SobolResult) -> Vec<String> {
    let mut order: Vec<usize> = (0..result.names.len()).collect();
    order.sort_by(|&a, &b| {
        result.means[b]
            .partial_cmp(&result.means[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order.into_iter().map(|i| result.names[i].clone()).collect()
}

impl SobolResult {
    /// One row per output sample (`time`, then one column per parameter)
    /// followed by a `mean` row.
    pub fn write_csv(&self, dt: f64, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["time".to_string()];
        header.extend(self.names.iter().map(|n| format!("S_{n}")));
        w.write_record(&header)?;
        let t_len = self.masked.len();
        for t in 0..t_len {
            let mut row = vec![(t as f64 * dt).to_string()];
            row.extend(self.indices.iter().map(|s| s[t].to_string()));
            w.write_record(&row)?;
        }
        let mut row = vec!["mean".to_string()];
        row.extend(self.means.iter().map(f64::to_string));
        w.write_record(&row)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn svg(&self, dt: f64) -> String {
        let series: Vec<plot::Series> = self
            .names
            .iter()
            .zip(&self.indices)
            .map(|(n, s)| plot::Series {
                name: n.clone(),
                points: s.iter().enumerate().map(|(t, &v)| (t as f64 * dt * 1e9, v)).collect(),
            })
            .collect();
        plot::line_chart("First-order Sobol indices", "time (ns)", "S_i", &series)
    }
}

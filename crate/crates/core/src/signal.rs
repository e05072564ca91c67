//! Envelope extraction and normalization of traces and labels.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdtd::AScan;

/// Analytic-signal weights on an `n`-point DFT: DC and (for even `n`) the
/// Nyquist bin keep weight 1, positive frequencies get 2, negative 0.
pub(crate) fn analytic_weights(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    if n == 0 {
        return w;
    }
    w[0] = 1.0;
    let half = n / 2;
    if n.is_multiple_of(2) {
        w[1..half].fill(2.0);
        w[half] = 1.0;
    } else {
        w[1..=half].fill(2.0);
    }
    w
}

/// Magnitude of the analytic signal of `samples`.
pub fn envelope_of(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    forward.process(&mut buf);
    for (c, w) in buf.iter_mut().zip(analytic_weights(n)) {
        *c *= w;
    }
    inverse.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.norm() * scale).collect()
}

pub fn envelope(trace: &AScan) -> AScan {
    AScan {
        samples: envelope_of(&trace.samples),
        dt: trace.dt,
        t0: trace.t0,
    }
}

/// Divides by the trace maximum so the result peaks at exactly 1.
pub fn normalize_in_place(samples: &mut [f64]) -> Result<()> {
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::Degenerate(format!(
            "cannot normalize a trace with maximum {max}"
        )));
    }
    for v in samples.iter_mut() {
        *v /= max;
    }
    Ok(())
}

pub fn normalize_signal(env: &AScan) -> Result<AScan> {
    let mut out = env.clone();
    normalize_in_place(&mut out.samples)?;
    Ok(out)
}

/// Envelope followed by max-normalization: the network input representation.
pub fn preprocess(samples: &[f64]) -> Result<Vec<f64>> {
    let mut env = envelope_of(samples);
    normalize_in_place(&mut env)?;
    Ok(env)
}

/// Per-parameter min-max scaling taken from the declared grid ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl LabelScaler {
    /// `declared_ranges` are `(min, max)` per parameter from the generating grid.
    pub fn fit(declared_ranges: &[(f64, f64)]) -> Result<Self> {
        for (i, &(lo, hi)) in declared_ranges.iter().enumerate() {
            if !(hi > lo) {
                return Err(Error::Degenerate(format!("parameter {i} has empty range [{lo}, {hi}]")));
            }
        }
        Ok(Self {
            min: declared_ranges.iter().map(|r| r.0).collect(),
            max: declared_ranges.iter().map(|r| r.1).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    /// Scaler restricted to the parameters at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            min: indices.iter().map(|&i| self.min[i]).collect(),
            max: indices.iter().map(|&i| self.max[i]).collect(),
        }
    }

    pub fn apply_one(&self, i: usize, y: f64) -> f64 {
        (y - self.min[i]) / (self.max[i] - self.min[i])
    }

    pub fn invert_one(&self, i: usize, y: f64) -> f64 {
        y * (self.max[i] - self.min[i]) + self.min[i]
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        y.iter().enumerate().map(|(i, &v)| self.apply_one(i, v)).collect()
    }

    pub fn invert(&self, y: &[f64]) -> Vec<f64> {
        y.iter().enumerate().map(|(i, &v)| self.invert_one(i, v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tone_envelope_is_flat() {
        let n = 1024;
        let amp = 2.5;
        let x: Vec<f64> = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * 37.3 * i as f64 / n as f64).cos())
            .collect();
        let env = envelope_of(&x);
        for v in &env[n / 4..3 * n / 4] {
            assert!((v - amp).abs() / amp < 0.01, "{v}");
        }
    }

    #[test]
    fn zero_trace_zero_envelope() {
        assert!(envelope_of(&[0.0; 33]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weights_keep_nyquist_single() {
        assert_eq!(analytic_weights(4), vec![1.0, 2.0, 1.0, 0.0]);
        assert_eq!(analytic_weights(5), vec![1.0, 2.0, 2.0, 0.0, 0.0]);
        assert_eq!(analytic_weights(1), vec![1.0]);
    }

    #[test]
    fn normalize_examples() {
        let a = normalize_signal(&AScan::new(vec![0.0, 2.0, 4.0], 1.0)).unwrap();
        assert_eq!(a.samples, vec![0.0, 0.5, 1.0]);
        let b = normalize_signal(&a).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            normalize_signal(&AScan::new(vec![0.0; 4], 1.0)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn scaler_examples() {
        let s = LabelScaler::fit(&[(3.0, 12.9)]).unwrap();
        assert_eq!(s.apply_one(0, 3.0), 0.0);
        assert!((s.apply_one(0, 7.95) - 0.5).abs() < 1e-15);
        assert_eq!(s.apply_one(0, 12.9), 1.0);
        assert!(matches!(LabelScaler::fit(&[(1.0, 1.0)]), Err(Error::Degenerate(_))));
    }

    proptest! {
        #[test]
        fn envelope_dominates_signal(x in proptest::collection::vec(-10.0f64..10.0, 2..200)) {
            let env = envelope_of(&x);
            prop_assert_eq!(env.len(), x.len());
            for (e, v) in env.iter().zip(&x) {
                prop_assert!(*e >= 0.0);
                prop_assert!(*e >= v.abs() - 1e-9);
            }
        }

        #[test]
        fn normalized_max_is_one(x in proptest::collection::vec(0.0f64..5.0, 1..64)) {
            prop_assume!(x.iter().any(|&v| v > 0.0));
            let mut y = x.clone();
            normalize_in_place(&mut y).unwrap();
            let max = y.iter().copied().fold(f64::MIN, f64::max);
            prop_assert_eq!(max, 1.0);
            prop_assert!(y.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn scaler_round_trip(ys in proptest::collection::vec(-50.0f64..50.0, 100)) {
            let s = LabelScaler::fit(&[(-3.0, 17.0)]).unwrap();
            for y in ys {
                prop_assert!((s.invert_one(0, s.apply_one(0, y)) - y).abs() < 1e-12);
            }
        }
    }
}

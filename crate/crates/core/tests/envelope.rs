//! Envelope against a quadratic-time DFT analytic signal.

use std::f64::consts::PI;

use gprda_core::fdtd::AScan;
use gprda_core::signal::{envelope, envelope_of, normalize_signal, preprocess};
use proptest::prelude::*;

/// |IDFT(U · DFT(x))| with U = 1 at DC and Nyquist, 2 on positive and 0 on
/// negative frequencies, evaluated term by term.
fn dft_envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let spectrum: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect();
    let weight = |k: usize| {
        if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        }
    };
    (0..n)
        .map(|t| {
            let (re, im) = spectrum
                .iter()
                .enumerate()
                .fold((0.0, 0.0), |(re, im), (k, &(sr, si))| {
                    let w = weight(k);
                    let a = 2.0 * PI * (k * t) as f64 / n as f64;
                    (
                        re + w * (sr * a.cos() - si * a.sin()),
                        im + w * (sr * a.sin() + si * a.cos()),
                    )
                });
            (re * re + im * im).sqrt() / n as f64
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_brute_force_dft(x in proptest::collection::vec(-5.0f64..5.0, 1..=256)) {
        let fast = envelope_of(&x);
        let slow = dft_envelope(&x);
        let scale = slow.iter().copied().fold(0.0, f64::max).max(1e-300);
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-6 * scale, "{} vs {}", a, b);
        }
    }

    #[test]
    fn envelope_bounds_the_trace(x in proptest::collection::vec(-5.0f64..5.0, 2..=256)) {
        for (e, v) in envelope_of(&x).iter().zip(&x) {
            prop_assert!(*e >= v.abs() - 1e-9);
        }
    }

    #[test]
    fn scaling_commutes_with_envelope(x in proptest::collection::vec(-5.0f64..5.0, 2..128), k in 0.01f64..100.0) {
        let a = envelope_of(&x);
        let scaled: Vec<f64> = x.iter().map(|v| v * k).collect();
        let b = envelope_of(&scaled);
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p * k - q).abs() <= 1e-9 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn preprocess_is_gain_invariant(x in proptest::collection::vec(-5.0f64..5.0, 2..128), k in 0.1f64..10.0) {
        prop_assume!(x.iter().any(|v| v.abs() > 1e-3));
        let a = preprocess(&x).unwrap();
        let b = preprocess(&x.iter().map(|v| v * k).collect::<Vec<_>>()).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }
}

#[test]
fn odd_and_even_lengths_agree_with_oracle() {
    for n in [1usize, 2, 3, 4, 5, 16, 17, 255, 256] {
        let x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let fast = envelope_of(&x);
        let slow = dft_envelope(&x);
        let scale = slow.iter().copied().fold(0.0, f64::max).max(1e-300);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-6 * scale, "n={n}: {a} vs {b}");
        }
    }
}

#[test]
fn pure_tone_envelope_is_flat_mid_trace() {
    let n = 256;
    let x: Vec<f64> = (0..n)
        .map(|i| 3.0 * (2.0 * PI * 10.0 * i as f64 / n as f64).sin())
        .collect();
    let env = envelope(&AScan::new(x, 1.0));
    for v in &env.samples[n / 4..3 * n / 4] {
        assert!((v - 3.0).abs() <= 0.01 * 3.0);
    }
    let norm = normalize_signal(&env).unwrap();
    assert!(norm.samples.iter().all(|v| (0.0..=1.0).contains(v)));
}

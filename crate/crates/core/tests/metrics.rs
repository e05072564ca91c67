//! Metric identities on random series and the report files.

use gprda_core::metrics::{aggregate, bias, emit_report, metrics, pearson_r, rmse, ubrmse, EvalRow};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn series(rng: &mut ChaCha8Rng, k: usize) -> (Vec<f64>, Vec<f64>) {
    let m: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..20.0)).collect();
    let p = m.iter().map(|v| v + rng.gen_range(-3.0..4.0)).collect();
    (m, p)
}

#[test]
fn rmse_splits_into_bias_and_ubrmse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let k = rng.gen_range(1..=50);
        let (m, p) = series(&mut rng, k);
        let (r, b, u) = (rmse(&m, &p).unwrap(), bias(&m, &p).unwrap(), ubrmse(&m, &p).unwrap());
        assert!((r * r - (b * b + u * u)).abs() <= 1e-10, "{r} {b} {u}");
    }
}

#[test]
fn perfect_prediction_is_1_0_0_0() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (m, _) = series(&mut rng, 20);
    let r = metrics(&m, &m).unwrap();
    assert_eq!((r.r, r.bias, r.rmse, r.ubrmse), (Some(1.0), 0.0, 0.0, 0.0));
}

#[test]
fn pure_offset_has_no_random_error() {
    let m = [1.0, 3.0, 4.0, 9.0];
    let p: Vec<f64> = m.iter().map(|v| v + 2.0).collect();
    let r = metrics(&m, &p).unwrap();
    assert!((r.r.unwrap() - 1.0).abs() < 1e-15);
    assert!((r.bias - 2.0).abs() < 1e-15 && (r.rmse - 2.0).abs() < 1e-15);
    assert!(r.ubrmse < 1e-7);
}

#[test]
fn undefined_correlation_is_explicit() {
    assert!(pearson_r(&[1.0], &[1.0]).is_err());
    assert!(pearson_r(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    assert_eq!(metrics(&[2.0, 2.0], &[1.0, 3.0]).unwrap().r, None);
    assert!(metrics(&[], &[]).is_err());
    assert!(bias(&[1.0, 2.0], &[1.0]).is_err());
}

proptest! {
    #[test]
    fn correlation_ignores_positive_affine_maps(
        seed in any::<u64>(),
        k in 2usize..40,
        a in 0.01f64..100.0,
        c in -100.0f64..100.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, p) = series(&mut rng, k);
        let q: Vec<f64> = p.iter().map(|v| a * v + c).collect();
        let (r1, r2) = (pearson_r(&m, &p).unwrap(), pearson_r(&m, &q).unwrap());
        prop_assert!((r1 - r2).abs() <= 1e-12, "{} vs {}", r1, r2);
        prop_assert!((-1.0..=1.0).contains(&r1));
    }

    #[test]
    fn bias_is_translation_equivariant(seed in any::<u64>(), k in 1usize..40, c in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, p) = series(&mut rng, k);
        let q: Vec<f64> = p.iter().map(|v| v + c).collect();
        prop_assert!((bias(&m, &q).unwrap() - bias(&m, &p).unwrap() - c).abs() <= 1e-10);
    }

    #[test]
    fn aggregate_ignores_order(v in proptest::collection::vec(-10.0f64..10.0, 1..30)) {
        let (m1, s1) = aggregate(&v).unwrap();
        let mut r = v.clone();
        r.reverse();
        let (m2, s2) = aggregate(&r).unwrap();
        prop_assert!((m1 - m2).abs() <= 1e-12 && (s1 - s2).abs() <= 1e-12);
        prop_assert!(s1 >= 0.0);
    }
}

fn rows() -> Vec<EvalRow> {
    let mut out = Vec::new();
    for (k, (m, scans)) in [(4.0, [4.2, 4.4]), (6.0, [5.5, 6.1]), (9.0, [8.0, 9.6])]
        .iter()
        .enumerate()
    {
        for (approach, shift) in [("cnn", 1.0), ("dann", 0.0)] {
            let s: Vec<f64> = scans.iter().map(|v| v + shift).collect();
            out.push(EvalRow::from_scans(approach, &format!("S{k}"), "permittivity", *m, &s).unwrap());
        }
    }
    out
}

#[test]
fn report_lists_one_row_per_approach_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let written = emit_report(&rows(), a.path()).unwrap();
    emit_report(&rows(), b.path()).unwrap();
    let csv = std::fs::read_to_string(a.path().join("metrics_permittivity.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "approach,parameter,R,bias,rmse,ubrmse,n_cases");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("cnn,permittivity,") && lines[2].starts_with("dann,permittivity,"));
    for path in &written {
        let name = path.file_name().unwrap();
        assert_eq!(
            std::fs::read(path).unwrap(),
            std::fs::read(b.path().join(name)).unwrap()
        );
    }
    assert!(a.path().join("scatter_permittivity.svg").exists());
}

#[test]
fn empty_report_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    assert!(emit_report(&[], &out).is_err());
    assert!(!out.exists());
}

use crate::error::{Error, Result};

/// Adversarial weight `2 / (1 + exp(-10 p)) - 1` with `p = iteration / total`.
pub fn lambda_schedule(iteration: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("lambda schedule needs at least one iteration".into()));
    }
    let p = iteration as f64 / total as f64;
    Ok(2.0 / (1.0 + (-10.0 * p).exp()) - 1.0)
}

/// Learning rate decayed by 0.9 per completed epoch.
pub fn lr_schedule(lr0: f64, epoch: usize) -> f64 {
    lr0 * 0.9f64.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lambda_examples() {
        assert_eq!(lambda_schedule(0, 100).unwrap(), 0.0);
        let mid = lambda_schedule(50, 100).unwrap();
        assert!((mid - 0.986_614_298_151_430_3).abs() < 1e-12);
        let end = lambda_schedule(100, 100).unwrap();
        assert!((end - 0.999_909_204_262_595_1).abs() < 1e-12);
        assert!(lambda_schedule(0, 0).is_err());
    }

    #[test]
    fn lr_examples() {
        assert_eq!(lr_schedule(1e-3, 0), 1e-3);
        assert!((lr_schedule(1e-3, 2) - 8.1e-4).abs() < 1e-18);
    }

    proptest! {
        #[test]
        fn lambda_monotone_in_unit_interval(total in 1usize..10_000, a in 0usize..10_000, b in 0usize..10_000) {
            let (a, b) = (a.min(total), b.min(total));
            let (lo, hi) = (a.min(b), a.max(b));
            let la = lambda_schedule(lo, total).unwrap();
            let lb = lambda_schedule(hi, total).unwrap();
            prop_assert!((0.0..1.0).contains(&la));
            prop_assert!(la <= lb);
        }
    }
}

//! Agreement statistics between measured and predicted parameters, and the
//! per-parameter comparison report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::plot;

fn check(measured: &[f64], predicted: &[f64], min: usize) -> Result<()> {
    if measured.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} measured values against {} predictions",
            measured.len(),
            predicted.len()
        )));
    }
    if measured.len() < min {
        return Err(Error::Degenerate(format!(
            "need at least {min} points, got {}",
            measured.len()
        )));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Degenerate("aggregate of no estimates".into()));
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Ok((m, var.sqrt()))
}

/// Pearson correlation; undefined (an error) for fewer than two points or a
/// constant series.
pub fn pearson_r(measured: &[f64], predicted: &[f64]) -> Result<f64> {
    check(measured, predicted, 2)?;
    let (mm, mp) = (mean(measured), mean(predicted));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in measured.iter().zip(predicted) {
        let (dx, dy) = (x - mm, y - mp);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(measured) {
        return Err(Error::Degenerate(
            "R is undefined for a constant measured series".into(),
        ));
    }
    if constant(predicted) {
        return Err(Error::Degenerate(
            "R is undefined for a constant prediction series".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean of `predicted - measured`.
pub fn bias(measured: &[f64], predicted: &[f64]) -> Result<f64> {
    check(measured, predicted, 1)?;
    Ok(measured.iter().zip(predicted).map(|(m, p)| p - m).sum::<f64>() / measured.len() as f64)
}

pub fn rmse(measured: &[f64], predicted: &[f64]) -> Result<f64> {
    check(measured, predicted, 1)?;
    let ms = measured
        .iter()
        .zip(predicted)
        .map(|(m, p)| (p - m) * (p - m))
        .sum::<f64>()
        / measured.len() as f64;
    Ok(ms.sqrt())
}

/// `sqrt(RMSE² - Bias²)`; a negative radicand from rounding is clamped to 0.
pub fn ubrmse(measured: &[f64], predicted: &[f64]) -> Result<f64> {
    let r = rmse(measured, predicted)?;
    let b = bias(measured, predicted)?;
    let rad = r * r - b * b;
    if rad < 0.0 {
        if rad < -1e-12 * (r * r).max(1.0) {
            log::warn!("ubRMSE radicand {rad:e} is negative beyond rounding; clamped to 0");
        }
        return Ok(0.0);
    }
    Ok(rad.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// `None` where the correlation is undefined.
    pub r: Option<f64>,
    pub bias: f64,
    pub rmse: f64,
    pub ubrmse: f64,
    pub n: usize,
}

pub fn metrics(measured: &[f64], predicted: &[f64]) -> Result<Metrics> {
    Ok(Metrics {
        r: pearson_r(measured, predicted).ok(),
        bias: bias(measured, predicted)?,
        rmse: rmse(measured, predicted)?,
        ubrmse: ubrmse(measured, predicted)?,
        n: measured.len(),
    })
}

/// One case's aggregated prediction of one parameter by one approach.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub approach: String,
    pub case: String,
    pub parameter: String,
    pub measured: f64,
    /// Mean over the case's scans.
    pub predicted: f64,
    /// Population standard deviation over the case's scans.
    pub std: f64,
}

impl EvalRow {
    pub fn from_scans(approach: &str, case: &str, parameter: &str, measured: f64, scans: &[f64]) -> Result<Self> {
        let (predicted, std) = aggregate(scans)?;
        Ok(Self {
            approach: approach.to_string(),
            case: case.to_string(),
            parameter: parameter.to_string(),
            measured,
            predicted,
            std,
        })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

/// Metric file for `parameter` inside a report directory.
pub fn metrics_path(dir: &Path, parameter: &str) -> PathBuf {
    dir.join(format!("metrics_{parameter}.csv"))
}

/// Per-approach metrics per parameter, grouped in first-seen order.
pub fn summarize(rows: &[EvalRow]) -> Result<Vec<(String, Vec<(String, Metrics)>)>> {
    let mut params: Vec<String> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut approaches: Vec<String> = Vec::new();
    for r in rows {
        let pi = match params.iter().position(|p| *p == r.parameter) {
            Some(i) => i,
            None => {
                params.push(r.parameter.clone());
                params.len() - 1
            }
        };
        let ai = match approaches.iter().position(|a| *a == r.approach) {
            Some(i) => i,
            None => {
                approaches.push(r.approach.clone());
                approaches.len() - 1
            }
        };
        let g = groups.entry((pi, ai)).or_default();
        g.0.push(r.measured);
        g.1.push(r.predicted);
    }
    params
        .iter()
        .enumerate()
        .map(|(pi, p)| {
            let per = groups
                .range((pi, 0)..(pi + 1, 0))
                .map(|(&(_, ai), (m, q))| Ok((approaches[ai].clone(), metrics(m, q)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok((p.clone(), per))
        })
        .collect()
}

/// Writes `metrics_<param>.csv`, `scatter_<param>.svg` and `predictions.csv`
/// into `dir`. Returns the written paths.
pub fn emit_report(rows: &[EvalRow], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::Degenerate("no evaluation rows to report".into()));
    }
    let summary = summarize(rows)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    for (param, per) in &summary {
        let path = metrics_path(dir, param);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["approach", "parameter", "R", "bias", "rmse", "ubrmse", "n_cases"])?;
        for (approach, m) in per {
            w.write_record([
                approach.clone(),
                param.clone(),
                fmt_opt(m.r),
                m.bias.to_string(),
                m.rmse.to_string(),
                m.ubrmse.to_string(),
                m.n.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);

        let series: Vec<plot::Series> = per
            .iter()
            .map(|(approach, _)| plot::Series {
                name: approach.clone(),
                points: rows
                    .iter()
                    .filter(|r| r.parameter == *param && r.approach == *approach)
                    .map(|r| (r.measured, r.predicted))
                    .collect(),
            })
            .collect();
        let svg = plot::scatter(
            &format!("{param}: predicted vs measured"),
            "measured",
            "predicted",
            &series,
        );
        let path = dir.join(format!("scatter_{param}.svg"));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    let path = dir.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["approach", "case", "parameter", "measured", "predicted", "std"])?;
    for r in rows {
        w.write_record([
            r.approach.clone(),
            r.case.clone(),
            r.parameter.clone(),
            r.measured.to_string(),
            r.predicted.to_string(),
            r.std.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[2.0, 4.0]).unwrap(), (3.0, 1.0));
        assert_eq!(aggregate(&[7.5]).unwrap(), (7.5, 0.0));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn perfect_and_offset() {
        let m = [1.0, 2.0, 4.0, 8.0];
        let p: Vec<f64> = m.iter().map(|v| v + 2.0).collect();
        let perfect = metrics(&m, &m).unwrap();
        assert_eq!(
            (perfect.r, perfect.bias, perfect.rmse, perfect.ubrmse),
            (Some(1.0), 0.0, 0.0, 0.0)
        );
        let off = metrics(&m, &p).unwrap();
        assert!((off.r.unwrap() - 1.0).abs() < 1e-15);
        assert!((off.bias - 2.0).abs() < 1e-15);
        assert!((off.rmse - 2.0).abs() < 1e-15);
        assert!(off.ubrmse < 1e-7);
    }

    #[test]
    fn constant_measured_has_no_r() {
        assert!(pearson_r(&[0.2, 0.2, 0.2], &[0.1, 0.2, 0.3]).is_err());
        assert_eq!(metrics(&[0.2, 0.2], &[0.1, 0.3]).unwrap().r, None);
    }
}

//! Simulated datasets: a labeled source grid and unlabeled target scans
//! grouped by case, with ground truth kept in a separate file.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdtd::{apply_domain_gap, simulate_ascan, simulate_clean, LayerStack, RadarConfig};
use crate::seed::{derive, stream};
use crate::signal::preprocess;
use crate::space::ParameterSpace;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACES_FILE: &str = "traces.f32";
pub const LABELS_FILE: &str = "labels.csv";
pub const CASES_FILE: &str = "cases.csv";
pub const TRUTH_FILE: &str = "truth.csv";
const PREPROCESSING: &str = "normalized_envelope";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    names: Vec<String>,
    grid: Vec<Vec<f64>>,
    ranges: Vec<(f64, f64)>,
    radar: RadarConfig,
    seed: u64,
    trace_len: usize,
    dt: f64,
    rows: usize,
    preprocessing: String,
}

/// Labeled simulated traces over a parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub names: Vec<String>,
    /// Remaining grid values per parameter.
    pub grid: Vec<Vec<f64>>,
    /// Declared `(min, max)` per parameter; fixes label scaling.
    pub ranges: Vec<(f64, f64)>,
    pub radar: RadarConfig,
    pub seed: u64,
    /// Raw traces, f32-rounded.
    pub raw: Vec<Vec<f64>>,
    /// Network inputs: normalized envelopes of `raw`.
    pub inputs: Vec<Vec<f64>>,
    /// Physical-unit labels, one row per trace.
    pub labels: Vec<Vec<f64>>,
}

/// A target specimen: a named parameter tuple, possibly off-grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Specimen {
    pub name: String,
    pub values: Vec<f64>,
}

/// Unlabeled target scans grouped by case.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub names: Vec<String>,
    pub cases: Vec<String>,
    /// Index into `cases` per scan.
    pub case_of: Vec<usize>,
    pub radar: RadarConfig,
    pub seed: u64,
    pub raw: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

fn round_f32(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x as f32 as f64).collect()
}

fn prepare(raw: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    raw.par_iter().map(|r| preprocess(r)).collect()
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("dataset has no parameter `{name}`")))
    }

    /// Rows at `indices`, in that order; grid metadata is narrowed to the
    /// label values still present.
    pub fn select(&self, indices: &[usize]) -> Self {
        let pick = |v: &Vec<Vec<f64>>| indices.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        let labels = pick(&self.labels);
        let grid = self
            .grid
            .iter()
            .enumerate()
            .map(|(p, values)| {
                values
                    .iter()
                    .copied()
                    .filter(|v| labels.iter().any(|l| l[p] == *v))
                    .collect()
            })
            .collect();
        Self {
            names: self.names.clone(),
            grid,
            ranges: self.ranges.clone(),
            radar: self.radar.clone(),
            seed: self.seed,
            raw: pick(&self.raw),
            inputs: pick(&self.inputs),
            labels,
        }
    }

    /// Label column of parameter `p`.
    pub fn column(&self, p: usize) -> Vec<f64> {
        self.labels.iter().map(|l| l[p]).collect()
    }
}

/// Simulates every grid point of `space` applied to `template`. Scene `i`
/// draws its gap perturbation from its own seed, so results do not depend
/// on scheduling.
pub fn generate_grid(
    space: &ParameterSpace,
    template: &LayerStack,
    radar: &RadarConfig,
    seed: u64,
) -> Result<LabeledDataset> {
    space.validate()?;
    let points = space.grid_points()?;
    let raw = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let stack = space.apply(template, p)?;
            simulate_ascan(&stack, radar, derive(seed, i as u64 + 1)).map(|a| round_f32(a.samples))
        })
        .collect::<Result<Vec<_>>>()?;
    let inputs = prepare(&raw)?;
    Ok(LabeledDataset {
        names: space.names(),
        grid: space.params.iter().map(|p| p.values()).collect::<Result<Vec<_>>>()?,
        ranges: space.ranges(),
        radar: radar.clone(),
        seed,
        raw,
        inputs,
        labels: points,
    })
}

/// `scans_per_case` perturbed scans of each specimen. The clean response is
/// simulated once per specimen; each scan draws its own gap realization.
pub fn generate_target(
    space: &ParameterSpace,
    template: &LayerStack,
    radar: &RadarConfig,
    specimens: &[Specimen],
    scans_per_case: usize,
    seed: u64,
) -> Result<TraceSet> {
    if specimens.is_empty() || scans_per_case == 0 {
        return Err(Error::Config("target needs at least one specimen and one scan".into()));
    }
    for s in specimens {
        if s.values.len() != space.len() {
            return Err(Error::Config(format!(
                "specimen `{}` has {} values for {} parameters",
                s.name,
                s.values.len(),
                space.len()
            )));
        }
    }
    let clean = specimens
        .par_iter()
        .map(|s| simulate_clean(&space.apply(template, &s.values)?, radar))
        .collect::<Result<Vec<_>>>()?;
    let base = derive(seed, stream::TARGET_SCANS);
    let mut raw = Vec::with_capacity(specimens.len() * scans_per_case);
    let mut case_of = Vec::with_capacity(raw.capacity());
    for (c, trace) in clean.iter().enumerate() {
        for k in 0..scans_per_case {
            let s = derive(base, (c * scans_per_case + k) as u64 + 1);
            raw.push(round_f32(apply_domain_gap(trace, radar, s).samples));
            case_of.push(c);
        }
    }
    let inputs = prepare(&raw)?;
    Ok(TraceSet {
        names: space.names(),
        cases: specimens.iter().map(|s| s.name.clone()).collect(),
        case_of,
        radar: radar.clone(),
        seed,
        raw,
        inputs,
    })
}

impl TraceSet {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Indices of the scans of case `c`.
    pub fn scans_of(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.case_of[i] == c).collect()
    }

    pub fn inputs_of(&self, c: usize) -> Vec<Vec<f64>> {
        self.scans_of(c).into_iter().map(|i| self.inputs[i].clone()).collect()
    }
}

fn write_traces(path: &Path, raw: &[Vec<f64>]) -> Result<()> {
    let mut bytes = Vec::with_capacity(raw.iter().map(Vec::len).sum::<usize>() * 4);
    for row in raw {
        for &v in row {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_traces(path: &Path, rows: usize, len: usize) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != rows * len * 4 {
        return Err(Error::Shape(format!(
            "{} holds {} bytes, expected {rows} x {len} f32",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(len * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect()
        })
        .collect())
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Dependency(path.to_path_buf()))
    }
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_vec_pretty(m)?).map_err(|e| Error::io(&path, e))
}

fn read_manifest(dir: &Path, kind: &str) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    require(&path)?;
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_slice(&bytes)?;
    if m.kind != kind {
        return Err(Error::Config(format!(
            "{} describes a `{}` dataset, expected `{kind}`",
            path.display(),
            m.kind
        )));
    }
    if m.preprocessing != PREPROCESSING {
        return Err(Error::Config(format!("unknown preprocessing `{}`", m.preprocessing)));
    }
    Ok(m)
}

impl LabeledDataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_manifest(
            dir,
            &Manifest {
                kind: "labeled".into(),
                names: self.names.clone(),
                grid: self.grid.clone(),
                ranges: self.ranges.clone(),
                radar: self.radar.clone(),
                seed: self.seed,
                trace_len: self.radar.trace_len,
                dt: self.radar.output_dt(),
                rows: self.len(),
                preprocessing: PREPROCESSING.into(),
            },
        )?;
        write_traces(&dir.join(TRACES_FILE), &self.raw)?;
        let path = dir.join(LABELS_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&self.names)?;
        for row in &self.labels {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = read_manifest(dir, "labeled")?;
        let tpath = dir.join(TRACES_FILE);
        let lpath = dir.join(LABELS_FILE);
        require(&tpath)?;
        require(&lpath)?;
        let raw = read_traces(&tpath, m.rows, m.trace_len)?;
        let mut r = csv::Reader::from_path(&lpath)?;
        let labels = r
            .records()
            .map(|rec| {
                rec?.iter()
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|e| Error::Config(format!("bad label `{s}` in {}: {e}", lpath.display())))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        if labels.len() != m.rows {
            return Err(Error::Shape(format!(
                "{} has {} rows, expected {}",
                lpath.display(),
                labels.len(),
                m.rows
            )));
        }
        let inputs = prepare(&raw)?;
        Ok(Self {
            names: m.names,
            grid: m.grid,
            ranges: m.ranges,
            radar: m.radar,
            seed: m.seed,
            raw,
            inputs,
            labels,
        })
    }
}

impl TraceSet {
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_manifest(
            dir,
            &Manifest {
                kind: "target".into(),
                names: self.names.clone(),
                grid: Vec::new(),
                ranges: Vec::new(),
                radar: self.radar.clone(),
                seed: self.seed,
                trace_len: self.radar.trace_len,
                dt: self.radar.output_dt(),
                rows: self.len(),
                preprocessing: PREPROCESSING.into(),
            },
        )?;
        write_traces(&dir.join(TRACES_FILE), &self.raw)?;
        let path = dir.join(CASES_FILE);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["scan", "case"])?;
        for (i, &c) in self.case_of.iter().enumerate() {
            w.write_record([i.to_string(), self.cases[c].clone()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    /// Reads scans and case assignment; never touches the truth file.
    pub fn load(dir: &Path) -> Result<Self> {
        let m = read_manifest(dir, "target")?;
        let tpath = dir.join(TRACES_FILE);
        let cpath = dir.join(CASES_FILE);
        require(&tpath)?;
        require(&cpath)?;
        let raw = read_traces(&tpath, m.rows, m.trace_len)?;
        let mut cases: Vec<String> = Vec::new();
        let mut case_of = Vec::with_capacity(m.rows);
        let mut r = csv::Reader::from_path(&cpath)?;
        for rec in r.records() {
            let rec = rec?;
            let name = rec.get(1).unwrap_or_default().to_string();
            let c = match cases.iter().position(|n| *n == name) {
                Some(c) => c,
                None => {
                    cases.push(name);
                    cases.len() - 1
                }
            };
            case_of.push(c);
        }
        if case_of.len() != m.rows {
            return Err(Error::Shape(format!(
                "{} has {} rows, expected {}",
                cpath.display(),
                case_of.len(),
                m.rows
            )));
        }
        let inputs = prepare(&raw)?;
        Ok(Self {
            names: m.names,
            cases,
            case_of,
            radar: m.radar,
            seed: m.seed,
            raw,
            inputs,
        })
    }
}

/// Writes specimen ground truth; only evaluation reads it back.
pub fn save_truth(path: &Path, names: &[String], specimens: &[Specimen]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["case".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for s in specimens {
        let mut row = vec![s.name.clone()];
        row.extend(s.values.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_truth(path: &Path) -> Result<(Vec<String>, Vec<Specimen>)> {
    require(path)?;
    let mut r = csv::Reader::from_path(path)?;
    let names = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let specimens = r
        .records()
        .map(|rec| {
            let rec = rec?;
            let values = rec
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Config(format!("bad truth value `{s}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Specimen {
                name: rec.get(0).unwrap_or_default().to_string(),
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((names, specimens))
}

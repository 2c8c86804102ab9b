//! Datasets on a declared compact box, synthetic generators and CSV I/O.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Real(Vec<f64>),
    Labels { labels: Vec<usize>, classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Real(v) => v.len(),
            Targets::Labels { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Inputs in `[-x_max, x_max]^d` with targets bounded by `y_max`
/// (regression) or labels below `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vec<f64>>,
    targets: Targets,
    x_max: f64,
    y_max: f64,
}

impl Dataset {
    /// Checks every record against the declared bounds. For labelled data
    /// `y_max` is ignored and stored as 0.
    pub fn new(inputs: Vec<Vec<f64>>, targets: Targets, x_max: f64, y_max: f64) -> Result<Self> {
        let y_max = match targets {
            Targets::Real(_) => y_max,
            Targets::Labels { .. } => 0.0,
        };
        let d = Self {
            inputs,
            targets,
            x_max,
            y_max,
        };
        d.check_bounds()?;
        Ok(d)
    }

    /// Re-verifies nonemptiness, shapes, finiteness and the declared box.
    pub fn check_bounds(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Domain("dataset is empty".into()));
        }
        if self.inputs.len() != self.targets.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} targets",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        if !(self.x_max.is_finite()
            && self.x_max >= 0.0
            && self.y_max.is_finite()
            && self.y_max >= 0.0)
        {
            return Err(Error::Domain(
                "declared bounds must be finite and non-negative".into(),
            ));
        }
        let d = self.inputs[0].len();
        if d == 0 {
            return Err(Error::Dimension("records have no features".into()));
        }
        for (i, x) in self.inputs.iter().enumerate() {
            if x.len() != d {
                return Err(Error::Dimension(format!(
                    "record {i} has {} features, expected {d}",
                    x.len()
                )));
            }
            if let Some(v) = x.iter().find(|v| !(v.is_finite() && v.abs() <= self.x_max)) {
                return Err(Error::Domain(format!(
                    "record {i}: feature {v} outside declared box [-{0}, {0}]",
                    self.x_max
                )));
            }
        }
        match &self.targets {
            Targets::Real(y) => {
                if let Some((i, v)) = y
                    .iter()
                    .enumerate()
                    .find(|(_, v)| !(v.is_finite() && v.abs() <= self.y_max))
                {
                    return Err(Error::Domain(format!(
                        "record {i}: target {v} outside declared bound {}",
                        self.y_max
                    )));
                }
            }
            Targets::Labels { labels, classes } => {
                if *classes < 2 {
                    return Err(Error::Domain(
                        "labelled data needs at least two classes".into(),
                    ));
                }
                if let Some((i, c)) = labels.iter().enumerate().find(|(_, c)| **c >= *classes) {
                    return Err(Error::Domain(format!(
                        "record {i}: label {c} not below {classes}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn classes(&self) -> Option<usize> {
        match self.targets {
            Targets::Labels { classes, .. } => Some(classes),
            Targets::Real(_) => None,
        }
    }

    /// Records at `idx`, keeping the declared bounds.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let inputs = idx.iter().map(|&i| self.inputs[i].clone()).collect();
        let targets = match &self.targets {
            Targets::Real(y) => Targets::Real(idx.iter().map(|&i| y[i]).collect()),
            Targets::Labels { labels, classes } => Targets::Labels {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        };
        Self::new(inputs, targets, self.x_max, self.y_max)
    }
}

/// `x ~ U[-1, 1]^d`, `y = clamp(sin(<w*, x>) + noise, ±y_max)` with a
/// seed-fixed `w*` of norm 1.5 and `y_max = 1 + 3 noise_sd`.
pub fn gen_regression(n: usize, d: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::Domain("gen_regression needs n, d >= 1".into()));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::Domain(format!(
            "noise_sd must be non-negative, got {noise_sd}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let norm = w
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    w.iter_mut().for_each(|v| *v *= 1.5 / norm);
    let y_max = 1.0 + 3.0 * noise_sd;
    let mut inputs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let z: f64 = rng.sample(StandardNormal);
        let clean = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().sin();
        ys.push((clean + noise_sd * z).clamp(-y_max, y_max));
        inputs.push(x);
    }
    Dataset::new(inputs, Targets::Real(ys), 1.0, y_max)
}

/// Truncation point of the blob noise, in standard deviations.
pub const BLOB_TRUNCATION: f64 = 3.0;

/// Two unit-variance Gaussian clusters at `±separation/2 · e_1`, each
/// component truncated to `±3`. Labels alternate so the classes are exactly
/// balanced; the box is `x_max = separation/2 + 3`.
pub fn gen_blobs(n: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "gen_blobs needs a positive even n, got {n}"
        )));
    }
    if d == 0 || !(separation.is_finite() && separation >= 0.0) {
        return Err(Error::Domain(
            "gen_blobs needs d >= 1 and a finite separation >= 0".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trunc = || loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= BLOB_TRUNCATION {
            return z;
        }
    };
    let half = 0.5 * separation;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let mut x: Vec<f64> = (0..d).map(|_| trunc()).collect();
        x[0] += if c == 0 { -half } else { half };
        inputs.push(x);
        labels.push(c);
    }
    Dataset::new(
        inputs,
        Targets::Labels { labels, classes: 2 },
        half + BLOB_TRUNCATION,
        0.0,
    )
}

/// How the last CSV column is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvSchema {
    Regression,
    /// Labels are non-negative integers; the class count is the largest
    /// label plus one unless given.
    Classification {
        classes: Option<usize>,
    },
}

/// Reads a headed numeric CSV whose last column is the target. The box
/// bounds are taken from the data.
pub fn load_csv(path: &Path, schema: CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let ncols = rdr.headers()?.len();
    if ncols < 2 {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "need at least one feature column and one target column".into(),
        });
    }
    let mut inputs = Vec::new();
    let mut raw_targets = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != ncols {
            return Err(Error::Parse {
                line,
                column: rec.len().min(ncols) + 1,
                message: format!("expected {ncols} fields, found {}", rec.len()),
            });
        }
        let mut row = Vec::with_capacity(ncols);
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line,
                column: j + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: j + 1,
                    message: format!("non-finite value '{cell}'"),
                });
            }
            row.push(v);
        }
        raw_targets.push((line, row.pop().expect("at least two columns")));
        inputs.push(row);
    }
    if inputs.is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "file has no data rows".into(),
        });
    }
    let x_max = inputs.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    let (targets, y_max) = match schema {
        CsvSchema::Regression => {
            let y: Vec<f64> = raw_targets.iter().map(|(_, v)| *v).collect();
            let y_max = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            (Targets::Real(y), y_max)
        }
        CsvSchema::Classification { classes } => {
            let mut labels = Vec::with_capacity(raw_targets.len());
            for (line, v) in &raw_targets {
                if v.fract() != 0.0 || *v < 0.0 {
                    return Err(Error::Parse {
                        line: *line,
                        column: ncols,
                        message: format!("label {v} is not a non-negative integer"),
                    });
                }
                labels.push(*v as usize);
            }
            let k = classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
            (Targets::Labels { labels, classes: k }, 0.0)
        }
    };
    Dataset::new(inputs, targets, x_max, y_max)
}

/// Writes `data` in the format read by [`load_csv`].
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.inputs[i].iter().map(|v| v.to_string()).collect();
        row.push(match &data.targets {
            Targets::Real(y) => y[i].to_string(),
            Targets::Labels { labels, .. } => labels[i].to_string(),
        });
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

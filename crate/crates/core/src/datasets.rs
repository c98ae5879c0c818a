//! Synthetic benchmark tasks, truncated-normal sampling and CSV I/O.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{KanError, Result};
use crate::rng::{SeededRng, Stream, RNG_ALGORITHM};
use crate::symbolic::bessel_j0;

/// Largest `|lo|` or `|hi|` accepted for rejection sampling from `N(0, 1)`.
pub const MAX_RANGE_ABS: f64 = 10.0;

const MAX_REJECTIONS: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticTask {
    /// `x1 * x2`
    Multiplication,
    /// `exp(J0(20 x1) + x2^2)`
    Special,
    /// `tanh(5 (x1^4 + x2^4 + x3^4 - 1))`
    Phase,
    /// `exp(sin(pi x1) + x2^2)`
    Complex,
}

/// Architecture and penalty used for a task's reference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPreset {
    pub widths: Vec<usize>,
    pub grid_intervals: usize,
    pub degree: usize,
    pub lambda: f64,
}

impl SyntheticTask {
    pub const ALL: [SyntheticTask; 4] = [
        SyntheticTask::Multiplication,
        SyntheticTask::Special,
        SyntheticTask::Phase,
        SyntheticTask::Complex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticTask::Multiplication => "multiplication",
            SyntheticTask::Special => "special",
            SyntheticTask::Phase => "phase",
            SyntheticTask::Complex => "complex",
        }
    }

    pub fn input_dim(self) -> usize {
        match self {
            SyntheticTask::Phase => 3,
            _ => 2,
        }
    }

    /// Target value at one input row.
    pub fn eval(self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim());
        match self {
            SyntheticTask::Multiplication => x[0] * x[1],
            SyntheticTask::Special => (bessel_j0(20.0 * x[0]) + x[1] * x[1]).exp(),
            SyntheticTask::Phase => (5.0 * (x.iter().map(|v| v.powi(4)).sum::<f64>() - 1.0)).tanh(),
            SyntheticTask::Complex => ((std::f64::consts::PI * x[0]).sin() + x[1] * x[1]).exp(),
        }
    }

    pub fn preset(self) -> TaskPreset {
        let (grid_intervals, lambda) = match self {
            SyntheticTask::Multiplication => (3, 0.0),
            SyntheticTask::Special => (5, 0.1),
            SyntheticTask::Phase => (5, 0.0),
            SyntheticTask::Complex => (5, 0.0),
        };
        TaskPreset {
            widths: vec![self.input_dim(), 5, 1],
            grid_intervals,
            degree: 3,
            lambda,
        }
    }
}

impl fmt::Display for SyntheticTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticTask {
    type Err = KanError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "multiplication" | "f1" => Ok(SyntheticTask::Multiplication),
            "special" | "f2" => Ok(SyntheticTask::Special),
            "phase" | "f3" => Ok(SyntheticTask::Phase),
            "complex" | "f4" => Ok(SyntheticTask::Complex),
            _ => Err(KanError::UnknownTask(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub n: usize,
    /// Closed interval applied to every input dimension.
    pub range: (f64, f64),
    pub seed: u64,
}

impl SampleSpec {
    pub fn new(n: usize, lo: f64, hi: f64, seed: u64) -> Self {
        Self {
            n,
            range: (lo, hi),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range;
        if self.n == 0 {
            return Err(KanError::InvalidArgument("sample count must be at least 1".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(KanError::InvalidArgument(format!("invalid range [{lo}, {hi}]")));
        }
        if lo.abs() > MAX_RANGE_ABS || hi.abs() > MAX_RANGE_ABS {
            return Err(KanError::InvalidArgument(format!(
                "range [{lo}, {hi}] is outside the plausible sampling region |x| <= {MAX_RANGE_ABS}"
            )));
        }
        Ok(())
    }
}

/// Inputs with a single target column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array1<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Targets as an `N x 1` matrix, the shape training expects.
    pub fn target_matrix(&self) -> Array2<f64> {
        self.targets.clone().insert_axis(ndarray::Axis(1))
    }
}

/// Draw `N(0, 1)` until the value falls in `[lo, hi]`.
fn truncated_normal(rng: &mut SeededRng, lo: f64, hi: f64) -> Result<f64> {
    for _ in 0..MAX_REJECTIONS {
        let z = rng.normal();
        if z >= lo && z <= hi {
            return Ok(z);
        }
    }
    Err(KanError::InvalidArgument(format!(
        "rejection sampling into [{lo}, {hi}] did not terminate"
    )))
}

/// Sample inputs for `task` and evaluate its target on every row.
pub fn generate(task: SyntheticTask, spec: &SampleSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = task.input_dim();
    let (lo, hi) = spec.range;
    let mut rng = SeededRng::new(spec.seed, Stream::Data);
    let mut inputs = Array2::zeros((spec.n, d));
    for mut row in inputs.rows_mut() {
        for v in row.iter_mut() {
            *v = truncated_normal(&mut rng, lo, hi)?;
        }
    }
    let targets = inputs
        .rows()
        .into_iter()
        .map(|r| task.eval(r.as_slice().expect("standard layout")))
        .collect();
    Ok(Dataset { inputs, targets })
}

/// Sidecar describing how a dataset file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: SyntheticTask,
    pub n: usize,
    pub range: [f64; 2],
    pub seed: u64,
    pub rng_algorithm: String,
}

impl DatasetManifest {
    pub fn new(task: SyntheticTask, spec: &SampleSpec) -> Self {
        Self {
            task,
            n: spec.n,
            range: [spec.range.0, spec.range.1],
            seed: spec.seed,
            rng_algorithm: RNG_ALGORITHM.to_string(),
        }
    }
}

fn header(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{i}")).chain(std::iter::once("y".to_string())).collect()
}

fn csv_io(e: csv::Error) -> KanError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => KanError::Io(io),
        other => KanError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Header `x1..xd,y`; values in 17 significant digits.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(data.input_dim())).map_err(csv_io)?;
    let mut record = Vec::with_capacity(data.input_dim() + 1);
    for (row, y) in data.inputs.rows().into_iter().zip(data.targets.iter()) {
        record.clear();
        record.extend(row.iter().map(|v| format!("{v:.16e}")));
        record.push(format!("{y:.16e}"));
        w.write_record(&record).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = r.records();
    let head = match records.next() {
        None => {
            return Err(KanError::Parse {
                line: 1,
                message: "empty file".into(),
            })
        }
        Some(rec) => rec.map_err(|e| parse_error(&e))?,
    };
    if head.len() < 2 {
        return Err(KanError::Parse {
            line: 1,
            message: format!("header needs at least one input column and `y`, found {} column(s)", head.len()),
        });
    }
    let d = head.len() - 1;
    for (found, want) in head.iter().zip(header(d)) {
        if found != want {
            return Err(KanError::Parse {
                line: 1,
                message: format!("expected column `{want}`, found `{found}`"),
            });
        }
    }

    let names = header(d);
    let mut flat = Vec::new();
    let mut targets = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| parse_error(&e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != d + 1 {
            return Err(KanError::Parse {
                line,
                message: format!("expected {} fields, found {}", d + 1, rec.len()),
            });
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| KanError::Parse {
                line,
                message: format!("column `{}`: `{field}` is not a number", names[k]),
            })?;
            if !v.is_finite() {
                return Err(KanError::Parse {
                    line,
                    message: format!("column `{}`: value is not finite", names[k]),
                });
            }
            if k < d {
                flat.push(v);
            } else {
                targets.push(v);
            }
        }
    }
    if targets.is_empty() {
        return Err(KanError::Parse {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let inputs = Array2::from_shape_vec((targets.len(), d), flat).expect("row lengths checked");
    Ok(Dataset {
        inputs,
        targets: Array1::from(targets),
    })
}

fn parse_error(e: &csv::Error) -> KanError {
    KanError::Parse {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(data, std::io::BufWriter::new(file))
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file))
}

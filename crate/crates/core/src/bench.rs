//! Sampling-convergence benchmark: distance of permutation and antithetic
//! estimates from the exact Shapley values as the permutation budget grows.

use std::io::Write;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionReport, CoalitionGame, Method, ValueFunctionSpec, EXACT_CAP};
use crate::error::{KanError, Result};
use crate::network::KanNetwork;

pub const DEFAULT_SIZES: [usize; 6] = [32, 64, 128, 256, 512, 1024];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub layer_index: usize,
    pub sizes: Vec<usize>,
    pub repeats: usize,
    pub antithetic: bool,
    pub seed: u64,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(KanError::InvalidArgument("sizes must be a nonempty list of positive counts".into()));
        }
        if self.repeats == 0 {
            return Err(KanError::InvalidArgument("repeats must be at least 1".into()));
        }
        Ok(())
    }

    /// Sampling seed of one repeat.
    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        self.seed.wrapping_add((repeat as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub m: usize,
    pub repeat: usize,
    pub l2_bias_to_exact: f64,
    /// Game setup plus sampling.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub exact: AttributionReport,
    pub rows: Vec<BenchRow>,
}

impl BenchResult {
    /// Median `l2_bias_to_exact` over repeats, `None` if no rows match.
    pub fn median_bias(&self, method: Method, m: usize) -> Option<f64> {
        median(self.rows.iter().filter(|r| r.method == method && r.m == m).map(|r| r.l2_bias_to_exact))
    }

    pub fn median_seconds(&self, method: Method, m: usize) -> Option<f64> {
        median(self.rows.iter().filter(|r| r.method == method && r.m == m).map(|r| r.wall_seconds))
    }

    /// Columns `method, m, repeat, l2_bias_to_exact, wall_seconds`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| KanError::Io(std::io::Error::other(e));
        w.write_record(["method", "m", "repeat", "l2_bias_to_exact", "wall_seconds"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.method.name().to_string(),
                r.m.to_string(),
                r.repeat.to_string(),
                format!("{:e}", r.l2_bias_to_exact),
                format!("{:e}", r.wall_seconds),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn median(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn bench_sv(net: &KanNetwork, data: &Array2<f64>, config: &BenchConfig) -> Result<BenchResult> {
    config.validate()?;
    let spec = ValueFunctionSpec::new(config.layer_index, data.clone());
    let exact = CoalitionGame::new(net, &spec)?;
    if exact.width() > EXACT_CAP {
        return Err(KanError::LayerTooWide {
            layer: config.layer_index,
            width: exact.width(),
            cap: EXACT_CAP,
        });
    }
    let exact = exact.exact()?;
    let mut methods = vec![Method::Permutation];
    if config.antithetic {
        methods.push(Method::Antithetic);
    }
    let mut rows = Vec::new();
    for &m in &config.sizes {
        for repeat in 0..config.repeats {
            let seed = config.repeat_seed(repeat);
            for &method in &methods {
                let start = Instant::now();
                let game = CoalitionGame::new(net, &spec)?;
                let report = match method {
                    Method::Antithetic => game.antithetic(m, seed)?,
                    _ => game.permutation(m, seed)?,
                };
                let wall_seconds = start.elapsed().as_secs_f64();
                rows.push(BenchRow {
                    method,
                    m,
                    repeat,
                    l2_bias_to_exact: l2(&report.shapley, &exact.shapley),
                    wall_seconds,
                });
            }
        }
    }
    Ok(BenchResult { exact, rows })
}

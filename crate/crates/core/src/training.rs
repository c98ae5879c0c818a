//! Loss, analytic gradients and Adam training.
//!
//! The objective is
//! `MSE + lambda * (mu1 * sum_l sum_e |phi_e|_1 + mu2 * sum_l S_l)`,
//! where `|phi_e|_1` is the batch mean of `|phi_e(x)|` and `S_l` is the
//! entropy of layer `l`'s edge magnitudes normalised to a distribution.
//! Gradients are exact: the penalty terms are differentiated through the
//! per-sample post-activations (sign of `phi`) and propagated upstream
//! together with the prediction error.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{KanError, Result};
use crate::network::{silu, silu_derivative, validate_widths, EdgeFunction, KanNetwork};
use crate::rng::{SeededRng, Stream};
use crate::spline::SplineGrid;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            learning_rate: 0.01,
            lambda: 0.0,
            mu1: 1.0,
            mu2: 1.0,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(KanError::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(KanError::InvalidArgument(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.mu1.is_finite() && self.mu2.is_finite()) {
            return Err(KanError::InvalidArgument("mu1 and mu2 must be finite".into()));
        }
        if self.batch_size == Some(0) {
            return Err(KanError::InvalidArgument("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Grid shared by every layer of a freshly initialised network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub degree: usize,
    pub intervals: usize,
    pub domain: (f64, f64),
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            degree: 3,
            intervals: 3,
            domain: (-1.0, 1.0),
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<SplineGrid> {
        SplineGrid::uniform(self.degree, self.intervals, self.domain.0, self.domain.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub pred_loss: f64,
    pub l1_term: f64,
    pub entropy_term: f64,
    pub total: f64,
}

/// Partial derivatives laid out like the network: entry `[l][j * n_in + i]`
/// holds `d total / d (w_b, w_s, c)` of edge `(j, i)` in layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<EdgeFunction>>,
}

impl Gradients {
    fn zeros_like(net: &KanNetwork) -> Self {
        Self {
            layers: net
                .layers()
                .iter()
                .map(|l| vec![EdgeFunction::zero(l.grid().basis_count()); l.n_in() * l.n_out()])
                .collect(),
        }
    }

    /// Same order as [`flatten_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for e in layer {
                out.push(e.base_weight);
                out.push(e.spline_weight);
                out.extend_from_slice(&e.coefficients);
            }
        }
        out
    }
}

/// Every trainable scalar: per edge `w_b, w_s, c_0..`.
pub fn flatten_params(net: &KanNetwork) -> Vec<f64> {
    let mut out = Vec::with_capacity(net.parameter_count());
    for layer in net.layers() {
        for e in layer.edges() {
            out.push(e.base_weight);
            out.push(e.spline_weight);
            out.extend_from_slice(&e.coefficients);
        }
    }
    out
}

pub fn set_params(net: &mut KanNetwork, params: &[f64]) {
    assert_eq!(params.len(), net.parameter_count());
    let mut it = params.iter().copied();
    for layer in net.layers_mut() {
        for e in layer.edges_mut() {
            e.base_weight = it.next().unwrap();
            e.spline_weight = it.next().unwrap();
            for c in &mut e.coefficients {
                *c = it.next().unwrap();
            }
        }
    }
}

/// Fresh network: `w_b = w_s = 1`, coefficients `N(0, (0.1/sqrt(G+k))^2)`.
pub fn init_network(widths: &[usize], grid: &GridSpec, seed: u64) -> Result<KanNetwork> {
    validate_widths(widths)?;
    let grid = grid.build()?;
    let scale = 0.1 / (grid.basis_count() as f64).sqrt();
    let mut net = KanNetwork::zeros(widths, &grid)?;
    let mut rng = SeededRng::new(seed, Stream::Init);
    for layer in net.layers_mut() {
        for e in layer.edges_mut() {
            e.base_weight = 1.0;
            e.spline_weight = 1.0;
            for c in &mut e.coefficients {
                *c = scale * rng.normal();
            }
        }
    }
    Ok(net)
}

fn check_shapes(net: &KanNetwork, inputs: &ArrayView2<f64>, targets: &ArrayView2<f64>) -> Result<()> {
    if inputs.ncols() != net.input_dim() {
        return Err(KanError::ShapeMismatch {
            what: "input columns",
            expected: net.input_dim(),
            found: inputs.ncols(),
        });
    }
    if targets.ncols() != net.output_dim() {
        return Err(KanError::ShapeMismatch {
            what: "target columns",
            expected: net.output_dim(),
            found: targets.ncols(),
        });
    }
    if targets.nrows() != inputs.nrows() {
        return Err(KanError::ShapeMismatch {
            what: "target rows",
            expected: inputs.nrows(),
            found: targets.nrows(),
        });
    }
    if inputs.nrows() == 0 {
        return Err(KanError::InvalidArgument("empty training batch".into()));
    }
    Ok(())
}

/// Loss without gradients.
pub fn loss(
    net: &KanNetwork,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    config: &TrainConfig,
) -> Result<LossBreakdown> {
    check_shapes(net, &inputs.view(), &targets.view())?;
    let mut ev = Evaluator::new(net, inputs.view());
    let rows: Vec<usize> = (0..inputs.nrows()).collect();
    Ok(ev.run(net, targets.view(), &rows, config, false).0)
}

/// Exact gradient of [`LossBreakdown::total`] w.r.t. every parameter.
pub fn gradients(
    net: &KanNetwork,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    config: &TrainConfig,
) -> Result<Gradients> {
    Ok(loss_and_gradients(net, inputs, targets, config)?.1)
}

pub fn loss_and_gradients(
    net: &KanNetwork,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    config: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    check_shapes(net, &inputs.view(), &targets.view())?;
    let mut ev = Evaluator::new(net, inputs.view());
    let rows: Vec<usize> = (0..inputs.nrows()).collect();
    let (l, g) = ev.run(net, targets.view(), &rows, config, true);
    Ok((l, g.expect("gradients requested")))
}

/// Root-mean-square error of the network on a dataset.
pub fn rmse(net: &KanNetwork, inputs: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    check_shapes(net, &inputs.view(), &targets.view())?;
    let pred = net.predict(inputs)?;
    let se: f64 = pred.iter().zip(targets.iter()).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((se / pred.len() as f64).sqrt())
}

/// Basis windows for one layer's inputs, stored flat with stride `k + 1`.
#[derive(Debug, Clone, Default)]
struct BasisTable {
    stride: usize,
    count: usize,
    start: Vec<isize>,
    values: Vec<f64>,
    derivatives: Vec<f64>,
    silu: Vec<f64>,
    silu_prime: Vec<f64>,
}

impl BasisTable {
    fn new(grid: &SplineGrid, xs: impl Iterator<Item = f64>, with_derivatives: bool) -> Self {
        let mut t = BasisTable {
            stride: grid.degree() + 1,
            count: grid.basis_count(),
            ..Default::default()
        };
        for x in xs {
            t.push(grid, x, with_derivatives);
        }
        t
    }

    fn clear(&mut self) {
        self.start.clear();
        self.values.clear();
        self.derivatives.clear();
        self.silu.clear();
        self.silu_prime.clear();
    }

    fn push(&mut self, grid: &SplineGrid, x: f64, with_derivatives: bool) {
        let b = if with_derivatives {
            grid.local_with_derivatives(x)
        } else {
            grid.local(x)
        };
        let stride = self.stride;
        if b.values.is_empty() {
            self.start.push(0);
            self.values.extend(std::iter::repeat_n(0.0, stride));
            if with_derivatives {
                self.derivatives.extend(std::iter::repeat_n(0.0, stride));
            }
        } else {
            self.start.push(b.start);
            self.values.extend_from_slice(&b.values);
            if with_derivatives {
                self.derivatives.extend_from_slice(&b.derivatives);
            }
        }
        self.silu.push(silu(x));
        if with_derivatives {
            self.silu_prime.push(silu_derivative(x));
        }
    }

    /// In-range `(coefficient index, value slot)` range for entry `k`.
    #[inline]
    fn window(&self, k: usize) -> (usize, usize, usize) {
        let start = self.start[k];
        let lo = (-start).max(0) as usize;
        let hi = ((self.count as isize - start).min(self.stride as isize)).max(0) as usize;
        let base = k * self.stride;
        ((start + lo as isize).max(0) as usize, base + lo, hi.saturating_sub(lo))
    }

    #[inline]
    fn dot(&self, k: usize, coefficients: &[f64]) -> f64 {
        let (c0, v0, len) = self.window(k);
        coefficients[c0..c0 + len]
            .iter()
            .zip(&self.values[v0..v0 + len])
            .map(|(c, b)| c * b)
            .sum()
    }

    #[inline]
    fn dot_derivative(&self, k: usize, coefficients: &[f64]) -> f64 {
        let (c0, v0, len) = self.window(k);
        coefficients[c0..c0 + len]
            .iter()
            .zip(&self.derivatives[v0..v0 + len])
            .map(|(c, b)| c * b)
            .sum()
    }

    #[inline]
    fn accumulate(&self, k: usize, scale: f64, target: &mut [f64]) {
        let (c0, v0, len) = self.window(k);
        for (t, b) in target[c0..c0 + len].iter_mut().zip(&self.values[v0..v0 + len]) {
            *t += scale * b;
        }
    }
}

/// Input-layer bases are fixed for a dataset, so they are computed once.
/// Hidden-layer tables and spline sums are refilled on every pass.
struct Evaluator<'a> {
    inputs: ArrayView2<'a, f64>,
    input_table: BasisTable,
    hidden: Vec<BasisTable>,
    nodes: Vec<Vec<f64>>,
    splines: Vec<Vec<f64>>,
}

impl<'a> Evaluator<'a> {
    fn new(net: &KanNetwork, inputs: ArrayView2<'a, f64>) -> Self {
        let input_table = BasisTable::new(net.layer(0).grid(), inputs.iter().copied(), false);
        let hidden = net.layers()[1..]
            .iter()
            .map(|l| BasisTable::new(l.grid(), std::iter::empty(), true))
            .collect();
        Self {
            inputs,
            input_table,
            hidden,
            nodes: Vec::new(),
            splines: Vec::new(),
        }
    }

    /// Loss (and optionally gradients) over the given rows.
    fn run(
        &mut self,
        net: &KanNetwork,
        targets: ArrayView2<f64>,
        rows: &[usize],
        config: &TrainConfig,
        want_grad: bool,
    ) -> (LossBreakdown, Option<Gradients>) {
        let depth = net.depth();
        let widths = net.widths();
        let n = rows.len();
        let d = widths[0];

        self.nodes.resize_with(depth + 1, Vec::new);
        self.splines.resize_with(depth, Vec::new);
        for (l, w) in widths.iter().enumerate() {
            self.nodes[l].clear();
            self.nodes[l].resize(n * w, 0.0);
        }
        for (l, layer) in net.layers().iter().enumerate() {
            self.splines[l].clear();
            self.splines[l].resize(n * layer.n_in() * layer.n_out(), 0.0);
        }
        for t in &mut self.hidden {
            t.clear();
        }

        // forward: node values, spline sums and magnitudes
        let mut mags: Vec<Vec<f64>> = net
            .layers()
            .iter()
            .map(|l| vec![0.0; l.n_in() * l.n_out()])
            .collect();
        for (r, &row) in rows.iter().enumerate() {
            for i in 0..d {
                self.nodes[0][r * d + i] = self.inputs[[row, i]];
            }
            for l in 0..depth {
                let layer = net.layer(l);
                let (n_in, n_out) = (layer.n_in(), layer.n_out());
                let n_edges = n_in * n_out;
                let (lower, upper) = self.nodes.split_at_mut(l + 1);
                let src = &lower[l][r * n_in..(r + 1) * n_in];
                let dst = &mut upper[0][r * n_out..(r + 1) * n_out];
                let spl = &mut self.splines[l][r * n_edges..(r + 1) * n_edges];
                let (table, base) = if l == 0 {
                    (&self.input_table, row * d)
                } else {
                    let t = &mut self.hidden[l - 1];
                    for &x in src {
                        t.push(layer.grid(), x, true);
                    }
                    (&self.hidden[l - 1], r * n_in)
                };
                for i in 0..n_in {
                    let k = base + i;
                    let s = table.silu[k];
                    for (j, acc) in dst.iter_mut().enumerate() {
                        let e = layer.edge(j, i);
                        let sp = table.dot(k, &e.coefficients);
                        let phi = e.base_weight * s + e.spline_weight * sp;
                        spl[j * n_in + i] = sp;
                        *acc += phi;
                        mags[l][j * n_in + i] += phi.abs();
                    }
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        for m in mags.iter_mut().flatten() {
            *m *= inv_n;
        }

        let n_out = widths[depth];
        let out = &self.nodes[depth];
        let mut se = 0.0;
        for (r, &row) in rows.iter().enumerate() {
            for j in 0..n_out {
                se += (out[r * n_out + j] - targets[[row, j]]).powi(2);
            }
        }
        let pred_loss = se / (n * n_out) as f64;

        let mut l1_term = 0.0;
        let mut entropy_term = 0.0;
        let mut edge_weight: Vec<Vec<f64>> = Vec::with_capacity(depth);
        for layer_mags in &mags {
            let total: f64 = layer_mags.iter().sum();
            l1_term += total;
            let entropy = if total > 0.0 {
                -layer_mags
                    .iter()
                    .map(|m| m / total)
                    .filter(|p| *p > 0.0)
                    .map(|p| p * p.ln())
                    .sum::<f64>()
            } else {
                0.0
            };
            entropy_term += entropy;
            // d penalty / d |phi_e|_1, then / n for the per-sample mean
            edge_weight.push(
                layer_mags
                    .iter()
                    .map(|&m| {
                        let d_entropy = if m > 0.0 && total > 0.0 {
                            -((m / total).ln() + entropy) / total
                        } else {
                            0.0
                        };
                        config.lambda * (config.mu1 + config.mu2 * d_entropy) * inv_n
                    })
                    .collect(),
            );
        }
        let breakdown = LossBreakdown {
            pred_loss,
            l1_term,
            entropy_term,
            total: pred_loss + config.lambda * (config.mu1 * l1_term + config.mu2 * entropy_term),
        };
        if !want_grad {
            return (breakdown, None);
        }

        let penalised = config.lambda != 0.0;
        let mut grads = Gradients::zeros_like(net);
        let max_w = widths.iter().copied().max().unwrap_or(0);
        let mut delta_out = vec![0.0; max_w];
        let mut delta_in = vec![0.0; max_w];
        let scale = 2.0 / (n * n_out) as f64;
        for (r, &row) in rows.iter().enumerate() {
            for j in 0..n_out {
                delta_out[j] = scale * (out[r * n_out + j] - targets[[row, j]]);
            }
            for l in (0..depth).rev() {
                let layer = net.layer(l);
                let n_in = layer.n_in();
                let n_edges = n_in * layer.n_out();
                let spl = &self.splines[l][r * n_edges..(r + 1) * n_edges];
                let (table, base) = if l == 0 {
                    (&self.input_table, row * d)
                } else {
                    (&self.hidden[l - 1], r * n_in)
                };
                let g_layer = &mut grads.layers[l];
                let w_layer = &edge_weight[l];
                delta_in[..n_in].iter_mut().for_each(|v| *v = 0.0);
                for i in 0..n_in {
                    let k = base + i;
                    let s = table.silu[k];
                    for j in 0..layer.n_out() {
                        let idx = j * n_in + i;
                        let e = layer.edge(j, i);
                        let spline = spl[idx];
                        let mut g = delta_out[j];
                        if penalised {
                            let phi = e.base_weight * s + e.spline_weight * spline;
                            g += w_layer[idx] * sign(phi);
                        }
                        if g == 0.0 {
                            continue;
                        }
                        let ge = &mut g_layer[idx];
                        ge.base_weight += g * s;
                        ge.spline_weight += g * spline;
                        table.accumulate(k, g * e.spline_weight, &mut ge.coefficients);
                        if l > 0 {
                            delta_in[i] += g
                                * (e.base_weight * table.silu_prime[k]
                                    + e.spline_weight * table.dot_derivative(k, &e.coefficients));
                        }
                    }
                }
                if l > 0 {
                    delta_out[..n_in].copy_from_slice(&delta_in[..n_in]);
                }
            }
        }
        (breakdown, Some(grads))
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One row of the loss history. `step` counts optimizer updates applied
/// before the loss was measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: LossBreakdown,
    /// RMSE on the validation set when one was attached and due.
    pub validation_rmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: KanNetwork,
    pub history: Vec<StepRecord>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> LossBreakdown {
        self.history.last().expect("history is never empty").loss
    }

    /// Validation RMSE at the monitored step with the lowest training loss.
    pub fn validation_at_best_step(&self) -> Option<f64> {
        self.history
            .iter()
            .filter(|r| r.validation_rmse.is_some())
            .min_by(|a, b| a.loss.total.total_cmp(&b.loss.total))
            .and_then(|r| r.validation_rmse)
    }

    pub fn write_history_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_history_csv(&self.history, writer)
    }
}

pub fn write_history_csv<W: Write>(history: &[StepRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "pred_loss", "l1", "entropy", "total"])
        .map_err(csv_err)?;
    for r in history {
        w.write_record([
            r.step.to_string(),
            r.loss.pred_loss.to_string(),
            r.loss.l1_term.to_string(),
            r.loss.entropy_term.to_string(),
            r.loss.total.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> KanError {
    KanError::Io(std::io::Error::other(e))
}

/// Held-out set evaluated every `every` steps during training.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub inputs: &'a Array2<f64>,
    pub targets: &'a Array2<f64>,
    pub every: usize,
}

/// Adam over all edge parameters.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    config: TrainConfig,
    validation: Option<Validation<'a>>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            config,
            validation: None,
        }
    }

    pub fn with_validation(mut self, validation: Validation<'a>) -> Self {
        self.validation = Some(validation);
        self
    }

    pub fn run(
        &self,
        net: &KanNetwork,
        inputs: &Array2<f64>,
        targets: &Array2<f64>,
    ) -> Result<TrainOutcome> {
        let cfg = &self.config;
        cfg.validate()?;
        check_shapes(net, &inputs.view(), &targets.view())?;
        if let Some(v) = &self.validation {
            check_shapes(net, &v.inputs.view(), &v.targets.view())?;
            if v.every == 0 {
                return Err(KanError::InvalidArgument("validation interval must be positive".into()));
            }
        }

        let mut net = net.clone();
        let mut ev = Evaluator::new(&net, inputs.view());
        let n = inputs.nrows();
        let all_rows: Vec<usize> = (0..n).collect();
        let mut batch_rng = SeededRng::new(cfg.seed, Stream::Batches);
        let mut order = all_rows.clone();

        let mut params = flatten_params(&net);
        let mut m = vec![0.0; params.len()];
        let mut v = vec![0.0; params.len()];
        let mut history = Vec::with_capacity(cfg.steps + 1);

        for step in 0..=cfg.steps {
            let rows: &[usize] = match cfg.batch_size {
                Some(b) if b < n => {
                    // partial Fisher-Yates: first b entries become the batch
                    for i in 0..b {
                        let j = i + batch_rng.below(n - i);
                        order.swap(i, j);
                    }
                    &order[..b]
                }
                _ => &all_rows,
            };
            let last = step == cfg.steps;
            let (loss, grads) = ev.run(&net, targets.view(), rows, cfg, !last);
            if !loss.total.is_finite() {
                return Err(KanError::Divergence {
                    step,
                    detail: format!("loss became {}", loss.total),
                });
            }
            let validation_rmse = match &self.validation {
                Some(val) if last || step % val.every == 0 => {
                    Some(rmse(&net, val.inputs, val.targets)?)
                }
                _ => None,
            };
            history.push(StepRecord {
                step,
                loss,
                validation_rmse,
            });
            let Some(grads) = grads else { break };

            let g = grads.flatten();
            if let Some(bad) = g.iter().position(|x| !x.is_finite()) {
                return Err(KanError::Divergence {
                    step,
                    detail: format!("gradient entry {bad} is not finite"),
                });
            }
            let t = (step + 1) as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            for k in 0..params.len() {
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                params[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            set_params(&mut net, &params);
        }
        Ok(TrainOutcome { net, history })
    }
}

/// Train with the given config and no validation monitor.
pub fn train(
    net: &KanNetwork,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    Trainer::new(config.clone()).run(net, inputs, targets)
}

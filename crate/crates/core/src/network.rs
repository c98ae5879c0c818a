//! Kolmogorov-Arnold network: layers of learnable univariate edge functions.
//!
//! Node `j` of layer `l + 1` is the sum of the post-activations
//! `phi_{l,j,i}(x_{l,i})` over the nodes `i` of layer `l`. Each edge is
//! `phi(x) = w_b * silu(x) + w_s * sum_m c_m B_m(x)` on the layer's grid.
//!
//! Coalition masks drop the post-activations of excluded nodes of one hidden
//! layer from the sums feeding the next layer. The node values themselves are
//! not zeroed, since `phi(0)` is generally nonzero.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{KanError, Result};
use crate::spline::{LocalBasis, SplineGrid};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_derivative(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Learnable activation on one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFunction {
    pub base_weight: f64,
    pub spline_weight: f64,
    pub coefficients: Vec<f64>,
}

impl EdgeFunction {
    pub fn zero(basis_count: usize) -> Self {
        Self {
            base_weight: 0.0,
            spline_weight: 0.0,
            coefficients: vec![0.0; basis_count],
        }
    }

    /// Evaluate given precomputed `silu(x)` and basis window at `x`.
    #[inline]
    pub fn eval_with(&self, silu_x: f64, basis: &LocalBasis) -> f64 {
        self.base_weight * silu_x + self.spline_weight * basis.dot(&self.coefficients)
    }

    pub fn eval(&self, grid: &SplineGrid, x: f64) -> f64 {
        self.eval_with(silu(x), &grid.local(x))
    }

    /// `d phi / d x`; `basis` must carry derivatives.
    #[inline]
    pub fn derivative_with(&self, silu_prime_x: f64, basis: &LocalBasis) -> f64 {
        self.base_weight * silu_prime_x
            + self.spline_weight * basis.dot_derivative(&self.coefficients)
    }

    pub fn is_zero(&self) -> bool {
        self.base_weight == 0.0
            && self.spline_weight == 0.0
            && self.coefficients.iter().all(|c| *c == 0.0)
    }

    fn is_finite(&self) -> bool {
        self.base_weight.is_finite()
            && self.spline_weight.is_finite()
            && self.coefficients.iter().all(|c| c.is_finite())
    }
}

/// `n_out x n_in` edges sharing one spline grid. Edge `(j, i)` maps input
/// node `i` to output node `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    n_in: usize,
    n_out: usize,
    grid: SplineGrid,
    edges: Vec<EdgeFunction>,
}

impl KanLayer {
    /// `edges` is row-major by output node.
    pub fn new(
        n_in: usize,
        n_out: usize,
        grid: SplineGrid,
        edges: Vec<EdgeFunction>,
    ) -> Result<Self> {
        if edges.len() != n_in * n_out {
            return Err(KanError::ShapeMismatch {
                what: "layer edges",
                expected: n_in * n_out,
                found: edges.len(),
            });
        }
        let count = grid.basis_count();
        for e in &edges {
            if e.coefficients.len() != count {
                return Err(KanError::ShapeMismatch {
                    what: "edge coefficients",
                    expected: count,
                    found: e.coefficients.len(),
                });
            }
            if !e.is_finite() {
                return Err(KanError::InvalidArgument(
                    "edge parameters must be finite".into(),
                ));
            }
        }
        Ok(Self {
            n_in,
            n_out,
            grid,
            edges,
        })
    }

    pub fn zeros(n_in: usize, n_out: usize, grid: SplineGrid) -> Self {
        let edges = vec![EdgeFunction::zero(grid.basis_count()); n_in * n_out];
        Self {
            n_in,
            n_out,
            grid,
            edges,
        }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn grid(&self) -> &SplineGrid {
        &self.grid
    }

    pub fn edges(&self) -> &[EdgeFunction] {
        &self.edges
    }

    pub fn edges_mut(&mut self) -> &mut [EdgeFunction] {
        &mut self.edges
    }

    #[inline]
    pub fn edge(&self, out: usize, inp: usize) -> &EdgeFunction {
        &self.edges[out * self.n_in + inp]
    }

    #[inline]
    pub fn edge_mut(&mut self, out: usize, inp: usize) -> &mut EdgeFunction {
        &mut self.edges[out * self.n_in + inp]
    }

    /// Accumulate the layer's post-activations for one sample into `out`.
    /// Inputs with `include[i] == false` contribute nothing.
    pub fn forward_row(&self, input: ArrayView1<f64>, include: Option<&[bool]>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, &x) in input.iter().enumerate() {
            if include.is_some_and(|m| !m[i]) {
                continue;
            }
            let basis = self.grid.local(x);
            let s = silu(x);
            for (j, acc) in out.iter_mut().enumerate() {
                *acc += self.edge(j, i).eval_with(s, &basis);
            }
        }
    }
}

/// Which nodes of one hidden layer take part in a coalition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoalitionMask {
    layer_index: usize,
    included: Vec<bool>,
}

impl CoalitionMask {
    pub fn full(layer_index: usize, width: usize) -> Self {
        Self {
            layer_index,
            included: vec![true; width],
        }
    }

    pub fn empty(layer_index: usize, width: usize) -> Self {
        Self {
            layer_index,
            included: vec![false; width],
        }
    }

    /// Bit `i` of `bits` selects node `i`; `width` must be at most 64.
    pub fn from_bits(layer_index: usize, width: usize, bits: u64) -> Self {
        assert!(width <= 64);
        Self {
            layer_index,
            included: (0..width).map(|i| bits >> i & 1 == 1).collect(),
        }
    }

    pub fn from_members(layer_index: usize, width: usize, members: &[usize]) -> Self {
        let mut m = Self::empty(layer_index, width);
        for &i in members {
            m.included[i] = true;
        }
        m
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn width(&self) -> usize {
        self.included.len()
    }

    pub fn included(&self) -> &[bool] {
        &self.included
    }

    pub fn contains(&self, node: usize) -> bool {
        self.included[node]
    }

    pub fn insert(&mut self, node: usize) {
        self.included[node] = true;
    }

    pub fn remove(&mut self, node: usize) {
        self.included[node] = false;
    }

    pub fn size(&self) -> usize {
        self.included.iter().filter(|b| **b).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            layer_index: self.layer_index,
            included: self.included.iter().map(|b| !b).collect(),
        }
    }
}

/// Node values `x_{l,i}` from the last full forward pass, one `N x n_l`
/// matrix per layer including inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    nodes: Vec<Array2<f64>>,
}

impl ActivationCache {
    pub fn layer(&self, l: usize) -> &Array2<f64> {
        &self.nodes[l]
    }

    pub fn num_layers(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_samples(&self) -> usize {
        self.nodes.first().map_or(0, |m| m.nrows())
    }

    pub fn output(&self) -> &Array2<f64> {
        self.nodes.last().expect("cache has at least the input layer")
    }
}

/// Mean absolute post-activation per edge, `n_out x n_in` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMagnitudes {
    pub layers: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanNetwork {
    widths: Vec<usize>,
    layers: Vec<KanLayer>,
}

impl KanNetwork {
    pub fn new(layers: Vec<KanLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(KanError::InvalidWidths("network needs at least one layer".into()));
        }
        let mut widths = vec![layers[0].n_in];
        for (l, layer) in layers.iter().enumerate() {
            if layer.n_in != widths[l] {
                return Err(KanError::ShapeMismatch {
                    what: "layer input width",
                    expected: widths[l],
                    found: layer.n_in,
                });
            }
            widths.push(layer.n_out);
        }
        if widths.contains(&0) {
            return Err(KanError::InvalidWidths(format!("zero width in {widths:?}")));
        }
        Ok(Self { widths, layers })
    }

    /// All-zero network with the same grid on every layer.
    pub fn zeros(widths: &[usize], grid: &SplineGrid) -> Result<Self> {
        validate_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| KanLayer::zeros(w[0], w[1], grid.clone()))
            .collect();
        Self::new(layers)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [KanLayer] {
        &mut self.layers
    }

    pub fn layer(&self, l: usize) -> &KanLayer {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut KanLayer {
        &mut self.layers[l]
    }

    /// Number of edge layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Node layers that can be masked and scored: `1..L`.
    pub fn hidden_layers(&self) -> std::ops::Range<usize> {
        1..self.depth()
    }

    pub fn edge_count(&self) -> usize {
        self.layers.iter().map(|l| l.n_in * l.n_out).sum()
    }

    /// Scalars per edge are `G + k` coefficients plus two weights.
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.n_in * l.n_out * (l.grid.basis_count() + 2))
            .sum()
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(KanError::ShapeMismatch {
                what: "input columns",
                expected: self.input_dim(),
                found: inputs.ncols(),
            });
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(KanError::InvalidArgument("inputs must be finite".into()));
        }
        Ok(())
    }

    pub fn check_mask(&self, mask: &CoalitionMask) -> Result<()> {
        let l = mask.layer_index;
        if l == 0 || l >= self.depth() {
            return Err(KanError::InvalidLayer {
                layer: l,
                reason: format!("masks address hidden layers 1..{}", self.depth()),
            });
        }
        if mask.width() != self.widths[l] {
            return Err(KanError::ShapeMismatch {
                what: "mask width",
                expected: self.widths[l],
                found: mask.width(),
            });
        }
        Ok(())
    }

    /// Full forward pass; returns outputs and every layer's node values.
    pub fn forward(&self, inputs: &Array2<f64>) -> Result<(Array2<f64>, ActivationCache)> {
        let view = inputs.view();
        self.check_inputs(&view)?;
        let mut nodes = Vec::with_capacity(self.depth() + 1);
        nodes.push(inputs.clone());
        for layer in &self.layers {
            let next = layer_forward(layer, nodes.last().unwrap().view(), None);
            nodes.push(next);
        }
        let out = nodes.last().unwrap().clone();
        Ok((out, ActivationCache { nodes }))
    }

    /// Forward pass without keeping intermediate layers.
    pub fn predict(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        let view = inputs.view();
        self.check_inputs(&view)?;
        Ok(self.propagate(0, view, None))
    }

    /// Forward pass with one hidden layer restricted to a coalition.
    pub fn forward_masked(&self, inputs: &Array2<f64>, mask: &CoalitionMask) -> Result<Array2<f64>> {
        self.check_mask(mask)?;
        let view = inputs.view();
        self.check_inputs(&view)?;
        Ok(self.propagate(0, view, Some(mask)))
    }

    /// Recompute layers `layer_index..L` from cached node values of
    /// `layer_index`, optionally masking that layer.
    pub fn forward_from(
        &self,
        layer_index: usize,
        cached_layer_inputs: &Array2<f64>,
        mask: Option<&CoalitionMask>,
    ) -> Result<Array2<f64>> {
        if layer_index >= self.depth() {
            return Err(KanError::InvalidLayer {
                layer: layer_index,
                reason: format!("network has {} edge layers", self.depth()),
            });
        }
        if cached_layer_inputs.ncols() != self.widths[layer_index] {
            return Err(KanError::StaleCache {
                expected: self.widths[layer_index],
                found: cached_layer_inputs.ncols(),
            });
        }
        if let Some(m) = mask {
            self.check_mask(m)?;
            if m.layer_index != layer_index {
                return Err(KanError::InvalidLayer {
                    layer: m.layer_index,
                    reason: format!("mask does not address layer {layer_index}"),
                });
            }
        }
        Ok(self.propagate(layer_index, cached_layer_inputs.view(), mask))
    }

    fn propagate(
        &self,
        start: usize,
        inputs: ArrayView2<f64>,
        mask: Option<&CoalitionMask>,
    ) -> Array2<f64> {
        let mut current: Option<Array2<f64>> = None;
        for l in start..self.depth() {
            let include = mask
                .filter(|m| m.layer_index == l)
                .map(|m| m.included.as_slice());
            let input = current.as_ref().map_or(inputs, |c| c.view());
            current = Some(layer_forward(&self.layers[l], input, include));
        }
        current.unwrap_or_else(|| inputs.to_owned())
    }

    /// `|phi_{l,j,i}|_1` as the dataset mean of `|phi(x_{l,i})|`.
    pub fn node_l1_magnitudes(&self, cache: &ActivationCache) -> Result<EdgeMagnitudes> {
        let n = cache.num_samples();
        if n == 0 {
            return Err(KanError::EmptyCache);
        }
        if cache.num_layers() != self.depth() + 1 {
            return Err(KanError::StaleCache {
                expected: self.depth() + 1,
                found: cache.num_layers(),
            });
        }
        let mut layers = Vec::with_capacity(self.depth());
        for (l, layer) in self.layers.iter().enumerate() {
            let xs = cache.layer(l);
            if xs.ncols() != layer.n_in {
                return Err(KanError::StaleCache {
                    expected: layer.n_in,
                    found: xs.ncols(),
                });
            }
            let mut mags = Array2::<f64>::zeros((layer.n_out, layer.n_in));
            for row in xs.rows() {
                for (i, &x) in row.iter().enumerate() {
                    let basis = layer.grid.local(x);
                    let s = silu(x);
                    for j in 0..layer.n_out {
                        mags[[j, i]] += layer.edge(j, i).eval_with(s, &basis).abs();
                    }
                }
            }
            mags.mapv_inplace(|v| v / n as f64);
            layers.push(mags);
        }
        Ok(EdgeMagnitudes { layers })
    }

    pub fn to_document(&self) -> Result<ModelDocument> {
        let grid = self.layers[0].grid.clone();
        if self.layers.iter().any(|l| l.grid != grid) {
            return Err(KanError::InvalidArgument(
                "model format requires one grid shared by all layers".into(),
            ));
        }
        let (lo, hi) = grid.domain();
        let layers = self
            .layers
            .iter()
            .map(|layer| LayerDocument {
                edges: (0..layer.n_out)
                    .flat_map(|j| (0..layer.n_in).map(move |i| (j, i)))
                    .map(|(j, i)| {
                        let e = layer.edge(j, i);
                        EdgeDocument {
                            out: j,
                            inp: i,
                            w_b: e.base_weight,
                            w_s: e.spline_weight,
                            coefficients: e.coefficients.clone(),
                        }
                    })
                    .collect(),
            })
            .collect();
        Ok(ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            widths: self.widths.clone(),
            degree: grid.degree(),
            grid_intervals: grid.num_intervals(),
            domain: [lo, hi],
            layers,
        })
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(KanError::UnsupportedFormat(doc.format_version));
        }
        validate_widths(&doc.widths)?;
        if doc.layers.len() + 1 != doc.widths.len() {
            return Err(KanError::ShapeMismatch {
                what: "model layers",
                expected: doc.widths.len() - 1,
                found: doc.layers.len(),
            });
        }
        let grid = SplineGrid::uniform(doc.degree, doc.grid_intervals, doc.domain[0], doc.domain[1])?;
        let mut layers = Vec::with_capacity(doc.layers.len());
        for (l, ld) in doc.layers.iter().enumerate() {
            let (n_in, n_out) = (doc.widths[l], doc.widths[l + 1]);
            let mut layer = KanLayer::zeros(n_in, n_out, grid.clone());
            let mut seen = vec![false; n_in * n_out];
            for e in &ld.edges {
                if e.out >= n_out || e.inp >= n_in {
                    return Err(KanError::InvalidArgument(format!(
                        "layer {l} edge ({}, {}) out of range",
                        e.out, e.inp
                    )));
                }
                seen[e.out * n_in + e.inp] = true;
                *layer.edge_mut(e.out, e.inp) = EdgeFunction {
                    base_weight: e.w_b,
                    spline_weight: e.w_s,
                    coefficients: e.coefficients.clone(),
                };
            }
            if seen.iter().any(|s| !s) {
                return Err(KanError::ShapeMismatch {
                    what: "layer edges",
                    expected: n_in * n_out,
                    found: seen.iter().filter(|s| **s).count(),
                });
            }
            layers.push(KanLayer::new(n_in, n_out, grid.clone(), layer.edges)?);
        }
        Self::new(layers)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document()?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(KanError::InvalidWidths(format!(
            "need at least input and output widths, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(KanError::InvalidWidths(format!("zero width in {widths:?}")));
    }
    Ok(())
}

fn layer_forward(layer: &KanLayer, inputs: ArrayView2<f64>, include: Option<&[bool]>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((inputs.nrows(), layer.n_out));
    let mut buf = vec![0.0; layer.n_out];
    for (row, mut dst) in inputs.rows().into_iter().zip(out.rows_mut()) {
        layer.forward_row(row, include, &mut buf);
        dst.iter_mut().zip(&buf).for_each(|(d, v)| *d = *v);
    }
    out
}

/// Versioned on-disk model layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub widths: Vec<usize>,
    pub degree: usize,
    pub grid_intervals: usize,
    pub domain: [f64; 2],
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDocument {
    pub edges: Vec<EdgeDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDocument {
    pub out: usize,
    #[serde(rename = "in")]
    pub inp: usize,
    pub w_b: f64,
    pub w_s: f64,
    pub coefficients: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeededRng, Stream};
    use crate::spline::make_grid;
    use ndarray::array;
    use proptest::prelude::*;

    fn random_net(widths: &[usize], seed: u64) -> KanNetwork {
        let grid = make_grid(3, 3, -1.0, 1.0).unwrap();
        let mut net = KanNetwork::zeros(widths, &grid).unwrap();
        let mut rng = SeededRng::new(seed, Stream::Init);
        for layer in net.layers_mut() {
            for e in layer.edges_mut() {
                e.base_weight = rng.normal() * 0.5;
                e.spline_weight = 1.0 + 0.2 * rng.normal();
                for c in &mut e.coefficients {
                    *c = rng.normal() * 0.5;
                }
            }
        }
        net
    }

    fn random_inputs(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = SeededRng::new(seed, Stream::Data);
        Array2::from_shape_fn((n, d), |_| rng.uniform() * 2.0 - 1.0)
    }

    /// Per-sample evaluation straight from the sum-of-post-activations rule.
    fn naive_forward(net: &KanNetwork, x: &[f64]) -> Vec<f64> {
        let mut values = x.to_vec();
        for layer in net.layers() {
            let mut next = Vec::new();
            for j in 0..layer.n_out() {
                let mut s = 0.0;
                for (i, &v) in values.iter().enumerate() {
                    let e = layer.edge(j, i);
                    let spline: f64 = layer
                        .grid()
                        .basis_values(v)
                        .iter()
                        .zip(&e.coefficients)
                        .map(|(b, c)| b * c)
                        .sum();
                    s += e.base_weight * v / (1.0 + (-v).exp()) + e.spline_weight * spline;
                }
                next.push(s);
            }
            values = next;
        }
        values
    }

    #[test]
    fn zero_network_outputs_zero() {
        let grid = make_grid(3, 3, -1.0, 1.0).unwrap();
        let net = KanNetwork::zeros(&[2, 5, 1], &grid).unwrap();
        let (out, _) = net.forward(&random_inputs(10, 2, 1)).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn unit_coefficients_give_one_inside_domain() {
        let grid = make_grid(3, 3, -1.0, 1.0).unwrap();
        let mut net = KanNetwork::zeros(&[1, 1], &grid).unwrap();
        let e = net.layer_mut(0).edge_mut(0, 0);
        e.spline_weight = 1.0;
        e.coefficients.iter_mut().for_each(|c| *c = 1.0);
        let xs = array![[-1.0], [-0.3], [0.0], [0.77], [1.0]];
        let (out, _) = net.forward(&xs).unwrap();
        for v in out.iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_matches_naive_loop() {
        let net = random_net(&[2, 5, 1], 42);
        let xs = random_inputs(25, 2, 3);
        let (out, cache) = net.forward(&xs).unwrap();
        assert_eq!(cache.num_layers(), 3);
        assert_eq!(cache.layer(1).dim(), (25, 5));
        for (r, row) in xs.rows().into_iter().enumerate() {
            let want = naive_forward(&net, row.as_slice().unwrap());
            assert!((out[[r, 0]] - want[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let net = random_net(&[2, 3, 1], 1);
        assert!(matches!(
            net.forward(&random_inputs(4, 3, 1)),
            Err(KanError::ShapeMismatch { .. })
        ));
        let bad_layer = CoalitionMask::full(0, 2);
        assert!(matches!(
            net.forward_masked(&random_inputs(4, 2, 1), &bad_layer),
            Err(KanError::InvalidLayer { .. })
        ));
        let stale = random_inputs(4, 5, 1);
        assert!(matches!(
            net.forward_from(1, &stale, None),
            Err(KanError::StaleCache { .. })
        ));
    }

    #[test]
    fn full_mask_equals_forward() {
        let net = random_net(&[2, 4, 3, 1], 5);
        let xs = random_inputs(30, 2, 6);
        let (out, cache) = net.forward(&xs).unwrap();
        for l in net.hidden_layers() {
            let mask = CoalitionMask::full(l, net.widths()[l]);
            assert_eq!(net.forward_masked(&xs, &mask).unwrap(), out);
            assert_eq!(net.forward_from(l, cache.layer(l), Some(&mask)).unwrap(), out);
            assert_eq!(net.forward_from(l, cache.layer(l), None).unwrap(), out);
        }
    }

    #[test]
    fn empty_mask_zeroes_presums() {
        let net = random_net(&[2, 4, 1], 8);
        let xs = random_inputs(10, 2, 9);
        let (_, cache) = net.forward(&xs).unwrap();
        let out = net
            .forward_from(1, cache.layer(1), Some(&CoalitionMask::empty(1, 4)))
            .unwrap();
        assert!(out.iter().all(|v| *v == 0.0));

        // one layer further down, the downstream edges see phi(0)
        let deep = random_net(&[2, 4, 3, 1], 8);
        let masked = deep.forward_masked(&xs, &CoalitionMask::empty(1, 4)).unwrap();
        let zeros = Array2::<f64>::zeros((10, 3));
        let want = deep.forward_from(2, &zeros, None).unwrap();
        assert_eq!(masked, want);
    }

    #[test]
    fn masked_two_node_hand_case() {
        // [2,2,1]: hidden node h_i = x_i, output edges identity-like (w_b=1)
        let grid = make_grid(3, 3, -1.0, 1.0).unwrap();
        let mut net = KanNetwork::zeros(&[2, 2, 1], &grid).unwrap();
        net.layer_mut(0).edge_mut(0, 0).base_weight = 1.0;
        net.layer_mut(0).edge_mut(1, 1).base_weight = 1.0;
        net.layer_mut(1).edge_mut(0, 0).base_weight = 1.0;
        net.layer_mut(1).edge_mut(0, 1).base_weight = 2.0;
        let xs = array![[0.5, -0.25]];
        let full = net.predict(&xs).unwrap()[[0, 0]];
        let h0 = silu(0.5);
        let h1 = silu(-0.25);
        assert!((full - (silu(h0) + 2.0 * silu(h1))).abs() < 1e-15);
        let only0 = net
            .forward_masked(&xs, &CoalitionMask::from_members(1, 2, &[0]))
            .unwrap()[[0, 0]];
        assert!((only0 - (full - 2.0 * silu(h1))).abs() < 1e-15);
    }

    #[test]
    fn parameter_count_of_reference_net() {
        let grid = make_grid(3, 3, -1.0, 1.0).unwrap();
        let net = KanNetwork::zeros(&[2, 5, 1], &grid).unwrap();
        assert_eq!(net.edge_count(), 15);
        assert_eq!(net.parameter_count(), 120);
    }

    #[test]
    fn l1_magnitudes() {
        let grid = make_grid(3, 3, -1.0, 1.0).unwrap();
        let mut net = KanNetwork::zeros(&[1, 2], &grid).unwrap();
        net.layer_mut(0).edge_mut(0, 0).base_weight = 1.0;
        let xs = array![[-1.0], [1.0]];
        let (_, cache) = net.forward(&xs).unwrap();
        let mags = net.node_l1_magnitudes(&cache).unwrap();
        let want = (silu(-1.0).abs() + silu(1.0).abs()) / 2.0;
        assert!((mags.layers[0][[0, 0]] - want).abs() < 1e-15);
        assert_eq!(mags.layers[0][[1, 0]], 0.0);
        assert_eq!(net.node_l1_magnitudes(&cache).unwrap(), mags);

        let empty = Array2::<f64>::zeros((0, 1));
        let (_, cache) = net.forward(&empty).unwrap();
        assert!(matches!(net.node_l1_magnitudes(&cache), Err(KanError::EmptyCache)));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let net = random_net(&[3, 4, 2], 17);
        let text = net.to_json().unwrap();
        let back = KanNetwork::from_json(&text).unwrap();
        assert_eq!(back, net);
        assert!(text.contains("\"format_version\": 1"));
    }

    #[test]
    fn json_rejects_unknown_version() {
        let net = random_net(&[2, 2, 1], 1);
        let mut doc = net.to_document().unwrap();
        doc.format_version = 99;
        assert!(matches!(
            KanNetwork::from_document(&doc),
            Err(KanError::UnsupportedFormat(99))
        ));
    }

    fn presum(net: &KanNetwork, cache: &ActivationCache, mask: &CoalitionMask) -> Array2<f64> {
        let l = mask.layer_index();
        let head = KanNetwork::new(vec![net.layer(l).clone()]).unwrap();
        let mut out = Array2::zeros((cache.num_samples(), net.widths()[l + 1]));
        let mut buf = vec![0.0; net.widths()[l + 1]];
        for (r, row) in cache.layer(l).rows().into_iter().enumerate() {
            head.layer(0).forward_row(row, Some(mask.included()), &mut buf);
            for (j, v) in buf.iter().enumerate() {
                out[[r, j]] = *v;
            }
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn forward_from_matches_forward_masked(seed in 0u64..10_000, bits in 0u64..64) {
            let net = random_net(&[2, 6, 3, 1], seed);
            let xs = random_inputs(20, 2, seed + 1);
            let (_, cache) = net.forward(&xs).unwrap();
            for l in net.hidden_layers() {
                let width = net.widths()[l];
                let mask = CoalitionMask::from_bits(l, width, bits & ((1 << width) - 1));
                let a = net.forward_masked(&xs, &mask).unwrap();
                let b = net.forward_from(l, cache.layer(l), Some(&mask)).unwrap();
                for (x, y) in a.iter().zip(b.iter()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn presums_are_additive(seed in 0u64..10_000, a_bits in 0u64..32, b_bits in 0u64..32) {
            let b_bits = b_bits & !a_bits;
            let net = random_net(&[2, 5, 2], seed);
            let xs = random_inputs(8, 2, seed);
            let (_, cache) = net.forward(&xs).unwrap();
            let a = CoalitionMask::from_bits(1, 5, a_bits);
            let b = CoalitionMask::from_bits(1, 5, b_bits);
            let ab = CoalitionMask::from_bits(1, 5, a_bits | b_bits);
            let sa = presum(&net, &cache, &a);
            let sb = presum(&net, &cache, &b);
            let sab = presum(&net, &cache, &ab);
            for ((x, y), z) in sa.iter().zip(sb.iter()).zip(sab.iter()) {
                prop_assert!((x + y - z).abs() < 1e-12);
            }
        }
    }
}

//! Node importance for one hidden layer.
//!
//! The prediction game assigns each coalition `S` of layer-`l` nodes the
//! value `v(S)`: the mean network output over a dataset when only the
//! post-activations of nodes in `S` flow into layer `l + 1`. Shapley values
//! of that game are computed exactly (all `2^n` coalitions) or estimated by
//! permutation sampling, optionally with antithetic (reversed) pairs. The
//! magnitude baseline scores nodes by their largest incoming and outgoing
//! edge activations.

use std::cell::Cell;
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{KanError, Result};
use crate::network::{silu, ActivationCache, CoalitionMask, KanNetwork};
use crate::rng::{SeededRng, Stream};

/// Widest layer accepted by [`exact_shapley`].
pub const EXACT_CAP: usize = 20;

/// Permutations per convergence window of [`adaptive_shapley`].
pub const ADAPTIVE_WINDOW: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Permutation,
    Antithetic,
    VanillaIn,
    VanillaOut,
    /// `min(I, O)`, the score the baseline's retention rule implies.
    VanillaMin,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Permutation => "permutation",
            Method::Antithetic => "antithetic",
            Method::VanillaIn => "vanilla_in",
            Method::VanillaOut => "vanilla_out",
            Method::VanillaMin => "vanilla_min",
        }
    }
}

/// Per-node scores for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub layer_index: usize,
    pub method: Method,
    pub shapley: Vec<f64>,
    pub std_error: Vec<f64>,
    pub permutations_used: usize,
    pub normalized_share: Vec<f64>,
    /// Number of coalition values computed.
    pub evaluations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_full: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_empty: Option<f64>,
}

impl AttributionReport {
    pub fn new(layer_index: usize, method: Method, shapley: Vec<f64>, std_error: Vec<f64>) -> Self {
        let normalized_share = normalized_shares(&shapley);
        Self {
            layer_index,
            method,
            shapley,
            std_error,
            permutations_used: 0,
            normalized_share,
            evaluations: 0,
            value_full: None,
            value_empty: None,
        }
    }

    pub fn width(&self) -> usize {
        self.shapley.len()
    }

    /// Node indices by `|score|` descending; ties keep the lower index first.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.shapley.len()).collect();
        order.sort_by(|&a, &b| self.shapley[b].abs().total_cmp(&self.shapley[a].abs()).then(a.cmp(&b)));
        order
    }

    /// 1-based rank of every node under [`AttributionReport::ranking`].
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.shapley.len()];
        for (pos, node) in self.ranking().into_iter().enumerate() {
            ranks[node] = pos + 1;
        }
        ranks
    }

    /// The `k` highest-scoring nodes, sorted by index.
    pub fn top(&self, k: usize) -> Vec<usize> {
        let mut top: Vec<usize> = self.ranking().into_iter().take(k).collect();
        top.sort_unstable();
        top
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Columns `node, sv, std_error, share, rank`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| KanError::Io(std::io::Error::other(e));
        w.write_record(["node", "sv", "std_error", "share", "rank"]).map_err(io)?;
        let ranks = self.ranks();
        for i in 0..self.shapley.len() {
            w.write_record([
                i.to_string(),
                self.shapley[i].to_string(),
                self.std_error[i].to_string(),
                self.normalized_share[i].to_string(),
                ranks[i].to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `|s_i| / sum_j |s_j|`, or all zeros when every score vanishes.
pub fn normalized_shares(scores: &[f64]) -> Vec<f64> {
    let total: f64 = scores.iter().map(|s| s.abs()).sum();
    if total > 0.0 {
        scores.iter().map(|s| s.abs() / total).collect()
    } else {
        vec![0.0; scores.len()]
    }
}

/// Which layer is scored and on which data; outputs are averaged over
/// samples and output nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctionSpec {
    pub layer_index: usize,
    pub dataset: Array2<f64>,
}

impl ValueFunctionSpec {
    pub fn new(layer_index: usize, dataset: Array2<f64>) -> Self {
        Self { layer_index, dataset }
    }
}

/// The prediction game of one hidden layer with upstream work done once.
///
/// Every per-edge post-activation leaving the scored layer is stored, so a
/// coalition value only sums the retained contributions and, if the layer
/// does not feed the output directly, runs the downstream layers.
#[derive(Debug)]
pub struct CoalitionGame<'a> {
    net: &'a KanNetwork,
    layer_index: usize,
    width: usize,
    next_width: usize,
    samples: usize,
    /// `[sample][node][next node]`
    contributions: Vec<f64>,
    /// Mean output contribution per node when the game is a plain sum.
    node_means: Option<Vec<f64>>,
    evaluations: Cell<usize>,
}

impl<'a> CoalitionGame<'a> {
    pub fn new(net: &'a KanNetwork, spec: &ValueFunctionSpec) -> Result<Self> {
        let l = spec.layer_index;
        net.check_mask(&CoalitionMask::full(l, net.widths().get(l).copied().unwrap_or(0)))?;
        let n = spec.dataset.nrows();
        if n == 0 {
            return Err(KanError::InvalidArgument("value function needs a nonempty dataset".into()));
        }
        let (_, cache) = net.forward(&spec.dataset)?;
        let layer = net.layer(l);
        let (width, next_width) = (layer.n_in(), layer.n_out());
        let mut contributions = vec![0.0; n * width * next_width];
        for (r, row) in cache.layer(l).rows().into_iter().enumerate() {
            for (i, &x) in row.iter().enumerate() {
                let basis = layer.grid().local(x);
                let s = silu(x);
                let base = (r * width + i) * next_width;
                for j in 0..next_width {
                    contributions[base + j] = layer.edge(j, i).eval_with(s, &basis);
                }
            }
        }
        let node_means = (l + 1 == net.depth()).then(|| {
            let scale = 1.0 / (n * next_width) as f64;
            (0..width)
                .map(|i| {
                    let mut acc = 0.0;
                    for r in 0..n {
                        let base = (r * width + i) * next_width;
                        acc += contributions[base..base + next_width].iter().sum::<f64>();
                    }
                    acc * scale
                })
                .collect()
        });
        Ok(Self {
            net,
            layer_index: l,
            width,
            next_width,
            samples: n,
            contributions,
            node_means,
            evaluations: Cell::new(0),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    /// Coalition values computed so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.get()
    }

    pub fn value(&self, mask: &CoalitionMask) -> Result<f64> {
        if mask.layer_index() != self.layer_index {
            return Err(KanError::InvalidLayer {
                layer: mask.layer_index(),
                reason: format!("game scores layer {}", self.layer_index),
            });
        }
        if mask.width() != self.width {
            return Err(KanError::ShapeMismatch {
                what: "mask width",
                expected: self.width,
                found: mask.width(),
            });
        }
        Ok(self.value_of(mask.included()))
    }

    fn value_of(&self, included: &[bool]) -> f64 {
        self.evaluations.set(self.evaluations.get() + 1);
        if let Some(means) = &self.node_means {
            return means
                .iter()
                .zip(included)
                .filter(|(_, keep)| **keep)
                .map(|(m, _)| m)
                .sum();
        }
        let (n, w, nw) = (self.samples, self.width, self.next_width);
        let mut presum = Array2::<f64>::zeros((n, nw));
        for (r, mut row) in presum.rows_mut().into_iter().enumerate() {
            let out = row.as_slice_mut().expect("standard layout");
            for (i, _) in included.iter().enumerate().filter(|(_, keep)| **keep) {
                let base = (r * w + i) * nw;
                for (acc, c) in out.iter_mut().zip(&self.contributions[base..base + nw]) {
                    *acc += c;
                }
            }
        }
        let out = self
            .net
            .forward_from(self.layer_index + 1, &presum, None)
            .expect("downstream layers match the cached shape");
        out.mean().expect("nonempty output")
    }

    fn value_bits(&self, bits: u64) -> f64 {
        let included: Vec<bool> = (0..self.width).map(|i| bits >> i & 1 == 1).collect();
        self.value_of(&included)
    }

    /// Exact Shapley values from all `2^n` memoized coalition values.
    pub fn exact(&self) -> Result<AttributionReport> {
        let n = self.width;
        if n > EXACT_CAP {
            return Err(KanError::LayerTooWide {
                layer: self.layer_index,
                width: n,
                cap: EXACT_CAP,
            });
        }
        let start = self.evaluations();
        let values: Vec<f64> = (0..1u64 << n).map(|bits| self.value_bits(bits)).collect();
        // weight(s) = s! (n - s - 1)! / n!
        let weights: Vec<f64> = (0..n)
            .map(|s| {
                let mut w = 1.0 / n as f64;
                for t in 1..=s {
                    w *= t as f64 / (n - t) as f64;
                }
                w
            })
            .collect();
        let shapley = (0..n)
            .map(|i| {
                let bit = 1u64 << i;
                let mut acc = 0.0;
                for s in 0..(1u64 << n) {
                    if s & bit == 0 {
                        acc += weights[s.count_ones() as usize] * (values[(s | bit) as usize] - values[s as usize]);
                    }
                }
                acc
            })
            .collect();
        let mut report = AttributionReport::new(self.layer_index, Method::Exact, shapley, vec![0.0; n]);
        report.evaluations = self.evaluations() - start;
        report.value_full = Some(values[(1usize << n) - 1]);
        report.value_empty = Some(values[0]);
        Ok(report)
    }

    /// Marginal contributions along one ordering, written into `out[node]`.
    fn sweep(&self, order: &[usize], out: &mut [f64]) {
        let mut included = vec![false; self.width];
        let mut prev = self.value_of(&included);
        for &node in order {
            included[node] = true;
            let cur = self.value_of(&included);
            out[node] = cur - prev;
            prev = cur;
        }
    }

    /// Castro permutation sampling with `m` orderings.
    pub fn permutation(&self, m: usize, seed: u64) -> Result<AttributionReport> {
        if m == 0 {
            return Err(KanError::InvalidArgument("permutation count must be at least 1".into()));
        }
        let start = self.evaluations();
        let mut rng = SeededRng::new(seed, Stream::Sampling);
        let mut stats = RunningStats::new(self.width);
        let mut marginal = vec![0.0; self.width];
        for _ in 0..m {
            let order = rng.permutation(self.width);
            self.sweep(&order, &mut marginal);
            stats.push(&marginal);
        }
        let mut report = stats.report(self.layer_index, Method::Permutation);
        report.evaluations = self.evaluations() - start;
        Ok(report)
    }

    /// Draw one ordering, sweep it and its reverse, return the paired mean.
    fn antithetic_pair(&self, rng: &mut SeededRng, a: &mut [f64], b: &mut [f64]) {
        let mut order = rng.permutation(self.width);
        self.sweep(&order, a);
        order.reverse();
        self.sweep(&order, b);
        for (x, y) in a.iter_mut().zip(b.iter()) {
            *x = 0.5 * (*x + *y);
        }
    }

    /// Permutation sampling where each ordering is paired with its reverse.
    pub fn antithetic(&self, m: usize, seed: u64) -> Result<AttributionReport> {
        if m == 0 {
            return Err(KanError::InvalidArgument("permutation count must be at least 1".into()));
        }
        let start = self.evaluations();
        let mut rng = SeededRng::new(seed, Stream::Sampling);
        let mut stats = RunningStats::new(self.width);
        let (mut a, mut b) = (vec![0.0; self.width], vec![0.0; self.width]);
        for _ in 0..m {
            self.antithetic_pair(&mut rng, &mut a, &mut b);
            stats.push(&a);
        }
        let mut report = stats.report(self.layer_index, Method::Antithetic);
        report.evaluations = self.evaluations() - start;
        Ok(report)
    }

    /// Antithetic sampling in windows of [`ADAPTIVE_WINDOW`] orderings until
    /// the running means move by less than `epsilon` relative to their
    /// largest magnitude, or `m_max` orderings have been drawn.
    pub fn adaptive(&self, epsilon: f64, m_max: usize, seed: u64) -> Result<AttributionReport> {
        if !(epsilon > 0.0) {
            return Err(KanError::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
        }
        if m_max < ADAPTIVE_WINDOW {
            return Err(KanError::InvalidArgument(format!(
                "m_max must be at least the window size {ADAPTIVE_WINDOW}, got {m_max}"
            )));
        }
        let start = self.evaluations();
        let mut rng = SeededRng::new(seed, Stream::Sampling);
        let mut stats = RunningStats::new(self.width);
        let (mut a, mut b) = (vec![0.0; self.width], vec![0.0; self.width]);
        let mut previous: Option<Vec<f64>> = None;
        while stats.count < m_max {
            let take = ADAPTIVE_WINDOW.min(m_max - stats.count);
            for _ in 0..take {
                self.antithetic_pair(&mut rng, &mut a, &mut b);
                stats.push(&a);
            }
            let current = stats.mean.clone();
            if let Some(prev) = &previous {
                let change = current
                    .iter()
                    .zip(prev)
                    .map(|(c, p)| (c - p).abs())
                    .fold(0.0, f64::max);
                let scale = current.iter().map(|c| c.abs()).fold(0.0, f64::max);
                if change < epsilon * (scale + 1e-12) {
                    break;
                }
            }
            previous = Some(current);
        }
        let mut report = stats.report(self.layer_index, Method::Antithetic);
        report.evaluations = self.evaluations() - start;
        Ok(report)
    }
}

/// Welford accumulation of per-node sample means and variances.
struct RunningStats {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    fn new(width: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; width],
            m2: vec![0.0; width],
        }
    }

    fn push(&mut self, sample: &[f64]) {
        self.count += 1;
        let k = self.count as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(sample) {
            let delta = x - *mean;
            *mean += delta / k;
            *m2 += delta * (x - *mean);
        }
    }

    fn report(&self, layer_index: usize, method: Method) -> AttributionReport {
        let m = self.count as f64;
        let std_error = self
            .m2
            .iter()
            .map(|m2| if self.count > 1 { (m2 / (m - 1.0)).sqrt() / m.sqrt() } else { 0.0 })
            .collect();
        let mut report = AttributionReport::new(layer_index, method, self.mean.clone(), std_error);
        report.permutations_used = self.count;
        report
    }
}

/// `v(S)` for one coalition.
pub fn value(net: &KanNetwork, spec: &ValueFunctionSpec, mask: &CoalitionMask) -> Result<f64> {
    CoalitionGame::new(net, spec)?.value(mask)
}

pub fn exact_shapley(net: &KanNetwork, spec: &ValueFunctionSpec) -> Result<AttributionReport> {
    CoalitionGame::new(net, spec)?.exact()
}

pub fn permutation_shapley(net: &KanNetwork, spec: &ValueFunctionSpec, m: usize, seed: u64) -> Result<AttributionReport> {
    CoalitionGame::new(net, spec)?.permutation(m, seed)
}

pub fn antithetic_shapley(net: &KanNetwork, spec: &ValueFunctionSpec, m: usize, seed: u64) -> Result<AttributionReport> {
    CoalitionGame::new(net, spec)?.antithetic(m, seed)
}

pub fn adaptive_shapley(
    net: &KanNetwork,
    spec: &ValueFunctionSpec,
    epsilon: f64,
    m_max: usize,
    seed: u64,
) -> Result<AttributionReport> {
    CoalitionGame::new(net, spec)?.adaptive(epsilon, m_max, seed)
}

/// Magnitude-baseline scores of one hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanillaScores {
    pub layer_index: usize,
    /// Largest `|phi|_1` over edges entering each node.
    pub incoming: AttributionReport,
    /// Largest `|phi|_1` over edges leaving each node.
    pub outgoing: AttributionReport,
}

impl VanillaScores {
    /// Node score `min(I, O)`.
    pub fn combined(&self) -> AttributionReport {
        let score = self
            .incoming
            .shapley
            .iter()
            .zip(&self.outgoing.shapley)
            .map(|(i, o)| i.min(*o))
            .collect::<Vec<_>>();
        let n = score.len();
        AttributionReport::new(self.layer_index, Method::VanillaMin, score, vec![0.0; n])
    }

    /// Nodes whose incoming and outgoing scores both exceed `theta`.
    pub fn retained(&self, theta: f64) -> Vec<bool> {
        self.incoming
            .shapley
            .iter()
            .zip(&self.outgoing.shapley)
            .map(|(i, o)| *i > theta && *o > theta)
            .collect()
    }
}

/// Default retention threshold of the magnitude baseline.
pub const VANILLA_THETA: f64 = 1e-2;

/// Incoming/outgoing magnitude scores for every hidden layer.
pub fn vanilla_scores(net: &KanNetwork, cache: &ActivationCache) -> Result<Vec<VanillaScores>> {
    let mags = net.node_l1_magnitudes(cache)?;
    Ok(net
        .hidden_layers()
        .map(|l| {
            let into = &mags.layers[l - 1];
            let out_of = &mags.layers[l];
            let width = net.widths()[l];
            let incoming: Vec<f64> = (0..width)
                .map(|i| into.row(i).iter().copied().fold(0.0, f64::max))
                .collect();
            let outgoing: Vec<f64> = (0..width)
                .map(|i| out_of.column(i).iter().copied().fold(0.0, f64::max))
                .collect();
            VanillaScores {
                layer_index: l,
                incoming: AttributionReport::new(l, Method::VanillaIn, incoming, vec![0.0; width]),
                outgoing: AttributionReport::new(l, Method::VanillaOut, outgoing, vec![0.0; width]),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::make_grid;
    use crate::training::{init_network, GridSpec};
    use proptest::prelude::*;

    fn random_net(widths: &[usize], seed: u64) -> KanNetwork {
        scaled_net(widths, seed, 1.0)
    }

    fn scaled_net(widths: &[usize], seed: u64, scale: f64) -> KanNetwork {
        let mut net = init_network(widths, &GridSpec::default(), seed).unwrap();
        let mut rng = SeededRng::new(seed, Stream::Data);
        for layer in net.layers_mut() {
            for e in layer.edges_mut() {
                e.base_weight = scale * rng.normal();
                e.spline_weight = scale * rng.normal();
                e.coefficients.iter_mut().for_each(|c| *c = scale * rng.normal());
            }
        }
        net
    }

    fn data(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = SeededRng::new(seed, Stream::Data);
        Array2::from_shape_fn((n, d), |_| 2.0 * rng.uniform() - 1.0)
    }

    fn all_permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in all_permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    fn naive_value(net: &KanNetwork, xs: &Array2<f64>, mask: &CoalitionMask) -> f64 {
        net.forward_masked(xs, mask).unwrap().mean().unwrap()
    }

    fn brute_force(net: &KanNetwork, xs: &Array2<f64>, layer: usize) -> Vec<f64> {
        let n = net.widths()[layer];
        let perms = all_permutations(n);
        let mut sv = vec![0.0; n];
        for p in &perms {
            let mut mask = CoalitionMask::empty(layer, n);
            let mut prev = naive_value(net, xs, &mask);
            for &i in p {
                mask.insert(i);
                let cur = naive_value(net, xs, &mask);
                sv[i] += cur - prev;
                prev = cur;
            }
        }
        sv.iter().map(|s| s / perms.len() as f64).collect()
    }

    #[test]
    fn game_value_matches_masked_forward() {
        for widths in [vec![2, 4, 1], vec![2, 3, 2, 1], vec![3, 4, 2]] {
            let net = random_net(&widths, 3);
            let xs = data(40, widths[0], 4);
            let spec = ValueFunctionSpec::new(1, xs.clone());
            let game = CoalitionGame::new(&net, &spec).unwrap();
            for bits in 0..(1u64 << widths[1]) {
                let mask = CoalitionMask::from_bits(1, widths[1], bits);
                let v = game.value(&mask).unwrap();
                assert!((v - naive_value(&net, &xs, &mask)).abs() < 1e-12);
            }
            let full = net.predict(&xs).unwrap().mean().unwrap();
            assert!((game.value(&CoalitionMask::full(1, widths[1])).unwrap() - full).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_net_value_ignores_mask() {
        let grid = make_grid(3, 3, -1.0, 1.0).unwrap();
        let mut net = KanNetwork::zeros(&[2, 3, 1], &grid).unwrap();
        net.layer_mut(1).edge_mut(0, 0).coefficients = vec![0.0; 6];
        let spec = ValueFunctionSpec::new(1, data(10, 2, 1));
        let game = CoalitionGame::new(&net, &spec).unwrap();
        let values: Vec<f64> = (0..8).map(|b| game.value(&CoalitionMask::from_bits(1, 3, b)).unwrap()).collect();
        assert!(values.iter().all(|v| *v == values[0]));
    }

    #[test]
    fn invalid_layers_are_rejected() {
        let net = random_net(&[2, 3, 1], 1);
        let xs = data(5, 2, 1);
        assert!(matches!(
            exact_shapley(&net, &ValueFunctionSpec::new(0, xs.clone())),
            Err(KanError::InvalidLayer { .. })
        ));
        assert!(exact_shapley(&net, &ValueFunctionSpec::new(2, xs)).is_err());
    }

    #[test]
    fn exact_matches_permutation_enumeration() {
        for (seed, widths) in [(1, vec![2, 3, 1]), (2, vec![2, 4, 2, 1]), (3, vec![3, 5, 1])] {
            let net = random_net(&widths, seed);
            let xs = data(30, widths[0], seed + 10);
            let report = exact_shapley(&net, &ValueFunctionSpec::new(1, xs.clone())).unwrap();
            let oracle = brute_force(&net, &xs, 1);
            for (a, b) in report.shapley.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
            assert!(report.std_error.iter().all(|s| *s == 0.0));
            assert_eq!(report.evaluations, 1 << widths[1]);
        }
    }

    #[test]
    fn exact_rejects_wide_layers() {
        let net = random_net(&[1, 21, 1], 1);
        let err = exact_shapley(&net, &ValueFunctionSpec::new(1, data(3, 1, 1))).unwrap_err();
        assert!(matches!(err, KanError::LayerTooWide { width: 21, cap: 20, .. }));
    }

    #[test]
    fn dummy_and_symmetry() {
        let mut net = random_net(&[2, 4, 3, 1], 5);
        // node 3 silent downstream
        for j in 0..3 {
            *net.layer_mut(1).edge_mut(j, 3) = crate::network::EdgeFunction::zero(6);
        }
        // node 1 duplicates node 0
        for i in 0..2 {
            let e = net.layer(0).edge(0, i).clone();
            *net.layer_mut(0).edge_mut(1, i) = e;
        }
        for j in 0..3 {
            let e = net.layer(1).edge(j, 0).clone();
            *net.layer_mut(1).edge_mut(j, 1) = e;
        }
        let report = exact_shapley(&net, &ValueFunctionSpec::new(1, data(50, 2, 6))).unwrap();
        assert!(report.shapley[3].abs() < 1e-12);
        assert!((report.shapley[0] - report.shapley[1]).abs() < 1e-9);
        let total: f64 = report.shapley.iter().sum();
        assert!((total - (report.value_full.unwrap() - report.value_empty.unwrap())).abs() < 1e-9);
    }

    #[test]
    fn output_scaling_is_linear() {
        let net = random_net(&[2, 5, 1], 8);
        let xs = data(60, 2, 9);
        let base = exact_shapley(&net, &ValueFunctionSpec::new(1, xs.clone())).unwrap();
        let alpha = 2.0;
        let mut scaled = net.clone();
        for e in scaled.layer_mut(1).edges_mut() {
            e.base_weight *= alpha;
            e.spline_weight *= alpha;
        }
        let other = exact_shapley(&scaled, &ValueFunctionSpec::new(1, xs)).unwrap();
        for (a, b) in base.shapley.iter().zip(&other.shapley) {
            assert_eq!(alpha * a, *b);
        }
        assert_eq!(base.ranking(), other.ranking());
        for (a, b) in base.normalized_share.iter().zip(&other.normalized_share) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node_layer_is_exact_for_samplers() {
        let net = random_net(&[2, 1, 2, 1], 2);
        let spec = ValueFunctionSpec::new(1, data(30, 2, 3));
        let game = CoalitionGame::new(&net, &spec).unwrap();
        let want = game.value(&CoalitionMask::full(1, 1)).unwrap() - game.value(&CoalitionMask::empty(1, 1)).unwrap();
        let p = game.permutation(7, 1).unwrap();
        let a = game.antithetic(7, 1).unwrap();
        assert_eq!(p.shapley, vec![want]);
        assert_eq!(a.shapley, p.shapley);
        assert_eq!(p.evaluations, 7 * 2);
    }

    #[test]
    fn samplers_are_deterministic() {
        let net = random_net(&[2, 5, 3, 1], 4);
        let spec = ValueFunctionSpec::new(1, data(30, 2, 3));
        let game = CoalitionGame::new(&net, &spec).unwrap();
        assert_eq!(game.permutation(16, 9).unwrap(), game.permutation(16, 9).unwrap());
        assert_eq!(game.antithetic(16, 9).unwrap(), game.antithetic(16, 9).unwrap());
        assert_ne!(game.permutation(16, 9).unwrap(), game.permutation(16, 10).unwrap());
        assert!(game.permutation(0, 1).is_err());
    }

    #[test]
    fn large_sample_permutation_is_close_to_exact() {
        let net = random_net(&[2, 5, 3, 1], 12);
        let spec = ValueFunctionSpec::new(1, data(40, 2, 13));
        let game = CoalitionGame::new(&net, &spec).unwrap();
        let exact = game.exact().unwrap();
        let est = game.permutation(4096, 3).unwrap();
        let dist = l2(&est.shapley, &exact.shapley);
        let se = est.std_error.iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!(dist < 3.0 * se, "distance {dist}, std error norm {se}");
    }

    fn l2(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn permutation_estimates_are_unbiased() {
        let net = random_net(&[2, 5, 3, 1], 21);
        let spec = ValueFunctionSpec::new(1, data(30, 2, 22));
        let game = CoalitionGame::new(&net, &spec).unwrap();
        let exact = game.exact().unwrap();
        let runs: Vec<Vec<f64>> = (0..200).map(|s| game.permutation(64, s).unwrap().shapley).collect();
        for i in 0..5 {
            let xs: Vec<f64> = runs.iter().map(|r| r[i]).collect();
            let mean = xs.iter().sum::<f64>() / 200.0;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
            let se = sd / 200f64.sqrt();
            assert!((mean - exact.shapley[i]).abs() <= 4.0 * se + 1e-12, "node {i}: {mean} vs {}", exact.shapley[i]);
        }
    }

    #[test]
    fn antithetic_variance_is_not_larger() {
        let mut wins = Vec::new();
        for setup in 0..5u64 {
            let net = scaled_net(&[2, 5, 3, 1], 40 + setup, 0.3);
            let spec = ValueFunctionSpec::new(1, data(30, 2, 50 + setup));
            let game = CoalitionGame::new(&net, &spec).unwrap();
            let var = |runs: &[Vec<f64>], i: usize| {
                let xs: Vec<f64> = runs.iter().map(|r| r[i]).collect();
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
            };
            let plain: Vec<Vec<f64>> = (0..100).map(|s| game.permutation(16, s).unwrap().shapley).collect();
            let anti: Vec<Vec<f64>> = (0..100).map(|s| game.antithetic(8, s).unwrap().shapley).collect();
            wins.push((0..5).filter(|&i| var(&anti, i) <= var(&plain, i)).count());
        }
        wins.sort_unstable();
        assert!(wins[2] >= 4, "{wins:?}");
    }

    #[test]
    fn adaptive_contract() {
        let net = random_net(&[2, 5, 3, 1], 3);
        let spec = ValueFunctionSpec::new(1, data(30, 2, 3));
        let game = CoalitionGame::new(&net, &spec).unwrap();
        let r = game.adaptive(1e9, 1024, 5).unwrap();
        assert_eq!(r.permutations_used, 64);
        assert_eq!(r.shapley, game.antithetic(64, 5).unwrap().shapley);
        let r = game.adaptive(1e-15, 100, 5).unwrap();
        assert_eq!(r.permutations_used, 100);
        assert!(game.adaptive(0.0, 64, 1).is_err());
        assert!(game.adaptive(0.1, 16, 1).is_err());

        let grid = make_grid(3, 3, -1.0, 1.0).unwrap();
        let constant = KanNetwork::zeros(&[2, 4, 1], &grid).unwrap();
        let r = adaptive_shapley(&constant, &ValueFunctionSpec::new(1, data(10, 2, 1)), 1e-3, 1024, 1).unwrap();
        assert_eq!(r.permutations_used, 64);
        assert!(r.shapley.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn adaptive_ranks_top_three_like_exact() {
        let net = random_net(&[2, 10, 2, 1], 77);
        let spec = ValueFunctionSpec::new(1, data(30, 2, 78));
        let game = CoalitionGame::new(&net, &spec).unwrap();
        let exact = game.exact().unwrap();
        let approx = game.adaptive(1e-3, 1024, 7).unwrap();
        assert_eq!(approx.ranking()[..3], exact.ranking()[..3]);
    }

    #[test]
    fn vanilla_scores_and_combination() {
        let grid = make_grid(3, 3, -1.0, 1.0).unwrap();
        let mut net = KanNetwork::zeros(&[2, 3, 1], &grid).unwrap();
        for i in 0..2 {
            net.layer_mut(0).edge_mut(0, i).base_weight = 1.0;
            net.layer_mut(0).edge_mut(1, i).base_weight = 0.5 * (i + 1) as f64;
        }
        net.layer_mut(1).edge_mut(0, 0).base_weight = 1.0;
        let xs = data(50, 2, 2);
        let (_, cache) = net.forward(&xs).unwrap();
        let scores = vanilla_scores(&net, &cache).unwrap();
        assert_eq!(scores.len(), 1);
        let s = &scores[0];
        assert_eq!(s.incoming.shapley[2], 0.0);
        assert_eq!(s.outgoing.shapley[2], 0.0);
        assert!(s.incoming.shapley[1] > 0.0);
        // node 1 receives input but has no outgoing magnitude
        assert_eq!(s.combined().shapley[1], 0.0);
        assert_eq!(s.retained(VANILLA_THETA), vec![true, false, false]);
        let mags = net.node_l1_magnitudes(&cache).unwrap();
        assert_eq!(s.incoming.shapley[0], mags.layers[0][[0, 0]].max(mags.layers[0][[0, 1]]));
    }

    #[test]
    fn single_hidden_node_has_max_vanilla_score() {
        let net = random_net(&[2, 1, 1], 3);
        let (_, cache) = net.forward(&data(20, 2, 3)).unwrap();
        let s = &vanilla_scores(&net, &cache).unwrap()[0];
        assert_eq!(s.incoming.ranking(), vec![0]);
        assert_eq!(s.incoming.normalized_share, vec![1.0]);
    }

    #[test]
    fn report_serialization() {
        let mut r = AttributionReport::new(1, Method::Exact, vec![0.2, -0.5, 0.3, 0.0], vec![0.0; 4]);
        r.value_full = Some(1.0);
        let back = AttributionReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_json().unwrap().contains("\"method\": \"exact\""));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "node,sv,std_error,share,rank");
        assert_eq!(lines[2], "1,-0.5,0,0.5,1");
        assert_eq!(lines[4], "3,0,0,0,4");
        assert_eq!(r.top(2), vec![1, 2]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn efficiency_and_share_normalization(seed in 0u64..10_000, w0 in 2usize..5, w1 in 3usize..7) {
            let net = random_net(&[w0, w1, 1], seed);
            let report = exact_shapley(&net, &ValueFunctionSpec::new(1, data(25, w0, seed ^ 7))).unwrap();
            let total: f64 = report.shapley.iter().sum();
            let gap = report.value_full.unwrap() - report.value_empty.unwrap();
            prop_assert!((total - gap).abs() < 1e-9);
            let shares: f64 = report.normalized_share.iter().sum();
            prop_assert!((shares - 1.0).abs() < 1e-9);
        }
    }
}

//! Node selection and structural removal, applied to hidden layers from
//! the input side toward the output on a working copy of the model.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attribution::{vanilla_scores, AttributionReport, CoalitionGame, ValueFunctionSpec, VanillaScores};
use crate::error::{KanError, Result};
use crate::network::{KanLayer, KanNetwork};

/// Layers narrower than this are scored exactly; wider ones by adaptive
/// antithetic sampling.
pub const EXACT_BELOW: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PruneCriterion {
    /// Remove nodes whose share of `sum |SV|` is below `eta`.
    Ratio { eta: f64 },
    /// Remove the `k` nodes with the smallest `|SV|`.
    Number { k: usize },
    /// Remove nodes with `|SV| < tau`; `per_layer` overrides `tau`.
    Threshold {
        tau: f64,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        per_layer: BTreeMap<usize, f64>,
    },
}

impl PruneCriterion {
    pub fn ratio(eta: f64) -> Self {
        PruneCriterion::Ratio { eta }
    }

    pub fn number(k: usize) -> Self {
        PruneCriterion::Number { k }
    }

    pub fn threshold(tau: f64) -> Self {
        PruneCriterion::Threshold {
            tau,
            per_layer: BTreeMap::new(),
        }
    }

    fn tau_for(&self, layer: usize) -> Option<f64> {
        match self {
            PruneCriterion::Threshold { tau, per_layer } => Some(per_layer.get(&layer).copied().unwrap_or(*tau)),
            _ => None,
        }
    }

    /// Check the criterion against a layer of `width` nodes.
    pub fn validate(&self, layer: usize, width: usize) -> Result<()> {
        match self {
            PruneCriterion::Ratio { eta } if !(0.0..1.0).contains(eta) => {
                Err(KanError::CriterionInvalid(format!("ratio must lie in [0, 1), got {eta}")))
            }
            PruneCriterion::Number { k } if *k >= width => Err(KanError::CriterionInvalid(format!(
                "cannot remove {k} of {width} nodes in layer {layer}"
            ))),
            PruneCriterion::Threshold { .. } => {
                let tau = self.tau_for(layer).expect("threshold");
                if tau >= 0.0 && tau.is_finite() {
                    Ok(())
                } else {
                    Err(KanError::CriterionInvalid(format!("threshold must be >= 0, got {tau}")))
                }
            }
            _ => Ok(()),
        }
    }
}

/// Node order from least to most important: `|score|` ascending, then index.
fn removal_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].abs().total_cmp(&scores[b].abs()).then(a.cmp(&b)));
    order
}

/// Nodes to remove, ascending. The most important node always survives.
pub fn select_nodes(report: &AttributionReport, criterion: &PruneCriterion) -> Result<Vec<usize>> {
    let n = report.width();
    if n == 0 {
        return Err(KanError::InvalidArgument("empty attribution report".into()));
    }
    let layer = report.layer_index;
    criterion.validate(layer, n)?;
    let scores = &report.shapley;
    let order = removal_order(scores);
    let mut remove: Vec<usize> = match criterion {
        PruneCriterion::Number { k } => order[..*k].to_vec(),
        PruneCriterion::Ratio { eta } => {
            let shares = crate::attribution::normalized_shares(scores);
            (0..n).filter(|&i| shares[i] < *eta).collect()
        }
        PruneCriterion::Threshold { .. } => {
            let tau = criterion.tau_for(layer).expect("threshold");
            (0..n).filter(|&i| scores[i].abs() < tau).collect()
        }
    };
    guard_layer(&mut remove, &order);
    remove.sort_unstable();
    Ok(remove)
}

fn guard_layer(remove: &mut Vec<usize>, order: &[usize]) {
    if remove.len() == order.len() {
        let keep = *order.last().expect("nonempty");
        remove.retain(|&i| i != keep);
    }
}

/// Drop hidden nodes of `layer_index` together with every edge touching them.
pub fn prune_layer(net: &KanNetwork, layer_index: usize, remove: &[usize]) -> Result<KanNetwork> {
    if layer_index == 0 || layer_index >= net.depth() {
        return Err(KanError::InvalidLayer {
            layer: layer_index,
            reason: format!("only hidden layers 1..{} can be pruned", net.depth()),
        });
    }
    let width = net.widths()[layer_index];
    let mut drop = vec![false; width];
    for &i in remove {
        if i >= width {
            return Err(KanError::InvalidArgument(format!(
                "node {i} does not exist in layer {layer_index} of width {width}"
            )));
        }
        drop[i] = true;
    }
    let keep: Vec<usize> = (0..width).filter(|&i| !drop[i]).collect();
    if keep.is_empty() {
        return Err(KanError::WouldEmptyLayer { layer: layer_index });
    }
    if keep.len() == width {
        return Ok(net.clone());
    }

    let mut layers: Vec<KanLayer> = net.layers().to_vec();
    let below = net.layer(layer_index - 1);
    let edges = keep
        .iter()
        .flat_map(|&j| (0..below.n_in()).map(move |i| below.edge(j, i).clone()))
        .collect();
    layers[layer_index - 1] = KanLayer::new(below.n_in(), keep.len(), below.grid().clone(), edges)?;
    let above = net.layer(layer_index);
    let edges = (0..above.n_out())
        .flat_map(|j| keep.iter().map(move |&i| above.edge(j, i).clone()))
        .collect();
    layers[layer_index] = KanLayer::new(keep.len(), above.n_out(), above.grid().clone(), edges)?;
    KanNetwork::new(layers)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMethod {
    Shapkan,
    Vanilla,
}

/// How a wide layer is scored by [`shapkan_prune`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvConfig {
    pub epsilon: f64,
    pub m_max: usize,
    pub seed: u64,
}

impl Default for SvConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            m_max: 1024,
            seed: 0,
        }
    }
}

/// What happened to one hidden layer. Indices refer to the layer as it was
/// when scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer_index: usize,
    pub width_before: usize,
    pub removed: Vec<usize>,
    pub retained: Vec<usize>,
    pub report: AttributionReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vanilla: Option<VanillaScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub method: PruneMethod,
    pub criterion: PruneCriterion,
    pub widths_before: Vec<usize>,
    pub widths_after: Vec<usize>,
    pub layers: Vec<LayerPlan>,
}

impl PrunePlan {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn reports(&self) -> Vec<&AttributionReport> {
        self.layers.iter().map(|l| &l.report).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub net: KanNetwork,
    pub plan: PrunePlan,
}

fn layer_plan(
    layer_index: usize,
    width: usize,
    removed: Vec<usize>,
    report: AttributionReport,
    vanilla: Option<VanillaScores>,
) -> LayerPlan {
    let retained = (0..width).filter(|i| !removed.contains(i)).collect();
    LayerPlan {
        layer_index,
        width_before: width,
        removed,
        retained,
        report,
        vanilla,
    }
}

fn check_prunable(net: &KanNetwork, data: &Array2<f64>) -> Result<()> {
    if net.depth() < 2 {
        return Err(KanError::InvalidArgument("network has no hidden layer to prune".into()));
    }
    if data.nrows() == 0 {
        return Err(KanError::InvalidArgument("scoring data is empty".into()));
    }
    Ok(())
}

/// Score each hidden layer by Shapley values on the current working copy
/// and remove the nodes the criterion selects.
pub fn shapkan_prune(
    net: &KanNetwork,
    data: &Array2<f64>,
    criterion: &PruneCriterion,
    sv: &SvConfig,
) -> Result<PruneOutcome> {
    check_prunable(net, data)?;
    let mut working = net.clone();
    let mut layers = Vec::new();
    for l in net.hidden_layers() {
        let width = working.widths()[l];
        let spec = ValueFunctionSpec::new(l, data.clone());
        let report = {
            let game = CoalitionGame::new(&working, &spec)?;
            if width < EXACT_BELOW {
                game.exact()?
            } else {
                game.adaptive(sv.epsilon, sv.m_max, sv.seed)?
            }
        };
        let removed = select_nodes(&report, criterion)?;
        working = prune_layer(&working, l, &removed)?;
        layers.push(layer_plan(l, width, removed, report, None));
    }
    Ok(finish(net, working, PruneMethod::Shapkan, criterion, layers))
}

/// Same surgery driven by the magnitude baseline. Thresholds keep a node
/// only when both its incoming and outgoing scores exceed `tau`; ratio and
/// number criteria rank nodes by `min(I, O)`.
pub fn vanilla_prune(net: &KanNetwork, data: &Array2<f64>, criterion: &PruneCriterion) -> Result<PruneOutcome> {
    check_prunable(net, data)?;
    let mut working = net.clone();
    let mut layers = Vec::new();
    for l in net.hidden_layers() {
        let width = working.widths()[l];
        let (_, cache) = working.forward(data)?;
        let scores = vanilla_scores(&working, &cache)?.swap_remove(l - 1);
        let combined = scores.combined();
        let removed = match criterion.tau_for(l) {
            Some(tau) => {
                criterion.validate(l, width)?;
                let mut remove: Vec<usize> = scores
                    .retained(tau)
                    .iter()
                    .enumerate()
                    .filter(|(_, keep)| !**keep)
                    .map(|(i, _)| i)
                    .collect();
                guard_layer(&mut remove, &removal_order(&combined.shapley));
                remove
            }
            None => select_nodes(&combined, criterion)?,
        };
        working = prune_layer(&working, l, &removed)?;
        layers.push(layer_plan(l, width, removed, combined, Some(scores)));
    }
    Ok(finish(net, working, PruneMethod::Vanilla, criterion, layers))
}

fn finish(
    original: &KanNetwork,
    pruned: KanNetwork,
    method: PruneMethod,
    criterion: &PruneCriterion,
    layers: Vec<LayerPlan>,
) -> PruneOutcome {
    PruneOutcome {
        plan: PrunePlan {
            method,
            criterion: criterion.clone(),
            widths_before: original.widths().to_vec(),
            widths_after: pruned.widths().to_vec(),
            layers,
        },
        net: pruned,
    }
}

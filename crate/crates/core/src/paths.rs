//! Path-weight analysis over the layered connection graph.
//!
//! A path picks one active connection per weight layer, consecutive
//! connections sharing a neuron, from an input neuron to an output neuron.
//! Its importance is the product of the normalized weights `|w| / |F_l|`
//! along it, where `|F_l|` is the (smoothed) norm of the activation vector
//! feeding weight layer `l`.
//!
//! The number of paths grows exponentially with depth, so nothing here
//! enumerates them:
//!
//! - node importance (the summed importance of every path through a neuron)
//!   factors into a prefix sum times a suffix sum, two linear sweeps;
//! - the `k` weakest paths come from a per-neuron top-`k` dynamic program
//!   over path costs `-ln(factor)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::net::{ForwardTrace, SparseNetwork};
use crate::topology::{Connection, TopologyMask};

pub const NORM_DECAY: f64 = 0.9;
pub const NORM_FLOOR: f64 = 1e-12;

/// Exponential moving averages of `‖mean activation feeding layer l‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorms {
    decay: f64,
    values: Vec<Option<f64>>,
}

impl FeatureNorms {
    /// Empty state for a network with `depth` weight layers.
    pub fn new(depth: usize) -> Self {
        FeatureNorms {
            decay: NORM_DECAY,
            values: vec![None; depth],
        }
    }

    /// Fixed norms, mostly useful for tests and offline analysis.
    pub fn from_values(values: &[f64]) -> Self {
        FeatureNorms {
            decay: NORM_DECAY,
            values: values.iter().map(|&v| Some(v)).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.values.len()
    }

    /// True once every layer has seen at least one batch.
    pub fn is_ready(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }

    pub fn reset(&mut self) {
        self.values.iter_mut().for_each(|v| *v = None);
    }

    /// Folds one raw observation into layer `layer`. The first observation
    /// initializes the average.
    pub fn observe(&mut self, layer: usize, norm: f64) {
        let slot = &mut self.values[layer];
        *slot = Some(match *slot {
            None => norm,
            Some(prev) => self.decay * prev + (1.0 - self.decay) * norm,
        });
    }

    /// Updates every layer from the batch-mean activation vectors of a trace.
    pub fn update(&mut self, trace: &ForwardTrace) {
        let batch = trace.batch_size();
        for layer in 0..self.values.len() {
            let a = trace.activation(layer);
            let width = a.len() / batch;
            let mut mean = vec![0.0; width];
            for row in a.chunks(width) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            let norm = mean.iter().map(|m| (m / batch as f64).powi(2)).sum::<f64>().sqrt();
            self.observe(layer, norm);
        }
    }

    /// Smoothed norm of layer `layer`, floored at [`NORM_FLOOR`].
    pub fn get(&self, layer: usize) -> Result<f64> {
        self.values
            .get(layer)
            .copied()
            .flatten()
            .map(|v| v.max(NORM_FLOOR))
            .ok_or_else(|| Error::Parameter(format!("feature norm of layer {layer} not observed yet")))
    }
}

/// `|w| / |F_l|`.
pub fn normalized_weight(w: f64, layer: usize, norms: &FeatureNorms) -> Result<f64> {
    Ok(w.abs() / norms.get(layer)?)
}

/// Normalized weight of every active connection, aligned with the mask.
pub fn normalized_weights(net: &SparseNetwork, norms: &FeatureNorms) -> Result<Vec<Vec<f64>>> {
    if norms.depth() != net.depth() {
        return Err(Error::Consistency(format!(
            "{} feature norms for {} weight layers",
            norms.depth(),
            net.depth()
        )));
    }
    (0..net.depth())
        .map(|l| {
            let f = norms.get(l)?;
            Ok(net.weights(l).iter().map(|w| w.abs() / f).collect())
        })
        .collect()
}

/// A path given by the neuron it visits in each neuron layer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path {
    nodes: Vec<u32>,
}

impl Path {
    pub fn new(nodes: Vec<u32>) -> Self {
        Path { nodes }
    }

    pub fn nodes(&self) -> &[u32] {
        &self.nodes
    }

    /// Number of connections on the path.
    pub fn len(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn connection(&self, layer: usize) -> Connection {
        Connection::new(layer, self.nodes[layer], self.nodes[layer + 1])
    }

    pub fn connections(&self) -> impl Iterator<Item = Connection> + '_ {
        (0..self.len()).map(|l| self.connection(l))
    }

    /// Every connection active and one per weight layer.
    pub fn is_valid(&self, mask: &TopologyMask) -> bool {
        self.len() == mask.depth() && self.connections().all(|c| mask.contains(c))
    }
}

/// Product of factors, accumulated as a sum of logarithms. Any zero factor
/// makes the product exactly 0.
pub fn product_in_log_domain(factors: &[f64]) -> f64 {
    if factors.iter().any(|&f| f == 0.0) {
        return 0.0;
    }
    (-path_cost(factors)).exp()
}

/// `Σ -ln(factor)`, summed exactly and rounded once; `+∞` when a factor is 0.
pub fn path_cost(factors: &[f64]) -> f64 {
    if factors.iter().any(|&f| f == 0.0) {
        return f64::INFINITY;
    }
    fixed_to_f64(factors.iter().map(|&f| fixed_cost(f)).sum())
}

/// Fractional bits of the fixed-point path cost. Every `-ln f` of a
/// positive finite `f64` is below 2^10 in magnitude, and unless it is
/// smaller than 2^-54 it is an exact multiple of 2^-106, so sums of up to
/// 2^11 terms are exact in an `i128`.
const COST_FRACTION_BITS: i32 = 106;

/// `-ln f` in fixed point for a nonzero factor.
fn fixed_cost(f: f64) -> i128 {
    (-f.ln() * 2f64.powi(COST_FRACTION_BITS)).round() as i128
}

fn fixed_to_f64(c: i128) -> f64 {
    c as f64 * 2f64.powi(-COST_FRACTION_BITS)
}

/// Importance of a path: product of its normalized weights.
pub fn path_importance(path: &Path, net: &SparseNetwork, norms: &FeatureNorms) -> Result<f64> {
    if !path.is_valid(net.mask()) {
        return Err(Error::Consistency(format!("{path:?} is not a path of this network")));
    }
    let factors = path
        .connections()
        .map(|c| normalized_weight(net.weight(c).unwrap(), c.layer, norms))
        .collect::<Result<Vec<f64>>>()?;
    Ok(product_in_log_domain(&factors))
}

/// Total number of input-to-output paths, counted in floating point.
pub fn count_paths(mask: &TopologyMask) -> f64 {
    let mut counts = vec![1.0; mask.layer_sizes()[0]];
    for layer in mask.layers() {
        let mut next = vec![0.0; layer.outputs()];
        for &(s, t) in layer.pairs() {
            next[t as usize] += counts[s as usize];
        }
        counts = next;
    }
    counts.iter().sum()
}

/// Per-neuron path importance, stored as prefix and suffix aggregates.
///
/// `prefix[k][i]` sums the factor products of all partial paths from the
/// input layer to neuron `i` of layer `k`; `suffix[k][i]` does the same from
/// that neuron to the output layer. Their product is the summed importance
/// of every full path through the neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeImportanceTable {
    prefix: Vec<Vec<f64>>,
    suffix: Vec<Vec<f64>>,
    importance: Vec<Vec<f64>>,
}

impl NodeImportanceTable {
    pub fn importance(&self, layer: usize, node: usize) -> f64 {
        self.importance[layer][node]
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        &self.importance[layer]
    }

    pub fn prefix(&self, layer: usize) -> &[f64] {
        &self.prefix[layer]
    }

    pub fn suffix(&self, layer: usize) -> &[f64] {
        &self.suffix[layer]
    }

    /// Number of neuron layers.
    pub fn layers(&self) -> usize {
        self.importance.len()
    }

    pub fn layer_total(&self, layer: usize) -> f64 {
        self.importance[layer].iter().sum()
    }

    /// Sum of all path importances, read off the output layer.
    pub fn total_path_importance(&self) -> f64 {
        self.prefix.last().unwrap().iter().sum()
    }
}

/// Node importance from explicit per-connection factors aligned with `mask`.
pub fn node_importance_from_factors(mask: &TopologyMask, factors: &[Vec<f64>]) -> NodeImportanceTable {
    let sizes = mask.layer_sizes();
    let depth = mask.depth();
    let mut prefix = Vec::with_capacity(depth + 1);
    prefix.push(vec![1.0; sizes[0]]);
    for (l, layer) in mask.layers().iter().enumerate() {
        let mut next = vec![0.0; layer.outputs()];
        for (&(s, t), &f) in layer.pairs().iter().zip(&factors[l]) {
            next[t as usize] += prefix[l][s as usize] * f;
        }
        prefix.push(next);
    }
    let mut suffix = vec![Vec::new(); depth + 1];
    suffix[depth] = vec![1.0; sizes[depth]];
    for (l, layer) in mask.layers().iter().enumerate().rev() {
        let mut prev = vec![0.0; layer.inputs()];
        for (&(s, t), &f) in layer.pairs().iter().zip(&factors[l]) {
            prev[s as usize] += f * suffix[l + 1][t as usize];
        }
        suffix[l] = prev;
    }
    let importance = prefix
        .iter()
        .zip(&suffix)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).collect())
        .collect();
    NodeImportanceTable {
        prefix,
        suffix,
        importance,
    }
}

/// Node importance of every neuron, in time linear in the active
/// connection count.
pub fn node_importance_all(net: &SparseNetwork, norms: &FeatureNorms) -> Result<NodeImportanceTable> {
    Ok(node_importance_from_factors(net.mask(), &normalized_weights(net, norms)?))
}

/// A path with its search cost (`Σ -ln factor`) and importance (`exp(-cost)`).
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPath {
    pub path: Path,
    pub cost: f64,
    pub importance: f64,
}

/// Ranking key: larger cost first, then smaller lexicographic rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Candidate {
    cost: i128,
    lex: u32,
    edge: usize,
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // Max-heap order: the weakest candidate is the greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost.cmp(&other.cost).then_with(|| other.lex.cmp(&self.lex))
    }
}

/// Partial paths ending in one neuron layer, grouped by end neuron and
/// ranked within each group.
struct Frontier {
    /// Entries of neuron `j` occupy `start[j]..start[j + 1]`.
    start: Vec<usize>,
    cost: Vec<i128>,
    /// Index of the extended entry in the previous frontier.
    pred: Vec<u32>,
    node: Vec<u32>,
    /// Lexicographic rank of the entry's node sequence within its frontier.
    lex: Vec<u32>,
}

/// Walks one predecessor list shifted by an edge cost. Costs are exact, so
/// the shifted list keeps the (cost desc, lex asc) order of the original.
struct EdgeCursor {
    shift: i128,
    pos: usize,
    end: usize,
}

/// The `k` least important paths, weakest first, from explicit factors.
///
/// Paths through a zero factor have importance 0; they rank weakest and,
/// being tied, in lexicographic order of the visited neurons. The rest are
/// ordered by exact cost, ties again broken lexicographically. The
/// lexicographic order of the neurons equals the `(layer, source, target)`
/// order of the path's connections.
pub fn k_weakest_paths_from_factors(mask: &TopologyMask, factors: &[Vec<f64>], k: usize) -> Vec<RankedPath> {
    if k == 0 {
        return Vec::new();
    }
    let mut out = zero_paths(mask, factors, k);
    if out.len() < k {
        out.extend(positive_paths(mask, factors, k - out.len()));
    }
    out
}

/// The first `k` paths containing a zero factor, in lexicographic order.
fn zero_paths(mask: &TopologyMask, factors: &[Vec<f64>], k: usize) -> Vec<RankedPath> {
    let sizes = mask.layer_sizes();
    let depth = mask.depth();
    // any[l][i]: some path continues from neuron i of layer l to the output.
    // zero[l][i]: some such continuation crosses a zero factor.
    let mut any = vec![Vec::new(); depth + 1];
    let mut zero = vec![Vec::new(); depth + 1];
    any[depth] = vec![true; sizes[depth]];
    zero[depth] = vec![false; sizes[depth]];
    for (l, layer) in mask.layers().iter().enumerate().rev() {
        let mut a = vec![false; layer.inputs()];
        let mut z = vec![false; layer.inputs()];
        for (&(s, t), &f) in layer.pairs().iter().zip(&factors[l]) {
            let (s, t) = (s as usize, t as usize);
            a[s] |= any[l + 1][t];
            z[s] |= zero[l + 1][t] || (f == 0.0 && any[l + 1][t]);
        }
        any[l] = a;
        zero[l] = z;
    }
    if !zero[0].contains(&true) {
        return Vec::new();
    }

    // Outgoing edges of each neuron, targets ascending.
    let outgoing: Vec<Vec<Vec<(u32, bool)>>> = mask
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let mut by_source = vec![Vec::new(); layer.inputs()];
            for (&(s, t), &f) in layer.pairs().iter().zip(&factors[l]) {
                by_source[s as usize].push((t, f == 0.0));
            }
            by_source
        })
        .collect();

    struct Search<'a> {
        outgoing: &'a [Vec<Vec<(u32, bool)>>],
        any: &'a [Vec<bool>],
        zero: &'a [Vec<bool>],
        k: usize,
        nodes: Vec<u32>,
        out: Vec<RankedPath>,
    }
    impl Search<'_> {
        fn walk(&mut self, hit: bool) {
            let l = self.nodes.len() - 1;
            if l == self.outgoing.len() {
                self.out.push(RankedPath {
                    path: Path::new(self.nodes.clone()),
                    cost: f64::INFINITY,
                    importance: 0.0,
                });
                return;
            }
            let from = *self.nodes.last().unwrap() as usize;
            for &(t, is_zero) in &self.outgoing[l][from] {
                if self.out.len() == self.k {
                    return;
                }
                let hit = hit || is_zero;
                let viable = if hit { self.any[l + 1][t as usize] } else { self.zero[l + 1][t as usize] };
                if viable {
                    self.nodes.push(t);
                    self.walk(hit);
                    self.nodes.pop();
                }
            }
        }
    }

    let mut search = Search {
        outgoing: &outgoing,
        any: &any,
        zero: &zero,
        k,
        nodes: Vec::with_capacity(depth + 1),
        out: Vec::new(),
    };
    for i in 0..sizes[0] {
        if search.out.len() == k {
            break;
        }
        if zero[0][i] {
            search.nodes.push(i as u32);
            search.walk(false);
            search.nodes.pop();
        }
    }
    search.out
}

/// The `k` weakest paths whose factors are all nonzero.
fn positive_paths(mask: &TopologyMask, factors: &[Vec<f64>], k: usize) -> Vec<RankedPath> {
    let sizes = mask.layer_sizes();
    let mut frontiers: Vec<Frontier> = Vec::with_capacity(sizes.len());
    frontiers.push(Frontier {
        start: (0..=sizes[0]).collect(),
        cost: vec![0; sizes[0]],
        pred: vec![u32::MAX; sizes[0]],
        node: (0..sizes[0] as u32).collect(),
        lex: (0..sizes[0] as u32).collect(),
    });

    for (l, layer) in mask.layers().iter().enumerate() {
        let prev = &frontiers[l];
        // Incoming nonzero edges grouped by target, sources ascending.
        let mut incoming: Vec<Vec<(u32, i128)>> = vec![Vec::new(); layer.outputs()];
        for (&(s, t), &f) in layer.pairs().iter().zip(&factors[l]) {
            if f != 0.0 {
                incoming[t as usize].push((s, fixed_cost(f)));
            }
        }

        let mut start = Vec::with_capacity(layer.outputs() + 1);
        let mut cost = Vec::new();
        let mut pred = Vec::new();
        let mut node = Vec::new();
        let mut heap = BinaryHeap::new();
        for (j, edges) in incoming.iter().enumerate() {
            start.push(cost.len());
            let mut cursors: Vec<EdgeCursor> = edges
                .iter()
                .map(|&(s, c)| EdgeCursor {
                    shift: c,
                    pos: prev.start[s as usize],
                    end: prev.start[s as usize + 1],
                })
                .collect();
            heap.clear();
            for (edge, cursor) in cursors.iter().enumerate() {
                if cursor.pos < cursor.end {
                    heap.push(Candidate {
                        cost: prev.cost[cursor.pos] + cursor.shift,
                        lex: prev.lex[cursor.pos],
                        edge,
                    });
                }
            }
            while cost.len() - start[j] < k {
                let Some(top) = heap.pop() else { break };
                let cursor = &mut cursors[top.edge];
                cost.push(top.cost);
                pred.push(cursor.pos as u32);
                node.push(j as u32);
                cursor.pos += 1;
                if cursor.pos < cursor.end {
                    heap.push(Candidate {
                        cost: prev.cost[cursor.pos] + cursor.shift,
                        lex: prev.lex[cursor.pos],
                        edge: top.edge,
                    });
                }
            }
        }
        start.push(cost.len());

        // Lexicographic rank = order by (rank of predecessor, end neuron).
        // Entries are laid out by ascending end neuron, so a counting sort
        // on the predecessor rank keeps neurons ascending within a bucket.
        let mut bucket_start = vec![0usize; prev.cost.len() + 1];
        for &p in &pred {
            bucket_start[prev.lex[p as usize] as usize + 1] += 1;
        }
        for i in 1..bucket_start.len() {
            bucket_start[i] += bucket_start[i - 1];
        }
        let mut lex = vec![0u32; cost.len()];
        for (e, &p) in pred.iter().enumerate() {
            let slot = &mut bucket_start[prev.lex[p as usize] as usize];
            lex[e] = *slot as u32;
            *slot += 1;
        }

        frontiers.push(Frontier {
            start,
            cost,
            pred,
            node,
            lex,
        });
    }

    let last = frontiers.last().unwrap();
    let mut order: Vec<usize> = (0..last.cost.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        last.cost[b]
            .cmp(&last.cost[a])
            .then_with(|| last.lex[a].cmp(&last.lex[b]))
    });
    order.truncate(k);

    order
        .into_iter()
        .map(|top| {
            let cost = fixed_to_f64(last.cost[top]);
            let mut nodes = vec![0u32; frontiers.len()];
            let mut e = top;
            for layer in (0..frontiers.len()).rev() {
                let f = &frontiers[layer];
                nodes[layer] = f.node[e];
                e = f.pred[e] as usize;
            }
            RankedPath {
                path: Path::new(nodes),
                cost,
                importance: (-cost).exp(),
            }
        })
        .collect()
}

/// The `k` least important paths of the network, weakest first.
pub fn k_weakest_paths(net: &SparseNetwork, norms: &FeatureNorms, k: usize) -> Result<Vec<RankedPath>> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    Ok(k_weakest_paths_from_factors(net.mask(), &normalized_weights(net, norms)?, k))
}

/// Regrowth weights `delta * I(n) / Σ I` over the eligible
/// nodes, summing to `delta`. Falls back to uniform `delta / n` when the
/// importances sum to zero or are not finite.
pub fn regrowth_distribution(importances: &[f64], delta: f64) -> Result<Vec<f64>> {
    if importances.is_empty() {
        return Err(Error::Parameter("no eligible regrowth nodes".into()));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Parameter(format!("delta must be positive, got {delta}")));
    }
    let total: f64 = importances.iter().sum();
    if !(total > 0.0) || !total.is_finite() || importances.iter().any(|&v| v < 0.0) {
        let uniform = delta / importances.len() as f64;
        return Ok(vec![uniform; importances.len()]);
    }
    Ok(importances.iter().map(|&v| delta * v / total).collect())
}

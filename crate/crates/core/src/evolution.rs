//! Epoch-end prune-and-regrow step and the adaptive parameter controller.
//!
//! Every strategy follows the same shape: score the active connections,
//! remove the weakest ones, then regrow new connections whose source neuron
//! is drawn from a per-strategy distribution and whose target is uniform
//! among that neuron's free targets in the next layer. What differs is the
//! score and the source distribution:
//!
//! | strategy      | removal score                 | source distribution        |
//! |---------------|-------------------------------|----------------------------|
//! | `set`         | `|W|` over all connections    | uniform                    |
//! | `path_weight` | normalized weight, restricted | node path importance       |
//! |               | to the weakest paths          |                            |
//! | `sensitivity` | `mean|g| / |W|`               | node outgoing sensitivity  |

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::net::SparseNetwork;
use crate::paths::{self, FeatureNorms};
use crate::sensitivity::{self, SensitivityAccumulator, SensitivityForm};
use crate::topology::{Connection, TopologyMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Fully connected, no evolution.
    Dense,
    Set,
    PathWeight,
    Sensitivity,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Dense,
        Strategy::Set,
        Strategy::PathWeight,
        Strategy::Sensitivity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Dense => "dense",
            Strategy::Set => "set",
            Strategy::PathWeight => "path_weight",
            Strategy::Sensitivity => "sensitivity",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "unknown strategy {s:?} (expected dense, set, path_weight or sensitivity)"
                ))
            })
    }
}

/// Closed interval a parameter is clamped to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: f64,
    pub max: f64,
}

impl Bounds {
    pub const fn new(min: f64, max: f64) -> Self {
        Bounds { min, max }
    }

    pub fn clamp(self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    pub fn contains(self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

pub const FRACTION_BOUNDS: Bounds = Bounds::new(1e-4, 0.9);
pub const DELTA_BOUNDS: Bounds = Bounds::new(0.1, 10.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionParams {
    /// Fraction of paths treated as weak (path-weight only).
    pub lambda: f64,
    /// Fraction of candidate connections removed.
    pub zeta: f64,
    /// Regrowth multiplier: `round(delta * removed)` connections are added.
    pub delta: f64,
    pub lambda_bounds: Bounds,
    pub zeta_bounds: Bounds,
    pub delta_bounds: Bounds,
    pub time_varying: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamMode {
    Fixed,
    TimeVarying,
}

/// Starting parameters. The time-varying controller starts high and
/// shrinks the parameters as the topology matures.
pub fn initial_params(mode: ParamMode) -> EvolutionParams {
    let (lambda, zeta, delta) = match mode {
        ParamMode::Fixed => (0.05, 0.3, 1.0),
        ParamMode::TimeVarying => (0.2, 0.5, 2.0),
    };
    EvolutionParams {
        lambda,
        zeta,
        delta,
        lambda_bounds: FRACTION_BOUNDS,
        zeta_bounds: FRACTION_BOUNDS,
        delta_bounds: DELTA_BOUNDS,
        time_varying: mode == ParamMode::TimeVarying,
    }
}

impl EvolutionParams {
    pub fn validate(&self) -> Result<()> {
        for (name, b, hard_max) in [
            ("lambda", self.lambda_bounds, 1.0),
            ("zeta", self.zeta_bounds, 1.0),
            ("delta", self.delta_bounds, f64::INFINITY),
        ] {
            if !(b.min > 0.0 && b.min <= b.max && b.max.is_finite()) || (hard_max == 1.0 && b.max >= 1.0) {
                return Err(Error::Parameter(format!("invalid {name} bounds [{}, {}]", b.min, b.max)));
            }
        }
        for (name, v, b) in [
            ("lambda", self.lambda, self.lambda_bounds),
            ("zeta", self.zeta, self.zeta_bounds),
            ("delta", self.delta, self.delta_bounds),
        ] {
            if !b.contains(v) {
                return Err(Error::Parameter(format!(
                    "{name} = {v} outside [{}, {}]",
                    b.min, b.max
                )));
            }
        }
        Ok(())
    }
}

/// Multipliers and thresholds of the adaptive controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl Default for ControllerConstants {
    fn default() -> Self {
        ControllerConstants {
            k1: 2.0,
            k2: 0.5,
            k3: 0.1,
            k4: 0.5,
        }
    }
}

impl ControllerConstants {
    /// Requires `k2 < 1 < k1` and `k3 < k4 < 1`.
    pub fn validate(&self) -> Result<()> {
        let ok = self.k2 > 0.0 && self.k2 < 1.0 && 1.0 < self.k1 && self.k1.is_finite()
            && self.k3 >= 0.0 && self.k3 < self.k4 && self.k4 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "controller constants need k2 < 1 < k1 and k3 < k4 < 1, got {self:?}"
            )))
        }
    }
}

/// Mean importance over all pre-removal connections (primary) and over the
/// removed ones (secondary, 0 when nothing was removed).
pub fn compute_criteria(all: &[f64], removed: &[f64]) -> (f64, f64) {
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    (mean(all), mean(removed))
}

/// One controller step: every parameter is multiplied by `k1` when the
/// removed connections were much weaker than average
/// (`c_sec < k3 * c_prim`), by `k2` when they were not much weaker
/// (`c_sec > k4 * c_prim`), and left alone otherwise; then clamped. A no-op
/// unless `time_varying` is set.
pub fn update_params(
    params: &EvolutionParams,
    constants: &ControllerConstants,
    c_prim: f64,
    c_sec: f64,
) -> EvolutionParams {
    if !params.time_varying {
        return *params;
    }
    let factor = if c_sec < constants.k3 * c_prim {
        constants.k1
    } else if c_sec > constants.k4 * c_prim {
        constants.k2
    } else {
        return *params;
    };
    EvolutionParams {
        lambda: params.lambda_bounds.clamp(params.lambda * factor),
        zeta: params.zeta_bounds.clamp(params.zeta * factor),
        delta: params.delta_bounds.clamp(params.delta * factor),
        ..*params
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionSettings {
    /// Ceiling on the number of weak paths examined per epoch.
    pub path_cap: usize,
    pub sensitivity_form: SensitivityForm,
}

impl Default for EvolutionSettings {
    fn default() -> Self {
        EvolutionSettings {
            path_cap: 10_000,
            sensitivity_form: SensitivityForm::Paper,
        }
    }
}

/// Statistics each strategy needs from the epoch's training batches.
#[derive(Debug, Clone, Copy)]
pub enum ImportanceInputs<'a> {
    None,
    FeatureNorms(&'a FeatureNorms),
    Sensitivity(&'a SensitivityAccumulator),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochEvolutionReport {
    pub strategy: Strategy,
    /// Removed connections in connection order.
    pub removed: Vec<Connection>,
    /// Added connections, grouped by source neuron.
    pub added: Vec<Connection>,
    pub c_prim: f64,
    pub c_sec: f64,
    pub params_before: EvolutionParams,
    pub params_after: EvolutionParams,
    /// Weak paths examined (path-weight only).
    pub weak_paths: usize,
    pub wall_time: Duration,
}

impl EpochEvolutionReport {
    fn empty(strategy: Strategy, params: EvolutionParams) -> Self {
        EpochEvolutionReport {
            strategy,
            removed: Vec::new(),
            added: Vec::new(),
            c_prim: 0.0,
            c_sec: 0.0,
            params_before: params,
            params_after: params,
            weak_paths: 0,
            wall_time: Duration::ZERO,
        }
    }
}

/// The `count` lowest-scored candidates, ties broken by connection order,
/// never taking the last surviving connection of a layer. Returned lowest
/// first.
pub fn select_lowest(candidates: Vec<(f64, Connection)>, count: usize, mask: &TopologyMask) -> Vec<Connection> {
    let lens: Vec<usize> = mask.layers().iter().map(|l| l.len()).collect();
    lowest(candidates, count, |c| c.layer, &lens)
}

/// [`select_lowest`] over any key whose order is connection order.
fn lowest<K: Ord + Copy>(mut candidates: Vec<(f64, K)>, count: usize, layer: impl Fn(&K) -> usize, lens: &[usize]) -> Vec<K> {
    let order = |a: &(f64, K), b: &(f64, K)| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1));
    if count == 0 || candidates.is_empty() {
        return Vec::new();
    }
    if count < candidates.len() {
        candidates.select_nth_unstable_by(count - 1, order);
        let mut taken = vec![0usize; lens.len()];
        for (_, k) in &candidates[..count] {
            taken[layer(k)] += 1;
        }
        if taken.iter().zip(lens).all(|(&t, &n)| t < n) {
            candidates.truncate(count);
            candidates.sort_unstable_by(order);
            return candidates.into_iter().map(|(_, k)| k).collect();
        }
    }
    candidates.sort_unstable_by(order);
    let mut remaining = lens.to_vec();
    let mut out = Vec::with_capacity(count);
    for (_, k) in candidates {
        if out.len() == count {
            break;
        }
        if remaining[layer(&k)] > 1 {
            remaining[layer(&k)] -= 1;
            out.push(k);
        }
    }
    out
}

/// Per-connection scores keyed by `(layer, position)`.
fn slots(scores: &[Vec<f64>]) -> Vec<(f64, (u32, u32))> {
    scores
        .iter()
        .enumerate()
        .flat_map(|(l, row)| row.iter().enumerate().map(move |(i, &v)| (v, (l as u32, i as u32))))
        .collect()
}

/// Source-neuron weights over layers `0..L` (output layer excluded).
enum SourceWeights {
    Uniform,
    PerNode(Vec<Vec<f64>>),
}

/// Runs one prune-and-regrow step and, when enabled, the controller update.
pub fn evolve_epoch<R: Rng>(
    net: &mut SparseNetwork,
    strategy: Strategy,
    params: &mut EvolutionParams,
    constants: &ControllerConstants,
    settings: &EvolutionSettings,
    inputs: ImportanceInputs<'_>,
    rng: &mut R,
) -> Result<EpochEvolutionReport> {
    let start = Instant::now();
    let before = *params;
    if strategy == Strategy::Dense {
        let mut report = EpochEvolutionReport::empty(strategy, before);
        report.wall_time = start.elapsed();
        return Ok(report);
    }
    params.validate()?;
    let mask = net.mask();
    let mut weak_paths = 0;

    let lens: Vec<usize> = mask.layers().iter().map(|l| l.len()).collect();
    let slot_layer = |k: &(u32, u32)| k.0 as usize;
    let (scores, doomed) = match (strategy, inputs) {
        (Strategy::Set, _) => {
            let scores: Vec<Vec<f64>> = net
                .all_weights()
                .iter()
                .map(|w| w.iter().map(|v| v.abs()).collect())
                .collect();
            let count = (params.zeta * mask.active_count() as f64).ceil() as usize;
            let doomed = lowest(slots(&scores), count, slot_layer, &lens);
            (scores, doomed)
        }
        (Strategy::PathWeight, ImportanceInputs::FeatureNorms(norms)) => {
            let factors = paths::normalized_weights(net, norms)?;
            let total_paths = paths::count_paths(mask);
            let k = (params.lambda * total_paths).ceil().min(settings.path_cap as f64).max(1.0) as usize;
            let weak = paths::k_weakest_paths_from_factors(mask, &factors, k);
            weak_paths = weak.len();
            let union: BTreeSet<Connection> = weak.iter().flat_map(|p| p.path.connections()).collect();
            let candidates: Vec<(f64, (u32, u32))> = union
                .iter()
                .map(|&c| {
                    let pos = mask.layer(c.layer).position(c.source, c.target).unwrap();
                    (factors[c.layer][pos], (c.layer as u32, pos as u32))
                })
                .collect();
            let count = (params.zeta * union.len() as f64).ceil() as usize;
            let doomed = lowest(candidates, count, slot_layer, &lens);
            (factors, doomed)
        }
        (Strategy::Sensitivity, ImportanceInputs::Sensitivity(acc)) => {
            if !(params.zeta > 0.0 && params.zeta < 1.0) {
                return Err(Error::Parameter(format!("zeta must lie in (0, 1), got {}", params.zeta)));
            }
            let s = sensitivity::connection_sensitivity(acc, net, settings.sensitivity_form)?;
            let count = (params.zeta * mask.active_count() as f64).ceil() as usize;
            let doomed = lowest(slots(&s), count, slot_layer, &lens);
            (s, doomed)
        }
        (strategy, _) => {
            return Err(Error::Parameter(format!(
                "strategy {strategy} needs its importance statistics"
            )))
        }
    };

    let mut keep: Vec<Vec<bool>> = lens.iter().map(|&n| vec![true; n]).collect();
    for &(l, i) in &doomed {
        keep[l as usize][i as usize] = false;
    }
    // One pass in connection order; the doomed list is in score order.
    let mut removed = Vec::with_capacity(doomed.len());
    let (mut sum_all, mut sum_removed) = (0.0, 0.0);
    for (l, (row, kept)) in scores.iter().zip(&keep).enumerate() {
        for (i, (&v, &k)) in row.iter().zip(kept).enumerate() {
            sum_all += v;
            if !k {
                let (a, b) = mask.layer(l).pairs()[i];
                removed.push(Connection::new(l, a, b));
                sum_removed += v;
            }
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    let (c_prim, c_sec) = (mean(sum_all, mask.active_count()), mean(sum_removed, removed.len()));

    // Node weights for regrowth, over the connections that survive removal.
    let surviving = |values: &[Vec<f64>]| -> Vec<Vec<f64>> {
        values
            .iter()
            .zip(&keep)
            .map(|(row, k)| row.iter().zip(k).map(|(&v, &kept)| if kept { v } else { 0.0 }).collect())
            .collect()
    };
    let sources = match strategy {
        Strategy::Sensitivity => SourceWeights::PerNode(sensitivity::node_sensitivity(&surviving(&scores), mask)),
        Strategy::PathWeight => {
            let table = paths::node_importance_from_factors(mask, &surviving(&scores));
            SourceWeights::PerNode((0..mask.depth()).map(|k| table.layer(k).to_vec()).collect())
        }
        _ => SourceWeights::Uniform,
    };

    let wanted = (params.delta * removed.len() as f64).round() as usize;
    let free_budget = mask.budget() - (mask.active_count() - removed.len());
    let n_add = wanted.min(free_budget);
    let added = sample_regrowth(mask, &sources, params.delta, n_add, rng)?;
    net.retain_connections(&keep)?;
    net.add_connections(&added, rng)?;

    *params = update_params(params, constants, c_prim, c_sec);
    Ok(EpochEvolutionReport {
        strategy,
        removed,
        added,
        c_prim,
        c_sec,
        params_before: before,
        params_after: *params,
        weak_paths,
        wall_time: start.elapsed(),
    })
}

/// Draws up to `n_add` new connections. Sources follow `sources` (scaled
/// through [`paths::regrowth_distribution`]); targets are uniform over the
/// source's free targets. `mask` is the topology before this step's
/// removal, so removed connections are never regrown at once.
fn sample_regrowth<R: Rng>(
    mask: &TopologyMask,
    sources: &SourceWeights,
    delta: f64,
    n_add: usize,
    rng: &mut R,
) -> Result<Vec<Connection>> {
    if n_add == 0 {
        return Ok(Vec::new());
    }
    // Eligible sources: neurons with at least one free target.
    let mut nodes: Vec<(usize, u32)> = Vec::new();
    let mut free: Vec<usize> = Vec::new();
    for (l, layer) in mask.layers().iter().enumerate() {
        for (i, deg) in layer.out_degrees().into_iter().enumerate() {
            let open = layer.outputs() - deg;
            if open > 0 {
                nodes.push((l, i as u32));
                free.push(open);
            }
        }
    }
    if nodes.is_empty() {
        return Ok(Vec::new());
    }
    let raw: Vec<f64> = match sources {
        SourceWeights::Uniform => vec![1.0; nodes.len()],
        SourceWeights::PerNode(values) => nodes.iter().map(|&(l, i)| values[l][i as usize]).collect(),
    };
    let mut weights = paths::regrowth_distribution(&raw, delta)?;
    let mut dist = match WeightedIndex::new(&weights) {
        Ok(d) => d,
        Err(_) => {
            weights = vec![1.0; nodes.len()];
            WeightedIndex::new(&weights).expect("uniform weights")
        }
    };

    // Sources are drawn one addition at a time and retire once full, so a
    // source's count never exceeds its free targets.
    let mut counts = vec![0usize; nodes.len()];
    let mut open_nodes = nodes.len();
    for _ in 0..n_add {
        if open_nodes == 0 {
            break;
        }
        let pick = dist.sample(rng);
        counts[pick] += 1;
        free[pick] -= 1;
        if free[pick] == 0 {
            open_nodes -= 1;
            retire(&mut dist, &mut weights, pick, &free);
        }
    }

    // Targets: distinct uniform ranks among the free targets, mapped through
    // the sorted row.
    let mut added = Vec::with_capacity(n_add);
    for (pick, &m) in counts.iter().enumerate() {
        if m == 0 {
            continue;
        }
        let (l, source) = nodes[pick];
        let row = mask.layer(l).row(source);
        let open = free[pick] + m;
        let mut ranks = rand::seq::index::sample(rng, open, m).into_vec();
        ranks.sort_unstable();
        let mut taken = 0;
        for r in ranks {
            while taken < row.len() && row[taken].1 as usize <= r + taken {
                taken += 1;
            }
            added.push(Connection::new(l, source, (r + taken) as u32));
        }
    }
    Ok(added)
}

/// Zeroes a saturated node's weight. If no positive weight remains among
/// open nodes, falls back to uniform over them.
fn retire(dist: &mut WeightedIndex<f64>, weights: &mut [f64], node: usize, free: &[usize]) {
    weights[node] = 0.0;
    if dist.update_weights(&[(node, &0.0)]).is_ok() {
        return;
    }
    for (w, &f) in weights.iter_mut().zip(free) {
        *w = if f > 0 { 1.0 } else { 0.0 };
    }
    if let Ok(d) = WeightedIndex::new(&*weights) {
        *dist = d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{backward, forward, Matrix};
    use crate::topology::LayerMask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scored(mask: &TopologyMask, scores: &[Vec<f64>]) -> Vec<(f64, Connection)> {
        mask.connections().zip(scores.iter().flatten().copied()).map(|(c, v)| (v, c)).collect()
    }

    fn set_net(weights: Vec<f64>) -> SparseNetwork {
        let mask = TopologyMask::from_layers(
            vec![2, 4],
            vec![LayerMask::from_pairs(2, 4, vec![(0, 0), (0, 1), (1, 2), (1, 3)]).unwrap()],
            4,
            1.0,
        )
        .unwrap();
        SparseNetwork::with_zero_biases(mask, vec![weights]).unwrap()
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!("magnitude".parse::<Strategy>(), Err(Error::Parameter(_))));
    }

    #[test]
    fn set_removes_smallest_magnitudes_and_regrows() {
        let mut net = set_net(vec![0.9, -0.05, 0.5, 0.01]);
        let mut params = initial_params(ParamMode::Fixed);
        params.zeta = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = evolve_epoch(
            &mut net,
            Strategy::Set,
            &mut params,
            &ControllerConstants::default(),
            &EvolutionSettings::default(),
            ImportanceInputs::None,
            &mut rng,
        )
        .unwrap();
        assert_eq!(report.removed, vec![Connection::new(0, 0, 1), Connection::new(0, 1, 3)]);
        assert_eq!(report.added.len(), 2);
        assert_eq!(net.mask().active_count(), 4);
        for c in &report.added {
            assert!(!report.removed.contains(c));
            assert!(net.mask().contains(*c));
        }
        assert!((report.c_prim - (0.9 + 0.05 + 0.5 + 0.01) / 4.0).abs() < 1e-15);
        assert!((report.c_sec - 0.03).abs() < 1e-15);
    }

    #[test]
    fn dense_is_a_no_op() {
        let mut net = set_net(vec![0.9, 0.05, 0.5, 0.01]);
        let before = net.clone();
        let mut params = initial_params(ParamMode::Fixed);
        let report = evolve_epoch(
            &mut net,
            Strategy::Dense,
            &mut params,
            &ControllerConstants::default(),
            &EvolutionSettings::default(),
            ImportanceInputs::None,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assert!(report.removed.is_empty() && report.added.is_empty());
        assert_eq!(net, before);
    }

    #[test]
    fn missing_inputs_is_a_parameter_error() {
        let mut net = set_net(vec![0.9, 0.05, 0.5, 0.01]);
        let mut params = initial_params(ParamMode::Fixed);
        let err = evolve_epoch(
            &mut net,
            Strategy::PathWeight,
            &mut params,
            &ControllerConstants::default(),
            &EvolutionSettings::default(),
            ImportanceInputs::None,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(matches!(err, Err(Error::Parameter(_))));
    }

    #[test]
    fn criteria_means() {
        assert_eq!(compute_criteria(&[1.0, 2.0, 3.0, 6.0], &[1.0, 2.0]), (3.0, 1.5));
        let all = [1.0, 2.0, 3.0, 6.0];
        let (p, s) = compute_criteria(&all, &all);
        assert_eq!(p, s);
        assert_eq!(compute_criteria(&all, &[]).1, 0.0);
    }

    #[test]
    fn controller_branches() {
        let k = ControllerConstants::default();
        let mut p = initial_params(ParamMode::TimeVarying);
        p.lambda = 0.2;
        p.zeta = 0.4;
        p.delta = 1.0;
        let up = update_params(&p, &k, 1.0, 0.05);
        assert_eq!((up.lambda, up.zeta, up.delta), (0.4, 0.8, 2.0));
        let down = update_params(&p, &k, 1.0, 0.7);
        assert_eq!((down.lambda, down.zeta, down.delta), (0.1, 0.2, 0.5));
        assert_eq!(update_params(&p, &k, 1.0, 0.3), p);
        let mut fixed = p;
        fixed.time_varying = false;
        assert_eq!(update_params(&fixed, &k, 1.0, 0.05), fixed);
    }

    #[test]
    fn controller_clamps() {
        let k = ControllerConstants::default();
        let mut p = initial_params(ParamMode::TimeVarying);
        p.zeta = 0.6;
        p.delta = 8.0;
        p.lambda = 1.5e-4;
        let up = update_params(&p, &k, 1.0, 0.0);
        assert_eq!((up.zeta, up.delta), (0.9, 10.0));
        let down = update_params(&p, &k, 1.0, 1.0);
        assert_eq!(down.lambda, 1e-4);
    }

    #[test]
    fn initial_params_ordering() {
        let f = initial_params(ParamMode::Fixed);
        let t = initial_params(ParamMode::TimeVarying);
        assert!(t.lambda > f.lambda && t.zeta > f.zeta && t.delta > f.delta);
        f.validate().unwrap();
        t.validate().unwrap();
        assert!(ControllerConstants::default().validate().is_ok());
        let bad = ControllerConstants { k1: 0.9, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn select_lowest_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (mask, _) = crate::topology::erdos_renyi_init(&[6, 7, 5], 1.5, &mut rng).unwrap();
            // Coarse scores force plenty of ties.
            let scores: Vec<Vec<f64>> = mask
                .layers()
                .iter()
                .map(|l| (0..l.len()).map(|_| rng.random_range(0..4) as f64).collect())
                .collect();
            let count = rng.random_range(0..mask.active_count());
            let got = select_lowest(scored(&mask, &scores), count, &mask);
            let mut all = scored(&mask, &scores);
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            let mut remaining: Vec<usize> = mask.layers().iter().map(|l| l.len()).collect();
            let mut expected = Vec::new();
            for (_, c) in all {
                if expected.len() == count {
                    break;
                }
                if remaining[c.layer] > 1 {
                    remaining[c.layer] -= 1;
                    expected.push(c);
                }
            }
            assert_eq!(got, expected);
        }
    }

    fn trained_inputs(net: &SparseNetwork, rng: &mut ChaCha8Rng) -> (FeatureNorms, SensitivityAccumulator) {
        let mut norms = FeatureNorms::new(net.depth());
        let mut acc = SensitivityAccumulator::new(net);
        for _ in 0..3 {
            let x: Vec<f64> = (0..4 * net.inputs()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let trace = forward(net, &Matrix::new(4, net.inputs(), x).unwrap()).unwrap();
            let labels: Vec<usize> = (0..4).map(|i| i % net.classes()).collect();
            let (_, g) = backward(net, &trace, &labels).unwrap();
            norms.update(&trace);
            acc.accumulate(&g).unwrap();
        }
        (norms, acc)
    }

    #[test]
    fn every_strategy_preserves_budget_and_is_deterministic() {
        for strategy in [Strategy::Set, Strategy::PathWeight, Strategy::Sensitivity] {
            let run = || {
                let mut rng = ChaCha8Rng::seed_from_u64(12);
                let mut net = SparseNetwork::erdos_renyi(&[8, 10, 9, 3], 2.0, &mut rng).unwrap();
                let budget = net.mask().budget();
                let mut params = initial_params(ParamMode::Fixed);
                let mut reports = Vec::new();
                for _ in 0..5 {
                    let (norms, acc) = trained_inputs(&net, &mut rng);
                    let inputs = match strategy {
                        Strategy::PathWeight => ImportanceInputs::FeatureNorms(&norms),
                        Strategy::Sensitivity => ImportanceInputs::Sensitivity(&acc),
                        _ => ImportanceInputs::None,
                    };
                    let mut r = evolve_epoch(
                        &mut net,
                        strategy,
                        &mut params,
                        &ControllerConstants::default(),
                        &EvolutionSettings::default(),
                        inputs,
                        &mut rng,
                    )
                    .unwrap();
                    assert_eq!(net.mask().active_count(), budget, "{strategy}");
                    assert_eq!(r.added.len(), r.removed.len());
                    assert!(net.mask().layers().iter().all(|l| !l.is_empty()));
                    r.wall_time = Duration::ZERO;
                    reports.push(r);
                }
                (reports, net)
            };
            let (a, net_a) = run();
            let (b, net_b) = run();
            assert_eq!(a, b);
            assert_eq!(net_a, net_b);
        }
    }

    #[test]
    fn regrowth_prefers_important_sources() {
        // Only input neuron 0 carries importance; every regrown connection in
        // layer 0 must start there.
        let mask = TopologyMask::from_layers(
            vec![3, 6],
            vec![LayerMask::from_pairs(3, 6, vec![(0, 0), (1, 0), (2, 0)]).unwrap()],
            3,
            1.0,
        )
        .unwrap();
        let sources = SourceWeights::PerNode(vec![vec![5.0, 0.0, 0.0]]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let added = sample_regrowth(&mask, &sources, 1.0, 4, &mut rng).unwrap();
        assert_eq!(added.len(), 4);
        assert!(added.iter().all(|c| c.source == 0));
        // Once neuron 0 is saturated the sampler falls back to the others.
        let added = sample_regrowth(&mask, &sources, 1.0, 8, &mut rng).unwrap();
        assert_eq!(added.len(), 8);
        assert_eq!(added.iter().filter(|c| c.source == 0).count(), 5);
    }

    #[test]
    fn regrown_targets_are_uniform_over_free_ones() {
        let mask = TopologyMask::from_layers(
            vec![1, 6],
            vec![LayerMask::from_pairs(1, 6, vec![(0, 1), (0, 3)]).unwrap()],
            2,
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut all = sample_regrowth(&mask, &SourceWeights::Uniform, 1.0, 10, &mut rng).unwrap();
        all.sort();
        let targets: Vec<u32> = all.iter().map(|c| c.target).collect();
        assert_eq!(targets, [0, 2, 4, 5]);

        let trials = 8000;
        let mut hits = [0usize; 6];
        for _ in 0..trials {
            for c in sample_regrowth(&mask, &SourceWeights::Uniform, 1.0, 2, &mut rng).unwrap() {
                hits[c.target as usize] += 1;
            }
        }
        assert_eq!((hits[1], hits[3]), (0, 0));
        // Two of four free targets per draw: each is hit with probability 1/2.
        for t in [0, 2, 4, 5] {
            let freq = hits[t] as f64 / trials as f64;
            assert!((freq - 0.5).abs() < 4.0 * (0.25 / trials as f64).sqrt(), "target {t}: {freq}");
        }
    }
}

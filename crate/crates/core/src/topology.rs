//! Sparse connectivity structure.
//!
//! A [`TopologyMask`] records, for every weight layer, which `(source, target)`
//! pairs are active. Pairs are kept sorted by `(source, target)` so iteration
//! order depends only on the history of edits, never on hashing. Weight values
//! live outside the mask in vectors aligned with each layer's pair order; the
//! edit functions here keep both in step.

use rand::Rng;

use crate::error::{Error, Result};

/// One connection of the network, addressed by weight-layer index (0-based)
/// and the neuron indices it joins. Orders lexicographically by
/// `(layer, source, target)`, the tie-break used everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Connection {
    pub layer: usize,
    pub source: u32,
    pub target: u32,
}

impl Connection {
    pub fn new(layer: usize, source: u32, target: u32) -> Self {
        Connection {
            layer,
            source,
            target,
        }
    }
}

/// Active pairs of a single weight layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMask {
    inputs: usize,
    outputs: usize,
    pairs: Vec<(u32, u32)>,
    /// Pairs of source `s` occupy `rows[s]..rows[s + 1]`.
    rows: Vec<usize>,
}

impl LayerMask {
    pub fn empty(inputs: usize, outputs: usize) -> Self {
        LayerMask {
            inputs,
            outputs,
            pairs: Vec::new(),
            rows: vec![0; inputs + 1],
        }
    }

    /// Builds a layer from arbitrary-order pairs. Rejects out-of-range or
    /// duplicate pairs.
    pub fn from_pairs(inputs: usize, outputs: usize, mut pairs: Vec<(u32, u32)>) -> Result<Self> {
        pairs.sort_unstable();
        for w in pairs.windows(2) {
            if w[0] == w[1] {
                return Err(Error::Consistency(format!(
                    "duplicate connection {:?}",
                    w[0]
                )));
            }
        }
        if let Some(&(s, t)) = pairs
            .iter()
            .find(|&&(s, t)| s as usize >= inputs || t as usize >= outputs)
        {
            return Err(Error::Consistency(format!(
                "connection ({s}, {t}) out of range for a {inputs}x{outputs} layer"
            )));
        }
        let mut layer = LayerMask {
            inputs,
            outputs,
            pairs,
            rows: Vec::new(),
        };
        layer.reindex();
        Ok(layer)
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of possible connections in this layer.
    pub fn capacity(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn contains(&self, source: u32, target: u32) -> bool {
        self.position(source, target).is_some()
    }

    /// Index of a pair in the sorted order, if active.
    pub fn position(&self, source: u32, target: u32) -> Option<usize> {
        let s = source as usize;
        if s >= self.inputs {
            return None;
        }
        let (lo, hi) = (self.rows[s], self.rows[s + 1]);
        self.pairs[lo..hi].binary_search_by_key(&target, |p| p.1).ok().map(|i| lo + i)
    }

    /// Active pairs of one source, sorted by target.
    pub fn row(&self, source: u32) -> &[(u32, u32)] {
        let s = source as usize;
        &self.pairs[self.rows[s]..self.rows[s + 1]]
    }

    /// Active out-degree of every source neuron.
    pub fn out_degrees(&self) -> Vec<usize> {
        self.rows.windows(2).map(|w| w[1] - w[0]).collect()
    }

    fn reindex(&mut self) {
        self.rows = vec![0; self.inputs + 1];
        for &(s, _) in &self.pairs {
            self.rows[s as usize + 1] += 1;
        }
        for i in 0..self.inputs {
            self.rows[i + 1] += self.rows[i];
        }
    }

    fn in_range(&self, source: u32, target: u32) -> bool {
        (source as usize) < self.inputs && (target as usize) < self.outputs
    }
}

/// The active-connection structure of a whole network plus its budget.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyMask {
    layer_sizes: Vec<usize>,
    layers: Vec<LayerMask>,
    budget: usize,
    epsilon: f64,
}

impl TopologyMask {
    /// Assembles a mask from per-layer masks. The budget must cover the
    /// current active count.
    pub fn from_layers(
        layer_sizes: Vec<usize>,
        layers: Vec<LayerMask>,
        budget: usize,
        epsilon: f64,
    ) -> Result<Self> {
        validate_layer_sizes(&layer_sizes)?;
        if layers.len() + 1 != layer_sizes.len() {
            return Err(Error::Consistency(format!(
                "{} layer masks for {} neuron layers",
                layers.len(),
                layer_sizes.len()
            )));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.inputs != layer_sizes[k] || layer.outputs != layer_sizes[k + 1] {
                return Err(Error::Consistency(format!(
                    "layer {k} mask is {}x{}, expected {}x{}",
                    layer.inputs,
                    layer.outputs,
                    layer_sizes[k],
                    layer_sizes[k + 1]
                )));
            }
        }
        let mask = TopologyMask {
            layer_sizes,
            layers,
            budget,
            epsilon,
        };
        if budget == 0 {
            return Err(Error::Parameter("connection budget must be positive".into()));
        }
        if mask.active_count() > budget {
            return Err(Error::Budget {
                requested: mask.active_count(),
                budget,
            });
        }
        Ok(mask)
    }

    /// Every possible connection active; budget equals the total capacity.
    pub fn fully_connected(layer_sizes: &[usize]) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let pairs = (0..w[0] as u32)
                    .flat_map(|s| (0..w[1] as u32).map(move |t| (s, t)))
                    .collect();
                LayerMask::from_pairs(w[0], w[1], pairs)
            })
            .collect::<Result<Vec<_>>>()?;
        let budget = layers.iter().map(LayerMask::capacity).sum();
        TopologyMask::from_layers(layer_sizes.to_vec(), layers, budget, f64::INFINITY)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> &LayerMask {
        &self.layers[index]
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// Raises or lowers the ceiling. It may not drop below the active count.
    pub fn set_budget(&mut self, budget: usize) -> Result<()> {
        if budget == 0 || budget < self.active_count() {
            return Err(Error::Budget {
                requested: self.active_count(),
                budget,
            });
        }
        self.budget = budget;
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn active_count(&self) -> usize {
        self.layers.iter().map(LayerMask::len).sum()
    }

    pub fn capacity(&self) -> usize {
        self.layers.iter().map(LayerMask::capacity).sum()
    }

    pub fn free_budget(&self) -> usize {
        self.budget.saturating_sub(self.active_count())
    }

    pub fn contains(&self, c: Connection) -> bool {
        c.layer < self.layers.len() && self.layers[c.layer].contains(c.source, c.target)
    }

    /// All active connections in `(layer, source, target)` order.
    pub fn connections(&self) -> impl Iterator<Item = Connection> + '_ {
        self.layers.iter().enumerate().flat_map(|(k, layer)| {
            layer
                .pairs
                .iter()
                .map(move |&(s, t)| Connection::new(k, s, t))
        })
    }
}

/// Count statistics of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityStats {
    /// Active connections over possible connections.
    pub mu: f64,
    pub active: usize,
    pub possible: usize,
    pub per_layer: Vec<usize>,
}

pub fn sparsity_stats(mask: &TopologyMask) -> SparsityStats {
    let per_layer: Vec<usize> = mask.layers.iter().map(LayerMask::len).collect();
    let active: usize = per_layer.iter().sum();
    let possible = mask.capacity();
    SparsityStats {
        mu: active as f64 / possible as f64,
        active,
        possible,
        per_layer,
    }
}

fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 neuron layers, got {}",
            layer_sizes.len()
        )));
    }
    if let Some(k) = layer_sizes.iter().position(|&n| n == 0) {
        return Err(Error::Parameter(format!("neuron layer {k} has size 0")));
    }
    if layer_sizes.iter().any(|&n| n > u32::MAX as usize) {
        return Err(Error::Parameter("neuron layer too large".into()));
    }
    Ok(())
}

/// Erdős–Rényi existence probability of a connection between layers of
/// `inputs` and `outputs` neurons, clamped to 1.
pub fn connection_probability(inputs: usize, outputs: usize, epsilon: f64) -> f64 {
    let (a, b) = (inputs as f64, outputs as f64);
    (epsilon * (a + b) / (a * b)).min(1.0)
}

/// Half-width of the uniform weight-init interval, `sqrt(6 / (fan_in + fan_out))`.
pub fn init_weight_bound(inputs: usize, outputs: usize) -> f64 {
    (6.0 / (inputs + outputs) as f64).sqrt()
}

pub(crate) fn draw_weight<R: Rng + ?Sized>(rng: &mut R, bound: f64) -> f64 {
    bound * (2.0 * rng.random::<f64>() - 1.0)
}

/// Samples an Erdős–Rényi sparse topology and initial weights.
///
/// Each possible connection of layer `k` exists independently with
/// probability [`connection_probability`]. A layer that realizes no
/// connection gets one uniformly random connection forced. The budget is the
/// realized count.
pub fn erdos_renyi_init<R: Rng + ?Sized>(
    layer_sizes: &[usize],
    epsilon: f64,
    rng: &mut R,
) -> Result<(TopologyMask, Vec<Vec<f64>>)> {
    validate_layer_sizes(layer_sizes)?;
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Parameter(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    for w in layer_sizes.windows(2) {
        let (inputs, outputs) = (w[0], w[1]);
        let p = connection_probability(inputs, outputs, epsilon);
        let bound = init_weight_bound(inputs, outputs);
        let mut pairs = Vec::new();
        let mut values = Vec::new();
        for s in 0..inputs as u32 {
            for t in 0..outputs as u32 {
                if p >= 1.0 || rng.random::<f64>() < p {
                    pairs.push((s, t));
                    values.push(draw_weight(rng, bound));
                }
            }
        }
        if pairs.is_empty() {
            let s = rng.random_range(0..inputs as u32);
            let t = rng.random_range(0..outputs as u32);
            pairs.push((s, t));
            values.push(draw_weight(rng, bound));
        }
        // Generated in sorted order already.
        layers.push(LayerMask::from_pairs(inputs, outputs, pairs)?);
        weights.push(values);
    }
    let budget = layers.iter().map(LayerMask::len).sum();
    let mask = TopologyMask::from_layers(layer_sizes.to_vec(), layers, budget, epsilon)?;
    Ok((mask, weights))
}

/// Fully connected topology with the same weight-init distribution.
pub fn dense_init<R: Rng + ?Sized>(
    layer_sizes: &[usize],
    rng: &mut R,
) -> Result<(TopologyMask, Vec<Vec<f64>>)> {
    let mask = TopologyMask::fully_connected(layer_sizes)?;
    let weights = mask
        .layers
        .iter()
        .map(|layer| {
            let bound = init_weight_bound(layer.inputs, layer.outputs);
            (0..layer.len()).map(|_| draw_weight(rng, bound)).collect()
        })
        .collect();
    Ok((mask, weights))
}

/// Expected active fraction under Erdős–Rényi init at `epsilon`.
pub fn expected_mu(layer_sizes: &[usize], epsilon: f64) -> f64 {
    let (mut expected, mut possible) = (0.0, 0.0);
    for w in layer_sizes.windows(2) {
        let cap = (w[0] * w[1]) as f64;
        expected += connection_probability(w[0], w[1], epsilon) * cap;
        possible += cap;
    }
    expected / possible
}

/// Inverts the expected active fraction: finds `epsilon` whose expected
/// `mu` equals `target_mu`.
///
/// The expected count is piecewise linear in `epsilon`, with a breakpoint
/// per layer where its probability saturates at 1; the inversion walks the
/// breakpoints in ascending order.
pub fn calibrate_epsilon(layer_sizes: &[usize], target_mu: f64) -> Result<f64> {
    validate_layer_sizes(layer_sizes)?;
    if !(target_mu > 0.0 && target_mu <= 1.0) {
        return Err(Error::Parameter(format!(
            "target_mu must lie in (0, 1], got {target_mu}"
        )));
    }
    // (saturation point, capacity, slope) per layer
    let mut layers: Vec<(f64, f64, f64)> = layer_sizes
        .windows(2)
        .map(|w| {
            let cap = (w[0] * w[1]) as f64;
            let slope = (w[0] + w[1]) as f64;
            (cap / slope, cap, slope)
        })
        .collect();
    layers.sort_by(|a, b| a.0.total_cmp(&b.0));
    let possible: f64 = layers.iter().map(|l| l.1).sum();
    let target = target_mu * possible;

    let mut saturated = 0.0;
    let mut slope: f64 = layers.iter().map(|l| l.2).sum();
    let mut lower = 0.0;
    for &(knee, cap, s) in &layers {
        let eps = (target - saturated) / slope;
        if eps <= knee {
            return Ok(eps.max(lower));
        }
        lower = knee;
        saturated += cap;
        slope -= s;
    }
    // Every layer saturated: only reachable for target_mu == 1.
    Ok(lower)
}

/// Deactivates the listed connections, dropping their weights.
///
/// Fails without modifying anything if a listed connection is not active or
/// is listed twice.
pub fn remove_connections(
    mask: &mut TopologyMask,
    weights: &mut [Vec<f64>],
    removals: &[Connection],
) -> Result<()> {
    let mut doomed: Vec<Vec<usize>> = vec![Vec::new(); mask.layers.len()];
    for &c in removals {
        let pos = (c.layer < mask.layers.len())
            .then(|| mask.layers[c.layer].position(c.source, c.target))
            .flatten()
            .ok_or_else(|| Error::Consistency(format!("cannot remove inactive connection {c:?}")))?;
        doomed[c.layer].push(pos);
    }
    for (k, positions) in doomed.iter_mut().enumerate() {
        positions.sort_unstable();
        if let Some(w) = positions.windows(2).find(|w| w[0] == w[1]) {
            let (s, t) = mask.layers[k].pairs[w[0]];
            return Err(Error::Consistency(format!(
                "connection {:?} listed twice for removal",
                Connection::new(k, s, t)
            )));
        }
    }
    let mut keep: Vec<Vec<bool>> = mask.layers.iter().map(|l| vec![true; l.len()]).collect();
    for (k, positions) in doomed.into_iter().enumerate() {
        for p in positions {
            keep[k][p] = false;
        }
    }
    retain_connections(mask, weights, &keep)
}

/// Keeps the connections flagged in `keep`, which is aligned with each
/// layer's pair order, and drops the rest with their weights.
pub fn retain_connections(mask: &mut TopologyMask, weights: &mut [Vec<f64>], keep: &[Vec<bool>]) -> Result<()> {
    if keep.len() != mask.layers.len() || keep.iter().zip(&mask.layers).any(|(k, l)| k.len() != l.len()) {
        return Err(Error::Consistency("retain flags do not match the mask".into()));
    }
    for (k, flags) in keep.iter().enumerate() {
        if flags.iter().all(|&f| f) {
            continue;
        }
        let mut it = flags.iter();
        mask.layers[k].pairs.retain(|_| *it.next().unwrap());
        let mut it = flags.iter();
        weights[k].retain(|_| *it.next().unwrap());
        mask.layers[k].reindex();
    }
    Ok(())
}

/// Activates the listed connections with fresh weights drawn from the
/// init distribution, in the order given. Returns the drawn weights.
pub fn add_connections<R: Rng + ?Sized>(
    mask: &mut TopologyMask,
    weights: &mut [Vec<f64>],
    additions: &[Connection],
    rng: &mut R,
) -> Result<Vec<f64>> {
    for &c in additions {
        if c.layer >= mask.layers.len() || !mask.layers[c.layer].in_range(c.source, c.target) {
            return Err(Error::Consistency(format!(
                "connection {c:?} is out of range"
            )));
        }
        if mask.contains(c) {
            return Err(Error::Consistency(format!(
                "connection {c:?} is already active"
            )));
        }
    }
    let mut sorted = additions.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Consistency(format!(
            "connection {:?} is already active",
            w[0]
        )));
    }
    let requested = mask.active_count() + additions.len();
    if requested > mask.budget {
        return Err(Error::Budget {
            requested,
            budget: mask.budget,
        });
    }

    let drawn: Vec<f64> = additions
        .iter()
        .map(|c| {
            let layer = &mask.layers[c.layer];
            draw_weight(rng, init_weight_bound(layer.inputs, layer.outputs))
        })
        .collect();

    let mut by_layer: Vec<Vec<((u32, u32), f64)>> = vec![Vec::new(); mask.layers.len()];
    for (c, &w) in additions.iter().zip(&drawn) {
        by_layer[c.layer].push(((c.source, c.target), w));
    }
    for (k, mut fresh) in by_layer.into_iter().enumerate() {
        if fresh.is_empty() {
            continue;
        }
        fresh.sort_unstable_by_key(|&(pair, _)| pair);
        let layer = &mut mask.layers[k];
        let old_pairs = std::mem::take(&mut layer.pairs);
        let old_values = std::mem::take(&mut weights[k]);
        let total = old_pairs.len() + fresh.len();
        let mut pairs = Vec::with_capacity(total);
        let mut values = Vec::with_capacity(total);
        let mut old = old_pairs.into_iter().zip(old_values).peekable();
        let mut new = fresh.into_iter().peekable();
        loop {
            let take_old = match (old.peek(), new.peek()) {
                (Some(a), Some(b)) => a.0 < b.0,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let (pair, w) = if take_old {
                old.next().unwrap()
            } else {
                new.next().unwrap()
            };
            pairs.push(pair);
            values.push(w);
        }
        layer.pairs = pairs;
        layer.reindex();
        weights[k] = values;
    }
    Ok(drawn)
}

//! Sparse multilayer perceptron: forward pass, backpropagation, SGD.
//!
//! Hidden layers use ReLU (subgradient 0 at 0), the output layer softmax with
//! mean cross-entropy loss. Every loop runs over active connections only, in
//! the mask's `(source, target)` order, so results are a deterministic
//! function of the network and the batch.

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::topology::{self, Connection, TopologyMask};

/// Row-major dense matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Consistency(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Consistency("ragged rows".into()));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Sparse MLP parameters: topology, per-connection weights aligned with the
/// mask's pair order, and dense biases.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseNetwork {
    mask: TopologyMask,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    /// Bumped on every topology edit; traces and gradients carry it so
    /// stale data is rejected.
    version: u64,
}

impl SparseNetwork {
    pub fn new(mask: TopologyMask, weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != mask.depth() || biases.len() != mask.depth() {
            return Err(Error::Consistency("layer count mismatch".into()));
        }
        for (k, layer) in mask.layers().iter().enumerate() {
            if weights[k].len() != layer.len() {
                return Err(Error::Consistency(format!(
                    "layer {k}: {} weights for {} connections",
                    weights[k].len(),
                    layer.len()
                )));
            }
            if biases[k].len() != layer.outputs() {
                return Err(Error::Consistency(format!(
                    "layer {k}: {} biases for {} neurons",
                    biases[k].len(),
                    layer.outputs()
                )));
            }
        }
        let finite = weights.iter().chain(&biases).flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(SparseNetwork {
            mask,
            weights,
            biases,
            version: 0,
        })
    }

    /// Zero biases on top of a mask and its weights.
    pub fn with_zero_biases(mask: TopologyMask, weights: Vec<Vec<f64>>) -> Result<Self> {
        let biases = mask.layer_sizes()[1..].iter().map(|&n| vec![0.0; n]).collect();
        SparseNetwork::new(mask, weights, biases)
    }

    pub fn erdos_renyi<R: Rng + ?Sized>(layer_sizes: &[usize], epsilon: f64, rng: &mut R) -> Result<Self> {
        let (mask, weights) = topology::erdos_renyi_init(layer_sizes, epsilon, rng)?;
        SparseNetwork::with_zero_biases(mask, weights)
    }

    pub fn dense<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let (mask, weights) = topology::dense_init(layer_sizes, rng)?;
        SparseNetwork::with_zero_biases(mask, weights)
    }

    pub fn mask(&self) -> &TopologyMask {
        &self.mask
    }

    pub fn layer_sizes(&self) -> &[usize] {
        self.mask.layer_sizes()
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.mask.depth()
    }

    pub fn inputs(&self) -> usize {
        self.layer_sizes()[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes().last().unwrap()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn all_weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn weight(&self, c: Connection) -> Option<f64> {
        let pos = self.mask.layers().get(c.layer)?.position(c.source, c.target)?;
        Some(self.weights[c.layer][pos])
    }

    /// Overwrites the weight of an active connection.
    pub fn set_weight(&mut self, c: Connection, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("weight {value} for {c:?}")));
        }
        let pos = self
            .mask
            .layers()
            .get(c.layer)
            .and_then(|l| l.position(c.source, c.target))
            .ok_or_else(|| Error::Consistency(format!("{c:?} is not active")))?;
        self.weights[c.layer][pos] = value;
        Ok(())
    }

    pub fn set_bias(&mut self, layer: usize, neuron: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("bias {value}")));
        }
        let slot = self
            .biases
            .get_mut(layer)
            .and_then(|b| b.get_mut(neuron))
            .ok_or_else(|| Error::Consistency(format!("no bias ({layer}, {neuron})")))?;
        *slot = value;
        Ok(())
    }

    pub fn remove_connections(&mut self, removals: &[Connection]) -> Result<()> {
        topology::remove_connections(&mut self.mask, &mut self.weights, removals)?;
        if !removals.is_empty() {
            self.version += 1;
        }
        Ok(())
    }

    /// Keeps only the connections flagged in `keep` (aligned with the mask).
    pub fn retain_connections(&mut self, keep: &[Vec<bool>]) -> Result<()> {
        topology::retain_connections(&mut self.mask, &mut self.weights, keep)?;
        if keep.iter().flatten().any(|&k| !k) {
            self.version += 1;
        }
        Ok(())
    }

    pub fn add_connections<R: Rng + ?Sized>(&mut self, additions: &[Connection], rng: &mut R) -> Result<Vec<f64>> {
        let drawn = topology::add_connections(&mut self.mask, &mut self.weights, additions, rng)?;
        if !additions.is_empty() {
            self.version += 1;
        }
        Ok(drawn)
    }

    pub fn set_budget(&mut self, budget: usize) -> Result<()> {
        self.mask.set_budget(budget)
    }
}

/// Activations of one mini-batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    batch: usize,
    /// `pre[l]` is z of neuron layer `l + 1`, batch-major.
    pre: Vec<Vec<f64>>,
    /// `post[l]` is a of neuron layer `l`; `post[0]` is the input.
    post: Vec<Vec<f64>>,
    /// Per hidden layer, inverted-dropout scale (0 or 1/(1-rate)) applied to
    /// `post`; `None` when dropout was off.
    dropout: Vec<Option<Vec<f64>>>,
    version: u64,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Pre-activations of neuron layer `layer` (1-based; input has none).
    pub fn pre_activation(&self, layer: usize) -> &[f64] {
        &self.pre[layer - 1]
    }

    /// Post-activations of neuron layer `layer`; layer 0 is the input batch.
    pub fn activation(&self, layer: usize) -> &[f64] {
        &self.post[layer]
    }

    /// Softmax probabilities, batch-major.
    pub fn output(&self) -> &[f64] {
        self.post.last().unwrap()
    }
}

/// Batch-averaged loss gradients, aligned with the network's connection
/// order at the time they were computed.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub samples: usize,
    version: u64,
}

impl GradientSet {
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|g| g.is_finite())
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn affine(net: &SparseNetwork, layer: usize, input: &[f64], batch: usize) -> Vec<f64> {
    let lm = net.mask.layer(layer);
    let (n_in, n_out) = (lm.inputs(), lm.outputs());
    let bias = &net.biases[layer];
    let weights = &net.weights[layer];
    let mut z = Vec::with_capacity(batch * n_out);
    for b in 0..batch {
        z.extend_from_slice(bias);
        let a = &input[b * n_in..(b + 1) * n_in];
        let zb = &mut z[b * n_out..];
        for (&(s, t), &w) in lm.pairs().iter().zip(weights) {
            zb[t as usize] += a[s as usize] * w;
        }
    }
    z
}

fn run_forward(
    net: &SparseNetwork,
    batch: &Matrix,
    mut dropout: Option<(f64, &mut dyn rand::RngCore)>,
) -> Result<ForwardTrace> {
    if batch.cols != net.inputs() {
        return Err(Error::InputShape {
            expected: net.inputs(),
            got: batch.cols,
        });
    }
    if batch.rows == 0 {
        return Err(Error::EmptyInput("forward on an empty batch".into()));
    }
    let depth = net.depth();
    let n = batch.rows;
    let mut pre = Vec::with_capacity(depth);
    let mut post = Vec::with_capacity(depth + 1);
    let mut masks = Vec::with_capacity(depth.saturating_sub(1));
    post.push(batch.data.clone());
    for l in 0..depth {
        let z = affine(net, l, &post[l], n);
        let mut a = z.clone();
        if l + 1 == depth {
            let width = net.classes();
            for row in a.chunks_mut(width) {
                softmax_in_place(row);
            }
        } else {
            for v in a.iter_mut() {
                *v = v.max(0.0);
            }
            match dropout.as_mut() {
                Some((rate, rng)) if *rate > 0.0 => {
                    let keep = 1.0 / (1.0 - *rate);
                    let scale: Vec<f64> = (0..a.len())
                        .map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep })
                        .collect();
                    for (v, s) in a.iter_mut().zip(&scale) {
                        *v *= s;
                    }
                    masks.push(Some(scale));
                }
                _ => masks.push(None),
            }
        }
        pre.push(z);
        post.push(a);
    }
    Ok(ForwardTrace {
        batch: n,
        pre,
        post,
        dropout: masks,
        version: net.version,
    })
}

/// Inference-mode forward pass over a batch (rows are samples).
pub fn forward(net: &SparseNetwork, batch: &Matrix) -> Result<ForwardTrace> {
    run_forward(net, batch, None)
}

/// Training-mode forward pass with inverted dropout on hidden activations.
pub fn forward_with_dropout<R: Rng>(
    net: &SparseNetwork,
    batch: &Matrix,
    rate: f64,
    rng: &mut R,
) -> Result<ForwardTrace> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
    }
    run_forward(net, batch, Some((rate, rng)))
}

/// Mean softmax cross-entropy and its gradients for the trace's batch.
pub fn backward(net: &SparseNetwork, trace: &ForwardTrace, labels: &[usize]) -> Result<(f64, GradientSet)> {
    if trace.version != net.version || trace.post.len() != net.depth() + 1 {
        return Err(Error::Consistency("trace was produced by a different topology".into()));
    }
    if labels.len() != trace.batch {
        return Err(Error::Consistency(format!(
            "{} labels for a batch of {}",
            labels.len(),
            trace.batch
        )));
    }
    let classes = net.classes();
    if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Label { label, classes });
    }
    let n = trace.batch;
    let inv_n = 1.0 / n as f64;
    let depth = net.depth();

    let logits = trace.pre.last().unwrap();
    let mut loss = 0.0;
    for (b, &y) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        loss += log_sum_exp(row) - row[y];
    }
    loss *= inv_n;

    let mut delta: Vec<f64> = trace.post[depth].clone();
    for (b, &y) in labels.iter().enumerate() {
        delta[b * classes + y] -= 1.0;
    }
    for d in delta.iter_mut() {
        *d *= inv_n;
    }

    let mut grad_w: Vec<Vec<f64>> = vec![Vec::new(); depth];
    let mut grad_b: Vec<Vec<f64>> = vec![Vec::new(); depth];
    for l in (0..depth).rev() {
        let lm = net.mask.layer(l);
        let (n_in, n_out) = (lm.inputs(), lm.outputs());
        let input = &trace.post[l];
        let mut gw = vec![0.0; lm.len()];
        let mut gb = vec![0.0; n_out];
        for b in 0..n {
            let d = &delta[b * n_out..(b + 1) * n_out];
            let a = &input[b * n_in..(b + 1) * n_in];
            for (g, &(s, t)) in gw.iter_mut().zip(lm.pairs()) {
                *g += d[t as usize] * a[s as usize];
            }
            for (g, &dv) in gb.iter_mut().zip(d) {
                *g += dv;
            }
        }
        if l > 0 {
            let weights = &net.weights[l];
            let z_prev = &trace.pre[l - 1];
            let scale = trace.dropout[l - 1].as_deref();
            let mut prev = vec![0.0; n * n_in];
            for b in 0..n {
                let d = &delta[b * n_out..(b + 1) * n_out];
                let p = &mut prev[b * n_in..(b + 1) * n_in];
                for (&(s, t), &w) in lm.pairs().iter().zip(weights) {
                    p[s as usize] += w * d[t as usize];
                }
            }
            for (i, v) in prev.iter_mut().enumerate() {
                let active = z_prev[i] > 0.0;
                let keep = scale.map_or(1.0, |s| s[i]);
                *v = if active { *v * keep } else { 0.0 };
            }
            delta = prev;
        }
        grad_w[l] = gw;
        grad_b[l] = gb;
    }
    Ok((
        loss,
        GradientSet {
            weights: grad_w,
            biases: grad_b,
            samples: n,
            version: net.version,
        },
    ))
}

/// `w <- w - learning_rate * g` on every active weight and bias.
///
/// Non-finite gradients are rejected before anything is modified.
pub fn sgd_step(net: &mut SparseNetwork, grads: &GradientSet, learning_rate: f64) -> Result<()> {
    if grads.version != net.version {
        return Err(Error::Consistency("gradients computed for a different topology".into()));
    }
    if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
        return Err(Error::Parameter(format!("learning rate {learning_rate}")));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    if learning_rate == 0.0 {
        return Ok(());
    }
    for (w, g) in net.weights.iter_mut().zip(&grads.weights) {
        for (w, g) in w.iter_mut().zip(g) {
            *w -= learning_rate * g;
        }
    }
    for (b, g) in net.biases.iter_mut().zip(&grads.biases) {
        for (b, g) in b.iter_mut().zip(g) {
            *b -= learning_rate * g;
        }
    }
    let finite = net.weights.iter().chain(&net.biases).flatten().all(|v| v.is_finite());
    if !finite {
        return Err(Error::Numeric("parameter overflowed during SGD step".into()));
    }
    Ok(())
}

/// Loss and accuracy of a network over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 512;

pub fn evaluate(net: &SparseNetwork, dataset: &Dataset) -> Result<Evaluation> {
    let features = dataset.features();
    if features.rows() == 0 {
        return Err(Error::EmptyInput("evaluate on an empty dataset".into()));
    }
    if features.cols() != net.inputs() {
        return Err(Error::InputShape {
            expected: net.inputs(),
            got: features.cols(),
        });
    }
    let classes = net.classes();
    let labels = dataset.labels();
    let (mut loss, mut correct) = (0.0, 0usize);
    let indices: Vec<usize> = (0..features.rows()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = features.select_rows(chunk);
        let trace = forward(net, &batch)?;
        let logits = trace.pre.last().unwrap();
        for (b, &i) in chunk.iter().enumerate() {
            let y = labels[i];
            if y >= classes {
                return Err(Error::Label { label: y, classes });
            }
            let row = &logits[b * classes..(b + 1) * classes];
            loss += log_sum_exp(row) - row[y];
            if argmax(&trace.output()[b * classes..(b + 1) * classes]) == y {
                correct += 1;
            }
        }
    }
    let n = features.rows() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::LayerMask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn net_from(sizes: &[usize], layers: Vec<Vec<((u32, u32), f64)>>) -> SparseNetwork {
        let mut masks = Vec::new();
        let mut weights = Vec::new();
        for (k, mut conns) in layers.into_iter().enumerate() {
            conns.sort_by_key(|c| c.0);
            masks.push(LayerMask::from_pairs(sizes[k], sizes[k + 1], conns.iter().map(|c| c.0).collect()).unwrap());
            weights.push(conns.iter().map(|c| c.1).collect());
        }
        let budget = masks.iter().map(|m| m.len()).sum::<usize>().max(1);
        let mask = TopologyMask::from_layers(sizes.to_vec(), masks, budget, 1.0).unwrap();
        SparseNetwork::with_zero_biases(mask, weights).unwrap()
    }

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_layer_softmax() {
        let net = net_from(&[2, 2], vec![vec![((0, 0), 1.0), ((1, 1), 1.0)]]);
        let trace = forward(&net, &Matrix::new(1, 2, vec![2.0, 3.0]).unwrap()).unwrap();
        let out = trace.output();
        let e = 1.0f64.exp();
        assert!((out[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((out[1] - e / (1.0 + e)).abs() < 1e-15);
        assert!((out[0] - 0.2689414213699951).abs() < 1e-15);
    }

    #[test]
    fn no_connections_gives_uniform_output() {
        let mut net = net_from(&[3, 4], vec![vec![((0, 0), 1.0)]]);
        net.remove_connections(&[Connection::new(0, 0, 0)]).unwrap();
        let trace = forward(&net, &Matrix::new(2, 3, vec![5.0, -1.0, 2.0, 0.0, 9.0, 1.0]).unwrap()).unwrap();
        assert!(trace.output().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn forward_rejects_wrong_width_and_empty_batch() {
        let net = net_from(&[2, 2], vec![vec![((0, 0), 1.0)]]);
        assert!(matches!(
            forward(&net, &Matrix::zeros(1, 3)),
            Err(Error::InputShape { expected: 2, got: 3 })
        ));
        assert!(matches!(forward(&net, &Matrix::zeros(0, 2)), Err(Error::EmptyInput(_))));
    }

    /// Straightforward per-connection loop over a map representation.
    fn oracle_forward(net: &SparseNetwork, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in 0..net.depth() {
            let n_out = net.layer_sizes()[l + 1];
            let mut map: HashMap<(u32, u32), f64> = HashMap::new();
            for (&p, &w) in net.mask().layer(l).pairs().iter().zip(net.weights(l)) {
                map.insert(p, w);
            }
            let mut z = net.biases(l).to_vec();
            for j in 0..n_out {
                for i in 0..a.len() {
                    if let Some(w) = map.get(&(i as u32, j as u32)) {
                        z[j] += w * a[i];
                    }
                }
            }
            if l + 1 == net.depth() {
                let m = z.iter().cloned().fold(f64::MIN, f64::max);
                let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
                a = z.iter().map(|v| (v - m).exp() / s).collect();
            } else {
                a = z.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect();
            }
        }
        a
    }

    #[test]
    fn forward_matches_per_connection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = SparseNetwork::erdos_renyi(&[6, 8, 7, 4], 2.0, &mut rng).unwrap();
        for l in 0..3 {
            for n in 0..net.layer_sizes()[l + 1] {
                net.set_bias(l, n, rng.random_range(-0.5..0.5)).unwrap();
            }
        }
        let batch = random_batch(&mut rng, 5, 6);
        let trace = forward(&net, &batch).unwrap();
        for b in 0..5 {
            let expected = oracle_forward(&net, batch.row(b));
            let got = &trace.output()[b * 4..(b + 1) * 4];
            for (e, g) in expected.iter().zip(got) {
                assert!((e - g).abs() < 1e-12);
            }
            assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn output_depends_only_on_active_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = SparseNetwork::erdos_renyi(&[5, 6, 3], 1.5, &mut rng).unwrap();
        // Same active set and values, reconstructed from scratch.
        let b = SparseNetwork::new(
            a.mask().clone(),
            a.all_weights().to_vec(),
            (0..2).map(|l| a.biases(l).to_vec()).collect(),
        )
        .unwrap();
        let batch = random_batch(&mut rng, 4, 5);
        assert_eq!(forward(&a, &batch).unwrap().output(), forward(&b, &batch).unwrap().output());

        // Inactive coordinates cannot hold a value.
        let inactive = (0..5u32)
            .flat_map(|s| (0..6u32).map(move |t| Connection::new(0, s, t)))
            .find(|&c| a.weight(c).is_none())
            .unwrap();
        let mut c = a.clone();
        assert!(matches!(c.set_weight(inactive, 1.0), Err(Error::Consistency(_))));
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        let net = net_from(&[3, 10], vec![vec![]]);
        let trace = forward(&net, &Matrix::new(2, 3, vec![1.0; 6]).unwrap()).unwrap();
        let (loss, grads) = backward(&net, &trace, &[0, 7]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-15);
        assert!((loss - 2.302585092994046).abs() < 1e-12);
        assert!(grads.weights[0].is_empty());
    }

    #[test]
    fn zero_network_bias_gradient_is_uniform_minus_onehot() {
        let net = net_from(&[2, 3, 4], vec![vec![((0, 0), 0.0)], vec![((0, 1), 0.0)]]);
        let trace = forward(&net, &Matrix::new(1, 2, vec![0.3, -0.2]).unwrap()).unwrap();
        let (_, grads) = backward(&net, &trace, &[2]).unwrap();
        let expected = [0.25, 0.25, -0.75, 0.25];
        for (g, e) in grads.biases[1].iter().zip(expected) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let net = net_from(&[2, 3], vec![vec![((0, 0), 1.0)]]);
        let trace = forward(&net, &Matrix::zeros(1, 2)).unwrap();
        assert!(matches!(
            backward(&net, &trace, &[3]),
            Err(Error::Label { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut net = net_from(&[2, 3], vec![vec![((0, 0), 1.0), ((1, 1), 1.0)]]);
        let trace = forward(&net, &Matrix::zeros(1, 2)).unwrap();
        net.remove_connections(&[Connection::new(0, 1, 1)]).unwrap();
        assert!(matches!(backward(&net, &trace, &[0]), Err(Error::Consistency(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = SparseNetwork::erdos_renyi(&[4, 6, 5, 3], 2.0, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 3, 4);
        let labels = [0, 2, 1];
        let loss_at = |n: &SparseNetwork| {
            let t = forward(n, &batch).unwrap();
            backward(n, &t, &labels).unwrap().0
        };
        let trace = forward(&net, &batch).unwrap();
        let (_, grads) = backward(&net, &trace, &labels).unwrap();
        let h = 1e-6;
        for (l, layer) in net.mask().layers().iter().enumerate() {
            for (idx, &(s, t)) in layer.pairs().iter().enumerate() {
                let c = Connection::new(l, s, t);
                let w = net.weight(c).unwrap();
                let mut plus = net.clone();
                plus.set_weight(c, w + h).unwrap();
                let mut minus = net.clone();
                minus.set_weight(c, w - h).unwrap();
                let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                let g = grads.weights[l][idx];
                assert!((g - fd).abs() < 1e-7, "{c:?}: {g} vs {fd}");
            }
        }
    }

    #[test]
    fn dropout_gradients_use_the_same_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = SparseNetwork::erdos_renyi(&[3, 6, 2], 3.0, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 2, 3);
        let trace = forward_with_dropout(&net, &batch, 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (_, grads) = backward(&net, &trace, &[1, 0]).unwrap();
        // A dropped hidden unit receives no gradient on its incoming weights.
        let scale = trace.dropout[0].as_ref().unwrap();
        for (idx, &(_, t)) in net.mask().layer(0).pairs().iter().enumerate() {
            let dropped = (0..2).all(|b| scale[b * 6 + t as usize] == 0.0);
            if dropped {
                assert_eq!(grads.weights[0][idx], 0.0);
            }
        }
        assert!(forward_with_dropout(&net, &batch, 1.0, &mut rng).is_err());
    }

    #[test]
    fn sgd_arithmetic_and_zero_rate() {
        let mut net = net_from(&[1, 2], vec![vec![((0, 0), 0.5)]]);
        let trace = forward(&net, &Matrix::new(1, 1, vec![1.0]).unwrap()).unwrap();
        let (_, mut grads) = backward(&net, &trace, &[0]).unwrap();
        grads.weights[0][0] = 0.1;
        let before = net.clone();
        sgd_step(&mut net, &grads, 0.0).unwrap();
        assert_eq!(net, before);
        sgd_step(&mut net, &grads, 0.1).unwrap();
        assert!((net.weights(0)[0] - 0.49).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let mut net = net_from(&[1, 2], vec![vec![((0, 0), 0.5)]]);
        let trace = forward(&net, &Matrix::new(1, 1, vec![1.0]).unwrap()).unwrap();
        let (_, mut grads) = backward(&net, &trace, &[0]).unwrap();
        grads.weights[0][0] = f64::NAN;
        let before = net.clone();
        assert!(matches!(sgd_step(&mut net, &grads, 0.1), Err(Error::Numeric(_))));
        assert_eq!(net, before);
    }

    #[test]
    fn toy_problem_loss_decreases() {
        let mut net = net_from(&[2, 2], vec![vec![((0, 0), 0.1), ((0, 1), -0.1), ((1, 0), 0.05), ((1, 1), 0.2)]]);
        let batch = Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let labels = [0, 1];
        let mut losses = Vec::new();
        for _ in 0..101 {
            let trace = forward(&net, &batch).unwrap();
            let (loss, grads) = backward(&net, &trace, &labels).unwrap();
            losses.push(loss);
            sgd_step(&mut net, &grads, 0.5).unwrap();
        }
        let decreasing = losses.windows(2).filter(|w| w[1] < w[0]).count();
        assert!(decreasing >= 90, "{decreasing}");
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }
}

//! Independent oracles for the acceptance and integration tests. Nothing
//! here calls into the crate's forward pass or path dynamic programmes.

#![allow(dead_code)]

use sparse_evo::net::SparseNetwork;
use sparse_evo::topology::{Connection, TopologyMask};

/// Mean softmax cross-entropy of `net` on `inputs`, by direct loops over
/// the active connections.
pub fn oracle_loss(net: &SparseNetwork, inputs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        let z = oracle_logits(net, x);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - z[y];
    }
    total / inputs.len() as f64
}

pub fn oracle_logits(net: &SparseNetwork, x: &[f64]) -> Vec<f64> {
    let mask = net.mask();
    let mut act = x.to_vec();
    for l in 0..mask.depth() {
        let layer = mask.layer(l);
        let mut z = net.biases(l).to_vec();
        for (&(a, b), &w) in layer.pairs().iter().zip(net.weights(l)) {
            z[b as usize] += w * act[a as usize];
        }
        if l + 1 < mask.depth() {
            for v in z.iter_mut() {
                *v = v.max(0.0);
            }
        }
        act = z;
    }
    act
}

/// Double-double number `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd { hi: s, lo: (a - (s - bb)) + (b - bb) }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

impl Dd {
    pub fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let s = two_sum(self.hi, o.hi);
        let t = two_sum(self.lo, o.lo);
        let u = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(u.hi, u.lo + t.lo)
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn mul_f64(self, w: f64) -> Dd {
        let p = self.hi * w;
        let e = self.hi.mul_add(w, -p);
        quick_two_sum(p, e + self.lo * w)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Logits of `net` on `x` in double-double arithmetic.
pub fn oracle_logits_dd(net: &SparseNetwork, x: &[f64]) -> Vec<Dd> {
    let mask = net.mask();
    let mut act: Vec<Dd> = x.iter().map(|&v| Dd::from(v)).collect();
    for l in 0..mask.depth() {
        let layer = mask.layer(l);
        let mut z: Vec<Dd> = net.biases(l).iter().map(|&b| Dd::from(b)).collect();
        for (&(a, b), &w) in layer.pairs().iter().zip(net.weights(l)) {
            z[b as usize] = z[b as usize].add(act[a as usize].mul_f64(w));
        }
        if l + 1 < mask.depth() {
            for v in z.iter_mut() {
                if v.hi < 0.0 || (v.hi == 0.0 && v.lo <= 0.0) {
                    *v = Dd::from(0.0);
                }
            }
        }
        act = z;
    }
    act
}

/// `oracle_loss(plus) - oracle_loss(minus)` without cancellation: with
/// `d = z+ - z-` per sample, the loss change is
/// `ln(1 + Σ softmax(z-)_i expm1(d_i)) - d_y`.
pub fn loss_difference(plus: &SparseNetwork, minus: &SparseNetwork, inputs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (x, &y) in inputs.iter().zip(labels) {
        let zp = oracle_logits_dd(plus, x);
        let zm = oracle_logits_dd(minus, x);
        let d: Vec<f64> = zp.iter().zip(&zm).map(|(p, m)| p.add(m.neg()).to_f64()).collect();
        let zm: Vec<f64> = zm.iter().map(|v| v.to_f64()).collect();
        let top = zm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = zm.iter().map(|v| (v - top).exp()).collect();
        let norm: f64 = e.iter().sum();
        let s: f64 = e.iter().zip(&d).map(|(ei, di)| ei / norm * di.exp_m1()).sum();
        total += s.ln_1p() - d[y];
    }
    total / inputs.len() as f64
}

/// Central differences of the loss for every weight and bias, with the
/// loss change evaluated by [`loss_difference`].
pub fn finite_differences(
    net: &SparseNetwork,
    inputs: &[Vec<f64>],
    labels: &[usize],
    h: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (mut plus, mut minus) = (net.clone(), net.clone());
    let mut weights = Vec::new();
    for l in 0..net.depth() {
        let mut row = Vec::new();
        for (i, &(a, b)) in net.mask().layer(l).pairs().iter().enumerate() {
            let c = Connection::new(l, a, b);
            let w = net.weights(l)[i];
            let (wp, wm) = (w + h, w - h);
            plus.set_weight(c, wp).unwrap();
            minus.set_weight(c, wm).unwrap();
            row.push(loss_difference(&plus, &minus, inputs, labels) / (wp - wm));
            plus.set_weight(c, w).unwrap();
            minus.set_weight(c, w).unwrap();
        }
        weights.push(row);
    }
    let mut biases = Vec::new();
    for l in 0..net.depth() {
        let mut row = Vec::new();
        for j in 0..net.biases(l).len() {
            let b = net.biases(l)[j];
            let (bp, bm) = (b + h, b - h);
            plus.set_bias(l, j, bp).unwrap();
            minus.set_bias(l, j, bm).unwrap();
            row.push(loss_difference(&plus, &minus, inputs, labels) / (bp - bm));
            plus.set_bias(l, j, b).unwrap();
            minus.set_bias(l, j, b).unwrap();
        }
        biases.push(row);
    }
    (weights, biases)
}

/// `|analytic - fd| / max(1e-8, |fd|)`.
pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(1e-8)
}

/// Every input-to-output path as its node sequence, in lexicographic order.
pub fn enumerate_paths(mask: &TopologyMask) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.layer_sizes()[0] as u32 {
        stack.push(start);
        extend(mask, &mut stack, &mut out);
        stack.pop();
    }
    out
}

fn extend(mask: &TopologyMask, stack: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let l = stack.len() - 1;
    if l == mask.depth() {
        out.push(stack.clone());
        return;
    }
    let from = *stack.last().unwrap();
    for &(a, b) in mask.layer(l).pairs() {
        if a == from {
            stack.push(b);
            extend(mask, stack, out);
            stack.pop();
        }
    }
}

/// Factor of connection `(l, a, b)` looked up by scanning the layer.
pub fn factor_of(mask: &TopologyMask, factors: &[Vec<f64>], l: usize, a: u32, b: u32) -> f64 {
    let i = mask.layer(l).pairs().iter().position(|&p| p == (a, b)).unwrap();
    factors[l][i]
}

/// Path factors in layer order.
pub fn path_factors(mask: &TopologyMask, factors: &[Vec<f64>], nodes: &[u32]) -> Vec<f64> {
    (0..nodes.len() - 1)
        .map(|l| factor_of(mask, factors, l, nodes[l], nodes[l + 1]))
        .collect()
}

/// Exact `sum(-ln f)` scaled by 2^106, or `None` when a factor is zero.
/// Each term is decomposed from its bit pattern into mantissa and exponent.
pub fn oracle_cost(factors: &[f64]) -> Option<i128> {
    if factors.contains(&0.0) {
        return None;
    }
    Some(factors.iter().map(|&f| scaled_exact(-f.ln())).sum())
}

fn scaled_exact(x: f64) -> i128 {
    if x == 0.0 {
        return 0;
    }
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let biased = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i128;
    let (mantissa, exp) = if biased == 0 { (frac, -1074) } else { (frac | 1 << 52, biased - 1075) };
    let shift = exp + 106;
    let magnitude = if shift >= 0 {
        mantissa << shift
    } else {
        let s = -shift;
        let (q, r) = (mantissa >> s, mantissa & ((1 << s) - 1));
        let half = 1i128 << (s - 1);
        q + i128::from(r > half || (r == half && q & 1 == 1))
    };
    if negative {
        -magnitude
    } else {
        magnitude
    }
}

/// Weakest-first order: zero-factor paths first, then larger exact cost,
/// ties broken by node sequence.
pub fn weakest_order(a: &(Option<i128>, &Vec<u32>), b: &(Option<i128>, &Vec<u32>)) -> std::cmp::Ordering {
    use std::cmp::Ordering::*;
    match (a.0, b.0) {
        (None, None) => a.1.cmp(b.1),
        (None, Some(_)) => Less,
        (Some(_), None) => Greater,
        (Some(x), Some(y)) => y.cmp(&x).then_with(|| a.1.cmp(b.1)),
    }
}

pub fn relative_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

//! Lossless text checkpoints.
//!
//! ```text
//! sparse-evo-checkpoint 1
//! layers 20 64 3
//! budget 1234
//! epsilon 4014000000000000
//! connections 1234
//! 0 3 17 bfb2c6b7f1a8d3e0
//! ...
//! biases 1 <64 hex values>
//! biases 2 <3 hex values>
//! ```
//!
//! Reals are stored as the hexadecimal bit pattern of the `f64`, so a load
//! reproduces the saved network bit for bit. Connection lines follow the
//! mask's `(layer, source, target)` order.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::SparseNetwork;
use crate::topology::{LayerMask, TopologyMask};

pub const CHECKPOINT_MAGIC: &str = "sparse-evo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

pub fn render_checkpoint(net: &SparseNetwork) -> String {
    let mask = net.mask();
    let mut s = String::new();
    writeln!(s, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").unwrap();
    let sizes: Vec<String> = mask.layer_sizes().iter().map(usize::to_string).collect();
    writeln!(s, "layers {}", sizes.join(" ")).unwrap();
    writeln!(s, "budget {}", mask.budget()).unwrap();
    writeln!(s, "epsilon {}", hex(mask.epsilon())).unwrap();
    writeln!(s, "connections {}", mask.active_count()).unwrap();
    for (l, layer) in mask.layers().iter().enumerate() {
        for (&(a, b), &w) in layer.pairs().iter().zip(net.weights(l)) {
            writeln!(s, "{l} {a} {b} {}", hex(w)).unwrap();
        }
    }
    for l in 0..mask.depth() {
        write!(s, "biases {}", l + 1).unwrap();
        for &b in net.biases(l) {
            write!(s, " {}", hex(b)).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn save_checkpoint(net: &SparseNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SparseNetwork> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}

/// Parses checkpoint text; `path` only labels errors.
pub fn parse_checkpoint(text: &str, path: &Path) -> Result<SparseNetwork> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let bad = |line: usize, msg: String| Error::format(path, format!("line {line}"), msg);

    let header = lines.next().map_or("", |(_, l)| l);
    match header.split_once(' ') {
        Some((CHECKPOINT_MAGIC, v)) if v.trim() == CHECKPOINT_VERSION.to_string() => {}
        _ => {
            return Err(Error::Version(format!(
                "{}: expected \"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\", found {header:?}",
                path.display()
            )))
        }
    }

    let mut field = |name: &str| -> Result<(usize, Vec<String>)> {
        let (n, line) = lines.next().ok_or_else(|| bad(0, format!("missing {name} line")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(name) {
            return Err(bad(n, format!("expected {name}")));
        }
        Ok((n, parts.map(str::to_string).collect()))
    };
    let uint = |n: usize, s: &str| s.parse::<usize>().map_err(|_| bad(n, format!("not an integer: {s:?}")));
    let real = |n: usize, s: &str| {
        u64::from_str_radix(s, 16)
            .ok()
            .filter(|_| s.len() == 16)
            .map(f64::from_bits)
            .ok_or_else(|| bad(n, format!("not a 16-digit hex value: {s:?}")))
    };

    let (n, sizes) = field("layers")?;
    let sizes: Vec<usize> = sizes.iter().map(|s| uint(n, s)).collect::<Result<_>>()?;
    if sizes.len() < 2 {
        return Err(bad(n, "need at least two layers".into()));
    }
    let one = |n: usize, v: Vec<String>| if v.len() == 1 { Ok(v.into_iter().next().unwrap()) } else { Err(bad(n, "expected one value".into())) };
    let (n, v) = field("budget")?;
    let budget = uint(n, &one(n, v)?)?;
    let (n, v) = field("epsilon")?;
    let epsilon = real(n, &one(n, v)?)?;
    let (n, v) = field("connections")?;
    let count = uint(n, &one(n, v)?)?;
    drop(field);

    let depth = sizes.len() - 1;
    let mut pairs: Vec<Vec<(u32, u32)>> = vec![Vec::new(); depth];
    let mut weights: Vec<Vec<f64>> = vec![Vec::new(); depth];
    let mut last = None;
    for _ in 0..count {
        let (n, line) = lines.next().ok_or_else(|| bad(0, format!("expected {count} connection lines")))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(bad(n, "expected `layer source target weight`".into()));
        }
        let (l, a, b) = (uint(n, parts[0])?, uint(n, parts[1])?, uint(n, parts[2])?);
        if l >= depth || a >= sizes[l] || b >= sizes[l + 1] {
            return Err(bad(n, format!("connection ({l}, {a}, {b}) out of range")));
        }
        if last.is_some_and(|prev| prev >= (l, a, b)) {
            return Err(bad(n, "connections out of order".into()));
        }
        last = Some((l, a, b));
        pairs[l].push((a as u32, b as u32));
        weights[l].push(real(n, parts[3])?);
    }
    let mut biases = Vec::with_capacity(depth);
    for l in 0..depth {
        let (n, line) = lines.next().ok_or_else(|| bad(0, "missing biases".into()))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.first() != Some(&"biases") || parts.get(1) != Some(&(l + 1).to_string().as_str()) {
            return Err(bad(n, format!("expected `biases {}`", l + 1)));
        }
        let values: Vec<f64> = parts[2..].iter().map(|s| real(n, s)).collect::<Result<_>>()?;
        if values.len() != sizes[l + 1] {
            return Err(bad(n, format!("expected {} biases, got {}", sizes[l + 1], values.len())));
        }
        biases.push(values);
    }
    if let Some((n, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
        return Err(bad(n, "unexpected trailing content".into()));
    }

    let layers = pairs
        .into_iter()
        .enumerate()
        .map(|(l, p)| LayerMask::from_pairs(sizes[l], sizes[l + 1], p))
        .collect::<Result<Vec<_>>>()?;
    let mask = TopologyMask::from_layers(sizes, layers, budget, epsilon)?;
    SparseNetwork::new(mask, weights, biases)
}

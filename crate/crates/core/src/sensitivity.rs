//! Sensitivity of the loss to each connection, from backprop gradients.
//!
//! The per-connection measure is `mean|∂f/∂W| / |W|`, where the mean runs
//! over the epoch's mini-batches. A neuron's sensitivity sums the measure
//! over its outgoing connections. Everything is linear in the number of
//! active connections.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evolution::select_lowest;
use crate::net::{GradientSet, SparseNetwork};
use crate::topology::{Connection, TopologyMask};

/// Floor on `|W|` in the denominator.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// How gradient and weight combine into the per-connection measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensitivityForm {
    /// `mean|g| / max(|W|, 1e-8)`.
    #[default]
    Paper,
    /// `mean|g| * |W|`, the classical relative sensitivity.
    Classical,
}

impl FromStr for SensitivityForm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "paper" => Ok(SensitivityForm::Paper),
            "classical" => Ok(SensitivityForm::Classical),
            other => Err(format!("unknown sensitivity form {other:?} (expected paper or classical)")),
        }
    }
}

impl std::fmt::Display for SensitivityForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SensitivityForm::Paper => "paper",
            SensitivityForm::Classical => "classical",
        })
    }
}

/// Running mean of absolute gradients per active connection.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityAccumulator {
    sums: Vec<Vec<f64>>,
    batches: usize,
    version: u64,
}

impl SensitivityAccumulator {
    pub fn new(net: &SparseNetwork) -> Self {
        SensitivityAccumulator {
            sums: net.all_weights().iter().map(|w| vec![0.0; w.len()]).collect(),
            batches: 0,
            version: net.version(),
        }
    }

    /// Clears all statistics and re-aligns with the network's topology.
    pub fn reset(&mut self, net: &SparseNetwork) {
        *self = SensitivityAccumulator::new(net);
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn accumulate(&mut self, grads: &GradientSet) -> Result<()> {
        let aligned = grads.version() == self.version
            && grads.weights.len() == self.sums.len()
            && grads.weights.iter().zip(&self.sums).all(|(g, s)| g.len() == s.len());
        if !aligned {
            return Err(Error::Consistency(
                "gradients do not match the accumulator's topology".into(),
            ));
        }
        for (sum, g) in self.sums.iter_mut().zip(&grads.weights) {
            for (s, g) in sum.iter_mut().zip(g) {
                *s += g.abs();
            }
        }
        self.batches += 1;
        Ok(())
    }

    /// Mean absolute gradient per connection.
    pub fn mean_abs_gradients(&self) -> Result<Vec<Vec<f64>>> {
        if self.batches == 0 {
            return Err(Error::Parameter("sensitivity queried before any batch was accumulated".into()));
        }
        let n = self.batches as f64;
        Ok(self.sums.iter().map(|s| s.iter().map(|v| v / n).collect()).collect())
    }
}

/// Per-connection sensitivity, aligned with the network's mask.
pub fn connection_sensitivity(
    acc: &SensitivityAccumulator,
    net: &SparseNetwork,
    form: SensitivityForm,
) -> Result<Vec<Vec<f64>>> {
    if acc.version != net.version() {
        return Err(Error::Consistency("accumulator belongs to a different topology".into()));
    }
    let means = acc.mean_abs_gradients()?;
    Ok(means
        .iter()
        .zip(net.all_weights())
        .map(|(m, w)| {
            m.iter()
                .zip(w)
                .map(|(g, w)| match form {
                    SensitivityForm::Paper => g / w.abs().max(WEIGHT_FLOOR),
                    SensitivityForm::Classical => g * w.abs(),
                })
                .collect()
        })
        .collect())
}

/// Sum of outgoing connection sensitivities for every neuron. Output
/// neurons have no outgoing connections and get 0.
pub fn node_sensitivity(values: &[Vec<f64>], mask: &TopologyMask) -> Vec<Vec<f64>> {
    let mut nodes: Vec<Vec<f64>> = mask.layer_sizes().iter().map(|&n| vec![0.0; n]).collect();
    for (l, layer) in mask.layers().iter().enumerate() {
        for (&(s, _), &v) in layer.pairs().iter().zip(&values[l]) {
            nodes[l][s as usize] += v;
        }
    }
    nodes
}

/// The `ceil(zeta * active)` least sensitive connections, ties broken by
/// `(layer, source, target)`. The last connection of a layer is never taken.
pub fn select_removals_by_sensitivity(
    values: &[Vec<f64>],
    mask: &TopologyMask,
    zeta: f64,
) -> Result<Vec<Connection>> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::Parameter(format!("zeta must lie in (0, 1), got {zeta}")));
    }
    let count = (zeta * mask.active_count() as f64).ceil() as usize;
    let candidates = mask.connections().zip(values.iter().flatten().copied()).map(|(c, v)| (v, c)).collect();
    Ok(select_lowest(candidates, count, mask))
}

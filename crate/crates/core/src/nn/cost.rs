//! Parameter and FLOPs accounting.
//!
//! FLOPs count one multiply-accumulate as two operations. Bias additions,
//! activations, pooling and LSTM gate nonlinearities are not counted.

use std::fmt::Write as _;

use super::params::ParamRegistry;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: String,
    /// Weight and bias elements.
    pub params: usize,
    /// Elements whose mask entry is zero.
    pub pruned: usize,
    /// Per-sample FLOPs of one forward pass.
    pub flops: usize,
}

impl LayerCost {
    /// Sums every registry entry under `prefix.` into one row.
    pub fn from_params(
        reg: &ParamRegistry,
        prefix: &str,
        kind: &str,
        flops: usize,
    ) -> Result<Self> {
        let dotted = format!("{prefix}.");
        let (mut params, mut pruned) = (0, 0);
        for (name, p) in reg.iter() {
            if name.starts_with(&dotted) {
                params += p.value.len();
                pruned += p.pruned_count();
            }
        }
        Ok(LayerCost {
            name: prefix.to_string(),
            kind: kind.to_string(),
            params,
            pruned,
            flops,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    /// Description of the input the FLOPs were counted at.
    pub input: String,
    pub layers: Vec<LayerCost>,
}

impl CostReport {
    pub fn total_params(&self) -> usize {
        self.layers.iter().map(|l| l.params).sum()
    }

    pub fn total_pruned(&self) -> usize {
        self.layers.iter().map(|l| l.pruned).sum()
    }

    pub fn total_flops(&self) -> usize {
        self.layers.iter().map(|l| l.flops).sum()
    }

    pub fn pruned_fraction(&self) -> f64 {
        let total = self.total_params();
        if total == 0 {
            0.0
        } else {
            self.total_pruned() as f64 / total as f64
        }
    }

    /// CSV with a convention comment line, a header row, one row per layer
    /// and a closing `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# flops per sample, 1 multiply-accumulate = 2 FLOPs; input {}",
            self.input
        );
        out.push_str("layer,kind,params,pruned,flops\n");
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                l.name, l.kind, l.params, l.pruned, l.flops
            );
        }
        let _ = writeln!(
            out,
            "total,all,{},{},{}",
            self.total_params(),
            self.total_pruned(),
            self.total_flops()
        );
        out
    }
}

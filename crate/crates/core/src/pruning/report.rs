use std::fmt::Write as _;

use crate::nn::{LayerType, ParamRegistry};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TypeCount {
    pub pruned: usize,
    pub total: usize,
}

impl TypeCount {
    pub fn percent(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            100.0 * self.pruned as f64 / self.total as f64
        }
    }
}

/// Pruned share of prunable weights per layer family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SparsityReport {
    pub conv: TypeCount,
    pub lstm: TypeCount,
    pub fc: TypeCount,
}

impl SparsityReport {
    pub fn total(&self) -> TypeCount {
        TypeCount {
            pruned: self.conv.pruned + self.lstm.pruned + self.fc.pruned,
            total: self.conv.total + self.lstm.total + self.fc.total,
        }
    }

    /// Largest minus smallest percentage over the families that have weights.
    pub fn spread(&self) -> f64 {
        let p: Vec<f64> = [self.conv, self.lstm, self.fc]
            .iter()
            .filter(|c| c.total > 0)
            .map(TypeCount::percent)
            .collect();
        let hi = p.iter().copied().fold(f64::MIN, f64::max);
        let lo = p.iter().copied().fold(f64::MAX, f64::min);
        if p.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }

    pub const CSV_HEADER: &'static str =
        "model,conv_pruned_pct,lstm_pruned_pct,fc_pruned_pct,total_pruned_pct";

    pub fn csv_row(&self, model: &str) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{model},{:.2},{:.2},{:.2},{:.2}",
            self.conv.percent(),
            self.lstm.percent(),
            self.fc.percent(),
            self.total().percent()
        );
        s
    }
}

pub fn sparsity_report(reg: &ParamRegistry) -> SparsityReport {
    let zero = TypeCount {
        pruned: 0,
        total: 0,
    };
    let mut r = SparsityReport {
        conv: zero,
        lstm: zero,
        fc: zero,
    };
    for (_, p) in reg.iter().filter(|(_, p)| p.prunable()) {
        let slot = match p.layer {
            LayerType::Conv => &mut r.conv,
            LayerType::Lstm => &mut r.lstm,
            LayerType::Fc => &mut r.fc,
        };
        slot.pruned += p.pruned_count();
        slot.total += p.value.len();
    }
    r
}

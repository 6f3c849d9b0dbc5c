use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamRegistry;
use crate::tensor::Tensor;

/// Selects the registry entries a pruning pass may touch. Patterns are
/// exact names, `prefix.*` globs or `*`; biases are never selected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PruneScope {
    patterns: Vec<String>,
}

impl PruneScope {
    pub fn all() -> Self {
        PruneScope {
            patterns: vec!["*".into()],
        }
    }

    /// Everything under `prefix.`.
    pub fn prefix(prefix: &str) -> Self {
        PruneScope {
            patterns: vec![format!("{prefix}.*")],
        }
    }

    pub fn patterns(patterns: &[&str]) -> Self {
        PruneScope {
            patterns: patterns.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn matches(&self, name: &str) -> bool {
        self.patterns.iter().any(|p| match p.strip_suffix('*') {
            Some("") => true,
            Some(prefix) => name.starts_with(prefix),
            None => name == p,
        })
    }

    /// Prunable parameter names in scope, in registry order.
    pub fn select<'a>(&self, reg: &'a ParamRegistry) -> Vec<&'a str> {
        reg.iter()
            .filter(|(n, p)| p.prunable() && self.matches(n))
            .map(|(n, _)| n)
            .collect()
    }
}

impl fmt::Display for PruneScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.patterns.join("|"))
    }
}

/// How surviving weights are ranked for removal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ranking {
    /// One magnitude ranking across every scoped weight.
    #[default]
    Global,
    /// Each scoped weight tensor pruned to the same fraction on its own.
    PerLayer,
}

/// `(pruned, total)` over scoped prunable weights.
pub fn scoped_counts(reg: &ParamRegistry, scope: &PruneScope) -> (usize, usize) {
    scope.select(reg).iter().fold((0, 0), |(p, t), n| {
        let param = reg.get(n).expect("selected names exist");
        (p + param.pruned_count(), t + param.value.len())
    })
}

pub fn scoped_sparsity(reg: &ParamRegistry, scope: &PruneScope) -> f64 {
    let (p, t) = scoped_counts(reg, scope);
    if t == 0 {
        0.0
    } else {
        p as f64 / t as f64
    }
}

/// Masks for every scoped weight, current masks carried over.
pub type MaskSet = BTreeMap<String, Tensor>;

fn current_masks(reg: &ParamRegistry, names: &[&str]) -> MaskSet {
    names
        .iter()
        .map(|&n| {
            let p = reg.get(n).expect("selected names exist");
            let m = p
                .mask
                .clone()
                .unwrap_or_else(|| Tensor::ones(p.value.shape()));
            (n.to_string(), m)
        })
        .collect()
}

/// Zeroes the `remove` smallest-magnitude survivors among `names`. Ties go
/// to the lowest flat index, with names in registry order.
fn prune_smallest(reg: &ParamRegistry, names: &[&str], masks: &mut MaskSet, remove: usize) {
    if remove == 0 {
        return;
    }
    let mut pool: Vec<(f64, usize, usize)> = Vec::new();
    for (slot, &n) in names.iter().enumerate() {
        let w = reg.get(n).expect("selected names exist").value.data();
        let m = masks[n].data();
        pool.extend(
            w.iter()
                .zip(m)
                .enumerate()
                .filter(|(_, (_, &k))| k != 0.0)
                .map(|(i, (v, _))| (v.abs(), slot, i)),
        );
    }
    let remove = remove.min(pool.len());
    pool.select_nth_unstable_by(remove.saturating_sub(1), |a, b| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });
    for &(_, slot, i) in &pool[..remove] {
        masks.get_mut(names[slot]).expect("mask present").data_mut()[i] = 0.0;
    }
}

/// Masks whose scoped pruned count is exactly `target` weights.
pub fn mask_to_count(
    reg: &ParamRegistry,
    scope: &PruneScope,
    target: usize,
    ranking: Ranking,
) -> Result<MaskSet> {
    let names = scope.select(reg);
    if names.is_empty() {
        return Err(Error::contract(format!(
            "pruning scope {scope} selects no weights"
        )));
    }
    let (pruned, total) = scoped_counts(reg, scope);
    if target < pruned {
        return Err(Error::contract(format!(
            "target of {target} pruned weights is below the current {pruned}"
        )));
    }
    if target > total {
        return Err(Error::contract(format!(
            "target {target} exceeds the {total} weights in scope"
        )));
    }
    let mut masks = current_masks(reg, &names);
    match ranking {
        Ranking::Global => prune_smallest(reg, &names, &mut masks, target - pruned),
        Ranking::PerLayer => {
            let frac = target as f64 / total as f64;
            for &n in &names {
                let p = reg.get(n).expect("selected names exist");
                let want = ((frac * p.value.len() as f64) + 1e-9).floor() as usize;
                let have = p.pruned_count();
                prune_smallest(reg, &[n], &mut masks, want.saturating_sub(have));
            }
        }
    }
    Ok(masks)
}

/// Extends masks until the scoped pruned fraction reaches `sparsity`,
/// removing `floor(sparsity * total)` weights in all.
pub fn magnitude_mask(reg: &ParamRegistry, scope: &PruneScope, sparsity: f64) -> Result<MaskSet> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::contract(format!(
            "target sparsity {sparsity} outside [0, 1)"
        )));
    }
    let (pruned, total) = scoped_counts(reg, scope);
    if total > 0 && sparsity + 1e-12 < pruned as f64 / total as f64 {
        return Err(Error::contract(format!(
            "target sparsity {sparsity} is below the current {}",
            pruned as f64 / total as f64
        )));
    }
    let target = ((sparsity * total as f64) + 1e-9).floor() as usize;
    mask_to_count(reg, scope, target.max(pruned), Ranking::Global)
}

/// Installs masks and zeroes the weights they remove.
pub fn install_masks(reg: &mut ParamRegistry, masks: &MaskSet) -> Result<()> {
    for (name, m) in masks {
        reg.set_mask(name, m.clone())?;
    }
    reg.apply_masks();
    Ok(())
}

/// Weights removed by one pruning event at rate `p` from `survivors`.
pub fn event_removal(survivors: usize, p: f64) -> usize {
    ((p * survivors as f64) + 1e-9).floor() as usize
}

/// Scoped pruned counts after 0, 1, ..., `events` pruning events:
/// `survivors(n) = survivors(n-1) - floor(p * survivors(n-1))`.
pub fn schedule(total: usize, p: f64, events: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(events + 1);
    let mut survivors = total;
    out.push(0);
    for _ in 0..events {
        survivors -= event_removal(survivors, p);
        out.push(total - survivors);
    }
    out
}

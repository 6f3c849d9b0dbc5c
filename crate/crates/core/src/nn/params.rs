use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Layer family a parameter belongs to, used for per-type sparsity tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerType {
    Conv,
    Lstm,
    Fc,
}

impl LayerType {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerType::Conv => "conv",
            LayerType::Lstm => "lstm",
            LayerType::Fc => "fc",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamRole {
    Weight,
    Bias,
}

/// One named trainable tensor and its optional binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub mask: Option<Tensor>,
    pub layer: LayerType,
    pub role: ParamRole,
}

impl Param {
    /// Weights are prunable; biases never are.
    pub fn prunable(&self) -> bool {
        self.role == ParamRole::Weight
    }

    pub fn pruned_count(&self) -> usize {
        self.mask
            .as_ref()
            .map_or(0, |m| m.data().iter().filter(|&&v| v == 0.0).count())
    }

    /// Weight with the mask applied.
    pub fn effective(&self) -> Tensor {
        match &self.mask {
            None => self.value.clone(),
            Some(m) => {
                let data = self
                    .value
                    .data()
                    .iter()
                    .zip(m.data())
                    .map(|(w, k)| w * k)
                    .collect();
                Tensor::from_parts(self.value.shape().to_vec(), data)
            }
        }
    }
}

/// Name → parameter map for one model. Names iterate in sorted order, which
/// fixes the flat index order of the global pruning pool.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamRegistry {
    entries: BTreeMap<String, Param>,
}

/// Graph handles for the effective parameters of one forward pass.
#[derive(Debug, Default)]
pub struct Bindings {
    vars: HashMap<String, Var>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter {name} not bound")))
    }
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        name: &str,
        value: Tensor,
        layer: LayerType,
        role: ParamRole,
    ) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(
            name.to_string(),
            Param {
                value,
                mask: None,
                layer,
                role,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn param(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        Ok(&mut self.param_mut(name)?.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count over every parameter.
    pub fn total_elements(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Installs a mask. It must match the weight's shape and hold only 0/1.
    pub fn set_mask(&mut self, name: &str, mask: Tensor) -> Result<()> {
        let p = self.param_mut(name)?;
        if mask.shape() != p.value.shape() {
            return Err(Error::shape(
                "set_mask",
                format!("mask {:?} for weight {:?}", mask.shape(), p.value.shape()),
            ));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::contract(format!(
                "mask for {name} has values outside {{0, 1}}"
            )));
        }
        if !p.prunable() && mask.data().contains(&0.0) {
            return Err(Error::contract(format!("{name} is not prunable")));
        }
        p.mask = Some(mask);
        Ok(())
    }

    /// Zeroes every masked-out weight in place.
    pub fn apply_masks(&mut self) {
        for p in self.entries.values_mut() {
            if let Some(m) = &p.mask {
                for (w, &k) in p.value.data_mut().iter_mut().zip(m.data()) {
                    if k == 0.0 {
                        *w = 0.0;
                    }
                }
            }
        }
    }

    /// Binds every parameter as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Result<Bindings> {
        self.bind_with(g, |_| true)
    }

    /// Binds parameters, tracking gradients only where `trainable(name)`.
    /// Masked parameters are bound as `weight * mask`.
    pub fn bind_with(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Result<Bindings> {
        let mut vars = HashMap::with_capacity(self.entries.len());
        for (name, p) in &self.entries {
            let var = if trainable(name) {
                let leaf = g.param(name, p.value.clone())?;
                match &p.mask {
                    Some(m) => {
                        let mv = g.constant(m.clone())?;
                        g.mul(leaf, mv)?
                    }
                    None => leaf,
                }
            } else {
                g.constant(p.effective())?
            };
            vars.insert(name.clone(), var);
        }
        Ok(Bindings { vars })
    }
}

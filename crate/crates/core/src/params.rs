//! Named parameter storage.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use ursct_tensor::{Element, Graph, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with the given std, resampled outside two standard deviations.
    TruncNormal(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: impl Into<Vec<usize>>, init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.into(),
            init,
        }
    }
}

/// Parameters keyed by stable dotted names, iterated in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    tensors: BTreeMap<String, Tensor<F>>,
}

impl<F: Element> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Element> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn init(specs: &[ParamSpec], rng: &mut impl Rng) -> Result<Self> {
        let mut store = Self::new();
        for spec in specs {
            let n: usize = spec.shape.iter().product();
            let data: Vec<F> = match spec.init {
                Init::Zeros => vec![F::zero(); n],
                Init::Ones => vec![F::one(); n],
                Init::TruncNormal(std) => {
                    let normal = Normal::new(0.0, std).map_err(|e| Error::config(format!("init std {std}: {e}")))?;
                    (0..n)
                        .map(|_| loop {
                            let v: f64 = normal.sample(rng);
                            if v.abs() <= 2.0 * std {
                                break F::from_f64(v);
                            }
                        })
                        .collect()
                }
            };
            store.insert(&spec.name, Tensor::new(spec.shape.clone(), data)?)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: &str, t: Tensor<F>) -> Result<()> {
        if self.tensors.insert(name.to_string(), t).is_some() {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    /// Replaces an existing tensor, keeping its shape contract.
    pub fn set(&mut self, name: &str, t: Tensor<F>) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != t.shape() {
            return Err(Error::config(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        *slot = t;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<G: Element>(&self) -> ParamStore<G> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Puts every parameter on `g`, as gradient-collecting leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph<F>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| (k.clone(), g.leaf(v.clone(), trainable)))
            .collect();
        Bound { vars }
    }

    /// Gradients of a bound parameter set after `backward`, by name.
    pub fn grads(&self, g: &Graph<F>, bound: &Bound) -> Result<BTreeMap<String, Tensor<F>>> {
        let mut out = BTreeMap::new();
        for name in self.tensors.keys() {
            let var = bound.get(name)?;
            let grad = g
                .grad(var)
                .ok_or_else(|| Error::Numeric(format!("parameter `{name}` received no gradient")))?;
            out.insert(name.clone(), grad.clone());
        }
        Ok(out)
    }
}

/// Graph handles of a bound [`ParamStore`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Binds names to existing graph variables.
    pub fn from_vars(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

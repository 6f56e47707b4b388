use std::collections::BTreeMap;

use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::{Graph, Var};

/// Lazily places named parameters on a graph. Parameters for which
/// `trainable` returns false become constants and receive no gradient.
pub struct Binder<'a> {
    store: &'a ParamStore,
    trainable: Box<dyn Fn(&str) -> bool + 'a>,
    vars: BTreeMap<String, Var>,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore, trainable: impl Fn(&str) -> bool + 'a) -> Self {
        Self {
            store,
            trainable: Box::new(trainable),
            vars: BTreeMap::new(),
        }
    }

    /// Every parameter is a constant.
    pub fn frozen(store: &'a ParamStore) -> Self {
        Self::new(store, |_| false)
    }

    pub fn var(&mut self, g: &mut Graph, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self.store.get(name)?.clone();
        let v = g.leaf(value, (self.trainable)(name));
        self.vars.insert(name.to_owned(), v);
        Ok(v)
    }

    /// `(weight, bias)` of the convolution stored under `prefix`.
    pub fn conv(&mut self, g: &mut Graph, prefix: &str) -> Result<(Var, Var)> {
        Ok((
            self.var(g, &format!("{prefix}.weight"))?,
            self.var(g, &format!("{prefix}.bias"))?,
        ))
    }

    pub fn bound(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

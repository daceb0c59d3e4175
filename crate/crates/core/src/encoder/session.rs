use std::collections::BTreeMap;

use diffcore::{Gradients, Graph, Real, Tensor, Var};

use super::{ModelError, ParamStore};

/// A tape plus lazily bound parameters. Parameters are inserted the first
/// time a forward pass asks for them, so unused branches never appear on the
/// tape and never receive gradients.
pub struct Session<'p, T: Real> {
    pub g: Graph<T>,
    params: &'p ParamStore<T>,
    bound: BTreeMap<String, Var>,
    trainable: bool,
}

impl<'p, T: Real> Session<'p, T> {
    /// Parameters are differentiable leaves.
    pub fn train(params: &'p ParamStore<T>) -> Self {
        Self::with_mode(params, true)
    }

    /// Parameters are constants; nothing is differentiable.
    pub fn eval(params: &'p ParamStore<T>) -> Self {
        Self::with_mode(params, false)
    }

    fn with_mode(params: &'p ParamStore<T>, trainable: bool) -> Self {
        Self {
            g: Graph::new(),
            params,
            bound: BTreeMap::new(),
            trainable,
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn p(&mut self, name: &str) -> Result<Var, ModelError> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))?
            .clone();
        let v = if self.trainable {
            self.g.param(t)
        } else {
            self.g.constant(t)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.g.constant(t)
    }

    pub fn constant_f64(&mut self, shape: &[usize], data: &[f64]) -> Result<Var, ModelError> {
        Ok(self.g.constant(Tensor::from_f64(shape, data)?))
    }

    pub fn bound_names(&self) -> impl Iterator<Item = &String> {
        self.bound.keys()
    }

    /// Gradients of every bound parameter, keyed by name.
    pub fn param_grads(&self, grads: &Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        self.bound
            .iter()
            .filter_map(|(k, &v)| grads.wrt(v).map(|g| (k.clone(), g.clone())))
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.g.value(v)
    }
}

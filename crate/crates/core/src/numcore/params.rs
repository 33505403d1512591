//! Named trainable parameters.
//!
//! A `ParamStore` owns every trainable tensor in a model, in registration
//! order. Registration order is part of the model definition: the optimizer,
//! gradient clipping, and checkpoint layout all walk parameters in this
//! order, so it must be identical across runs for reproducibility.

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> ParamId {
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_lookup() {
        let mut store = ParamStore::new();
        let a = store.register("w", Tensor::zeros(&[2, 3]));
        let b = store.register("b", Tensor::zeros(&[2]));
        assert_eq!(store.len(), 2);
        assert_eq!(store.get(a).name, "w");
        assert_eq!(store.get(b).grad.shape(), &[2]);
        assert_eq!(store.id_by_name("b"), Some(b));
        assert!(store.by_name("missing").is_none());
        assert_eq!(store.num_values(), 8);
    }

    #[test]
    fn zero_grads_resets() {
        let mut store = ParamStore::new();
        let id = store.register("w", Tensor::zeros(&[2]));
        store.get_mut(id).grad.data_mut()[0] = 5.0;
        store.zero_grads();
        assert_eq!(store.get(id).grad.data(), &[0.0, 0.0]);
    }
}

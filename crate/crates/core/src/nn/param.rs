use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub id: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub requires_grad: bool,
}

/// Owns every trainable tensor of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, id: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let id = id.into();
        if self.by_name(&id).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate parameter id {id}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            id,
            value,
            grad,
            requires_grad: true,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.id == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Total number of scalar values across the given parameters.
    pub fn count_values(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.get(*id).value.len()).sum()
    }

    /// All parameter values concatenated in registration order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params
            .iter()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect()
    }

    /// Inverse of [`ParamStore::flat_values`].
    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.params.iter().map(|p| p.value.len()).sum();
        if flat.len() != total {
            return Err(Error::Shape(format!(
                "{} values for {} parameter entries",
                flat.len(),
                total
            )));
        }
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

use std::collections::BTreeMap;

use super::{Tensor, TensorError};

/// Training stage that owns a parameter.
///
/// `Stage1` parameters make up the sentence-level translation model;
/// `Stage2` parameters are the graph encoders, graph cross-attentions and
/// gates added for document context.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Stage1,
    Stage2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub stage: Stage,
}

/// Named, stage-tagged parameter tensors with gradient accumulators.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
    frozen: Vec<Stage>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, stage: Stage) -> Result<ParamId, TensorError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape().to_vec());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad, stage });
        Ok(id)
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

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in_stage(&self, stage: Stage) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.stage == stage).map(|(id, _)| id).collect()
    }

    /// Stop gradients to every parameter of `stage`.
    pub fn freeze(&mut self, stage: Stage) {
        if !self.frozen.contains(&stage) {
            self.frozen.push(stage);
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        !self.frozen.contains(&self.params[id.0].stage)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.is_trainable(id)).collect()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        self.params[id.0].grad.add_assign(g);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.add("a", Tensor::zeros(vec![1, 1]), Stage::Stage1).unwrap();
        assert!(matches!(
            s.add("a", Tensor::zeros(vec![1, 1]), Stage::Stage2),
            Err(TensorError::DuplicateParam(_))
        ));
    }

    #[test]
    fn freezing_is_per_stage() {
        let mut s = ParamStore::new();
        let a = s.add("a", Tensor::zeros(vec![1, 1]), Stage::Stage1).unwrap();
        let b = s.add("b", Tensor::zeros(vec![1, 1]), Stage::Stage2).unwrap();
        s.freeze(Stage::Stage1);
        assert!(!s.is_trainable(a));
        assert!(s.is_trainable(b));
        assert_eq!(s.trainable_ids(), vec![b]);
    }
}

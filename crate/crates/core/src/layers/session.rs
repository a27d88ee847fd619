use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamKind, ParamStore};
use super::Mode;
use crate::diffcore::{Graph, NodeId, Scalar, Tensor};
use crate::error::Result;

/// One forward (and optionally backward) pass over a parameter store.
///
/// Parameters enter the graph lazily the first time a layer asks for them,
/// so only the parameters a pass touches appear as nodes.
pub struct Session<'p, T: Scalar> {
    pub graph: Graph<T>,
    params: &'p ParamStore<T>,
    bound: Vec<Option<NodeId>>,
    mode: Mode,
    rng: ChaCha8Rng,
    running_updates: Vec<(ParamId, Tensor<T>)>,
}

impl<'p, T: Scalar> Session<'p, T> {
    /// `seed` drives dropout masks in training mode.
    pub fn new(params: &'p ParamStore<T>, mode: Mode, seed: u64) -> Self {
        Self {
            graph: Graph::new(),
            params,
            bound: vec![None; params.len()],
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            running_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(node) = self.bound[id.index()] {
            return node;
        }
        let entry = self.params.entry(id);
        let node = self
            .graph
            .leaf(entry.value.clone(), entry.kind == ParamKind::Trainable);
        self.bound[id.index()] = Some(node);
        node
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.graph.constant(value)
    }

    pub(crate) fn record_running_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.running_updates.push((id, value));
    }

    /// Buffer updates (batch-norm running statistics) produced by this pass.
    pub fn take_running_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.running_updates)
    }

    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        self.graph.backward(root)
    }

    /// Gradient of every trainable parameter, zero for parameters this pass
    /// never touched. Ordered like [`ParamStore::trainable_ids`].
    pub fn trainable_gradients(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.params
            .trainable_ids()
            .into_iter()
            .map(|id| {
                let grad = self.bound[id.index()]
                    .and_then(|node| self.graph.grad(node).cloned())
                    .unwrap_or_else(|| Tensor::zeros(self.params.value(id).shape()));
                (id, grad)
            })
            .collect()
    }
}

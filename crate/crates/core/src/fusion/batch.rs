use crate::datamodel::MultiViewDataset;
use crate::diffcore::{NodeId, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::layers::{tile_static, Session};

/// Inputs of one view for a mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub enum BatchView<T> {
    /// One `[B, C]` tensor per timestep.
    Temporal(Vec<Tensor<T>>),
    /// A single `[B, C]` tensor, tiled over time when encoded.
    Static(Tensor<T>),
}

impl<T: Scalar> BatchView<T> {
    pub fn channels(&self) -> usize {
        match self {
            BatchView::Temporal(steps) => steps[0].shape()[1],
            BatchView::Static(t) => t.shape()[1],
        }
    }

    /// Graph inputs for the encoder: per-timestep nodes, with a static view
    /// repeated `timesteps` times.
    pub fn steps(&self, sess: &mut Session<'_, T>, timesteps: usize) -> Vec<NodeId> {
        match self {
            BatchView::Temporal(steps) => steps.iter().map(|t| sess.input(t.clone())).collect(),
            BatchView::Static(t) => {
                let node = sess.input(t.clone());
                tile_static(node, timesteps)
            }
        }
    }
}

/// A mini-batch of named views plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub names: Vec<String>,
    pub views: Vec<BatchView<T>>,
    pub labels: Vec<T>,
}

impl<T: Scalar> Batch<T> {
    /// Gathers samples `indices` of the listed views.
    pub fn from_dataset(
        dataset: &MultiViewDataset,
        views: &[String],
        indices: &[usize],
    ) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Batch("empty batch".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.num_samples) {
            return Err(Error::Range {
                index: bad,
                len: dataset.num_samples,
            });
        }
        let b = indices.len();
        let mut out = Vec::with_capacity(views.len());
        for name in views {
            let view = dataset
                .view(name)
                .ok_or_else(|| Error::Config(format!("dataset has no view {name}")))?;
            let c = view.spec.channels;
            let cast = |row: &[f32]| {
                row.iter()
                    .map(|&v| T::from_f64(v as f64))
                    .collect::<Vec<T>>()
            };
            if view.spec.is_static {
                let data = indices.iter().flat_map(|&n| cast(view.sample(n))).collect();
                out.push(BatchView::Static(Tensor::new(vec![b, c], data)?));
            } else {
                let t = view.spec.timesteps;
                let steps = (0..t)
                    .map(|ti| {
                        let data = indices
                            .iter()
                            .flat_map(|&n| cast(&view.sample(n)[ti * c..(ti + 1) * c]))
                            .collect();
                        Tensor::new(vec![b, c], data)
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.push(BatchView::Temporal(steps));
            }
        }
        Ok(Self {
            names: views.to_vec(),
            views: out,
            labels: indices
                .iter()
                .map(|&n| T::from_f64(dataset.labels[n] as f64))
                .collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn view(&self, name: &str) -> Option<&BatchView<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.views[i])
    }
}

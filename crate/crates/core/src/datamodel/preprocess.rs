use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MultiViewDataset;
use crate::error::{Error, Result};

/// Row-major `[N, T, C]` array of raw observations.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalArray {
    pub samples: usize,
    pub timesteps: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl TemporalArray {
    pub fn new(samples: usize, timesteps: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != samples * timesteps * channels {
            return Err(Error::Shape(format!(
                "[{samples}, {timesteps}, {channels}] needs {} values, got {}",
                samples * timesteps * channels,
                data.len()
            )));
        }
        Ok(Self {
            samples,
            timesteps,
            channels,
            data,
        })
    }

    pub fn get(&self, n: usize, t: usize, c: usize) -> f32 {
        self.data[(n * self.timesteps + t) * self.channels + c]
    }
}

/// Averages raw timesteps into bins `[edges[i], edges[i + 1])`.
///
/// `edges` must start at 0, end at the raw length and be strictly
/// increasing; the output has `edges.len() - 1` timesteps.
pub fn temporal_average(raw: &TemporalArray, edges: &[usize]) -> Result<TemporalArray> {
    if edges.len() < 2 {
        return Err(Error::Partition("need at least one bin".into()));
    }
    if edges[0] != 0 || edges[edges.len() - 1] != raw.timesteps {
        return Err(Error::Partition(format!(
            "edges must span [0, {}], got {:?}",
            raw.timesteps, edges
        )));
    }
    if let Some(w) = edges.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Partition(format!("empty bin [{}, {})", w[0], w[1])));
    }
    let target = edges.len() - 1;
    let c = raw.channels;
    let mut out = Vec::with_capacity(raw.samples * target * c);
    for n in 0..raw.samples {
        for w in edges.windows(2) {
            let width = (w[1] - w[0]) as f64;
            for ch in 0..c {
                let total: f64 = (w[0]..w[1]).map(|t| raw.get(n, t, ch) as f64).sum();
                out.push((total / width) as f32);
            }
        }
    }
    TemporalArray::new(raw.samples, target, c, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub constant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewStats {
    pub view: String,
    pub channels: Vec<ChannelStats>,
}

/// Per-channel statistics computed on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub views: Vec<ViewStats>,
}

impl Standardization {
    /// Computes channel means and population deviations over the training
    /// samples (and their timesteps).
    pub fn fit(dataset: &MultiViewDataset) -> Result<Self> {
        let train = &dataset.splits.train;
        if train.is_empty() {
            return Err(Error::Config(
                "standardisation needs a non-empty train split".into(),
            ));
        }
        let views = dataset
            .views
            .iter()
            .map(|view| {
                let c = view.spec.channels;
                let mut sum = vec![0.0f64; c];
                let mut count = 0usize;
                for &n in train {
                    for row in view.sample(n).chunks(c) {
                        for (s, &v) in sum.iter_mut().zip(row) {
                            *s += v as f64;
                        }
                        count += 1;
                    }
                }
                let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
                let mut sq = vec![0.0f64; c];
                for &n in train {
                    for row in view.sample(n).chunks(c) {
                        for ((s, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
                            *s += (v as f64 - m).powi(2);
                        }
                    }
                }
                let channels = mean
                    .iter()
                    .zip(&sq)
                    .map(|(&mean, &s)| {
                        let std = (s / count as f64).sqrt();
                        ChannelStats {
                            mean,
                            std,
                            constant: !(std > 1e-12 * mean.abs().max(1.0)),
                        }
                    })
                    .collect();
                ViewStats {
                    view: view.spec.name.clone(),
                    channels,
                }
            })
            .collect();
        Ok(Self { views })
    }

    /// Maps every value to `(x - mean) / std`, constant channels to 0.
    pub fn apply(&self, dataset: &MultiViewDataset) -> Result<MultiViewDataset> {
        let mut out = dataset.clone();
        for view in &mut out.views {
            let stats = self
                .views
                .iter()
                .find(|s| s.view == view.spec.name)
                .ok_or_else(|| {
                    Error::Config(format!("no statistics for view {}", view.spec.name))
                })?;
            if stats.channels.len() != view.spec.channels {
                return Err(Error::Config(format!(
                    "statistics for view {} cover {} channels, view has {}",
                    view.spec.name,
                    stats.channels.len(),
                    view.spec.channels
                )));
            }
            let c = view.spec.channels;
            for (i, v) in view.values.iter_mut().enumerate() {
                let s = &stats.channels[i % c];
                *v = if s.constant {
                    0.0
                } else {
                    ((*v as f64 - s.mean) / s.std) as f32
                };
            }
        }
        Ok(out)
    }
}

/// Standardises every channel with statistics fitted on the train split.
pub fn standardize(dataset: &MultiViewDataset) -> Result<(MultiViewDataset, Standardization)> {
    let stats = Standardization::fit(dataset)?;
    Ok((stats.apply(dataset)?, stats))
}

/// Randomly moves `round(val_fraction * len)` (at least one) indices into a
/// validation list. Both outputs are sorted.
pub fn split_train_val(
    indices: &[usize],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    if indices.len() < 2 {
        return Err(Error::Config(format!(
            "cannot split {} indices into train and validation",
            indices.len()
        )));
    }
    let n_val =
        ((val_fraction * indices.len() as f64).round() as usize).clamp(1, indices.len() - 1);
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = shuffled[..n_val].to_vec();
    let mut train = shuffled[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

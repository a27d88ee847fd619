//! Multi-view dataset schema, on-disk format, preprocessing and synthetic
//! data.
//!
//! On disk a dataset is a directory holding `manifest.json`, one raw
//! little-endian `f32` file per view (row-major `[N, T, C]` for temporal
//! views, `[N, C]` for static ones) and a labels file with one byte per
//! sample.

mod io;
mod preprocess;
mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, write_atomic, write_dataset, Manifest, ManifestView, MANIFEST_FILE};
pub use preprocess::{
    split_train_val, standardize, temporal_average, ChannelStats, Standardization, TemporalArray,
    ViewStats,
};
pub use synth::{synth_generate, SynthConfig, SynthView};

/// Shape and storage description of one view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ViewSpec {
    pub name: String,
    pub channels: usize,
    /// Zero for static views.
    pub timesteps: usize,
    pub is_static: bool,
    /// File name relative to the dataset directory.
    pub file: String,
}

impl ViewSpec {
    pub fn temporal(name: &str, channels: usize, timesteps: usize) -> Self {
        Self {
            name: name.to_string(),
            channels,
            timesteps,
            is_static: false,
            file: format!("{name}.f32"),
        }
    }

    pub fn fixed(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            channels,
            timesteps: 0,
            is_static: true,
            file: format!("{name}.f32"),
        }
    }

    /// Number of values stored per sample.
    pub fn sample_len(&self) -> usize {
        self.channels * self.timesteps.max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Schema(format!(
                "view {} has zero channels",
                self.name
            )));
        }
        if self.is_static != (self.timesteps == 0) {
            return Err(Error::Schema(format!(
                "view {}: static flag {} inconsistent with {} timesteps",
                self.name, self.is_static, self.timesteps
            )));
        }
        if self.name.is_empty() {
            return Err(Error::Schema("view with empty name".into()));
        }
        Ok(())
    }
}

/// One view's specification together with its values.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewData {
    pub spec: ViewSpec,
    /// Row-major `[N, T, C]` or `[N, C]`.
    pub values: Vec<f32>,
}

impl ViewData {
    pub fn sample(&self, n: usize) -> &[f32] {
        let len = self.spec.sample_len();
        &self.values[n * len..(n + 1) * len]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, list) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &i in list {
                if i >= n {
                    return Err(Error::Range { index: i, len: n });
                }
                if !seen.insert(i) {
                    return Err(Error::Schema(format!(
                        "sample {i} appears twice in the splits (last seen in {name})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Immutable collection of aligned views, binary labels and splits.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiViewDataset {
    pub name: String,
    pub num_samples: usize,
    /// Shared length of every temporal view.
    pub timesteps: usize,
    pub views: Vec<ViewData>,
    pub labels: Vec<u8>,
    pub splits: Splits,
}

impl MultiViewDataset {
    /// Builds a dataset, checking every schema invariant.
    pub fn new(
        name: impl Into<String>,
        timesteps: usize,
        views: Vec<ViewData>,
        labels: Vec<u8>,
        splits: Splits,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            num_samples: labels.len(),
            timesteps,
            views,
            labels,
            splits,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_samples;
        if self.labels.len() != n {
            return Err(Error::Schema(format!(
                "{} labels for {n} samples",
                self.labels.len()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y > 1) {
            return Err(Error::Schema(format!("label {bad} is not 0 or 1")));
        }
        if self.views.is_empty() {
            return Err(Error::Schema("dataset has no views".into()));
        }
        let mut names = HashSet::new();
        for view in &self.views {
            view.spec.validate()?;
            if !names.insert(view.spec.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate view name {}",
                    view.spec.name
                )));
            }
            if !view.spec.is_static && view.spec.timesteps != self.timesteps {
                return Err(Error::Schema(format!(
                    "view {} has {} timesteps, dataset has {}",
                    view.spec.name, view.spec.timesteps, self.timesteps
                )));
            }
            if view.values.len() != n * view.spec.sample_len() {
                return Err(Error::Schema(format!(
                    "view {} holds {} values, expected {}",
                    view.spec.name,
                    view.values.len(),
                    n * view.spec.sample_len()
                )));
            }
        }
        self.splits.validate(n)
    }

    pub fn view(&self, name: &str) -> Option<&ViewData> {
        self.views.iter().find(|v| v.spec.name == name)
    }

    pub fn view_specs(&self) -> Vec<ViewSpec> {
        self.views.iter().map(|v| v.spec.clone()).collect()
    }

    pub fn labels_at(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Copy restricted to the named views, in the given order.
    pub fn select_views(&self, names: &[&str]) -> Result<Self> {
        let views = names
            .iter()
            .map(|&n| {
                self.view(n)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("dataset has no view {n}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            self.name.clone(),
            self.timesteps,
            views,
            self.labels.clone(),
            self.splits.clone(),
        )
    }
}

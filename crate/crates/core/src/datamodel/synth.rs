use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{split_train_val, MultiViewDataset, Splits, ViewData, ViewSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthView {
    pub name: String,
    pub channels: usize,
    pub is_static: bool,
    /// 0 makes the view independent of the label, 1 gives full class signal.
    pub informativeness: f64,
    pub noise_scale: f64,
}

impl SynthView {
    pub fn new(
        name: &str,
        channels: usize,
        is_static: bool,
        informativeness: f64,
        noise_scale: f64,
    ) -> Self {
        Self {
            name: name.to_string(),
            channels,
            is_static,
            informativeness,
            noise_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub num_samples: usize,
    pub timesteps: usize,
    pub views: Vec<SynthView>,
    pub positive_fraction: f64,
    /// Share of samples held out for testing.
    pub test_fraction: f64,
    /// Share of the remaining samples moved to validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Five views shaped like the CropHarvest inputs: optical (11 bands),
    /// radar (2), weather (2), NDVI (1) and a static DEM (2).
    pub fn cropharvest_like(num_samples: usize, seed: u64) -> Self {
        let views = vec![
            SynthView::new("optical", 11, false, 0.8, 1.0),
            SynthView::new("radar", 2, false, 0.5, 1.0),
            SynthView::new("weather", 2, false, 0.2, 1.0),
            SynthView::new("ndvi", 1, false, 0.6, 1.0),
            SynthView::new("dem", 2, true, 0.0, 1.0),
        ];
        Self {
            name: "synthetic".into(),
            num_samples,
            timesteps: 12,
            views,
            positive_fraction: 0.5,
            test_fraction: 0.25,
            val_fraction: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 || self.timesteps == 0 || self.views.is_empty() {
            return Err(Error::Config(
                "synthetic data needs samples, timesteps and at least one view".into(),
            ));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::Config(format!(
                "positive fraction {} outside (0, 1)",
                self.positive_fraction
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) || !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("split fractions must lie in [0, 1)".into()));
        }
        for v in &self.views {
            if !(0.0..=1.0).contains(&v.informativeness) {
                return Err(Error::Config(format!(
                    "view {}: informativeness {} outside [0, 1]",
                    v.name, v.informativeness
                )));
            }
            if !(v.noise_scale > 0.0) || v.channels == 0 {
                return Err(Error::Config(format!(
                    "view {} needs positive noise scale and channel count",
                    v.name
                )));
            }
        }
        Ok(())
    }
}

/// Class template of a temporal view: a seasonal sinusoid whose phase and
/// amplitude depend on the class, with a fixed per-channel phase offset.
fn seasonal(label: u8, t: usize, channel: usize, timesteps: usize) -> f64 {
    let (amplitude, phase) = if label == 1 {
        (1.25, PI / 2.0)
    } else {
        (1.0, 0.0)
    };
    let season = 2.0 * PI * (t as f64 + 0.5) / timesteps as f64;
    amplitude * (season + phase + 0.6 * channel as f64).sin()
}

/// Class template of a static view: a symmetric per-channel mean shift.
fn offset(label: u8, channel: usize) -> f64 {
    let magnitude = 1.0 + 0.25 * channel as f64;
    if label == 1 {
        magnitude
    } else {
        -magnitude
    }
}

/// Generates a dataset whose views carry label information in proportion
/// to their informativeness, with train/val/test splits.
pub fn synth_generate(cfg: &SynthConfig) -> Result<MultiViewDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.num_samples;
    let labels: Vec<u8> = (0..n)
        .map(|_| u8::from(rng.random::<f64>() < cfg.positive_fraction))
        .collect();

    let mut views = Vec::with_capacity(cfg.views.len());
    for v in &cfg.views {
        let spec = if v.is_static {
            ViewSpec::fixed(&v.name, v.channels)
        } else {
            ViewSpec::temporal(&v.name, v.channels, cfg.timesteps)
        };
        let mut values = Vec::with_capacity(n * spec.sample_len());
        for &y in &labels {
            for t in 0..spec.timesteps.max(1) {
                for c in 0..v.channels {
                    let template = if v.is_static {
                        offset(y, c)
                    } else {
                        seasonal(y, t, c, cfg.timesteps)
                    };
                    let noise: f64 = rng.sample(StandardNormal);
                    values.push((v.informativeness * template + v.noise_scale * noise) as f32);
                }
            }
        }
        views.push(ViewData { spec, values });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_test = (cfg.test_fraction * n as f64).round() as usize;
    let mut test = order[..n_test].to_vec();
    let mut rest = order[n_test..].to_vec();
    test.sort_unstable();
    rest.sort_unstable();
    let (train, val) = if cfg.val_fraction > 0.0 && rest.len() >= 2 {
        split_train_val(&rest, cfg.val_fraction, rng.random())?
    } else {
        (rest, Vec::new())
    };
    let splits = Splits { train, val, test };
    MultiViewDataset::new(cfg.name.clone(), cfg.timesteps, views, labels, splits)
}

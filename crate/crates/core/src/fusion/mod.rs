//! The fusion strategies: input, feature-level with fixed merges or learned
//! gates, decision, multi-loss and the two-step ensemble.

mod batch;
mod model;
mod ops;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use batch::{Batch, BatchView};
pub use model::{ensemble_predict, EnsembleModel, FusionModel, Prediction};
pub use ops::{fuse_gated, fuse_with_weights, gate_weights, merge_simple, stack_views, GateModule};

use crate::error::{Error, Result};
use crate::layers::{EncoderConfig, HeadConfig, RegularizationConfig};

macro_rules! tag_enum {
    ($name:ident { $($variant:ident => $tag:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $tag)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $tag),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($tag => Ok($name::$variant),)+
                    _ => Err(Error::Config(format!(
                        "unknown {} {s:?}, expected one of: {}",
                        stringify!($name),
                        [$($tag),+].join(", ")
                    ))),
                }
            }
        }
    };
}

tag_enum!(FusionMethod {
    Input => "input",
    FeatureS => "feature-s",
    FeatureG => "feature-g",
    Decision => "decision",
    Multiloss => "multiloss",
    Ensemble => "ensemble",
});

tag_enum!(MergeFunction {
    Average => "average",
    Maximum => "maximum",
    Product => "product",
    Concatenate => "concatenate",
});

tag_enum!(GateType {
    GatedC => "gated-c",
    GatedA => "gated-a",
    GatedFA => "gatedf-a",
});

/// Architecture of one fusion model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionModelConfig {
    pub method: FusionMethod,
    /// Set only for feature-s.
    pub merge: Option<MergeFunction>,
    /// Set only for feature-g.
    pub gate: Option<GateType>,
    /// Weight of the per-view auxiliary losses (multiloss).
    pub aux_weight: f64,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub regularization: RegularizationConfig,
    /// View names in fusion order.
    pub views: Vec<String>,
    pub seed: u64,
}

impl FusionModelConfig {
    /// Default configuration for `method`; feature-s merges by average and
    /// feature-g uses the feature-specific gate.
    pub fn new(method: FusionMethod, views: Vec<String>) -> Self {
        Self {
            method,
            merge: (method == FusionMethod::FeatureS).then_some(MergeFunction::Average),
            gate: (method == FusionMethod::FeatureG).then_some(GateType::GatedFA),
            aux_weight: 0.3,
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
            regularization: RegularizationConfig::default(),
            views,
            seed: 0,
        }
    }

    /// A model on one view, used for single-view baselines and ensemble
    /// members.
    pub fn single_view(view: &str) -> Self {
        Self::new(FusionMethod::Input, vec![view.to_string()])
    }

    /// Merge function actually applied: the configured one for feature-s,
    /// average for multiloss.
    pub fn effective_merge(&self) -> Option<MergeFunction> {
        match self.method {
            FusionMethod::FeatureS => Some(self.merge.unwrap_or(MergeFunction::Average)),
            FusionMethod::Multiloss => Some(MergeFunction::Average),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.merge.is_some() && self.method != FusionMethod::FeatureS {
            return Err(Error::Config(format!(
                "a merge function applies only to feature-s, not {}",
                self.method
            )));
        }
        if self.gate.is_some() && self.method != FusionMethod::FeatureG {
            return Err(Error::Config(format!(
                "a gate type applies only to feature-g, not {}",
                self.method
            )));
        }
        if !(self.aux_weight >= 0.0 && self.aux_weight.is_finite()) {
            return Err(Error::Config(format!(
                "aux weight {} must be >= 0",
                self.aux_weight
            )));
        }
        if self.views.is_empty() {
            return Err(Error::Config("no views configured".into()));
        }
        let mut names = self.views.clone();
        names.sort();
        names.dedup();
        if names.len() != self.views.len() {
            return Err(Error::Config("duplicate view in view list".into()));
        }
        let needs_two = matches!(
            self.method,
            FusionMethod::FeatureS | FusionMethod::FeatureG | FusionMethod::Multiloss
        );
        if needs_two && self.views.len() < 2 {
            return Err(Error::Config(format!(
                "{} needs at least two views",
                self.method
            )));
        }
        if self.encoder.num_layers == 0
            || self.encoder.hidden_units == 0
            || self.head.hidden_units == 0
        {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        self.regularization.validate()
    }
}

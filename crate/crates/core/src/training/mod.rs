//! Loss functions, the Adam optimiser, early-stopped training and the
//! repeated-run experiment harness.

mod fit;
mod run;

use serde::{Deserialize, Serialize};

pub use fit::{fit, EarlyStopping, FitHistory, Trainable};
pub use run::{
    comparison_table, member_seed, model_grad_check, relu_margin, resolve_splits, run_experiment,
    train_ensemble, train_model, training_loss, LossNodes, ModelTrainer, RunOutcome, RunStatus,
    StepLoss, TrainRunResult, TrainedModel,
};

use crate::diffcore::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::layers::{ParamId, ParamStore};

/// Probability clamp used by the cross-entropy loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Minimum absolute decrease of validation loss that counts as progress.
    pub min_delta: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub runs: usize,
    pub base_seed: u64,
    /// Share of the train split moved to validation when the dataset has no
    /// validation split.
    pub val_fraction: f64,
    pub threshold: f64,
    /// Run repetitions on several threads when more than one core is free.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            max_epochs: 1000,
            patience: 5,
            min_delta: 0.01,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            runs: 10,
            base_seed: 0,
            val_fraction: 0.1,
            threshold: 0.5,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 2 {
            return fail(format!("batch size {} < 2", self.batch_size));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.runs == 0 {
            return fail("max epochs, patience and runs must be at least 1".into());
        }
        if !(self.min_delta >= 0.0) {
            return fail(format!("min delta {} must be >= 0", self.min_delta));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning rate {} must be positive",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_eps > 0.0)
        {
            return fail("Adam needs betas in [0, 1) and a positive epsilon".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return fail(format!(
                "validation fraction {} outside (0, 1)",
                self.val_fraction
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return fail(format!("threshold {} outside [0, 1]", self.threshold));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn early_stopping(&self) -> EarlyStopping {
        EarlyStopping {
            patience: self.patience,
            min_delta: self.min_delta,
            max_epochs: self.max_epochs,
        }
    }
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce_loss(probabilities: &[f64], labels: &[u8]) -> Result<f64> {
    if probabilities.len() != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} probabilities for {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// `main + aux_weight * Σ aux`.
pub fn multiloss_total(main: f64, aux: &[f64], aux_weight: f64) -> Result<f64> {
    if !(aux_weight >= 0.0) {
        return Err(Error::Config(format!(
            "aux weight {aux_weight} must be >= 0"
        )));
    }
    Ok(main + aux_weight * aux.iter().sum::<f64>())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        TrainConfig::default().adam()
    }
}

/// First and second moment estimates per trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    /// Number of steps taken.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .trainable_ids()
            .into_iter()
            .map(|id| Tensor::zeros(params.value(id).shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter. `grads`
/// must list the trainable parameters in store order.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[(ParamId, Tensor<T>)],
    state: &mut AdamState<T>,
    hp: &AdamConfig,
) -> Result<()> {
    let ids = params.trainable_ids();
    if grads.len() != ids.len() || state.m.len() != ids.len() {
        return Err(Error::Shape(
            "gradients do not match trainable parameters".into(),
        ));
    }
    for ((id, g), &expected) in grads.iter().zip(&ids) {
        if *id != expected || g.shape() != params.value(expected).shape() {
            return Err(Error::Shape(format!(
                "gradient for {} out of order or mis-shaped",
                params.entry(expected).name
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {}",
                params.entry(expected).name
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::from_f64(hp.beta1), T::from_f64(hp.beta2));
    let c1 = T::from_f64(1.0 - hp.beta1.powi(t));
    let c2 = T::from_f64(1.0 - hp.beta2.powi(t));
    let (lr, eps, one) = (T::from_f64(hp.learning_rate), T::from_f64(hp.eps), T::one());
    for (k, (id, g)) in grads.iter().enumerate() {
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        let theta = params.value_mut(*id).data_mut();
        for i in 0..theta.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta[i] = theta[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

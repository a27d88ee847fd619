use crate::error::{Error, Result};

/// Stopping rule: an epoch improves when its validation loss is below the
/// reference best minus `min_delta`; training stops after `patience`
/// consecutive epochs without improvement or at `max_epochs`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
}

/// Something trained epoch by epoch with a validation signal.
pub trait Trainable {
    type Snapshot;

    /// Runs one pass over the training data and returns its mean loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;
    fn validation_loss(&mut self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitHistory {
    pub epochs: usize,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// Trains until the stopping rule fires, then restores the parameters of
/// the epoch with the lowest validation loss.
///
/// The reference best used for the improvement test only moves on an
/// improvement, so a run of small gains below `min_delta` still counts
/// towards patience. The restored parameters are those of the lowest loss
/// seen, whether or not that epoch counted as an improvement.
pub fn fit<M: Trainable>(model: &mut M, rule: &EarlyStopping) -> Result<FitHistory> {
    if rule.patience == 0 || rule.max_epochs == 0 || !(rule.min_delta >= 0.0) {
        return Err(Error::Config("invalid early-stopping settings".into()));
    }
    let mut history = FitHistory {
        epochs: 0,
        train_losses: Vec::new(),
        val_losses: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
    };
    let mut reference = f64::INFINITY;
    let mut stale = 0;
    let mut best: Option<M::Snapshot> = None;
    for epoch in 1..=rule.max_epochs {
        let train = model.train_epoch(epoch)?;
        let val = model.validation_loss()?;
        if !val.is_finite() {
            return Err(Error::Numeric(format!(
                "validation loss {val} at epoch {epoch}"
            )));
        }
        history.epochs = epoch;
        history.train_losses.push(train);
        history.val_losses.push(val);
        if val < history.best_val_loss {
            history.best_val_loss = val;
            history.best_epoch = epoch;
            best = Some(model.snapshot());
        }
        if val < reference - rule.min_delta {
            reference = val;
            stale = 0;
        } else {
            stale += 1;
            if stale >= rule.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    if let Some(snapshot) = best {
        model.restore(snapshot);
    }
    Ok(history)
}

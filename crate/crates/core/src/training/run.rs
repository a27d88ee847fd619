use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit::{fit, FitHistory, Trainable};
use super::{adam_step, bce_loss, multiloss_total, AdamState, TrainConfig};
use crate::datamodel::{split_train_val, MultiViewDataset};
use crate::diffcore::{NodeId, Scalar};
use crate::error::{Error, Result};
use crate::fusion::{
    Batch, EnsembleModel, FusionMethod, FusionModel, FusionModelConfig, GateType, MergeFunction,
};
use crate::layers::{Mode, ParamStore, Session};
use crate::metrics::{ComparisonTable, ReportRow, RunMetrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One line of the results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRunResult {
    pub method: FusionMethod,
    pub merge: Option<MergeFunction>,
    pub gate: Option<GateType>,
    pub views: Vec<String>,
    pub run: usize,
    pub seed: u64,
    pub epochs: usize,
    /// Best validation loss; absent for failed runs.
    pub val_loss: Option<f64>,
    pub metrics: Option<RunMetrics>,
    pub wall_time_s: f64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrainRunResult {
    fn failed(
        cfg: &FusionModelConfig,
        run: usize,
        seed: u64,
        wall_time_s: f64,
        error: &Error,
    ) -> Self {
        Self {
            method: cfg.method,
            merge: cfg.merge,
            gate: cfg.gate,
            views: cfg.views.clone(),
            run,
            seed,
            epochs: 0,
            val_loss: None,
            metrics: None,
            wall_time_s,
            status: RunStatus::Failed,
            error: Some(error.to_string()),
        }
    }

    /// Row label used in reports: the method with its merge or gate, or
    /// `single:<view>` for a model on one view.
    pub fn label(&self) -> String {
        match (self.method, self.merge, self.gate) {
            (FusionMethod::Input, _, _) if self.views.len() == 1 => {
                format!("single:{}", self.views[0])
            }
            (FusionMethod::FeatureS, Some(m), _) => format!("feature-s({m})"),
            (FusionMethod::FeatureG, _, Some(g)) => format!("feature-g({g})"),
            (method, _, _) => method.to_string(),
        }
    }

    /// Whether this row is a single-view baseline.
    pub fn is_single_view(&self) -> bool {
        self.method == FusionMethod::Input && self.views.len() == 1
    }
}

/// A trained model ready for prediction.
#[derive(Clone, Debug)]
pub enum TrainedModel {
    Single(FusionModel<f32>),
    Ensemble(EnsembleModel<f32>),
}

impl TrainedModel {
    pub fn predict_indices(
        &self,
        dataset: &MultiViewDataset,
        indices: &[usize],
        batch_size: usize,
    ) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Single(m) => m.predict_indices(dataset, indices, batch_size),
            TrainedModel::Ensemble(e) => e.predict_indices(dataset, indices, batch_size),
        }
    }

    /// Writes parameter checkpoints under `dir`, one sub-directory per
    /// ensemble member.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        match self {
            TrainedModel::Single(m) => Ok(vec![m.params.save(dir)?]),
            TrainedModel::Ensemble(e) => e
                .members
                .iter()
                .map(|m| m.params.save(dir.join(&m.config().views[0])))
                .collect(),
        }
    }
}

/// Groups results by [`TrainRunResult::label`] in order of first appearance
/// and aggregates the successful runs of each group.
pub fn comparison_table(results: &[TrainRunResult]) -> Result<ComparisonTable> {
    let mut groups: Vec<(String, bool, Vec<RunMetrics>, usize)> = Vec::new();
    for r in results {
        let label = r.label();
        let idx = match groups.iter().position(|g| g.0 == label) {
            Some(i) => i,
            None => {
                groups.push((label, r.is_single_view(), Vec::new(), 0));
                groups.len() - 1
            }
        };
        match (r.status, r.metrics) {
            (RunStatus::Ok, Some(m)) => groups[idx].2.push(m),
            _ => groups[idx].3 += 1,
        }
    }
    let rows = groups
        .into_iter()
        .filter(|g| !g.2.is_empty())
        .map(|(label, single, runs, failed)| ReportRow::new(label, single, &runs, failed))
        .collect::<Result<Vec<_>>>()?;
    ComparisonTable::new(rows)
}

/// Everything one run produces.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub result: TrainRunResult,
    pub model: Option<TrainedModel>,
    /// Training histories: one for a model, one per member for an ensemble.
    pub histories: Vec<FitHistory>,
    /// Single-view results of the ensemble members.
    pub members: Vec<TrainRunResult>,
}

/// Seed of the ensemble member (or single-view baseline) on view `index`.
pub fn member_seed(run_seed: u64, index: usize) -> u64 {
    run_seed.wrapping_add(1000 * index as u64)
}

/// Scalar loss nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub main: NodeId,
    pub aux: Vec<NodeId>,
}

/// Components of one optimisation step's objective.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLoss {
    pub total: f64,
    pub main: f64,
    pub aux: Vec<f64>,
}

/// Cross-entropy of the fused prediction plus, for multiloss, the weighted
/// auxiliary terms.
pub fn training_loss<T: Scalar>(
    sess: &mut Session<'_, T>,
    model: &FusionModel<T>,
    batch: &Batch<T>,
) -> Result<LossNodes> {
    let pred = model.forward(sess, batch)?;
    let eps = T::from_f64(super::BCE_EPS);
    let main = sess.graph.bce(pred.probability, &batch.labels, eps)?;
    let aux = pred
        .aux
        .iter()
        .map(|&p| sess.graph.bce(p, &batch.labels, eps))
        .collect::<Result<Vec<_>>>()?;
    let total = match aux.split_first() {
        None => main,
        Some((&first, rest)) => {
            let mut sum = first;
            for &a in rest {
                sum = sess.graph.add(sum, a)?;
            }
            let weighted = sess
                .graph
                .scale(sum, T::from_f64(model.config().aux_weight));
            sess.graph.add(main, weighted)?
        }
    };
    Ok(LossNodes { total, main, aux })
}

/// Mini-batch training state of one model.
pub struct ModelTrainer<'a, T: Scalar> {
    pub model: FusionModel<T>,
    dataset: &'a MultiViewDataset,
    train: Vec<usize>,
    val: Vec<usize>,
    cfg: TrainConfig,
    adam: AdamState<T>,
    rng: ChaCha8Rng,
    /// Objective components of every step taken.
    pub step_log: Vec<StepLoss>,
}

impl<'a, T: Scalar> ModelTrainer<'a, T> {
    pub fn new(
        model: FusionModel<T>,
        dataset: &'a MultiViewDataset,
        train: Vec<usize>,
        val: Vec<usize>,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        if train.len() < 2 || val.is_empty() {
            return Err(Error::Config(format!(
                "training needs at least 2 train and 1 validation samples, got {} and {}",
                train.len(),
                val.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep shuffling and dropout apart from the initialisation stream
        rng.set_stream(1);
        Ok(Self {
            adam: AdamState::new(&model.params),
            model,
            dataset,
            train,
            val,
            cfg: cfg.clone(),
            rng,
            step_log: Vec::new(),
        })
    }

    fn step(&mut self, indices: &[usize]) -> Result<f64> {
        let batch = Batch::from_dataset(self.dataset, &self.model.config().views, indices)?;
        let dropout_seed = self.rng.random::<u64>();
        let (grads, updates, log) = {
            let mut sess = Session::new(&self.model.params, Mode::Train, dropout_seed);
            let loss = training_loss(&mut sess, &self.model, &batch)?;
            let value = |n: NodeId| Scalar::to_f64(sess.graph.value(n).data()[0]);
            let log = StepLoss {
                total: value(loss.total),
                main: value(loss.main),
                aux: loss.aux.iter().map(|&a| value(a)).collect(),
            };
            if !log.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "training loss {} diverged",
                    log.total
                )));
            }
            sess.backward(loss.total)?;
            (sess.trainable_gradients(), sess.take_running_updates(), log)
        };
        adam_step(
            &mut self.model.params,
            &grads,
            &mut self.adam,
            &self.cfg.adam(),
        )?;
        for (id, value) in updates {
            *self.model.params.value_mut(id) = value;
        }
        let total = log.total;
        self.step_log.push(log);
        Ok(total)
    }

    /// Validation objective in eval mode, matching the training objective.
    fn objective(&self, indices: &[usize]) -> Result<f64> {
        let mut main = Vec::with_capacity(indices.len());
        let mut aux: Vec<Vec<f64>> = Vec::new();
        for chunk in indices.chunks(self.cfg.batch_size) {
            let batch = Batch::from_dataset(self.dataset, &self.model.config().views, chunk)?;
            let mut sess = Session::new(&self.model.params, Mode::Eval, 0);
            let pred = self.model.forward(&mut sess, &batch)?;
            let values = |n: NodeId| {
                sess.graph
                    .value(n)
                    .data()
                    .iter()
                    .map(|&v| Scalar::to_f64(v))
                    .collect::<Vec<_>>()
            };
            main.extend(values(pred.probability));
            aux.resize(pred.aux.len(), Vec::new());
            for (acc, &node) in aux.iter_mut().zip(&pred.aux) {
                acc.extend(values(node));
            }
        }
        let labels = self.dataset.labels_at(indices);
        let aux_losses = aux
            .iter()
            .map(|p| bce_loss(p, &labels))
            .collect::<Result<Vec<_>>>()?;
        multiloss_total(
            bce_loss(&main, &labels)?,
            &aux_losses,
            self.model.config().aux_weight,
        )
    }
}

impl<T: Scalar> Trainable for ModelTrainer<'_, T> {
    type Snapshot = ParamStore<T>;

    fn train_epoch(&mut self, _epoch: usize) -> Result<f64> {
        let mut order = self.train.clone();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(self.cfg.batch_size) {
            // batch norm needs two samples; a trailing singleton is skipped
            if chunk.len() < 2 {
                continue;
            }
            total += self.step(chunk)? * chunk.len() as f64;
            seen += chunk.len();
        }
        Ok(total / seen as f64)
    }

    fn validation_loss(&mut self) -> Result<f64> {
        self.objective(&self.val)
    }

    fn snapshot(&self) -> ParamStore<T> {
        self.model.params.clone()
    }

    fn restore(&mut self, snapshot: ParamStore<T>) {
        self.model.params = snapshot;
    }
}

/// Train, validation and test indices. The validation split comes from the
/// dataset, or is carved from the train split with the experiment seed.
pub fn resolve_splits(
    dataset: &MultiViewDataset,
    cfg: &TrainConfig,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let s = &dataset.splits;
    if s.train.is_empty() || s.test.is_empty() {
        return Err(Error::Config(
            "dataset needs non-empty train and test splits".into(),
        ));
    }
    if s.val.is_empty() {
        let (train, val) = split_train_val(&s.train, cfg.val_fraction, cfg.base_seed)?;
        Ok((train, val, s.test.clone()))
    } else {
        Ok((s.train.clone(), s.val.clone(), s.test.clone()))
    }
}

/// Trains one model with early stopping and evaluates it on the test split.
/// Ensembles are delegated to [`train_ensemble`].
pub fn train_model(
    model_cfg: &FusionModelConfig,
    cfg: &TrainConfig,
    dataset: &MultiViewDataset,
    run: usize,
    seed: u64,
) -> Result<RunOutcome> {
    if model_cfg.method == FusionMethod::Ensemble {
        return train_ensemble(model_cfg, cfg, dataset, run, seed);
    }
    cfg.validate()?;
    let start = Instant::now();
    let (train, val, test) = resolve_splits(dataset, cfg)?;
    let mut mc = model_cfg.clone();
    mc.seed = seed;
    let model = FusionModel::<f32>::for_dataset(mc, dataset)?;
    let mut trainer = ModelTrainer::new(model, dataset, train, val, cfg, seed)?;
    let history = fit(&mut trainer, &cfg.early_stopping())?;
    let model = trainer.model;
    let probs = model.predict_indices(dataset, &test, cfg.batch_size)?;
    let metrics = RunMetrics::evaluate(&probs, &dataset.labels_at(&test), cfg.threshold)?;
    let result = TrainRunResult {
        method: model_cfg.method,
        merge: model_cfg.merge,
        gate: model_cfg.gate,
        views: model_cfg.views.clone(),
        run,
        seed,
        epochs: history.epochs,
        val_loss: Some(history.best_val_loss),
        metrics: Some(metrics),
        wall_time_s: start.elapsed().as_secs_f64(),
        status: RunStatus::Ok,
        error: None,
    };
    Ok(RunOutcome {
        result,
        model: Some(TrainedModel::Single(model)),
        histories: vec![history],
        members: Vec::new(),
    })
}

/// Trains one single-view model per view (seeds from [`member_seed`]) and
/// evaluates the average of their probabilities.
pub fn train_ensemble(
    model_cfg: &FusionModelConfig,
    cfg: &TrainConfig,
    dataset: &MultiViewDataset,
    run: usize,
    seed: u64,
) -> Result<RunOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let start = Instant::now();
    let (_, val, test) = resolve_splits(dataset, cfg)?;
    let mut models = Vec::new();
    let mut histories = Vec::new();
    let mut members = Vec::new();
    for (i, view) in model_cfg.views.iter().enumerate() {
        let mut single = model_cfg.clone();
        single.method = FusionMethod::Input;
        single.merge = None;
        single.gate = None;
        single.views = vec![view.clone()];
        let outcome = train_model(&single, cfg, dataset, run, member_seed(seed, i))?;
        if let Some(TrainedModel::Single(m)) = outcome.model {
            models.push(m);
        }
        histories.extend(outcome.histories);
        members.push(outcome.result);
    }
    let ensemble = EnsembleModel::new(models)?;
    ensemble.require_views(&model_cfg.views)?;
    let val_probs = ensemble.predict_indices(dataset, &val, cfg.batch_size)?;
    let val_loss = bce_loss(&val_probs, &dataset.labels_at(&val))?;
    let probs = ensemble.predict_indices(dataset, &test, cfg.batch_size)?;
    let metrics = RunMetrics::evaluate(&probs, &dataset.labels_at(&test), cfg.threshold)?;
    let result = TrainRunResult {
        method: FusionMethod::Ensemble,
        merge: None,
        gate: None,
        views: model_cfg.views.clone(),
        run,
        seed,
        epochs: histories.iter().map(|h| h.epochs).max().unwrap_or(0),
        val_loss: Some(val_loss),
        metrics: Some(metrics),
        wall_time_s: start.elapsed().as_secs_f64(),
        status: RunStatus::Ok,
        error: None,
    };
    Ok(RunOutcome {
        result,
        model: Some(TrainedModel::Ensemble(ensemble)),
        histories,
        members,
    })
}

/// `cfg.runs` independent runs with seeds `base_seed + run`, ordered by run
/// index. A failing run is recorded as such; the experiment fails only when
/// every run does.
pub fn run_experiment(
    model_cfg: &FusionModelConfig,
    cfg: &TrainConfig,
    dataset: &MultiViewDataset,
) -> Result<Vec<RunOutcome>> {
    cfg.validate()?;
    model_cfg.validate()?;
    resolve_splits(dataset, cfg)?;
    let one = |run: usize| {
        let seed = cfg.base_seed.wrapping_add(run as u64);
        let start = Instant::now();
        train_model(model_cfg, cfg, dataset, run, seed).unwrap_or_else(|e| RunOutcome {
            result: TrainRunResult::failed(model_cfg, run, seed, start.elapsed().as_secs_f64(), &e),
            model: None,
            histories: Vec::new(),
            members: Vec::new(),
        })
    };
    let workers = if cfg.parallel {
        std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(cfg.runs)
    } else {
        1
    };
    let outcomes: Vec<RunOutcome> = if workers <= 1 {
        (0..cfg.runs).map(one).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<RunOutcome>>> = Mutex::new(vec![None; cfg.runs]);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let run = next.fetch_add(1, Ordering::SeqCst);
                    if run >= cfg.runs {
                        break;
                    }
                    let outcome = one(run);
                    slots.lock().expect("no poisoned runs")[run] = Some(outcome);
                });
            }
        });
        slots
            .into_inner()
            .expect("no poisoned runs")
            .into_iter()
            .map(|o| o.expect("every run finished"))
            .collect()
    };
    if outcomes
        .iter()
        .all(|o| o.result.status == RunStatus::Failed)
    {
        let reason = outcomes[0].result.error.clone().unwrap_or_default();
        return Err(Error::Numeric(format!(
            "all {} runs failed; first: {reason}",
            cfg.runs
        )));
    }
    Ok(outcomes)
}

/// Compares the gradient of the training loss with respect to every
/// trainable parameter against central differences, with the model in eval
/// mode (running batch-norm statistics, no dropout).
pub fn model_grad_check(
    model: &FusionModel<f64>,
    batch: &Batch<f64>,
    step: f64,
    tolerance: f64,
) -> Result<crate::diffcore::GradCheckReport> {
    let ids = model.params.trainable_ids();
    let points: Vec<_> = ids
        .iter()
        .map(|&id| model.params.value(id).clone())
        .collect();
    let mut sess = Session::new(&model.params, Mode::Eval, 0);
    let loss = training_loss(&mut sess, model, batch)?;
    sess.backward(loss.total)?;
    let analytic: Vec<_> = sess
        .trainable_gradients()
        .into_iter()
        .map(|(_, g)| g)
        .collect();
    let value = |p: &[crate::diffcore::Tensor<f64>]| -> Result<f64> {
        let mut store = model.params.clone();
        for (&id, t) in ids.iter().zip(p) {
            *store.value_mut(id) = t.clone();
        }
        let mut sess = Session::new(&store, Mode::Eval, 0);
        let loss = training_loss(&mut sess, model, batch)?;
        Ok(sess.graph.value(loss.total).data()[0])
    };
    crate::diffcore::compare_with_finite_differences(value, &points, &analytic, step, tolerance)
}

/// Distance of the closest relu input to its kink in an eval-mode pass of
/// the training loss. Gradient checks are only meaningful when this is well
/// above the finite-difference step.
pub fn relu_margin(model: &FusionModel<f64>, batch: &Batch<f64>) -> Result<f64> {
    let mut sess = Session::new(&model.params, Mode::Eval, 0);
    training_loss(&mut sess, model, batch)?;
    Ok(sess.graph.relu_margin().unwrap_or(f64::INFINITY))
}

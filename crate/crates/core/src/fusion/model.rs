use super::batch::Batch;
use super::ops::{fuse_gated, merge_simple, GateModule};
use super::{FusionMethod, FusionModelConfig, GateType, MergeFunction};
use crate::datamodel::{MultiViewDataset, ViewSpec};
use crate::diffcore::{NodeId, Scalar};
use crate::error::{shape_err, Error, Result};
use crate::layers::{DenseHead, GruEncoder, Initializer, Mode, ParamBuilder, ParamStore, Session};

/// Probability nodes produced by one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `[B]` fused crop probability.
    pub probability: NodeId,
    /// `[B]` per-view auxiliary probabilities (multiloss only).
    pub aux: Vec<NodeId>,
}

#[derive(Clone, Debug)]
enum Architecture {
    Input {
        encoder: GruEncoder,
        head: DenseHead,
    },
    FeatureS {
        encoders: Vec<GruEncoder>,
        merge: MergeFunction,
        head: DenseHead,
    },
    FeatureG {
        encoders: Vec<GruEncoder>,
        gate: GateModule,
        head: DenseHead,
    },
    Decision {
        branches: Vec<(GruEncoder, DenseHead)>,
    },
    Multiloss {
        encoders: Vec<GruEncoder>,
        head: DenseHead,
        aux: Vec<DenseHead>,
    },
    /// Placeholder; ensembles predict through [`EnsembleModel`].
    Ensemble,
}

/// A fusion model: architecture plus its parameters.
#[derive(Clone, Debug)]
pub struct FusionModel<T> {
    config: FusionModelConfig,
    views: Vec<ViewSpec>,
    timesteps: usize,
    arch: Architecture,
    pub params: ParamStore<T>,
}

impl<T: Scalar> FusionModel<T> {
    /// Builds the model for `config`, taking channel counts from `specs` and
    /// initialising parameters from `config.seed`.
    pub fn new(config: FusionModelConfig, specs: &[ViewSpec], timesteps: usize) -> Result<Self> {
        config.validate()?;
        if timesteps == 0 {
            return Err(Error::Config("timesteps must be positive".into()));
        }
        let views = config
            .views
            .iter()
            .map(|name| {
                specs
                    .iter()
                    .find(|s| &s.name == name)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("dataset has no view {name}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut params = ParamStore::new();
        let mut init = Initializer::new(config.seed);
        let mut b = ParamBuilder {
            store: &mut params,
            init: &mut init,
        };
        let (enc, reg, hd) = (&config.encoder, &config.regularization, &config.head);
        let h = enc.hidden_units;
        let encoders = |b: &mut ParamBuilder<'_, T>| {
            views
                .iter()
                .map(|v| GruEncoder::new(b, &format!("{}.encoder", v.name), v.channels, enc, reg))
                .collect::<Result<Vec<_>>>()
        };
        let arch = match config.method {
            FusionMethod::Input => {
                let channels = views.iter().map(|v| v.channels).sum();
                Architecture::Input {
                    encoder: GruEncoder::new(&mut b, "input.encoder", channels, enc, reg)?,
                    head: DenseHead::new(&mut b, "input.head", h, hd, reg)?,
                }
            }
            FusionMethod::FeatureS => {
                let merge = config.effective_merge().expect("feature-s has a merge");
                let encoders = encoders(&mut b)?;
                let width = if merge == MergeFunction::Concatenate {
                    views.len() * h
                } else {
                    h
                };
                Architecture::FeatureS {
                    encoders,
                    merge,
                    head: DenseHead::new(&mut b, "fusion.head", width, hd, reg)?,
                }
            }
            FusionMethod::FeatureG => {
                let encoders = encoders(&mut b)?;
                let gate_type = config.gate.unwrap_or(GateType::GatedFA);
                Architecture::FeatureG {
                    encoders,
                    gate: GateModule::new(&mut b, "gate", gate_type, views.len(), h)?,
                    head: DenseHead::new(&mut b, "fusion.head", h, hd, reg)?,
                }
            }
            FusionMethod::Decision => {
                let branches = views
                    .iter()
                    .map(|v| {
                        let e = GruEncoder::new(
                            &mut b,
                            &format!("{}.encoder", v.name),
                            v.channels,
                            enc,
                            reg,
                        )?;
                        let d = DenseHead::new(&mut b, &format!("{}.head", v.name), h, hd, reg)?;
                        Ok((e, d))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Architecture::Decision { branches }
            }
            FusionMethod::Multiloss => {
                let encoders = encoders(&mut b)?;
                let head = DenseHead::new(&mut b, "fusion.head", h, hd, reg)?;
                let aux = views
                    .iter()
                    .map(|v| DenseHead::new(&mut b, &format!("{}.aux_head", v.name), h, hd, reg))
                    .collect::<Result<Vec<_>>>()?;
                Architecture::Multiloss {
                    encoders,
                    head,
                    aux,
                }
            }
            FusionMethod::Ensemble => Architecture::Ensemble,
        };
        Ok(Self {
            config,
            views,
            timesteps,
            arch,
            params,
        })
    }

    pub fn for_dataset(config: FusionModelConfig, dataset: &MultiViewDataset) -> Result<Self> {
        Self::new(config, &dataset.view_specs(), dataset.timesteps)
    }

    pub fn config(&self) -> &FusionModelConfig {
        &self.config
    }

    pub fn view_specs(&self) -> &[ViewSpec] {
        &self.views
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    /// Same architecture with parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> FusionModel<U> {
        FusionModel {
            config: self.config.clone(),
            views: self.views.clone(),
            timesteps: self.timesteps,
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    /// Encoder inputs of every configured view, in configuration order.
    fn view_steps(&self, sess: &mut Session<'_, T>, batch: &Batch<T>) -> Result<Vec<Vec<NodeId>>> {
        self.views
            .iter()
            .map(|spec| {
                let view = batch
                    .view(&spec.name)
                    .ok_or_else(|| Error::Config(format!("batch lacks view {}", spec.name)))?;
                if view.channels() != spec.channels {
                    return Err(shape_err(format!(
                        "view {} has {} channels, model expects {}",
                        spec.name,
                        view.channels(),
                        spec.channels
                    )));
                }
                let steps = view.steps(sess, self.timesteps);
                if steps.len() != self.timesteps {
                    return Err(shape_err(format!(
                        "view {} has {} timesteps, model expects {}",
                        spec.name,
                        steps.len(),
                        self.timesteps
                    )));
                }
                Ok(steps)
            })
            .collect()
    }

    fn encode_all(
        sess: &mut Session<'_, T>,
        encoders: &[GruEncoder],
        inputs: &[Vec<NodeId>],
    ) -> Result<Vec<NodeId>> {
        encoders
            .iter()
            .zip(inputs)
            .map(|(e, steps)| e.encode_view(sess, steps))
            .collect()
    }

    /// Forward pass in the session's mode. `sess` must be built over a store
    /// laid out like `self.params`.
    pub fn forward(&self, sess: &mut Session<'_, T>, batch: &Batch<T>) -> Result<Prediction> {
        if matches!(self.arch, Architecture::Ensemble) {
            return Err(Error::Contract(
                "an ensemble has no joint forward pass; use EnsembleModel".into(),
            ));
        }
        if sess.params().len() != self.params.len() {
            return Err(Error::Contract("session store does not match model".into()));
        }
        let inputs = self.view_steps(sess, batch)?;
        let single = |sess: &mut Session<'_, T>, logit: NodeId| Prediction {
            probability: sess.graph.sigmoid(logit),
            aux: Vec::new(),
        };
        match &self.arch {
            Architecture::Input { encoder, head } => {
                // channelwise concatenation per timestep
                let steps = (0..self.timesteps)
                    .map(|t| {
                        let parts: Vec<NodeId> = inputs.iter().map(|v| v[t]).collect();
                        if parts.len() == 1 {
                            Ok(parts[0])
                        } else {
                            sess.graph.concat(&parts, 1)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let rep = encoder.encode_view(sess, &steps)?;
                let logit = head.forward(sess, rep)?;
                Ok(single(sess, logit))
            }
            Architecture::FeatureS {
                encoders,
                merge,
                head,
            } => {
                let reps = Self::encode_all(sess, encoders, &inputs)?;
                let fused = merge_simple(&mut sess.graph, &reps, *merge)?;
                let logit = head.forward(sess, fused)?;
                Ok(single(sess, logit))
            }
            Architecture::FeatureG {
                encoders,
                gate,
                head,
            } => {
                let reps = Self::encode_all(sess, encoders, &inputs)?;
                let fused = fuse_gated(sess, gate, &reps)?;
                let logit = head.forward(sess, fused)?;
                Ok(single(sess, logit))
            }
            Architecture::Decision { branches } => {
                let b = batch.len();
                let probs = branches
                    .iter()
                    .zip(&inputs)
                    .map(|((e, h), steps)| {
                        let rep = e.encode_view(sess, steps)?;
                        let logit = h.forward(sess, rep)?;
                        let p = sess.graph.sigmoid(logit);
                        sess.graph.reshape(p, &[b, 1])
                    })
                    .collect::<Result<Vec<_>>>()?;
                let probability = if probs.len() == 1 {
                    sess.graph.reshape(probs[0], &[b])?
                } else {
                    let all = sess.graph.concat(&probs, 1)?;
                    sess.graph.reduce_mean(all, 1)?
                };
                Ok(Prediction {
                    probability,
                    aux: Vec::new(),
                })
            }
            Architecture::Multiloss {
                encoders,
                head,
                aux,
            } => {
                let reps = Self::encode_all(sess, encoders, &inputs)?;
                let fused = merge_simple(&mut sess.graph, &reps, MergeFunction::Average)?;
                let logit = head.forward(sess, fused)?;
                let probability = sess.graph.sigmoid(logit);
                let aux = aux
                    .iter()
                    .zip(&reps)
                    .map(|(h, &r)| {
                        let l = h.forward(sess, r)?;
                        Ok(sess.graph.sigmoid(l))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Prediction { probability, aux })
            }
            Architecture::Ensemble => unreachable!("rejected above"),
        }
    }

    /// Eval-mode probabilities for one batch.
    pub fn predict_batch(&self, batch: &Batch<T>) -> Result<Vec<f64>> {
        let mut sess = Session::new(&self.params, Mode::Eval, 0);
        let pred = self.forward(&mut sess, batch)?;
        Ok(sess
            .graph
            .value(pred.probability)
            .data()
            .iter()
            .map(|&v| Scalar::to_f64(v))
            .collect())
    }

    /// Eval-mode probabilities for dataset samples, in `batch_size` chunks.
    pub fn predict_indices(
        &self,
        dataset: &MultiViewDataset,
        indices: &[usize],
        batch_size: usize,
    ) -> Result<Vec<f64>> {
        predict_chunks(dataset, indices, batch_size, &self.config.views, |b| {
            self.predict_batch(b)
        })
    }

    /// Per-view representations `[B, D]` of the feature-level and decision
    /// methods.
    pub fn representations(
        &self,
        sess: &mut Session<'_, T>,
        batch: &Batch<T>,
    ) -> Result<Vec<NodeId>> {
        let inputs = self.view_steps(sess, batch)?;
        match &self.arch {
            Architecture::FeatureS { encoders, .. }
            | Architecture::FeatureG { encoders, .. }
            | Architecture::Multiloss { encoders, .. } => Self::encode_all(sess, encoders, &inputs),
            Architecture::Decision { branches } => branches
                .iter()
                .zip(&inputs)
                .map(|((e, _), s)| e.encode_view(sess, s))
                .collect(),
            _ => Err(Error::Contract(format!(
                "{} has no per-view representations",
                self.config.method
            ))),
        }
    }
}

fn predict_chunks<T: Scalar>(
    dataset: &MultiViewDataset,
    indices: &[usize],
    batch_size: usize,
    views: &[String],
    mut f: impl FnMut(&Batch<T>) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size) {
        let batch = Batch::from_dataset(dataset, views, chunk)?;
        out.extend(f(&batch)?);
    }
    Ok(out)
}

/// Arithmetic mean of per-model probability vectors.
pub fn ensemble_predict(per_model: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = per_model
        .first()
        .ok_or_else(|| Error::Config("ensemble without members".into()))?;
    if per_model.iter().any(|p| p.len() != first.len()) {
        return Err(shape_err(
            "ensemble members predicted different batch sizes",
        ));
    }
    let v = per_model.len() as f64;
    Ok((0..first.len())
        .map(|i| per_model.iter().map(|p| p[i]).sum::<f64>() / v)
        .collect())
}

/// Independently trained single-view models averaged at test time.
#[derive(Clone, Debug)]
pub struct EnsembleModel<T> {
    pub members: Vec<FusionModel<T>>,
}

impl<T: Scalar> EnsembleModel<T> {
    /// `members` must be single-view models over distinct views.
    pub fn new(members: Vec<FusionModel<T>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("ensemble without members".into()));
        }
        let mut seen: Vec<&str> = Vec::new();
        for m in &members {
            let cfg = m.config();
            if cfg.method == FusionMethod::Ensemble || cfg.views.len() != 1 {
                return Err(Error::Config(
                    "ensemble members must be single-view models".into(),
                ));
            }
            if seen.contains(&cfg.views[0].as_str()) {
                return Err(Error::Config(format!(
                    "two ensemble members for view {}",
                    cfg.views[0]
                )));
            }
            seen.push(&cfg.views[0]);
        }
        Ok(Self { members })
    }

    /// Member views in order.
    pub fn views(&self) -> Vec<String> {
        self.members
            .iter()
            .map(|m| m.config().views[0].clone())
            .collect()
    }

    /// Checks that every view in `views` has a member.
    pub fn require_views(&self, views: &[String]) -> Result<()> {
        let have = self.views();
        match views.iter().find(|v| !have.contains(v)) {
            Some(v) => Err(Error::Config(format!("ensemble has no model for view {v}"))),
            None => Ok(()),
        }
    }

    pub fn predict_batch(&self, batch: &Batch<T>) -> Result<Vec<f64>> {
        let per_model = self
            .members
            .iter()
            .map(|m| m.predict_batch(batch))
            .collect::<Result<Vec<_>>>()?;
        ensemble_predict(&per_model)
    }

    pub fn predict_indices(
        &self,
        dataset: &MultiViewDataset,
        indices: &[usize],
        batch_size: usize,
    ) -> Result<Vec<f64>> {
        predict_chunks(dataset, indices, batch_size, &self.views(), |b| {
            self.predict_batch(b)
        })
    }
}

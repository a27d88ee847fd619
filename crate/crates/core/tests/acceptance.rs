//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed. Set
//! `ACCEPTANCE_ONLY=1,3` to run a subset.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use cropfusion::datamodel::{
    load_dataset, standardize, synth_generate, write_dataset, MultiViewDataset, Splits,
    SynthConfig, SynthView, ViewData, ViewSpec, MANIFEST_FILE,
};
use cropfusion::diffcore::{grad_check, GradCheckReport, Graph, NodeId, ReduceKind, Tensor};
use cropfusion::fusion::{
    ensemble_predict, fuse_gated, gate_weights, merge_simple, Batch, EnsembleModel, FusionMethod,
    FusionModel, FusionModelConfig, GateModule, GateType, MergeFunction,
};
use cropfusion::layers::{
    dropout_node, BatchNorm, DenseHead, EncoderConfig, GruEncoder, GruLayer, HeadConfig,
    Initializer, Mode, ParamBuilder, ParamKind, ParamStore, RegularizationConfig, Session,
};
use cropfusion::metrics::{
    aggregate, auc, average_accuracy, binary_f1, prediction_entropy, relative_improvement,
    round_half_up, RunMetrics,
};
use cropfusion::training::{
    fit, model_grad_check, relu_margin, run_experiment, training_loss, RunStatus, TrainConfig,
    TrainRunResult, Trainable,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;
const CHECKS_PER_METHOD: usize = 5;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

fn random_shape(rng: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..5)).collect()
}

/// Random positive weighting of every component, reduced to a scalar.
fn weighted_sum(g: &mut Graph<f64>, x: NodeId, seed: u64) -> NodeId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = g.shape(x).to_vec();
    let w = g.constant(random_tensor(&mut rng, &shape, 0.5, 1.5));
    let mut acc = g.mul(x, w).unwrap();
    while !g.shape(acc).is_empty() {
        acc = g.reduce_mean(acc, 0).unwrap();
    }
    acc
}

/// Tracks the worst relative error over many gradient checks.
#[derive(Default)]
struct Worst {
    error: f64,
    checks: usize,
}

impl Worst {
    fn record(&mut self, report: GradCheckReport, what: &str) -> std::result::Result<(), String> {
        self.checks += 1;
        self.error = self.error.max(report.max_relative_error);
        ensure(report.passed, || {
            format!(
                "{what}: relative error {:.3e} at {:?}, (analytic, numeric) = {:?}",
                report.max_relative_error, report.worst, report.worst_values
            )
        })
    }
}

// ---- criterion 1 ---------------------------------------------------------

fn primitive_checks(worst: &mut Worst) -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    type Unary = fn(&mut Graph<f64>, NodeId) -> NodeId;
    let unary: [(&str, Unary, f64); 4] = [
        ("sigmoid", |g, x| g.sigmoid(x), 4.0),
        ("tanh", |g, x| g.tanh(x), 3.0),
        ("relu", |g, x| g.relu(x), 2.0),
        ("scale", |g, x| g.scale(x, -1.7), 2.0),
    ];
    for trial in 0..20u64 {
        for (name, op, range) in unary {
            let rank = rng.random_range(1..=3);
            let shape = random_shape(&mut rng, rank);
            // keep relu inputs off the kink
            let x = random_tensor(&mut rng, &shape, -range, range).map(|v| {
                if v.abs() < 0.05 {
                    v + 0.1
                } else {
                    v
                }
            });
            let r = grad_check(
                |g, v| {
                    let y = op(g, v[0]);
                    Ok(weighted_sum(g, y, trial))
                },
                &[x],
                STEP,
                TOL,
            )
            .unwrap();
            worst.record(r, name)?;
        }

        let (m, k, n) = (
            rng.random_range(1..5),
            rng.random_range(1..5),
            rng.random_range(1..5),
        );
        let a = random_tensor(&mut rng, &[m, k], -1.0, 1.0);
        let b = random_tensor(&mut rng, &[k, n], -1.0, 1.0);
        let r = grad_check(
            |g, v| {
                let y = g.matmul(v[0], v[1])?;
                Ok(weighted_sum(g, y, trial))
            },
            &[a, b],
            STEP,
            TOL,
        )
        .unwrap();
        worst.record(r, "matmul")?;

        let rank = rng.random_range(1..=3);
        let sa = random_shape(&mut rng, rank);
        let sb = sa[rng.random_range(0..=rank)..].to_vec();
        let a = random_tensor(&mut rng, &sa, -1.0, 1.0);
        let b = random_tensor(&mut rng, &sb, -1.0, 1.0);
        for mul in [false, true] {
            let r = grad_check(
                |g, v| {
                    let y = if mul {
                        g.mul(v[0], v[1])?
                    } else {
                        g.add(v[0], v[1])?
                    };
                    Ok(weighted_sum(g, y, trial))
                },
                &[a.clone(), b.clone()],
                STEP,
                TOL,
            )
            .unwrap();
            worst.record(
                r,
                if mul {
                    "broadcast mul"
                } else {
                    "broadcast add"
                },
            )?;
        }

        let shape = random_shape(&mut rng, rank);
        let axis = rng.random_range(0..rank);
        let x = random_tensor(&mut rng, &shape, -2.0, 2.0);
        let r = grad_check(
            |g, v| {
                let y = g.softmax(v[0], axis)?;
                Ok(weighted_sum(g, y, trial))
            },
            &[x],
            STEP,
            TOL,
        )
        .unwrap();
        worst.record(r, "softmax")?;

        let mut other = shape.clone();
        other[axis] = rng.random_range(1..4);
        let a = random_tensor(&mut rng, &shape, -1.0, 1.0);
        let b = random_tensor(&mut rng, &other, -1.0, 1.0);
        let total = 2 * shape[axis] + other[axis];
        let start = rng.random_range(0..total);
        let end = rng.random_range(start + 1..=total);
        let r = grad_check(
            |g, v| {
                let c = g.concat(&[v[0], v[1], v[0]], axis)?;
                let s = g.slice(c, axis, start, end)?;
                let len = g.value(s).len();
                let flat = g.reshape(s, &[len])?;
                Ok(weighted_sum(g, flat, trial))
            },
            &[a, b],
            STEP,
            TOL,
        )
        .unwrap();
        worst.record(r, "concat/slice/reshape")?;

        // distinct values spaced well beyond the step give a strict maximiser
        let len: usize = shape.iter().product();
        let mut values: Vec<f64> = (0..len).map(|i| 0.6 + 0.05 * i as f64).collect();
        for i in (1..len).rev() {
            values.swap(i, rng.random_range(0..=i));
        }
        let x = Tensor::new(shape.clone(), values).unwrap();
        for kind in [ReduceKind::Mean, ReduceKind::Max, ReduceKind::Product] {
            let r = grad_check(
                |g, v| {
                    let y = g.reduce(v[0], axis, kind)?;
                    Ok(weighted_sum(g, y, trial))
                },
                &[x.clone()],
                STEP,
                TOL,
            )
            .unwrap();
            worst.record(r, &format!("reduce {kind:?}"))?;
        }

        let b = rng.random_range(1..8);
        let logits = random_tensor(&mut rng, &[b], -3.0, 3.0);
        let labels: Vec<f64> = (0..b)
            .map(|_| f64::from(rng.random_range(0..2u8)))
            .collect();
        let r = grad_check(
            |g, v| {
                let p = g.sigmoid(v[0]);
                g.bce(p, &labels, 1e-7)
            },
            &[logits],
            STEP,
            TOL,
        )
        .unwrap();
        worst.record(r, "sigmoid + bce")?;
    }

    // Train-mode batch norm gradients sum to zero per feature; instances whose
    // gradients nearly cancel fall below the resolution of central
    // differences and are redrawn.
    let mut checked = 0;
    let mut attempt = 0u64;
    while checked < 20 {
        attempt += 1;
        ensure(attempt < 400, || {
            "too few resolvable batch-norm instances".into()
        })?;
        let (b, d) = (rng.random_range(3..7), rng.random_range(1..5));
        let x = random_tensor(&mut rng, &[b, d], -6.0, 6.0);
        let gamma = random_tensor(&mut rng, &[d], 0.5, 1.5);
        let beta = random_tensor(&mut rng, &[d], -0.5, 0.5);
        let rm = random_tensor(&mut rng, &[d], -0.5, 0.5);
        let rv = random_tensor(&mut rng, &[d], 0.5, 2.0);
        let points = [x, gamma, beta];
        let readout = |g: &mut Graph<f64>, v: &[NodeId], train: bool| {
            let y = if train {
                g.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0
            } else {
                g.batch_norm_eval(v[0], v[1], v[2], rm.data(), rv.data(), 1e-5)?
            };
            let t = if train { g.tanh(y) } else { y };
            Ok(weighted_sum(g, t, attempt))
        };
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = points.iter().map(|t| g.variable(t.clone())).collect();
        let root = readout(&mut g, &leaves, true).unwrap();
        g.backward(root).unwrap();
        let resolvable = leaves.iter().all(|&l| {
            g.grad(l)
                .unwrap()
                .data()
                .iter()
                .all(|&v| v == 0.0 || v.abs() >= 1e-2)
        });
        if !resolvable {
            continue;
        }
        checked += 1;
        for train in [true, false] {
            let r = grad_check(|g, v| readout(g, v, train), &points, STEP, TOL).unwrap();
            worst.record(
                r,
                if train {
                    "batch norm (train)"
                } else {
                    "batch norm (eval)"
                },
            )?;
        }
    }
    Ok(())
}

/// Gradients of a session-built loss with respect to the inputs and every
/// trainable parameter, against central differences.
fn session_check<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    mode: Mode,
    forward: F,
) -> GradCheckReport
where
    F: Fn(&mut Session<'_, f64>, &[NodeId]) -> cropfusion::Result<NodeId>,
{
    let trainable = store.trainable_ids();
    let mut points: Vec<Tensor<f64>> = inputs.to_vec();
    points.extend(trainable.iter().map(|&id| store.value(id).clone()));

    let mut sess = Session::new(store, mode, 0);
    let nodes: Vec<NodeId> = inputs
        .iter()
        .map(|t| sess.graph.variable(t.clone()))
        .collect();
    let loss = forward(&mut sess, &nodes).unwrap();
    sess.backward(loss).unwrap();
    let mut analytic: Vec<Tensor<f64>> = nodes
        .iter()
        .zip(inputs)
        .map(|(&n, t)| {
            sess.graph
                .grad(n)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    analytic.extend(sess.trainable_gradients().into_iter().map(|(_, g)| g));

    let value = |p: &[Tensor<f64>]| {
        let mut s = store.clone();
        for (&id, t) in trainable.iter().zip(&p[inputs.len()..]) {
            *s.value_mut(id) = t.clone();
        }
        let mut sess = Session::new(&s, mode, 0);
        let nodes: Vec<NodeId> = p[..inputs.len()]
            .iter()
            .map(|t| sess.graph.variable(t.clone()))
            .collect();
        let loss = forward(&mut sess, &nodes)?;
        Ok(sess.graph.value(loss).data()[0])
    };
    cropfusion::diffcore::compare_with_finite_differences(value, &points, &analytic, STEP, TOL)
        .unwrap()
}

/// Gives running statistics non-trivial values so eval-mode batch norm is
/// not the identity.
fn perturb_buffers(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        if store.entry(id).kind == ParamKind::Buffer {
            let is_var = store.entry(id).name.ends_with("running_var");
            for v in store.value_mut(id).data_mut() {
                *v = if is_var {
                    rng.random_range(0.5..2.0)
                } else {
                    rng.random_range(-0.3..0.3)
                };
            }
        }
    }
}

fn steps_of(x: &Tensor<f64>) -> Vec<Tensor<f64>> {
    let (b, t, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    (0..t)
        .map(|ti| {
            let data = (0..b)
                .flat_map(|bi| (0..c).map(move |ci| x.data()[(bi * t + ti) * c + ci]))
                .collect();
            Tensor::new(vec![b, c], data).unwrap()
        })
        .collect()
}

fn layer_checks(worst: &mut Worst) -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let reg_bn = RegularizationConfig {
        dropout_rate: 0.0,
        ..Default::default()
    };
    for trial in 0..5u64 {
        // one GRU layer unrolled over T = 4 from the zero state
        let mut store = ParamStore::new();
        let mut init = Initializer::new(10 + trial);
        let layer = GruLayer::new(
            &mut ParamBuilder {
                store: &mut store,
                init: &mut init,
            },
            "gru",
            2,
            3,
        )
        .unwrap();
        let x = steps_of(&random_tensor(&mut rng, &[2, 4, 2], -1.0, 1.0));
        let r = session_check(&store, &x, Mode::Eval, |sess, steps| {
            let mut h = None;
            for &s in steps {
                h = Some(layer.step(sess, s, h)?);
            }
            Ok(weighted_sum(&mut sess.graph, h.unwrap(), trial))
        });
        worst.record(r, "GRU layer")?;

        // two-layer encoder with batch norm in eval mode
        let mut store = ParamStore::new();
        let mut init = Initializer::new(20 + trial);
        let enc = GruEncoder::new(
            &mut ParamBuilder {
                store: &mut store,
                init: &mut init,
            },
            "enc",
            3,
            &EncoderConfig {
                num_layers: 2,
                hidden_units: 3,
            },
            &reg_bn,
        )
        .unwrap();
        perturb_buffers(&mut store, &mut rng);
        let x = steps_of(&random_tensor(&mut rng, &[2, 4, 3], -1.0, 1.0));
        let r = session_check(&store, &x, Mode::Eval, |sess, steps| {
            let h = enc.encode_view(sess, steps)?;
            Ok(weighted_sum(&mut sess.graph, h, trial))
        });
        worst.record(r, "GRU encoder")?;

        // dense head, redrawn while any hidden pre-activation sits near the relu kink
        let (head, store, x) = loop {
            let mut store = ParamStore::new();
            let mut init = Initializer::new(rng.random());
            let head = DenseHead::new(
                &mut ParamBuilder {
                    store: &mut store,
                    init: &mut init,
                },
                "head",
                4,
                &HeadConfig { hidden_units: 3 },
                &reg_bn,
            )
            .unwrap();
            perturb_buffers(&mut store, &mut rng);
            let x = random_tensor(&mut rng, &[2, 4], -1.0, 1.0);
            let mut sess = Session::new(&store, Mode::Eval, 0);
            let xn = sess.input(x.clone());
            head.forward(&mut sess, xn).unwrap();
            if sess.graph.relu_margin().unwrap_or(f64::INFINITY) > 0.02 {
                break (head, store, x);
            }
        };
        let r = session_check(&store, &[x], Mode::Eval, |sess, inputs| {
            let logit = head.forward(sess, inputs[0])?;
            let p = sess.graph.sigmoid(logit);
            sess.graph.bce(p, &[1.0, 0.0], 1e-7)
        });
        worst.record(r, "dense head")?;

        // batch norm layer in train mode and dropout with a fixed mask
        let mut store = ParamStore::new();
        let mut init = Initializer::new(30 + trial);
        let bn = BatchNorm::new(
            &mut ParamBuilder {
                store: &mut store,
                init: &mut init,
            },
            "bn",
            3,
            &reg_bn,
        )
        .unwrap();
        let x = random_tensor(&mut rng, &[5, 3], -6.0, 6.0);
        let r = session_check(&store, &[x.clone()], Mode::Eval, |sess, inputs| {
            let y = bn.forward(sess, inputs[0])?;
            let t = sess.graph.tanh(y);
            Ok(weighted_sum(&mut sess.graph, t, trial))
        });
        worst.record(r, "batch norm layer")?;
        let r = session_check(&ParamStore::new(), &[x], Mode::Train, |sess, inputs| {
            let y = dropout_node(sess, inputs[0], 0.4)?;
            let t = sess.graph.tanh(y);
            Ok(weighted_sum(&mut sess.graph, t, trial))
        });
        worst.record(r, "dropout")?;

        // gated fusion modules
        for gate in GateType::ALL.iter().copied() {
            let mut store = ParamStore::new();
            let mut init = Initializer::new(40 + trial);
            let gm = GateModule::new(
                &mut ParamBuilder {
                    store: &mut store,
                    init: &mut init,
                },
                "gate",
                gate,
                3,
                3,
            )
            .unwrap();
            let reps: Vec<Tensor<f64>> = (0..3)
                .map(|_| random_tensor(&mut rng, &[2, 3], -1.0, 1.0))
                .collect();
            let r = session_check(&store, &reps, Mode::Eval, |sess, nodes| {
                let fused = fuse_gated(sess, &gm, nodes)?;
                Ok(weighted_sum(&mut sess.graph, fused, trial))
            });
            worst.record(r, &format!("gate {gate}"))?;
        }
    }
    Ok(())
}

/// Three views (two temporal, one static), T = 4.
fn tiny_dataset(seed: u64) -> MultiViewDataset {
    let cfg = SynthConfig {
        name: "tiny".into(),
        num_samples: 8,
        timesteps: 4,
        views: vec![
            SynthView::new("a", 2, false, 0.8, 1.0),
            SynthView::new("b", 3, false, 0.5, 1.0),
            SynthView::new("c", 2, true, 0.3, 1.0),
        ],
        positive_fraction: 0.5,
        test_fraction: 0.25,
        val_fraction: 0.0,
        seed,
    };
    synth_generate(&cfg).unwrap()
}

fn tiny_config(method: FusionMethod, views: &[String]) -> FusionModelConfig {
    let mut cfg = FusionModelConfig::new(method, views.to_vec());
    cfg.encoder = EncoderConfig {
        num_layers: 2,
        hidden_units: 3,
    };
    cfg.head = HeadConfig { hidden_units: 3 };
    cfg
}

/// Whether central differences at the test step can resolve every loss
/// gradient of the instance. With `D(h) = g + c h^2 + O(h^4)`, the
/// truncation error at `h` is about `|D(2h) - D(h)| / 3`; the instance is
/// kept when that estimate stays below half the tolerance, relative to the
/// gradient, for every component. Only finite differences are consulted.
fn resolvable(model: &FusionModel<f64>, batch: &Batch<f64>) -> bool {
    let loss_at = |store: &ParamStore<f64>| {
        let mut sess = Session::new(store, Mode::Eval, 0);
        let loss = training_loss(&mut sess, model, batch).unwrap();
        sess.graph.value(loss.total).data()[0]
    };
    let mut store = model.params.clone();
    for id in model.params.trainable_ids() {
        for k in 0..model.params.value(id).len() {
            let x = model.params.value(id).data()[k];
            let mut central = |h: f64| {
                store.value_mut(id).data_mut()[k] = x + h;
                let up = loss_at(&store);
                store.value_mut(id).data_mut()[k] = x - h;
                let down = loss_at(&store);
                store.value_mut(id).data_mut()[k] = x;
                (up - down) / (2.0 * h)
            };
            let (d1, d2) = (central(STEP), central(2.0 * STEP));
            if (d2 - d1).abs() / 3.0 > 0.5 * TOL * d1.abs().max(1e-8) {
                return false;
            }
        }
    }
    true
}

fn model_checks(worst: &mut Worst, redrawn: &mut usize) -> std::result::Result<(), String> {
    let ds = tiny_dataset(1);
    let views: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let batch = Batch::<f64>::from_dataset(&ds, &views, &[0, 1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    for method in [
        FusionMethod::Input,
        FusionMethod::FeatureS,
        FusionMethod::FeatureG,
        FusionMethod::Decision,
        FusionMethod::Multiloss,
    ] {
        let mut checked = 0;
        let mut seed = 0;
        while checked < CHECKS_PER_METHOD {
            seed += 1;
            ensure(seed < 200, || {
                format!("{method}: no instance within the oracle's resolution")
            })?;
            let mut cfg = tiny_config(method, &views);
            cfg.regularization.dropout_rate = 0.0;
            cfg.seed = seed;
            let mut model = FusionModel::<f64>::for_dataset(cfg, &ds).unwrap();
            perturb_buffers(&mut model.params, &mut rng);
            // central differences straddling a relu kink average the two
            // one-sided slopes; instances whose curvature puts the O(h^2)
            // truncation error near the tolerance are outside the oracle's
            // resolution
            if relu_margin(&model, &batch).unwrap() < 0.02 || !resolvable(&model, &batch) {
                *redrawn += 1;
                continue;
            }
            checked += 1;
            let r = model_grad_check(&model, &batch, STEP, TOL).unwrap();
            worst.record(r, &format!("{method} end to end"))?;
        }
    }
    Ok(())
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut worst = Worst::default();
    primitive_checks(&mut worst)?;
    layer_checks(&mut worst)?;
    let mut redrawn = 0;
    model_checks(&mut worst, &mut redrawn)?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || {
        format!("took {elapsed:.1?}")
    })?;
    Ok(format!(
        "{} checks, worst relative error {:.2e} < 1e-4 ({} model instances redrawn), {:.1?}",
        worst.checks, worst.error, redrawn, elapsed
    ))
}

// ---- criterion 2 ---------------------------------------------------------

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut instances = 0;
    while instances < 1000 {
        let n = rng.random_range(2..=200);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        if labels.iter().all(|&y| y == labels[0]) {
            continue;
        }
        instances += 1;
        // coarse grid scores force ties
        let levels = rng.random_range(2..50);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let threshold = [0.5, 0.3, 0.75][instances % 3];

        let (mut wins, mut ties, mut pos, mut neg) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            if labels[i] == 1 {
                pos += 1;
                for j in 0..n {
                    if labels[j] == 0 {
                        if scores[i] > scores[j] {
                            wins += 1;
                        } else if scores[i] == scores[j] {
                            ties += 1;
                        }
                    }
                }
            } else {
                neg += 1;
            }
        }
        let expected_auc = 100.0 * (2 * wins + ties) as f64 / (2 * pos * neg) as f64;
        let got = auc(&scores, &labels).unwrap();
        ensure(got == expected_auc, || {
            format!("AUC {got} != brute force {expected_auc}")
        })?;

        let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
        for (&s, &y) in scores.iter().zip(&labels) {
            match (s >= threshold, y == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        let expected_aa =
            100.0 * (tp as f64 / (tp + fn_) as f64 + tn as f64 / (tn + fp) as f64) / 2.0;
        let got = average_accuracy(&scores, &labels, threshold).unwrap();
        ensure(got == expected_aa, || {
            format!("AA {got} != oracle {expected_aa}")
        })?;
        let expected_f1 = if tp == 0 {
            0.0
        } else {
            100.0 * (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
        };
        let got = binary_f1(&scores, &labels, threshold).unwrap();
        ensure(got == expected_f1, || {
            format!("F1 {got} != oracle {expected_f1}")
        })?;
    }
    let half = prediction_entropy(&[0.5; 17]).unwrap();
    ensure(half == 100.0, || format!("entropy of 0.5 is {half}"))?;
    let certain = prediction_entropy(&[0.0, 1.0, 1.0, 0.0]).unwrap();
    ensure(certain == 0.0, || format!("entropy of 0/1 is {certain}"))?;
    let run = |aa| RunMetrics {
        aa,
        auc: aa,
        f1: aa,
        entropy: aa,
    };
    let report = aggregate(&[run(60.0), run(70.0)]).unwrap();
    ensure(
        report.aa.mean == 65.0 && (report.aa.std - 7.07).abs() <= 0.01,
        || format!("aggregate gives {:?}", report.aa),
    )?;
    Ok(format!(
        "1000 AUC/AA/F1 instances exact, entropy 100/0, aggregate {:.2} ± {:.2}",
        report.aa.mean, report.aa.std
    ))
}

// ---- criterion 3 ---------------------------------------------------------

fn criterion_3() -> Check {
    let cases = [
        (66.5, 63.0, 6.0),
        (82.1, 78.7, 4.0),
        (66.5, 48.0, 39.0),
        (82.1, 64.9, 27.0),
    ];
    let mut shown = Vec::new();
    for (a, b, expected) in cases {
        let got = round_half_up(relative_improvement(a, b).unwrap());
        ensure(got == expected, || {
            format!("({a}, {b}) -> {got}%, expected {expected}%")
        })?;
        shown.push(format!("({a}, {b}) -> {got}%"));
    }
    Ok(shown.join(", "))
}

// ---- criterion 4 ---------------------------------------------------------

/// Single-view models carrying the parameters of each decision branch.
fn branches_as_members(
    decision: &FusionModel<f64>,
    ds: &MultiViewDataset,
) -> Vec<FusionModel<f64>> {
    decision
        .config()
        .views
        .iter()
        .map(|view| {
            let mut cfg = decision.config().clone();
            cfg.method = FusionMethod::Input;
            cfg.views = vec![view.clone()];
            let mut m = FusionModel::<f64>::for_dataset(cfg, ds).unwrap();
            for id in m.params.ids().collect::<Vec<_>>() {
                let name = m.params.entry(id).name.clone();
                let source = name
                    .replacen("input.encoder", &format!("{view}.encoder"), 1)
                    .replacen("input.head", &format!("{view}.head"), 1);
                let src = decision.params.find(&source).unwrap();
                *m.params.value_mut(id) = decision.params.value(src).clone();
            }
            m
        })
        .collect()
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(505);

    for gate in GateType::ALL.iter().copied() {
        for trial in 0..100u64 {
            let (b, d, v) = (
                rng.random_range(1..6),
                rng.random_range(1..8),
                rng.random_range(2..6),
            );
            let mut store = ParamStore::<f64>::new();
            let mut init = Initializer::new(trial);
            let gm = GateModule::new(
                &mut ParamBuilder {
                    store: &mut store,
                    init: &mut init,
                },
                "gate",
                gate,
                v,
                d,
            )
            .unwrap();
            let mut sess = Session::new(&store, Mode::Eval, 0);
            let reps: Vec<NodeId> = (0..v)
                .map(|_| sess.input(random_tensor(&mut rng, &[b, d], -3.0, 3.0)))
                .collect();
            let w = gate_weights(&mut sess, &gm, &reps).unwrap();
            let t = sess.graph.value(w);
            let per_view = if gate == GateType::GatedFA { d } else { 1 };
            for bi in 0..b {
                for f in 0..per_view {
                    let col: Vec<f64> = (0..v)
                        .map(|vi| t.data()[(bi * v + vi) * per_view + f])
                        .collect();
                    let sum: f64 = col.iter().sum();
                    ensure(
                        col.iter().all(|&x| x >= 0.0) && (sum - 1.0).abs() < 1e-6,
                        || format!("{gate}: weights {col:?} sum to {sum}"),
                    )?;
                }
            }

            // identical representations pass through the gate unchanged
            let h = random_tensor(&mut rng, &[b, d], -2.0, 2.0);
            let same: Vec<NodeId> = (0..v).map(|_| sess.input(h.clone())).collect();
            let fused = fuse_gated(&mut sess, &gm, &same).unwrap();
            let out = sess.graph.value(fused);
            ensure(
                out.data()
                    .iter()
                    .zip(h.data())
                    .all(|(a, b)| (a - b).abs() < 1e-9),
                || format!("{gate}: fusing identical views changed them"),
            )?;
        }
    }

    for trial in 0..50 {
        let (b, d, v) = (
            rng.random_range(1..5),
            rng.random_range(1..6),
            rng.random_range(2..5),
        );
        let reps: Vec<Tensor<f64>> = (0..v)
            .map(|_| random_tensor(&mut rng, &[b, d], -2.0, 2.0))
            .collect();
        let mut perm: Vec<usize> = (0..v).collect();
        for i in (1..v).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        for merge in [
            MergeFunction::Average,
            MergeFunction::Maximum,
            MergeFunction::Product,
        ] {
            let mut g = Graph::new();
            let a: Vec<NodeId> = reps.iter().map(|t| g.constant(t.clone())).collect();
            let p: Vec<NodeId> = perm.iter().map(|&i| a[i]).collect();
            let ma = merge_simple(&mut g, &a, merge).unwrap();
            let mp = merge_simple(&mut g, &p, merge).unwrap();
            let (va, vp) = (g.value(ma).data().to_vec(), g.value(mp).data().to_vec());
            ensure(
                va.iter().zip(&vp).all(|(x, y)| (x - y).abs() < 1e-12),
                || format!("{merge} not permutation invariant (trial {trial})"),
            )?;
        }
    }

    for _ in 0..100 {
        let (n, v) = (rng.random_range(1..30), rng.random_range(1..6));
        let branches: Vec<Vec<f64>> = (0..v)
            .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
            .collect();
        let avg = ensemble_predict(&branches).unwrap();
        for i in 0..n {
            let mean = branches.iter().map(|b| b[i]).sum::<f64>() / v as f64;
            ensure((avg[i] - mean).abs() < 1e-9, || {
                format!("ensemble {} vs mean {mean}", avg[i])
            })?;
        }
    }

    let ds = tiny_dataset(2);
    let views: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let mut decision =
        FusionModel::<f64>::for_dataset(tiny_config(FusionMethod::Decision, &views), &ds).unwrap();
    perturb_buffers(&mut decision.params, &mut rng);
    let ensemble = EnsembleModel::new(branches_as_members(&decision, &ds)).unwrap();
    let all: Vec<usize> = (0..ds.num_samples).collect();
    let batch = Batch::from_dataset(&ds, &views, &all).unwrap();
    let joint = decision.predict_batch(&batch).unwrap();
    let two_step = ensemble.predict_batch(&batch).unwrap();
    let worst = joint
        .iter()
        .zip(&two_step)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(worst < 1e-9, || {
        format!("decision vs ensemble differ by {worst:e}")
    })?;
    Ok(format!(
        "simplex on 300 gated batches, merges permutation invariant, gated identity, ensemble = decision within {worst:.1e}"
    ))
}

// ---- criteria 5 and 6 ----------------------------------------------------

/// Optical-like (11 channels, informativeness 0.8), radar-like (2, 0.5) and
/// a static dem-like view (2, 0.0), standardised on the train split. Noise
/// scales put the best single view in the mid 80s so fusion has headroom.
fn study_dataset() -> MultiViewDataset {
    let cfg = SynthConfig {
        name: "study".into(),
        num_samples: 2000,
        timesteps: 12,
        views: vec![
            SynthView::new("optical", 11, false, 0.8, 4.0),
            SynthView::new("radar", 2, false, 0.5, 1.5),
            SynthView::new("dem", 2, true, 0.0, 1.0),
        ],
        positive_fraction: 0.5,
        test_fraction: 0.25,
        val_fraction: 0.1,
        seed: 42,
    };
    standardize(&synth_generate(&cfg).unwrap()).unwrap().0
}

struct Study {
    results: Vec<TrainRunResult>,
    elapsed: Duration,
}

/// Single-view baselines (the ensemble members), feature-s(average),
/// feature-g(gatedf-a), multiloss and ensemble, three runs each.
fn run_study(parallel: bool) -> Study {
    let start = Instant::now();
    let ds = study_dataset();
    let cfg = TrainConfig {
        runs: 3,
        base_seed: 100,
        parallel,
        ..TrainConfig::default()
    };
    let views: Vec<String> = ["optical", "radar", "dem"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let ensemble = run_experiment(
        &FusionModelConfig::new(FusionMethod::Ensemble, views.clone()),
        &cfg,
        &ds,
    )
    .unwrap();
    let mut results: Vec<TrainRunResult> = Vec::new();
    for i in 0..views.len() {
        results.extend(ensemble.iter().map(|o| o.members[i].clone()));
    }
    for method in [
        FusionMethod::FeatureS,
        FusionMethod::FeatureG,
        FusionMethod::Multiloss,
    ] {
        let mut mc = FusionModelConfig::new(method, views.clone());
        match method {
            FusionMethod::FeatureS => mc.merge = Some(MergeFunction::Average),
            FusionMethod::FeatureG => mc.gate = Some(GateType::GatedFA),
            _ => {}
        }
        results.extend(
            run_experiment(&mc, &cfg, &ds)
                .unwrap()
                .into_iter()
                .map(|o| o.result),
        );
    }
    results.extend(ensemble.into_iter().map(|o| o.result));
    Study {
        results,
        elapsed: start.elapsed(),
    }
}

fn mean_aa(results: &[TrainRunResult], label: &str) -> f64 {
    let aa: Vec<f64> = results
        .iter()
        .filter(|r| r.label() == label && r.status == RunStatus::Ok)
        .map(|r| r.metrics.unwrap().aa)
        .collect();
    aa.iter().sum::<f64>() / aa.len() as f64
}

fn criterion_5(study: &Study) -> Check {
    let r = &study.results;
    ensure(r.iter().all(|x| x.status == RunStatus::Ok), || {
        "a run failed".into()
    })?;
    for label in [
        "single:optical",
        "single:radar",
        "single:dem",
        "feature-s(average)",
        "feature-g(gatedf-a)",
        "multiloss",
        "ensemble",
    ] {
        let n = r.iter().filter(|x| x.label() == label).count();
        ensure(n == 3, || format!("{label} has {n} runs"))?;
    }
    let singles: Vec<(&str, f64)> = ["optical", "radar", "dem"]
        .iter()
        .map(|v| (*v, mean_aa(r, &format!("single:{v}"))))
        .collect();
    let table = |extra: &str| {
        let mut s: Vec<String> = singles.iter().map(|(v, a)| format!("{v} {a:.2}")).collect();
        s.push(extra.to_string());
        s.join(", ")
    };
    let dem = singles[2].1;
    ensure((45.0..=55.0).contains(&dem), || {
        format!("(a) dem AA {dem:.2} outside [45, 55]")
    })?;
    let best_single = singles.iter().map(|s| s.1).fold(f64::MIN, f64::max);
    ensure(best_single >= 80.0, || {
        format!("(b) best single AA {best_single:.2} < 80")
    })?;
    let mut fusion = Vec::new();
    for label in [
        "feature-s(average)",
        "feature-g(gatedf-a)",
        "multiloss",
        "ensemble",
    ] {
        let aa = mean_aa(r, label);
        ensure(aa >= best_single - 2.0, || {
            format!(
                "(c) {label} AA {aa:.2} < best single {best_single:.2} - 2; {}",
                table("")
            )
        })?;
        fusion.push((label, aa));
    }
    let best_fusion = fusion.iter().map(|f| f.1).fold(f64::MIN, f64::max);
    ensure(best_fusion > best_single, || {
        format!("(d) best fusion {best_fusion:.2} does not exceed best single {best_single:.2}")
    })?;
    ensure(study.elapsed < Duration::from_secs(30 * 60), || {
        format!("took {:.1?}", study.elapsed)
    })?;
    let fused: Vec<String> = fusion.iter().map(|(l, a)| format!("{l} {a:.2}")).collect();
    Ok(format!(
        "mean AA {}; {:.0?}",
        table(&fused.join(", ")),
        Duration::from_secs(study.elapsed.as_secs())
    ))
}

/// The results.jsonl lines without the wall-clock field.
fn metric_lines(results: &[TrainRunResult]) -> Vec<String> {
    results
        .iter()
        .map(|r| {
            let mut v = serde_json::to_value(r).unwrap();
            v.as_object_mut().unwrap().remove("wall_time_s");
            v.to_string()
        })
        .collect()
}

fn criterion_6(first: &Study) -> Check {
    // the repeat runs sequentially, the first in parallel where cores allow
    let second = run_study(!TrainConfig::default().parallel);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for (name, study) in [("a", first), ("b", &second)] {
        let path = dir.path().join(format!("{name}.jsonl"));
        let text: String = study
            .results
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect();
        fs::write(&path, text).map_err(|e| e.to_string())?;
        let back: Vec<TrainRunResult> = fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        files.push(back);
    }
    let (a, b) = (&files[0], &files[1]);
    ensure(a.len() == b.len(), || {
        "different numbers of result lines".into()
    })?;
    for (x, y) in a.iter().zip(b) {
        let (mx, my) = (x.metrics.unwrap(), y.metrics.unwrap());
        let same = [
            (mx.aa, my.aa),
            (mx.auc, my.auc),
            (mx.f1, my.f1),
            (mx.entropy, my.entropy),
        ]
        .iter()
        .all(|(p, q)| p.to_bits() == q.to_bits())
            && x.val_loss.map(f64::to_bits) == y.val_loss.map(f64::to_bits);
        ensure(same, || format!("{} run {} differs", x.label(), x.run))?;
    }
    ensure(metric_lines(a) == metric_lines(b), || {
        "result lines differ".into()
    })?;
    Ok(format!(
        "{} result lines bitwise identical across reruns",
        a.len()
    ))
}

// ---- criterion 7 ---------------------------------------------------------

/// Replays a fixed validation-loss trajectory and records restores.
struct Scripted {
    losses: Vec<f64>,
    epoch: usize,
    restored: Option<usize>,
}

impl Trainable for Scripted {
    type Snapshot = usize;

    fn train_epoch(&mut self, epoch: usize) -> cropfusion::Result<f64> {
        self.epoch = epoch;
        Ok(0.0)
    }

    fn validation_loss(&mut self) -> cropfusion::Result<f64> {
        Ok(self.losses[(self.epoch - 1).min(self.losses.len() - 1)])
    }

    fn snapshot(&self) -> usize {
        self.epoch
    }

    fn restore(&mut self, snapshot: usize) {
        self.restored = Some(snapshot);
    }
}

fn criterion_7() -> Check {
    let cfg = TrainConfig::default();
    ensure(
        cfg.patience == 5
            && cfg.min_delta == 0.01
            && cfg.max_epochs == 1000
            && cfg.batch_size == 256,
        || format!("default protocol is {cfg:?}"),
    )?;
    let rule = cfg.early_stopping();

    // Reference best: 0.70 at epoch 3. Epochs 4-8 each improve on it by less
    // than 0.01, so training stops at epoch 8 and never sees epoch 9. The
    // lowest loss seen is 0.691 at epoch 6.
    let losses = [0.90, 0.80, 0.70, 0.695, 0.692, 0.691, 0.6915, 0.6935, 0.10];
    let mut s = Scripted {
        losses: losses.to_vec(),
        epoch: 0,
        restored: None,
    };
    let h = fit(&mut s, &rule).map_err(|e| e.to_string())?;
    ensure(h.epochs == 8 && h.stopped_early, || {
        format!("stopped at {} (early: {})", h.epochs, h.stopped_early)
    })?;
    ensure(h.best_epoch == 6 && s.restored == Some(6), || {
        format!("restored {:?}, best epoch {}", s.restored, h.best_epoch)
    })?;
    ensure(h.best_val_loss == 0.691, || {
        format!("best loss {}", h.best_val_loss)
    })?;

    // a gain just above min_delta resets patience
    let losses = [
        1.0, 0.995, 0.994, 0.993, 0.98, 0.979, 0.978, 0.977, 0.976, 0.975, 0.5,
    ];
    let mut s = Scripted {
        losses: losses.to_vec(),
        epoch: 0,
        restored: None,
    };
    let h = fit(&mut s, &rule).map_err(|e| e.to_string())?;
    ensure(h.epochs == 10 && s.restored == Some(10), || {
        format!(
            "second trajectory stopped at {} restoring {:?}",
            h.epochs, s.restored
        )
    })?;

    // steady progress runs to the epoch cap
    let losses: Vec<f64> = (0..1000).map(|e| 100.0 - 0.02 * e as f64).collect();
    let mut s = Scripted {
        losses,
        epoch: 0,
        restored: None,
    };
    let h = fit(&mut s, &rule).map_err(|e| e.to_string())?;
    ensure(
        h.epochs == 1000 && !h.stopped_early && s.restored == Some(1000),
        || format!("capped run stopped at {}", h.epochs),
    )?;
    Ok("stops at epoch 8 restoring epoch 6; patience resets on a > 0.01 gain; cap at 1000".into())
}

// ---- criterion 8 ---------------------------------------------------------

fn random_dataset(rng: &mut ChaCha8Rng, trial: usize) -> MultiViewDataset {
    let n = rng.random_range(1..40);
    let t = rng.random_range(1..13);
    let num_views = rng.random_range(1..5);
    let views = (0..num_views)
        .map(|v| {
            let channels = rng.random_range(1..6);
            let spec = if rng.random_bool(0.3) {
                ViewSpec::fixed(&format!("v{v}"), channels)
            } else {
                ViewSpec::temporal(&format!("v{v}"), channels, t)
            };
            let values = (0..n * spec.sample_len())
                .map(|_| match rng.random_range(0..10) {
                    0 => 0.0,
                    1 => -0.0,
                    2 => f32::MIN_POSITIVE,
                    3 => f32::MAX,
                    _ => rng.random_range(-1e6f32..1e6),
                })
                .collect();
            ViewData { spec, values }
        })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let a = rng.random_range(0..=n);
    let b = rng.random_range(a..=n);
    let splits = Splits {
        train: order[..a].to_vec(),
        val: order[a..b].to_vec(),
        test: order[b..].to_vec(),
    };
    MultiViewDataset::new(format!("random-{trial}"), t, views, labels, splits).unwrap()
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for trial in 0..100 {
        let ds = random_dataset(&mut rng, trial);
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        write_dataset(&ds, dir.path()).map_err(|e| e.to_string())?;
        let back = load_dataset(dir.path()).map_err(|e| e.to_string())?;
        let bits = |d: &MultiViewDataset| -> Vec<Vec<u32>> {
            d.views
                .iter()
                .map(|v| v.values.iter().map(|x| x.to_bits()).collect())
                .collect()
        };
        ensure(back == ds && bits(&back) == bits(&ds), || {
            format!("trial {trial} did not round-trip")
        })?;
    }

    // Hand-laid fixture: N = 2, T = 3, temporal view "s" with C = 2 and a
    // static view "d" with C = 3. Element (n, t, c) of "s" sits at byte
    // 4 * ((n * T + t) * C + c), element (n, c) of "d" at byte 4 * (n * C + c).
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = r#"{
        "name": "fixture", "num_samples": 2, "timesteps": 3,
        "views": [
            {"name": "s", "channels": 2, "static": false, "file": "s.f32"},
            {"name": "d", "channels": 3, "static": true, "file": "d.f32"}
        ],
        "labels_file": "labels.u8",
        "splits": {"train": [1], "val": [], "test": [0]}
    }"#;
    fs::write(dir.path().join(MANIFEST_FILE), manifest).unwrap();
    let mut s = vec![0u8; 2 * 3 * 2 * 4];
    for n in 0..2 {
        for t in 0..3 {
            for c in 0..2 {
                let offset = 4 * ((n * 3 + t) * 2 + c);
                let value = (100 * n + 10 * t + c) as f32;
                s[offset..offset + 4].copy_from_slice(&value.to_le_bytes());
            }
        }
    }
    // bytes 12..16 hold (n=0, t=1, c=1) = 11 and bytes 44..48 hold (n=1, t=2, c=1) = 121
    ensure(
        s[12..16] == 11.0f32.to_le_bytes() && s[44..48] == 121.0f32.to_le_bytes(),
        || "fixture layout".into(),
    )?;
    fs::write(dir.path().join("s.f32"), &s).unwrap();
    let mut d = Vec::new();
    for v in [-1.5f32, 0.25, 7.0, 1e-3, -0.0, 3.5] {
        d.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.path().join("d.f32"), &d).unwrap();
    fs::write(dir.path().join("labels.u8"), [1u8, 0]).unwrap();

    let ds = load_dataset(dir.path()).map_err(|e| e.to_string())?;
    let sv = ds.view("s").unwrap();
    for n in 0..2 {
        for t in 0..3 {
            for c in 0..2 {
                let got = sv.sample(n)[t * 2 + c];
                let want = (100 * n + 10 * t + c) as f32;
                ensure(got == want, || {
                    format!("s[{n},{t},{c}] = {got}, expected {want}")
                })?;
            }
        }
    }
    let dv = ds.view("d").unwrap();
    ensure(
        dv.spec.is_static && dv.sample(0) == [-1.5, 0.25, 7.0],
        || format!("d[0] = {:?}", dv.sample(0)),
    )?;
    ensure(
        dv.sample(1)[0] == 1e-3 && dv.sample(1)[1].to_bits() == (-0.0f32).to_bits(),
        || format!("d[1] = {:?}", dv.sample(1)),
    )?;
    ensure(
        ds.labels == [1, 0] && ds.splits.train == [1] && ds.splits.test == [0],
        || "labels or splits".into(),
    )?;
    Ok("100 random datasets round-trip bit for bit; byte-offset fixture loads".into())
}

// ---- driver --------------------------------------------------------------

fn guarded(f: impl FnOnce() -> Check) -> Check {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(e) => Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    panic::set_hook(Box::new(|_| {}));

    let titles = [
        "gradient correctness",
        "metric oracles",
        "relative improvement arithmetic",
        "fusion invariants",
        "synthetic fusion study",
        "determinism",
        "early-stopping protocol",
        "dataset format round trip",
    ];
    let mut study: Option<Study> = None;
    let mut failures = 0;
    println!("acceptance criteria");
    for n in 1..=8 {
        if !wanted(n) {
            continue;
        }
        let outcome = match n {
            1 => guarded(criterion_1),
            2 => guarded(criterion_2),
            3 => guarded(criterion_3),
            4 => guarded(criterion_4),
            5 | 6 => {
                if study.is_none() {
                    match panic::catch_unwind(|| run_study(TrainConfig::default().parallel)) {
                        Ok(s) => study = Some(s),
                        Err(_) => {
                            failures += 1;
                            println!(
                                "criterion {n} ({}): FAIL: study did not complete",
                                titles[n - 1]
                            );
                            continue;
                        }
                    }
                }
                let s = study.as_ref().unwrap();
                if n == 5 {
                    guarded(|| criterion_5(s))
                } else {
                    guarded(|| criterion_6(s))
                }
            }
            7 => guarded(criterion_7),
            _ => guarded(criterion_8),
        };
        match outcome {
            Ok(detail) => println!("criterion {n} ({}): PASS: {detail}", titles[n - 1]),
            Err(why) => {
                failures += 1;
                println!("criterion {n} ({}): FAIL: {why}", titles[n - 1]);
            }
        }
    }
    if failures == 0 {
        println!("all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}

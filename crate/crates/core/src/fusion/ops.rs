use super::{GateType, MergeFunction};
use crate::diffcore::{Graph, NodeId, ReduceKind, Scalar, Tensor};
use crate::error::{shape_err, Result};
use crate::layers::{ParamBuilder, ParamId, Session};

fn check_views<T: Scalar>(g: &Graph<T>, reps: &[NodeId]) -> Result<(usize, usize)> {
    if reps.len() < 2 {
        return Err(shape_err(format!(
            "fusion needs at least two views, got {}",
            reps.len()
        )));
    }
    let shape = g.shape(reps[0]).to_vec();
    if shape.len() != 2 {
        return Err(shape_err(format!(
            "view-representations must be [B, D], got {shape:?}"
        )));
    }
    if let Some(&bad) = reps.iter().find(|&&r| g.shape(r) != shape.as_slice()) {
        return Err(shape_err(format!(
            "view-representation shapes differ: {shape:?} vs {:?}",
            g.shape(bad)
        )));
    }
    Ok((shape[0], shape[1]))
}

/// Stacks `V` representations `[B, D]` into `[B, V, D]`.
pub fn stack_views<T: Scalar>(g: &mut Graph<T>, reps: &[NodeId]) -> Result<NodeId> {
    let (b, d) = check_views(g, reps)?;
    let expanded = reps
        .iter()
        .map(|&r| g.reshape(r, &[b, 1, d]))
        .collect::<Result<Vec<_>>>()?;
    g.concat(&expanded, 1)
}

/// Elementwise mean, max or product across views, or concatenation along the
/// feature axis in view order.
pub fn merge_simple<T: Scalar>(
    g: &mut Graph<T>,
    reps: &[NodeId],
    merge: MergeFunction,
) -> Result<NodeId> {
    check_views(g, reps)?;
    let kind = match merge {
        MergeFunction::Concatenate => return g.concat(reps, 1),
        MergeFunction::Average => ReduceKind::Mean,
        MergeFunction::Maximum => ReduceKind::Max,
        MergeFunction::Product => ReduceKind::Product,
    };
    let stacked = stack_views(g, reps)?;
    g.reduce(stacked, 1, kind)
}

/// Per-sample attention over views: a linear map from a context vector to
/// one logit per view (or per view and feature), normalised by softmax over
/// the view axis.
#[derive(Clone, Debug)]
pub struct GateModule {
    pub gate: GateType,
    pub views: usize,
    pub dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl GateModule {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        prefix: &str,
        gate: GateType,
        views: usize,
        dim: usize,
    ) -> Result<Self> {
        let context = match gate {
            GateType::GatedC => views * dim,
            GateType::GatedA | GateType::GatedFA => dim,
        };
        let outputs = match gate {
            GateType::GatedFA => views * dim,
            GateType::GatedC | GateType::GatedA => views,
        };
        Ok(Self {
            gate,
            views,
            dim,
            weight: b.weight(format!("{prefix}.w"), context, outputs, outputs)?,
            bias: b.bias(format!("{prefix}.b"), outputs)?,
        })
    }
}

/// Gate weights `[B, V]`, or `[B, V, D]` for the feature-specific gate.
pub fn gate_weights<T: Scalar>(
    sess: &mut Session<'_, T>,
    gate: &GateModule,
    reps: &[NodeId],
) -> Result<NodeId> {
    let (b, d) = check_views(&sess.graph, reps)?;
    if reps.len() != gate.views || d != gate.dim {
        return Err(shape_err(format!(
            "gate built for {} views of size {}, got {} of size {d}",
            gate.views,
            gate.dim,
            reps.len()
        )));
    }
    let w = sess.param(gate.weight);
    let bias = sess.param(gate.bias);
    let g = &mut sess.graph;
    let context = match gate.gate {
        GateType::GatedC => g.concat(reps, 1)?,
        GateType::GatedA | GateType::GatedFA => merge_simple(g, reps, MergeFunction::Average)?,
    };
    let logits = g.matmul(context, w)?;
    let logits = g.add(logits, bias)?;
    match gate.gate {
        GateType::GatedFA => {
            let logits = g.reshape(logits, &[b, gate.views, d])?;
            g.softmax(logits, 1)
        }
        GateType::GatedC | GateType::GatedA => g.softmax(logits, 1),
    }
}

/// `Σ_v w_v ⊙ h_v` for weights `[B, V]` (one scalar per view) or
/// `[B, V, D]`.
pub fn fuse_with_weights<T: Scalar>(
    g: &mut Graph<T>,
    weights: NodeId,
    reps: &[NodeId],
) -> Result<NodeId> {
    let (b, d) = check_views(g, reps)?;
    let v = reps.len();
    let stacked = stack_views(g, reps)?;
    let shape = g.shape(weights).to_vec();
    let w = match shape.as_slice() {
        s if s == [b, v, d] => weights,
        s if s == [b, v] => {
            // broadcast each scalar weight over the feature axis
            let col = g.reshape(weights, &[b * v, 1])?;
            let ones = g.constant(Tensor::full(&[1, d], T::one()));
            let wide = g.matmul(col, ones)?;
            g.reshape(wide, &[b, v, d])?
        }
        s => {
            return Err(shape_err(format!(
                "gate weights must be [{b}, {v}] or [{b}, {v}, {d}], got {s:?}"
            )))
        }
    };
    let weighted = g.mul(stacked, w)?;
    let mean = g.reduce_mean(weighted, 1)?;
    Ok(g.scale(mean, T::from_f64(v as f64)))
}

/// Gate weights followed by the weighted sum of representations.
pub fn fuse_gated<T: Scalar>(
    sess: &mut Session<'_, T>,
    gate: &GateModule,
    reps: &[NodeId],
) -> Result<NodeId> {
    let w = gate_weights(sess, gate, reps)?;
    fuse_with_weights(&mut sess.graph, w, reps)
}

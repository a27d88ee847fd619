use super::norm::{dropout_node, BatchNorm};
use super::params::{ParamBuilder, ParamId};
use super::session::Session;
use super::{EncoderConfig, RegularizationConfig};
use crate::diffcore::{Graph, NodeId, Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

/// One GRU layer. Gate blocks are laid out as `[r | z | n]` along the
/// columns of both weight matrices and both biases.
#[derive(Clone, Debug)]
pub struct GruLayer {
    pub input_size: usize,
    pub hidden_units: usize,
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
}

impl GruLayer {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        prefix: &str,
        input_size: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            input_size,
            hidden_units: hidden,
            w_input: b.weight(
                format!("{prefix}.w_input"),
                input_size,
                3 * hidden,
                3 * hidden,
            )?,
            w_hidden: b.weight(format!("{prefix}.w_hidden"), hidden, 3 * hidden, 3 * hidden)?,
            b_input: b.bias(format!("{prefix}.b_input"), 3 * hidden)?,
            b_hidden: b.bias(format!("{prefix}.b_hidden"), 3 * hidden)?,
        })
    }

    /// One recurrence step. `h = None` stands for the zero initial state.
    ///
    /// `r = σ(x Wr + br + h Ur + cr)`, `z = σ(x Wz + bz + h Uz + cz)`,
    /// `n = tanh(x Wn + bn + r ⊙ (h Un + cn))`, `h' = (1 - z) ⊙ n + z ⊙ h`.
    pub fn step<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        x: NodeId,
        h: Option<NodeId>,
    ) -> Result<NodeId> {
        let hdim = self.hidden_units;
        let w_i = sess.param(self.w_input);
        let b_i = sess.param(self.b_input);
        let b_h = sess.param(self.b_hidden);
        let g = &mut sess.graph;
        let gi = g.matmul(x, w_i)?;
        let gi = g.add(gi, b_i)?;
        let gh = match h {
            Some(h) => {
                let w_h = sess.param(self.w_hidden);
                let g = &mut sess.graph;
                let gh = g.matmul(h, w_h)?;
                g.add(gh, b_h)?
            }
            None => b_h,
        };
        let g = &mut sess.graph;
        let last = g.shape(gh).len() - 1;
        let block = |g: &mut Graph<T>, t: NodeId, axis: usize, k: usize| {
            g.slice(t, axis, k * hdim, (k + 1) * hdim)
        };
        let (i_r, i_z, i_n) = (
            block(g, gi, 1, 0)?,
            block(g, gi, 1, 1)?,
            block(g, gi, 1, 2)?,
        );
        let (h_r, h_z, h_n) = (
            block(g, gh, last, 0)?,
            block(g, gh, last, 1)?,
            block(g, gh, last, 2)?,
        );
        let r = g.add(i_r, h_r)?;
        let r = g.sigmoid(r);
        let z = g.add(i_z, h_z)?;
        let z = g.sigmoid(z);
        // with a zero state the hidden terms are the biases alone, broadcast over B
        let rh = g.mul(r, h_n)?;
        let n = g.add(i_n, rh)?;
        let n = g.tanh(n);
        // h' = n + z ⊙ (h - n)
        match h {
            Some(h) => {
                let neg_n = g.scale(n, -T::one());
                let diff = g.add(h, neg_n)?;
                let zd = g.mul(z, diff)?;
                g.add(n, zd)
            }
            None => {
                let neg_z = g.scale(z, -T::one());
                let keep = g.mul(neg_z, n)?;
                g.add(n, keep)
            }
        }
    }
}

/// Stacked GRU layers with optional batch norm on the final state.
#[derive(Clone, Debug)]
pub struct GruEncoder {
    pub input_channels: usize,
    pub hidden_units: usize,
    pub layers: Vec<GruLayer>,
    pub norm: Option<BatchNorm>,
    pub dropout_rate: f64,
}

impl GruEncoder {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        prefix: &str,
        input_channels: usize,
        cfg: &EncoderConfig,
        reg: &RegularizationConfig,
    ) -> Result<Self> {
        if cfg.num_layers == 0 || cfg.hidden_units == 0 || input_channels == 0 {
            return Err(Error::Config(
                "encoder needs layers, hidden units and input channels".into(),
            ));
        }
        reg.validate()?;
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let input = if l == 0 {
                    input_channels
                } else {
                    cfg.hidden_units
                };
                GruLayer::new(b, &format!("{prefix}.gru{l}"), input, cfg.hidden_units)
            })
            .collect::<Result<Vec<_>>>()?;
        let norm = if reg.batchnorm {
            Some(BatchNorm::new(
                b,
                &format!("{prefix}.bn"),
                cfg.hidden_units,
                reg,
            )?)
        } else {
            None
        };
        Ok(Self {
            input_channels,
            hidden_units: cfg.hidden_units,
            layers,
            norm,
            dropout_rate: reg.dropout_rate,
        })
    }

    /// Runs the stack over per-timestep `[B, C]` inputs and returns the last
    /// top-layer state `[B, H]`. Dropout sits between layers in train mode.
    pub fn gru_forward<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        steps: &[NodeId],
    ) -> Result<NodeId> {
        if steps.is_empty() {
            return Err(shape_err("GRU needs at least one timestep"));
        }
        let batch = sess.graph.shape(steps[0]).first().copied().unwrap_or(0);
        for &s in steps {
            let shape = sess.graph.shape(s);
            if shape != [batch, self.input_channels] {
                return Err(shape_err(format!(
                    "GRU expects [{batch}, {}] inputs, got {shape:?}",
                    self.input_channels
                )));
            }
        }
        let mut seq = steps.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                for s in seq.iter_mut() {
                    *s = dropout_node(sess, *s, self.dropout_rate)?;
                }
            }
            let mut h = None;
            let mut out = Vec::with_capacity(seq.len());
            for &x in &seq {
                let next = layer.step(sess, x, h)?;
                out.push(next);
                h = Some(next);
            }
            seq = out;
        }
        Ok(*seq.last().expect("non-empty sequence"))
    }

    /// View-representation: [`gru_forward`](Self::gru_forward) followed by
    /// batch norm when enabled.
    pub fn encode_view<T: Scalar>(
        &self,
        sess: &mut Session<'_, T>,
        steps: &[NodeId],
    ) -> Result<NodeId> {
        let h = self.gru_forward(sess, steps)?;
        match &self.norm {
            Some(bn) => bn.forward(sess, h),
            None => Ok(h),
        }
    }
}

/// A static `[B, C]` view repeated over `timesteps`. Reusing the node makes
/// its gradient the sum over timesteps.
pub fn tile_static(node: NodeId, timesteps: usize) -> Vec<NodeId> {
    vec![node; timesteps]
}

/// Splits a `[B, T, C]` tensor into `T` constant `[B, C]` inputs.
pub fn sequence_steps<T: Scalar>(
    sess: &mut Session<'_, T>,
    seq: &Tensor<T>,
) -> Result<Vec<NodeId>> {
    let &[b, t, c] = seq.shape() else {
        return Err(shape_err(format!(
            "expected [B, T, C], got {:?}",
            seq.shape()
        )));
    };
    (0..t)
        .map(|ti| {
            let mut data = Vec::with_capacity(b * c);
            for bi in 0..b {
                let start = (bi * t + ti) * c;
                data.extend_from_slice(&seq.data()[start..start + c]);
            }
            Ok(sess.input(Tensor::new(vec![b, c], data)?))
        })
        .collect()
}

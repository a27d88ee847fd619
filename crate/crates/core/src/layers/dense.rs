use super::norm::{dropout_node, BatchNorm};
use super::params::{ParamBuilder, ParamId};
use super::session::Session;
use super::{HeadConfig, RegularizationConfig};
use crate::diffcore::{NodeId, Scalar};
use crate::error::{shape_err, Error, Result};

/// One hidden fully connected layer followed by a single-logit output.
#[derive(Clone, Debug)]
pub struct DenseHead {
    pub input_size: usize,
    pub hidden_units: usize,
    pub w1: ParamId,
    pub b1: ParamId,
    pub norm: Option<BatchNorm>,
    pub w2: ParamId,
    pub b2: ParamId,
    pub dropout_rate: f64,
}

impl DenseHead {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        prefix: &str,
        input_size: usize,
        cfg: &HeadConfig,
        reg: &RegularizationConfig,
    ) -> Result<Self> {
        if input_size == 0 || cfg.hidden_units == 0 {
            return Err(Error::Config("head needs input and hidden units".into()));
        }
        reg.validate()?;
        let h = cfg.hidden_units;
        let w1 = b.weight(format!("{prefix}.w1"), input_size, h, h)?;
        let b1 = b.bias(format!("{prefix}.b1"), h)?;
        let norm = if reg.batchnorm {
            Some(BatchNorm::new(b, &format!("{prefix}.bn"), h, reg)?)
        } else {
            None
        };
        let w2 = b.weight(format!("{prefix}.w2"), h, 1, 1)?;
        let b2 = b.bias(format!("{prefix}.b2"), 1)?;
        Ok(Self {
            input_size,
            hidden_units: h,
            w1,
            b1,
            norm,
            w2,
            b2,
            dropout_rate: reg.dropout_rate,
        })
    }

    /// `W2 · relu(BN(W1 x + b1)) + b2` as a `[B]` logit, with dropout on the
    /// hidden activation in train mode.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: NodeId) -> Result<NodeId> {
        let shape = sess.graph.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.input_size {
            return Err(shape_err(format!(
                "head expects [B, {}] input, got {shape:?}",
                self.input_size
            )));
        }
        let (w1, b1, w2, b2) = (
            sess.param(self.w1),
            sess.param(self.b1),
            sess.param(self.w2),
            sess.param(self.b2),
        );
        let h = sess.graph.matmul(x, w1)?;
        let mut h = sess.graph.add(h, b1)?;
        if let Some(bn) = &self.norm {
            h = bn.forward(sess, h)?;
        }
        let h = sess.graph.relu(h);
        let h = dropout_node(sess, h, self.dropout_rate)?;
        let logit = sess.graph.matmul(h, w2)?;
        let logit = sess.graph.add(logit, b2)?;
        sess.graph.reshape(logit, &[shape[0]])
    }
}

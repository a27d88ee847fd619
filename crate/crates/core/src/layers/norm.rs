use rand::Rng;

use super::params::{ParamBuilder, ParamId, ParamInit, ParamKind};
use super::session::Session;
use super::{Mode, RegularizationConfig};
use crate::diffcore::{NodeId, Scalar, Tensor};
use crate::error::{Error, Result};

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

fn dropout_mask<T: Scalar, R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

/// Inverted dropout on a plain tensor: identity in eval mode, otherwise each
/// entry is zeroed with probability `rate` and survivors scaled by
/// `1 / (1 - rate)`.
pub fn dropout<T: Scalar, R: Rng>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor<T>> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask::<T, R>(x.len(), rate, rng);
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Graph version of [`dropout`]; the mask enters as a constant.
pub fn dropout_node<T: Scalar>(sess: &mut Session<'_, T>, x: NodeId, rate: f64) -> Result<NodeId> {
    check_rate(rate)?;
    if sess.mode() == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let shape = sess.graph.shape(x).to_vec();
    let len = shape.iter().product();
    let mask = dropout_mask::<T, _>(len, rate, sess.rng());
    let mask = sess.input(Tensor::new(shape, mask)?);
    sess.graph.mul(x, mask)
}

/// Per-feature batch normalisation with learned affine and running
/// statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new<T: Scalar>(
        b: &mut ParamBuilder<'_, T>,
        prefix: &str,
        features: usize,
        reg: &RegularizationConfig,
    ) -> Result<Self> {
        let gamma = b.add(
            format!("{prefix}.gamma"),
            &[features],
            ParamInit::Ones,
            ParamKind::Trainable,
        )?;
        let beta = b.add(
            format!("{prefix}.beta"),
            &[features],
            ParamInit::Zeros,
            ParamKind::Trainable,
        )?;
        let running_mean = b.add(
            format!("{prefix}.running_mean"),
            &[features],
            ParamInit::Zeros,
            ParamKind::Buffer,
        )?;
        let running_var = b.add(
            format!("{prefix}.running_var"),
            &[features],
            ParamInit::Ones,
            ParamKind::Buffer,
        )?;
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
            eps: reg.batchnorm_eps,
            momentum: reg.batchnorm_momentum,
        })
    }

    /// Train mode normalises with batch statistics (needs B >= 2) and queues
    /// a running-statistics update; eval mode uses the running statistics.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: NodeId) -> Result<NodeId> {
        let gamma = sess.param(self.gamma);
        let beta = sess.param(self.beta);
        let eps = T::from_f64(self.eps);
        let params = sess.params();
        let rm = params.value(self.running_mean);
        let rv = params.value(self.running_var);
        match sess.mode() {
            Mode::Eval => sess
                .graph
                .batch_norm_eval(x, gamma, beta, rm.data(), rv.data(), eps),
            Mode::Train => {
                let (y, moments) = sess.graph.batch_norm_train(x, gamma, beta, eps)?;
                let m = T::from_f64(self.momentum);
                let blend = |old: &Tensor<T>, new: &[T]| {
                    let data = old
                        .data()
                        .iter()
                        .zip(new)
                        .map(|(&o, &n)| (T::one() - m) * o + m * n)
                        .collect();
                    Tensor::new(old.shape().to_vec(), data)
                };
                let new_mean = blend(rm, &moments.mean)?;
                let new_var = blend(rv, &moments.unbiased_var)?;
                sess.record_running_update(self.running_mean, new_mean);
                sess.record_running_update(self.running_var, new_var);
                Ok(y)
            }
        }
    }
}

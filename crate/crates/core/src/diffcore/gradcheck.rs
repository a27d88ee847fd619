use crate::error::{Error, Result};

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (input index, element index) of the worst component.
    pub worst: Option<(usize, usize)>,
    /// (analytic, numeric) gradient at the worst component.
    pub worst_values: Option<(f64, f64)>,
    pub components: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks the gradients `f` produces through the graph against central
/// differences `(f(x + h) - f(x - h)) / 2h`, one component at a time.
///
/// `f` receives fresh leaf nodes for each entry of `points` and must return
/// a scalar node.
pub fn grad_check<F>(
    f: F,
    points: &[Tensor<f64>],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let run = |inputs: &[Tensor<f64>], with_grad: bool| -> Result<(f64, Vec<Tensor<f64>>)> {
        let mut g = Graph::new();
        let leaves: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let root = f(&mut g, &leaves)?;
        let value = g
            .value(root)
            .item()
            .ok_or_else(|| Error::Contract("grad_check target must be scalar".into()))?;
        let mut grads = Vec::new();
        if with_grad {
            g.backward(root)?;
            grads = leaves
                .iter()
                .zip(inputs)
                .map(|(&id, t)| {
                    g.grad(id)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(t.shape()))
                })
                .collect();
        }
        Ok((value, grads))
    };
    let (_, analytic) = run(points, true)?;
    compare_with_finite_differences(
        |p| run(p, false).map(|r| r.0),
        points,
        &analytic,
        step,
        tolerance,
    )
}

/// Compares precomputed analytic gradients against central differences of
/// `value`. Useful when the scalar function is not a bare graph closure,
/// e.g. a whole model evaluated from a parameter store.
pub fn compare_with_finite_differences<F>(
    value: F,
    points: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64>,
{
    if analytic.len() != points.len()
        || analytic
            .iter()
            .zip(points)
            .any(|(a, p)| a.shape() != p.shape())
    {
        return Err(Error::Shape(
            "analytic gradients do not match points".into(),
        ));
    }
    let mut work = points.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_values: None,
        components: 0,
        tolerance,
        passed: true,
    };
    for (i, point) in points.iter().enumerate() {
        for j in 0..point.len() {
            let x = point.data()[j];
            work[i].data_mut()[j] = x + step;
            let plus = value(&work)?;
            work[i].data_mut()[j] = x - step;
            let minus = value(&work)?;
            work[i].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * step);
            let exact = analytic[i].data()[j];
            if !numeric.is_finite() || !exact.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at input {i}, element {j}: analytic {exact}, numeric {numeric}"
                )));
            }
            let err = relative_error(exact, numeric);
            report.components += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((i, j));
                report.worst_values = Some((exact, numeric));
            }
        }
    }
    report.passed = report.max_relative_error < tolerance;
    Ok(report)
}

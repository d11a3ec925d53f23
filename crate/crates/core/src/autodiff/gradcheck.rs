use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest disagreement found by [`grad_check_many`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::shape("grad_check", format!("f must be scalar, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Compares the tape's adjoint of a scalar `f` against central differences
/// for every coordinate of every input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    drop(g);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut probe = inputs.to_vec();
    for (ii, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let x0 = input.data()[k];
            probe[ii].data_mut()[k] = x0 + eps;
            let up = eval(&f, &probe)?;
            probe[ii].data_mut()[k] = x0 - eps;
            let down = eval(&f, &probe)?;
            probe[ii].data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ii].data()[k];
            let err = relative_error(a, numeric);
            if err > report.max_rel_err || !err.is_finite() {
                report = GradCheckReport {
                    max_rel_err: err,
                    worst: (ii, k),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

/// Single-input form of [`grad_check_many`]; returns the max relative error.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let report = grad_check_many(|g, v| f(g, v[0]), std::slice::from_ref(x), eps)?;
    Ok(report.max_rel_err)
}

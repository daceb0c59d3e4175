//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates forward values, so it stays an
//! independent oracle for the reverse pass.

use crate::{Graph, Result, Tensor, Var};

/// Outcome of comparing reverse-mode gradients against finite differences.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub analytic: Vec<Tensor<f64>>,
    pub numeric: Vec<Tensor<f64>>,
    pub max_rel_error: f64,
}

impl GradCheck {
    /// Runs `f` once on the tape and once per perturbed input entry.
    pub fn run<F>(f: F, inputs: &[Tensor<f64>], h: f64, floor: f64) -> Result<Self>
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let grads = g.backward(out)?;
        let analytic: Vec<Tensor<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| {
                grads
                    .wrt(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect();
        let numeric = finite_difference(&f, inputs, h)?;
        let max_rel_error = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| max_relative_error(a.data(), n.data(), floor))
            .fold(0.0, f64::max);
        Ok(Self {
            analytic,
            numeric,
            max_rel_error,
        })
    }
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Central differences `(f(x+h) - f(x-h)) / 2h` for every entry of every input.
pub fn finite_difference<F>(f: &F, inputs: &[Tensor<f64>], h: f64) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let fp = eval(f, &work)?;
            work[i].data_mut()[j] = x0 - h;
            let fm = eval(f, &work)?;
            work[i].data_mut()[j] = x0;
            grad.data_mut()[j] = (fp - fm) / (2.0 * h);
        }
        out.push(grad);
    }
    Ok(out)
}

/// `max|a - b| / max(max|a|, max|b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a
        .iter()
        .chain(b)
        .map(|x| x.abs())
        .fold(floor, f64::max);
    diff / scale
}

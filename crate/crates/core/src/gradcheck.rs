//! Central finite-difference oracle for tape gradients.
//!
//! The numeric side only ever evaluates the forward pass, so it stays
//! independent of every adjoint it is used to check.

use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::rng::CounterRng;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradients with norm below this are compared in absolute terms against it;
/// this keeps exactly-zero adjoints (e.g. a key bias under softmax shift
/// invariance) from turning difference-quotient noise into a relative error of 1.
pub const ZERO_FLOOR: f64 = 1e-5;

/// Analytic versus numeric gradient for one input.
#[derive(Debug, Clone)]
pub struct GradComparison {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradComparison {
    /// `|a - n| / max(|a|, |n|, ZERO_FLOOR)` in the Euclidean norm.
    pub fn rel_error(&self) -> f64 {
        rel_error(&self.analytic, &self.numeric)
    }
}

pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(ZERO_FLOOR)
}

fn eval<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.scalar(out))
}

fn analytic<F>(inputs: &[Tensor], f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(&t.clone().with_grad())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect())
}

/// Full elementwise check of every input of a scalar function.
pub fn check<F>(inputs: &[Tensor], f: F, h: f64) -> Result<Vec<GradComparison>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let grads = analytic(inputs, &f)?;
    let mut out = Vec::with_capacity(inputs.len());
    for (i, g) in grads.into_iter().enumerate() {
        let mut work = inputs.to_vec();
        let mut numeric = vec![0.0; g.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let x0 = work[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let fp = eval(&work, &f)?;
            work[i].data_mut()[j] = x0 - h;
            let fm = eval(&work, &f)?;
            work[i].data_mut()[j] = x0;
            *slot = (fp - fm) / (2.0 * h);
        }
        out.push(GradComparison { analytic: g, numeric });
    }
    Ok(out)
}

/// Cheaper check for large inputs: per input, compares the directional
/// derivative along `directions` random unit vectors and at `coords` sampled
/// coordinates. The comparison vectors hold those projections.
pub fn check_sampled<F>(
    inputs: &[Tensor],
    f: F,
    h: f64,
    directions: usize,
    coords: usize,
    rng: &mut CounterRng,
) -> Result<Vec<GradComparison>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let grads = analytic(inputs, &f)?;
    let mut out = Vec::with_capacity(inputs.len());
    for (i, g) in grads.into_iter().enumerate() {
        let n = g.len();
        let mut a_proj = Vec::new();
        let mut n_proj = Vec::new();
        for _ in 0..directions {
            let mut dir = rng.normal_vec(n, 1.0);
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            dir.iter_mut().for_each(|x| *x /= norm);
            let shifted = |sign: f64| {
                let mut work = inputs.to_vec();
                work[i].data_mut().iter_mut().zip(&dir).for_each(|(x, d)| *x += sign * h * d);
                eval(&work, &f)
            };
            let numeric = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
            a_proj.push(g.iter().zip(&dir).map(|(a, b)| a * b).sum());
            n_proj.push(numeric);
        }
        for _ in 0..coords.min(n) {
            let j = rng.below(n);
            let mut work = inputs.to_vec();
            let x0 = work[i].data()[j];
            work[i].data_mut()[j] = x0 + h;
            let fp = eval(&work, &f)?;
            work[i].data_mut()[j] = x0 - h;
            let fm = eval(&work, &f)?;
            a_proj.push(g[j]);
            n_proj.push((fp - fm) / (2.0 * h));
        }
        out.push(GradComparison { analytic: a_proj, numeric: n_proj });
    }
    Ok(out)
}

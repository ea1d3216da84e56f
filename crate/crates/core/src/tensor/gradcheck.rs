//! Central finite-difference oracle for graph gradients.
//!
//! Only forward values are used to form the numeric estimate, so the check
//! is independent of every op's backward rule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::Result;

type BuildFn<'a> = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var> + 'a>;

/// A scalar function of some input tensors, expressed as a graph builder.
pub struct Case<'a> {
    pub name: String,
    pub inputs: Vec<Tensor>,
    build: BuildFn<'a>,
}

impl<'a> Case<'a> {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Tensor>,
        build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'a,
    ) -> Self {
        Case {
            name: name.into(),
            inputs,
            build: Box::new(build),
        }
    }

    fn eval(&self, inputs: &[Tensor]) -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = (self.build)(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coords_checked: usize,
}

pub const STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so exact zeros compare sanely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Check every input coordinate.
pub fn check_gradients(case: &Case) -> Result<GradReport> {
    check_gradients_sampled(case, usize::MAX, 0)
}

/// Check at most `max_coords` input coordinates, chosen by a seeded shuffle.
pub fn check_gradients_sampled(case: &Case, max_coords: usize, seed: u64) -> Result<GradReport> {
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut coords: Vec<(usize, usize)> = case
        .inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    if coords.len() > max_coords {
        coords.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        coords.truncate(max_coords);
    }

    let mut report = GradReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coords_checked: coords.len(),
    };
    let mut inputs = case.inputs.clone();
    for (i, j) in coords {
        let analytic = grads.get(vars[i]).map_or(0.0, |t| t.data()[j]);
        let orig = inputs[i].data()[j];
        inputs[i].data_mut()[j] = orig + STEP;
        let up = case.eval(&inputs)?;
        inputs[i].data_mut()[j] = orig - STEP;
        let down = case.eval(&inputs)?;
        inputs[i].data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        report.max_rel_error = report.max_rel_error.max(relative_error(analytic, numeric));
        report.max_abs_error = report.max_abs_error.max((analytic - numeric).abs());
    }
    Ok(report)
}

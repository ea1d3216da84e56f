//! Huber fit of `L(N, D) = A/N^α + B/D^β + L0` to observed losses, run
//! from every vertex of a grid of starting points.

use serde::{Deserialize, Serialize};

use super::isoflop::ScalingPoint;
use super::law::LawParams;
use crate::error::{Error, Result};

pub const HUBER_DELTA: f64 = 1e-3;
const MIN_EXPONENT: f64 = 1e-6;

pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

pub fn huber_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

/// Starting values; `log_a`, `log_b` are natural logs, `l0` is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitGrid {
    pub log_a: Vec<f64>,
    pub log_b: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub l0: Vec<f64>,
}

impl Default for FitGrid {
    fn default() -> Self {
        FitGrid {
            log_a: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            log_b: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            alpha: vec![0.1, 0.3, 0.5, 0.7],
            beta: vec![0.1, 0.3, 0.5, 0.7],
            l0: vec![1.0, 2.0, 3.0],
        }
    }
}

impl FitGrid {
    pub fn len(&self) -> usize {
        self.log_a.len() * self.log_b.len() * self.alpha.len() * self.beta.len() * self.l0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Vertices in lexicographic index order.
    fn starts(&self) -> Vec<([usize; 5], [f64; 5])> {
        let mut out = Vec::with_capacity(self.len());
        for (i, &la) in self.log_a.iter().enumerate() {
            for (j, &lb) in self.log_b.iter().enumerate() {
                for (k, &al) in self.alpha.iter().enumerate() {
                    for (l, &be) in self.beta.iter().enumerate() {
                        for (m, &l0) in self.l0.iter().enumerate() {
                            out.push(([i, j, k, l, m], [la, lb, al, be, l0.ln()]));
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub delta: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            delta: HUBER_DELTA,
            max_iter: 1000,
            grad_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricFit {
    pub params: LawParams,
    pub objective: f64,
    /// Grid indices (log A, log B, α, β, L0) of the winning start.
    pub start_index: [usize; 5],
    pub start: LawParams,
    pub iterations: usize,
    pub starts_total: usize,
    pub starts_converged: usize,
}

/// Per-point logs, fixed for the whole fit.
struct Data {
    ln_n: Vec<f64>,
    ln_d: Vec<f64>,
    ln_y: Vec<f64>,
}

/// θ = (ln A, ln B, α, β, ln L0).
fn objective(data: &Data, th: &[f64; 5], delta: f64, grad: Option<&mut [f64; 5]>) -> f64 {
    let (alpha, beta) = (th[2].max(MIN_EXPONENT), th[3].max(MIN_EXPONENT));
    let l0 = th[4].exp();
    let mut f = 0.0;
    let mut g = [0.0; 5];
    for i in 0..data.ln_n.len() {
        let ta = (th[0] - alpha * data.ln_n[i]).exp();
        let tb = (th[1] - beta * data.ln_d[i]).exp();
        let p = ta + tb + l0;
        let r = p.ln() - data.ln_y[i];
        f += huber(r, delta);
        let w = huber_grad(r, delta) / p;
        g[0] += w * ta;
        g[1] += w * tb;
        g[2] -= w * ta * data.ln_n[i];
        g[3] -= w * tb * data.ln_d[i];
        g[4] += w * l0;
    }
    if let Some(out) = grad {
        *out = g;
    }
    f
}

fn project(th: &mut [f64; 5]) {
    th[2] = th[2].max(MIN_EXPONENT);
    th[3] = th[3].max(MIN_EXPONENT);
}

fn dot(a: &[f64; 5], b: &[f64; 5]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct LocalResult {
    theta: [f64; 5],
    value: f64,
    iterations: usize,
    converged: bool,
}

/// BFGS with an inverse-Hessian estimate and backtracking Armijo search.
fn bfgs(data: &Data, start: [f64; 5], opts: &FitOptions) -> LocalResult {
    let mut x = start;
    project(&mut x);
    let mut g = [0.0; 5];
    let mut f = objective(data, &x, opts.delta, Some(&mut g));
    let identity = || {
        let mut h = [[0.0; 5]; 5];
        (0..5).for_each(|i| h[i][i] = 1.0);
        h
    };
    let mut h = identity();
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iter {
        if !f.is_finite() {
            break;
        }
        if g.iter().all(|v| v.abs() < opts.grad_tol) {
            converged = true;
            break;
        }
        let mut dir = [0.0; 5];
        for i in 0..5 {
            dir[i] = -(0..5).map(|j| h[i][j] * g[j]).sum::<f64>();
        }
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            h = identity();
            dir = g.map(|v| -v);
            slope = dot(&g, &dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn = [0.0; 5];
            for i in 0..5 {
                xn[i] = x[i] + step * dir[i];
            }
            project(&mut xn);
            let mut gn = [0.0; 5];
            let fnew = objective(data, &xn, opts.delta, Some(&mut gn));
            if fnew.is_finite() && fnew <= f + 1e-4 * step * slope {
                accepted = Some((xn, fnew, gn));
                break;
            }
            step *= 0.5;
        }
        it += 1;
        let Some((xn, fnew, gn)) = accepted else {
            // no decrease is representable along any tried step
            converged = true;
            break;
        };
        let mut s = [0.0; 5];
        let mut y = [0.0; 5];
        for i in 0..5 {
            s[i] = xn[i] - x[i];
            y[i] = gn[i] - g[i];
        }
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let mut hy = [0.0; 5];
            for i in 0..5 {
                hy[i] = (0..5).map(|j| h[i][j] * y[j]).sum();
            }
            let yhy = dot(&y, &hy);
            for i in 0..5 {
                for j in 0..5 {
                    h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let stalled = f - fnew <= f.abs() * 1e-16;
        x = xn;
        f = fnew;
        g = gn;
        if stalled && g.iter().all(|v| v.abs() < opts.grad_tol.sqrt()) {
            converged = true;
            break;
        }
    }
    LocalResult {
        theta: x,
        value: f,
        iterations: it,
        converged,
    }
}

fn to_params(th: &[f64; 5]) -> LawParams {
    LawParams {
        a: th[0].exp(),
        b: th[1].exp(),
        alpha: th[2].max(MIN_EXPONENT),
        beta: th[3].max(MIN_EXPONENT),
        l0: th[4].exp(),
    }
}

/// Best local optimum over all grid starts. Points are put in a canonical
/// order first and ties between starts go to the lexicographically first,
/// so the result does not depend on input order.
pub fn fit_parametric(points: &[ScalingPoint], grid: &FitGrid, opts: &FitOptions) -> Result<ParametricFit> {
    for p in points {
        p.validate()?;
    }
    let mut budgets: Vec<f64> = points.iter().map(|p| p.c_flops).collect();
    budgets.sort_by(f64::total_cmp);
    budgets.dedup();
    if points.len() < 6 || budgets.len() < 2 {
        return Err(Error::contract(format!(
            "parametric fit needs at least 6 points over 2 budgets, got {} over {}",
            points.len(),
            budgets.len()
        )));
    }
    if grid.is_empty() {
        return Err(Error::config("grid", "has no starting points"));
    }
    if !(opts.delta > 0.0) {
        return Err(Error::config("delta", "must be positive"));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.canonical_cmp(b));
    let data = Data {
        ln_n: sorted.iter().map(|p| p.n_active.ln()).collect(),
        ln_d: sorted.iter().map(|p| p.d_tokens.ln()).collect(),
        ln_y: sorted.iter().map(|p| p.loss.ln()).collect(),
    };

    let mut best: Option<(LocalResult, [usize; 5], [f64; 5])> = None;
    let mut converged = 0;
    let mut diagnostics = Vec::new();
    let starts = grid.starts();
    for (idx, th0) in &starts {
        let r = bfgs(&data, *th0, opts);
        if !r.value.is_finite() {
            diagnostics.push(format!("start {idx:?}: objective not finite"));
            continue;
        }
        converged += r.converged as usize;
        if !r.converged {
            diagnostics.push(format!(
                "start {idx:?}: not converged after {} iterations (objective {})",
                r.iterations, r.value
            ));
        }
        // strict improvement keeps the lexicographically first start on ties
        if best.as_ref().map_or(true, |b| r.value < b.0.value) {
            best = Some((r, *idx, *th0));
        }
    }
    let Some((r, start_index, th0)) = best else {
        return Err(Error::FitFailure { diagnostics });
    };
    Ok(ParametricFit {
        params: to_params(&r.theta),
        objective: r.value,
        start_index,
        start: to_params(&th0),
        iterations: r.iterations,
        starts_total: starts.len(),
        starts_converged: converged,
    })
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training FLOPs per active parameter per token.
pub const KAPPA: f64 = 6.0;

/// `L(N, D) = A/N^α + B/D^β + L0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawParams {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
    pub l0: f64,
}

impl LawParams {
    /// Fit for the reference model family; the default for
    /// allocation queries.
    pub const REFERENCE: LawParams = LawParams {
        a: 148.413257,
        b: 3269017.372472,
        alpha: 0.279702,
        beta: 0.7155,
        l0: 2.241716,
    };

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("A", self.a),
            ("B", self.b),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("L0", self.l0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, "must be finite and positive"));
            }
        }
        Ok(())
    }

    /// Exponent of the compute-optimal `N*(C)`.
    pub fn n_exponent(&self) -> f64 {
        self.beta / (self.alpha + self.beta)
    }
}

/// Exponents `a`, `b` of `N*(C) ∝ C^a`, `D*(C) ∝ C^b` reported alongside
/// [`LawParams::REFERENCE`] (from IsoFLOP fits, not its closed form).
pub const REFERENCE_ISOFLOP_EXPONENTS: (f64, f64) = (0.689902, 0.310098);

pub fn tokens_for_budget(c_flops: f64, n_active: f64, kappa: f64) -> f64 {
    c_flops / (kappa * n_active)
}

pub fn predict_loss(p: &LawParams, n_active: f64, d_tokens: f64) -> f64 {
    p.a / n_active.powf(p.alpha) + p.b / d_tokens.powf(p.beta) + p.l0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub c_flops: f64,
    pub n_opt: f64,
    pub d_opt: f64,
    /// Stationary point of the loss along `D = C/(κN)` found by bisection.
    pub n_numeric: f64,
    pub loss: f64,
}

/// Minimize the law along `D = C/(κN)`. The closed form is
/// `N* = (αA/(βB))^{1/(α+β)} · (C/κ)^{β/(α+β)}`.
pub fn optimal_allocation(p: &LawParams, c_flops: f64, kappa: f64) -> Result<Allocation> {
    p.validate()?;
    if !(c_flops.is_finite() && c_flops > 0.0 && kappa > 0.0) {
        return Err(Error::contract("budget and kappa must be positive"));
    }
    let s = p.alpha + p.beta;
    let budget = c_flops / kappa;
    let ln_n = ((p.alpha * p.a).ln() - (p.beta * p.b).ln()) / s + p.beta / s * budget.ln();
    let n_opt = ln_n.exp();
    let d_opt = budget / n_opt;
    Ok(Allocation {
        c_flops,
        n_opt,
        d_opt,
        n_numeric: numeric_optimum(p, budget).exp(),
        loss: predict_loss(p, n_opt, d_opt),
    })
}

/// `x = ln N`. Along the constraint `dL/dx = -αA e^{-αx} + βB e^{β(x - ln(C/κ))}`,
/// which increases monotonically, so its root is found by bisection.
fn numeric_optimum(p: &LawParams, budget: f64) -> f64 {
    let lb = budget.ln();
    let slope = |x: f64| -p.alpha * p.a * (-p.alpha * x).exp() + p.beta * p.b * (p.beta * (x - lb)).exp();
    let (mut lo, mut hi) = (-50.0_f64.min(lb), 50.0_f64.max(lb) + 50.0);
    while slope(lo) > 0.0 {
        lo -= 50.0;
    }
    while slope(hi) < 0.0 {
        hi += 50.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

use serde::{Deserialize, Serialize};

use super::law::{tokens_for_budget, KAPPA};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n_active: f64,
    pub d_tokens: f64,
    pub c_flops: f64,
    pub loss: f64,
}

impl ScalingPoint {
    /// A point on budget `c_flops` with `D` implied by the budget.
    pub fn on_budget(c_flops: f64, n_active: f64, loss: f64) -> Self {
        ScalingPoint {
            n_active,
            d_tokens: tokens_for_budget(c_flops, n_active, KAPPA),
            c_flops,
            loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("n_active", self.n_active),
            ("d_tokens", self.d_tokens),
            ("c_flops", self.c_flops),
            ("loss", self.loss),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::contract(format!("{field} must be finite and positive")));
            }
        }
        let implied = KAPPA * self.n_active * self.d_tokens;
        if ((implied - self.c_flops) / self.c_flops).abs() > 0.01 {
            return Err(Error::contract(format!(
                "c_flops {} differs from 6·N·D = {implied} by more than 1%",
                self.c_flops
            )));
        }
        Ok(())
    }

    /// Total order used to make fits independent of input order.
    pub(crate) fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.c_flops
            .total_cmp(&other.c_flops)
            .then(self.n_active.total_cmp(&other.n_active))
            .then(self.d_tokens.total_cmp(&other.d_tokens))
            .then(self.loss.total_cmp(&other.loss))
    }
}

/// `loss ≈ a·x² + b·x + c` with `x = log10(n_active)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParabolaFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub log10_n_opt: f64,
    pub n_opt: f64,
    pub min_loss: f64,
    pub residual_ss: f64,
}

/// Solve a 3×3 system by Gaussian elimination with partial pivoting.
fn solve3(mut m: [[f64; 4]; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| m[row][k] * x[k]).sum();
        x[row] = (m[row][3] - s) / m[row][row];
    }
    Some(x)
}

/// Least-squares parabola of loss against `log10(n_active)`; the vertex
/// estimates the compute-optimal size for the budget.
pub fn fit_isoflop_parabola(points: &[ScalingPoint]) -> Result<ParabolaFit> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.n_active.log10()).collect();
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if points.len() < 3 || distinct.len() < 3 {
        return Err(Error::contract(format!(
            "parabola fit needs at least 3 distinct model sizes, got {}",
            distinct.len()
        )));
    }
    // centre the abscissa for conditioning
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter_mut().for_each(|x| *x -= mean);
    let mut m = [[0.0; 4]; 3];
    for (x, p) in xs.iter().zip(points) {
        let basis = [x * x, *x, 1.0];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
            m[i][3] += basis[i] * p.loss;
        }
    }
    let [qa, qb, qc] = solve3(m).ok_or_else(|| Error::contract("singular parabola system"))?;
    if !(qa > 0.0) {
        return Err(Error::NonConvex { curvature: qa });
    }
    let residual_ss = xs
        .iter()
        .zip(points)
        .map(|(x, p)| (qa * x * x + qb * x + qc - p.loss).powi(2))
        .sum();
    let u_opt = -qb / (2.0 * qa);
    // back to uncentred coefficients
    let (a, b, c) = (qa, qb - 2.0 * qa * mean, qa * mean * mean - qb * mean + qc);
    let log10_n_opt = u_opt + mean;
    Ok(ParabolaFit {
        a,
        b,
        c,
        log10_n_opt,
        n_opt: 10f64.powf(log10_n_opt),
        min_loss: qc - qb * qb / (4.0 * qa),
        residual_ss,
    })
}

/// `y = coefficient · x^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub coefficient: f64,
    pub exponent: f64,
    /// The exponent was supplied rather than fitted.
    pub assumed_exponent: bool,
}

impl PowerLaw {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficient * x.powf(self.exponent)
    }
}

/// Ordinary least squares in log-log space.
pub fn fit_power_law(pairs: &[(f64, f64)]) -> Result<PowerLaw> {
    if pairs.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::contract("power-law data must be positive"));
    }
    if pairs.len() < 2 {
        return Err(Error::contract("power-law fit needs at least 2 pairs"));
    }
    let n = pairs.len() as f64;
    let lx: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::contract("power-law abscissae are all equal"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    Ok(PowerLaw {
        coefficient: (my - exponent * mx).exp(),
        exponent,
        assumed_exponent: false,
    })
}

/// Coefficient through a single pair for a given exponent.
pub fn power_law_through(pair: (f64, f64), exponent: f64) -> Result<PowerLaw> {
    if !(pair.0 > 0.0 && pair.1 > 0.0) {
        return Err(Error::contract("power-law data must be positive"));
    }
    Ok(PowerLaw {
        coefficient: pair.1 / pair.0.powf(exponent),
        exponent,
        assumed_exponent: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetFit {
    pub c_flops: f64,
    pub n_points: usize,
    pub parabola: ParabolaFit,
    pub d_opt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoflopReport {
    pub budgets: Vec<BudgetFit>,
    /// `N*(C)`; absent with a single budget.
    pub n_law: Option<PowerLaw>,
    pub d_law: Option<PowerLaw>,
}

impl IsoflopReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("c_flops,n_points,n_opt,d_opt,min_loss,a,b,c\n");
        for f in &self.budgets {
            let p = &f.parabola;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                f.c_flops, f.n_points, p.n_opt, f.d_opt, p.min_loss, p.a, p.b, p.c
            ));
        }
        out
    }
}

/// Points grouped by exact budget value, in ascending budget order.
pub fn group_by_budget(points: &[ScalingPoint]) -> Vec<(f64, Vec<ScalingPoint>)> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.canonical_cmp(b));
    let mut groups: Vec<(f64, Vec<ScalingPoint>)> = Vec::new();
    for p in sorted {
        match groups.last_mut() {
            Some((c, g)) if *c == p.c_flops => g.push(p),
            _ => groups.push((p.c_flops, vec![p])),
        }
    }
    groups
}

/// One parabola per budget, then power laws through the vertices.
pub fn isoflop_analysis(points: &[ScalingPoint]) -> Result<IsoflopReport> {
    for p in points {
        p.validate()?;
    }
    let mut budgets = Vec::new();
    for (c, group) in group_by_budget(points) {
        let parabola = fit_isoflop_parabola(&group)?;
        budgets.push(BudgetFit {
            c_flops: c,
            n_points: group.len(),
            d_opt: tokens_for_budget(c, parabola.n_opt, KAPPA),
            parabola,
        });
    }
    if budgets.is_empty() {
        return Err(Error::contract("no scaling points"));
    }
    let (n_law, d_law) = if budgets.len() >= 2 {
        let n: Vec<(f64, f64)> = budgets.iter().map(|b| (b.c_flops, b.parabola.n_opt)).collect();
        let d: Vec<(f64, f64)> = budgets.iter().map(|b| (b.c_flops, b.d_opt)).collect();
        (Some(fit_power_law(&n)?), Some(fit_power_law(&d)?))
    } else {
        (None, None)
    };
    Ok(IsoflopReport {
        budgets,
        n_law,
        d_law,
    })
}

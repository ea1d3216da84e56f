//! Training objective: cross-entropy plus load-balance loss plus router
//! z-loss.
//!
//! Each auxiliary loss exists twice: a value-level function over
//! [`RouterBatchStats`] and a graph builder that differentiates with respect
//! to router logits. Dispatch indicators are treated as constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardOutput, ModelConfig};
use crate::tensor::{Graph, Tensor, Var};

pub const DEFAULT_GAMMA: f64 = 0.01;
pub const DEFAULT_ETA: f64 = 0.001;

/// Expert count used as the load-balance multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BalanceScale {
    /// Number of experts the router scores over.
    #[default]
    ScoredExperts,
    /// Total expert count, shared experts included.
    AllExperts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub gamma: f64,
    pub eta: f64,
    pub balance_scale: BalanceScale,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            gamma: DEFAULT_GAMMA,
            eta: DEFAULT_ETA,
            balance_scale: BalanceScale::ScoredExperts,
        }
    }
}

impl ObjectiveConfig {
    /// Multiplier over the Σ mᵢ·Pᵢ term.
    pub fn balance_multiplier(&self, model: &ModelConfig) -> f64 {
        match self.balance_scale {
            BalanceScale::ScoredExperts => model.n_scored() as f64,
            BalanceScale::AllExperts => model.n_experts as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("gamma", self.gamma), ("eta", self.eta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Router statistics of one routing operation over a batch of `T` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterBatchStats {
    /// `T × N` dispatch indicators.
    pub dispatch: Vec<Vec<bool>>,
    /// `T × N` router softmax.
    pub gates: Tensor,
    /// `T × N` raw router logits.
    pub logits: Tensor,
}

impl RouterBatchStats {
    pub fn n_tokens(&self) -> usize {
        self.dispatch.len()
    }

    pub fn n_experts(&self) -> usize {
        self.gates.cols()
    }

    /// Check shapes, `per_token` dispatches per row and normalized gates.
    pub fn validate(&self, per_token: usize) -> Result<()> {
        let n = self.n_experts();
        if self.dispatch.is_empty() {
            return Err(Error::contract("router stats over an empty batch"));
        }
        if self.gates.rows() != self.dispatch.len() || self.logits.shape() != self.gates.shape() {
            return Err(Error::shape("router_stats", "dispatch/gates/logits disagree"));
        }
        for (t, row) in self.dispatch.iter().enumerate() {
            if row.len() != n || row.iter().filter(|&&d| d).count() != per_token {
                return Err(Error::contract(format!(
                    "token {t} dispatches to {} experts, expected {per_token}",
                    row.iter().filter(|&&d| d).count()
                )));
            }
            let s: f64 = self.gates.row(t).iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::contract(format!("token {t} gates sum to {s}")));
            }
        }
        Ok(())
    }

    /// Fraction of tokens dispatched to each expert (mᵢ).
    pub fn dispatch_fractions(&self) -> Vec<f64> {
        let t = self.n_tokens() as f64;
        (0..self.n_experts())
            .map(|i| self.dispatch.iter().filter(|row| row[i]).count() as f64 / t)
            .collect()
    }

    /// Mean gate probability of each expert (Pᵢ).
    pub fn mean_gates(&self) -> Vec<f64> {
        let t = self.n_tokens() as f64;
        (0..self.n_experts())
            .map(|i| (0..self.n_tokens()).map(|r| self.gates.row(r)[i]).sum::<f64>() / t)
            .collect()
    }
}

/// `N · Σᵢ mᵢ·Pᵢ` with `N` the number of experts the router scores.
pub fn load_balance_loss(stats: &RouterBatchStats) -> Result<f64> {
    load_balance_loss_with(stats, stats.n_experts() as f64)
}

/// Load-balance loss with an explicit multiplier.
pub fn load_balance_loss_with(stats: &RouterBatchStats, multiplier: f64) -> Result<f64> {
    if stats.n_tokens() == 0 {
        return Err(Error::contract("load-balance loss over an empty batch"));
    }
    let m = stats.dispatch_fractions();
    let p = stats.mean_gates();
    Ok(multiplier * m.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>())
}

/// Mean over tokens of the squared log-sum-exp of the router logits.
pub fn router_z_loss(stats: &RouterBatchStats) -> Result<f64> {
    if stats.n_tokens() == 0 {
        return Err(Error::contract("router z-loss over an empty batch"));
    }
    let mut g = Graph::new();
    let logits = g.constant(stats.logits.clone());
    let z = router_z_loss_graph(&mut g, logits)?;
    Ok(g.value(z).data()[0])
}

/// Graph form of the load-balance loss. Gradient flows through the gate
/// probabilities only.
pub fn load_balance_loss_graph(
    g: &mut Graph,
    gates: Var,
    dispatch: &[Vec<bool>],
    multiplier: f64,
) -> Result<Var> {
    let (t, n) = (g.value(gates).rows(), g.value(gates).cols());
    if t == 0 || dispatch.len() != t {
        return Err(Error::contract("dispatch rows do not match gate rows"));
    }
    let fractions: Vec<f64> = (0..n)
        .map(|i| dispatch.iter().filter(|row| row[i]).count() as f64 / t as f64)
        .collect();
    // Σᵢ mᵢ·Pᵢ = Σ_t Σᵢ gates[t,i]·mᵢ/T
    let weights: Vec<f64> = (0..t * n)
        .map(|idx| multiplier * fractions[idx % n] / t as f64)
        .collect();
    let w = g.constant(Tensor::new(vec![t, n], weights)?);
    let prod = g.mul(gates, w)?;
    g.sum(prod)
}

/// Graph form of the router z-loss.
pub fn router_z_loss_graph(g: &mut Graph, logits: Var) -> Result<Var> {
    let lse = g.logsumexp_rows(logits)?;
    let sq = g.square(lse)?;
    g.mean(sq)
}

/// `ce + γ·lb + η·rz`
pub fn total_loss(ce: f64, lb: f64, rz: f64, gamma: f64, eta: f64) -> f64 {
    ce + gamma * lb + eta * rz
}

/// Graph nodes of the training objective. `lb` and `rz` are means over MoE
/// layers and absent for a model without MoE layers.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub ce: Var,
    pub lb: Option<Var>,
    pub rz: Option<Var>,
}

/// Scalar values of the objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub ce: f64,
    pub lb: f64,
    pub rz: f64,
    pub total: f64,
}

impl LossVars {
    pub fn terms(&self, g: &Graph) -> LossTerms {
        let v = |x: Option<Var>| x.map_or(0.0, |x| g.value(x).data()[0]);
        LossTerms {
            ce: v(Some(self.ce)),
            lb: v(self.lb),
            rz: v(self.rz),
            total: v(Some(self.total)),
        }
    }
}

/// Build `ce + γ·mean_l(lb_l) + η·mean_l(rz_l)` on top of a forward pass.
pub fn training_objective(
    g: &mut Graph,
    forward: &ForwardOutput,
    targets: &[usize],
    model: &ModelConfig,
    obj: &ObjectiveConfig,
) -> Result<LossVars> {
    let ce = g.cross_entropy(forward.logits, targets)?;
    let multiplier = obj.balance_multiplier(model);
    let mut lbs = Vec::new();
    let mut rzs = Vec::new();
    // an all-shared layer has no router, so there is nothing to balance
    let scored = if model.n_scored() > 0 { &forward.routing[..] } else { &[] };
    for layer in scored {
        let stats = layer.moe.routing.batch_stats();
        lbs.push(load_balance_loss_graph(
            g,
            layer.moe.gates,
            &stats.dispatch,
            multiplier,
        )?);
        rzs.push(router_z_loss_graph(g, layer.moe.logits)?);
    }
    let lb = layer_mean(g, &lbs)?;
    let rz = layer_mean(g, &rzs)?;
    let mut total = ce;
    if let Some(lb) = lb {
        let w = g.scale(lb, obj.gamma)?;
        total = g.add(total, w)?;
    }
    if let Some(rz) = rz {
        let w = g.scale(rz, obj.eta)?;
        total = g.add(total, w)?;
    }
    Ok(LossVars { total, ce, lb, rz })
}

fn layer_mean(g: &mut Graph, xs: &[Var]) -> Result<Option<Var>> {
    let Some((&first, rest)) = xs.split_first() else {
        return Ok(None);
    };
    let mut acc = first;
    for &x in rest {
        acc = g.add(acc, x)?;
    }
    Ok(Some(g.scale(acc, 1.0 / xs.len() as f64)?))
}

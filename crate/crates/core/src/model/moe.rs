//! Mixture-of-experts FFN layer.
//!
//! The router produces a softmax over its scored experts, the top
//! `k_active − n_shared` routed experts are selected per token, and each
//! selected expert's output is scaled by its softmax entry (no
//! renormalization over the selection). Shared experts run on every token.

use super::config::{ModelConfig, SharedGating};
use super::params::ParamVars;
use crate::error::{Error, Result};
use crate::objectives::RouterBatchStats;
use crate::tensor::{top_k, Graph, Tensor, Var};

/// Weights of one gated FFN: `down(silu(x·gate) ⊙ x·up)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertFfn {
    pub w_gate: Tensor,
    pub w_up: Tensor,
    pub w_down: Tensor,
}

/// Value-level view of one MoE layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeLayer {
    pub router: Tensor,
    pub shared: Vec<ExpertFfn>,
    pub routed: Vec<ExpertFfn>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfnVars {
    pub w_gate: Var,
    pub w_up: Var,
    pub w_down: Var,
}

impl FfnVars {
    pub(crate) fn from_params(params: &ParamVars, prefix: &str) -> Result<Self> {
        Ok(FfnVars {
            w_gate: params.get(&format!("{prefix}.w_gate"))?,
            w_up: params.get(&format!("{prefix}.w_up"))?,
            w_down: params.get(&format!("{prefix}.w_down"))?,
        })
    }

    pub(crate) fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gate = g.matmul(x, self.w_gate)?;
        let up = g.matmul(x, self.w_up)?;
        let act = g.swiglu(gate, up)?;
        g.matmul(act, self.w_down)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MoeVars {
    pub router: Var,
    pub shared: Vec<FfnVars>,
    pub routed: Vec<FfnVars>,
}

impl MoeVars {
    pub(crate) fn from_params(params: &ParamVars, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        Ok(MoeVars {
            router: params.get(&format!("{prefix}.moe.router"))?,
            shared: (0..cfg.n_shared)
                .map(|s| FfnVars::from_params(params, &format!("{prefix}.moe.shared.{s:02}")))
                .collect::<Result<_>>()?,
            routed: (0..cfg.n_routed())
                .map(|e| FfnVars::from_params(params, &format!("{prefix}.moe.expert.{e:02}")))
                .collect::<Result<_>>()?,
        })
    }

    fn from_layer(g: &mut Graph, layer: &MoeLayer) -> Self {
        let mut ffn = |e: &ExpertFfn| FfnVars {
            w_gate: g.constant(e.w_gate.clone()),
            w_up: g.constant(e.w_up.clone()),
            w_down: g.constant(e.w_down.clone()),
        };
        let shared = layer.shared.iter().map(&mut ffn).collect();
        let routed = layer.routed.iter().map(&mut ffn).collect();
        MoeVars {
            router: g.constant(layer.router.clone()),
            shared,
            routed,
        }
    }
}

/// Per-token routing decision of one MoE layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingOutcome {
    /// Selected routed-expert ids per token, by descending gate.
    pub selected: Vec<Vec<usize>>,
    /// Gate values of `selected`, same order.
    pub selected_gates: Vec<Vec<f64>>,
    /// Full router softmax, `T × n_scored`.
    pub gates: Tensor,
    /// Raw router logits, `T × n_scored`.
    pub logits: Tensor,
    /// Column of routed expert 0 in `gates`/`logits`; the columns before it
    /// belong to router-scored shared experts.
    pub routed_offset: usize,
}

impl RoutingOutcome {
    pub fn n_tokens(&self) -> usize {
        self.selected.len()
    }

    /// Dispatch indicators, gate probabilities and logits for the auxiliary
    /// losses. Router-scored shared experts count as always dispatched.
    pub fn batch_stats(&self) -> RouterBatchStats {
        let n = self.gates.cols();
        let dispatch = self
            .selected
            .iter()
            .map(|sel| {
                let mut row = vec![false; n];
                row[..self.routed_offset].iter_mut().for_each(|d| *d = true);
                for &e in sel {
                    row[self.routed_offset + e] = true;
                }
                row
            })
            .collect();
        RouterBatchStats {
            dispatch,
            gates: self.gates.clone(),
            logits: self.logits.clone(),
        }
    }
}

/// Top-`k_routed` selection over the routed columns of a gate matrix.
pub fn select_experts(gates: &Tensor, routed_offset: usize, k_routed: usize) -> RoutingSelection {
    let mut selected = Vec::with_capacity(gates.rows());
    let mut selected_gates = Vec::with_capacity(gates.rows());
    for r in 0..gates.rows() {
        let (idx, vals) = top_k(&gates.row(r)[routed_offset..], k_routed);
        selected.push(idx);
        selected_gates.push(vals);
    }
    RoutingSelection {
        selected,
        selected_gates,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutingSelection {
    pub selected: Vec<Vec<usize>>,
    pub selected_gates: Vec<Vec<f64>>,
}

/// Graph outputs of one MoE layer.
#[derive(Debug, Clone)]
pub struct MoeGraphOutput {
    pub out: Var,
    pub logits: Var,
    pub gates: Var,
    pub routing: RoutingOutcome,
}

pub(crate) fn moe_forward_graph(
    g: &mut Graph,
    x: Var,
    layer: &MoeVars,
    cfg: &ModelConfig,
) -> Result<MoeGraphOutput> {
    let hidden = g.value(x).cols();
    if hidden != cfg.hidden_size {
        return Err(Error::shape(
            "moe",
            format!("input width {hidden}, hidden_size {}", cfg.hidden_size),
        ));
    }
    let t = g.value(x).rows();
    let logits = g.matmul(x, layer.router)?;
    let gates = g.softmax(logits, 1)?;
    let offset = cfg.routed_offset();
    let sel = select_experts(g.value(gates), offset, cfg.k_routed());

    let mut parts = Vec::new();
    for (s, ffn) in layer.shared.iter().enumerate() {
        let y = ffn.forward(g, x)?;
        let y = match cfg.shared_gating {
            SharedGating::FixedUnit => y,
            SharedGating::RouterScored => {
                let cells: Vec<_> = (0..t).map(|r| (r, s)).collect();
                let w = g.pick(gates, &cells)?;
                g.scale_rows(y, w)?
            }
        };
        parts.push(y);
    }
    for (e, ffn) in layer.routed.iter().enumerate() {
        let rows: Vec<usize> = (0..t).filter(|&r| sel.selected[r].contains(&e)).collect();
        if rows.is_empty() {
            continue;
        }
        let xe = g.gather_rows(x, &rows)?;
        let ye = ffn.forward(g, xe)?;
        let cells: Vec<_> = rows.iter().map(|&r| (r, offset + e)).collect();
        let w = g.pick(gates, &cells)?;
        let scaled = g.scale_rows(ye, w)?;
        parts.push(g.scatter_rows(scaled, &rows, t)?);
    }
    let mut parts = parts.into_iter();
    let mut out = parts
        .next()
        .ok_or_else(|| Error::contract("MoE layer activates no experts"))?;
    for p in parts {
        out = g.add(out, p)?;
    }

    let routing = RoutingOutcome {
        selected: sel.selected,
        selected_gates: sel.selected_gates,
        gates: g.value(gates).clone(),
        logits: g.value(logits).clone(),
        routed_offset: offset,
    };
    Ok(MoeGraphOutput {
        out,
        logits,
        gates,
        routing,
    })
}

fn check_layer(layer: &MoeLayer, cfg: &ModelConfig) -> Result<()> {
    if layer.router.shape() != [cfg.hidden_size, cfg.n_scored()]
        || layer.shared.len() != cfg.n_shared
        || layer.routed.len() != cfg.n_routed()
    {
        return Err(Error::shape("moe", "layer weights do not match config"));
    }
    Ok(())
}

/// Routing decision for `x` (`T × hidden`).
pub fn route(x: &Tensor, layer: &MoeLayer, cfg: &ModelConfig) -> Result<RoutingOutcome> {
    check_layer(layer, cfg)?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let router = g.constant(layer.router.clone());
    let logits = g.matmul(xv, router)?;
    let gates = g.softmax(logits, 1)?;
    let offset = cfg.routed_offset();
    let sel = select_experts(g.value(gates), offset, cfg.k_routed());
    Ok(RoutingOutcome {
        selected: sel.selected,
        selected_gates: sel.selected_gates,
        gates: g.value(gates).clone(),
        logits: g.value(logits).clone(),
        routed_offset: offset,
    })
}

/// Layer output and routing decision for `x` (`T × hidden`).
pub fn moe_forward(
    x: &Tensor,
    layer: &MoeLayer,
    cfg: &ModelConfig,
) -> Result<(Tensor, RoutingOutcome)> {
    check_layer(layer, cfg)?;
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let vars = MoeVars::from_layer(&mut g, layer);
    let out = moe_forward_graph(&mut g, xv, &vars, cfg)?;
    Ok((g.value(out.out).clone(), out.routing))
}

/// Output of a single expert FFN on `x`.
pub fn expert_forward(x: &Tensor, ffn: &ExpertFfn) -> Result<Tensor> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let vars = FfnVars {
        w_gate: g.constant(ffn.w_gate.clone()),
        w_up: g.constant(ffn.w_up.clone()),
        w_down: g.constant(ffn.w_down.clone()),
    };
    let y = vars.forward(&mut g, xv)?;
    Ok(g.value(y).clone())
}

impl MoeLayer {
    /// Extract layer `layer` from a parameter store.
    pub fn from_store(
        params: &super::params::ParamStore,
        layer: usize,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let p = super::params::layer_prefix(layer);
        let ffn = |prefix: String| -> Result<ExpertFfn> {
            Ok(ExpertFfn {
                w_gate: params.get(&format!("{prefix}.w_gate"))?.clone(),
                w_up: params.get(&format!("{prefix}.w_up"))?.clone(),
                w_down: params.get(&format!("{prefix}.w_down"))?.clone(),
            })
        };
        Ok(MoeLayer {
            router: params.get(&format!("{p}.moe.router"))?.clone(),
            shared: (0..cfg.n_shared)
                .map(|s| ffn(format!("{p}.moe.shared.{s:02}")))
                .collect::<Result<_>>()?,
            routed: (0..cfg.n_routed())
                .map(|e| ffn(format!("{p}.moe.expert.{e:02}")))
                .collect::<Result<_>>()?,
        })
    }
}

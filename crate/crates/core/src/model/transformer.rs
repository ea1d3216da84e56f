use super::config::ModelConfig;
use super::moe::{moe_forward_graph, FfnVars, MoeGraphOutput, MoeVars, RoutingOutcome};
use super::params::{layer_prefix, ParamStore, ParamVars};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Routing output of one MoE layer during a forward pass.
#[derive(Debug, Clone)]
pub struct LayerRouting {
    pub layer: usize,
    pub moe: MoeGraphOutput,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `(n_seq·seq_len) × vocab`
    pub logits: Var,
    pub routing: Vec<LayerRouting>,
}

/// Pre-norm decoder-only transformer whose FFN sublayers from
/// `first_moe_layer` on are MoE layers.
#[derive(Debug, Clone)]
pub struct MoeTransformer {
    cfg: ModelConfig,
}

impl MoeTransformer {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(MoeTransformer { cfg })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Forward over `tokens.len() / seq_len` stacked sequences.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        params: &ParamVars,
        tokens: &[usize],
        seq_len: usize,
    ) -> Result<ForwardOutput> {
        let cfg = &self.cfg;
        if seq_len == 0 || seq_len > cfg.max_seq_len {
            return Err(Error::contract(format!(
                "sequence length {seq_len} outside 1..={}",
                cfg.max_seq_len
            )));
        }
        if tokens.is_empty() || tokens.len() % seq_len != 0 {
            return Err(Error::shape(
                "forward",
                format!("{} tokens is not a multiple of {seq_len}", tokens.len()),
            ));
        }
        let mut h = g.embedding(params.get("embed")?, tokens)?;
        let mut routing = Vec::new();
        for layer in 0..cfg.n_layers {
            let p = layer_prefix(layer);
            let a = g.rms_norm(h, params.get(&format!("{p}.attn_norm"))?, cfg.norm_eps)?;
            let mut q = g.matmul(a, params.get(&format!("{p}.attn.wq"))?)?;
            let mut k = g.matmul(a, params.get(&format!("{p}.attn.wk"))?)?;
            let v = g.matmul(a, params.get(&format!("{p}.attn.wv"))?)?;
            if cfg.rope {
                q = g.rope(q, cfg.n_heads, seq_len, cfg.rope_base)?;
                k = g.rope(k, cfg.n_heads, seq_len, cfg.rope_base)?;
            }
            let att = g.causal_attention(q, k, v, cfg.n_heads, seq_len)?;
            let att = g.matmul(att, params.get(&format!("{p}.attn.wo"))?)?;
            h = g.add(h, att)?;

            let f = g.rms_norm(h, params.get(&format!("{p}.ffn_norm"))?, cfg.norm_eps)?;
            let y = if cfg.is_moe_layer(layer) {
                let vars = MoeVars::from_params(params, &p, cfg)?;
                let moe = moe_forward_graph(g, f, &vars, cfg)?;
                let out = moe.out;
                routing.push(LayerRouting { layer, moe });
                out
            } else {
                FfnVars::from_params(params, &format!("{p}.ffn"))?.forward(g, f)?
            };
            h = g.add(h, y)?;
        }
        let h = g.rms_norm(h, params.get("final_norm")?, cfg.norm_eps)?;
        let logits = g.matmul(h, params.get("unembed")?)?;
        Ok(ForwardOutput { logits, routing })
    }

    /// Logits and per-MoE-layer routing for stacked sequences, without
    /// recording gradients.
    pub fn forward_batch(
        &self,
        params: &ParamStore,
        tokens: &[usize],
        seq_len: usize,
    ) -> Result<(Tensor, Vec<(usize, RoutingOutcome)>)> {
        let mut g = Graph::new();
        let vars = params.attach(&mut g, false);
        let out = self.forward_graph(&mut g, &vars, tokens, seq_len)?;
        let routing = out
            .routing
            .into_iter()
            .map(|r| (r.layer, r.moe.routing))
            .collect();
        Ok((g.value(out.logits).clone(), routing))
    }
}

/// Logits (`T × vocab`) and per-MoE-layer routing for one sequence.
pub fn forward(
    tokens: &[usize],
    cfg: &ModelConfig,
    params: &ParamStore,
) -> Result<(Tensor, Vec<(usize, RoutingOutcome)>)> {
    MoeTransformer::new(cfg.clone())?.forward_batch(params, tokens, tokens.len())
}

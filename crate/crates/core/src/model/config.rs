use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How shared experts are weighted in the layer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SharedGating {
    /// Shared experts add with weight 1.0 and the router scores only the
    /// routed experts.
    #[default]
    FixedUnit,
    /// The router scores all experts; shared experts are always active and
    /// weighted by their own softmax entry.
    RouterScored,
}

/// Architectural hyperparameters of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_size: usize,
    pub dense_ffn_hidden: usize,
    pub moe_ffn_hidden: usize,
    pub n_experts: usize,
    pub k_active: usize,
    pub n_shared: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// Layers with index >= this use MoE FFNs; earlier layers are dense.
    pub first_moe_layer: usize,
    pub shared_gating: SharedGating,
    pub rope: bool,
    pub rope_base: f64,
    pub norm_eps: f64,
    pub init_std: f64,
}

/// One member of the reference model family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelCard {
    pub name: &'static str,
    pub n_layers: usize,
    pub hidden_size: usize,
    pub ffn_hidden: usize,
    pub moe_ffn_hidden: usize,
    pub active_params: f64,
    pub total_params: f64,
    pub flops: f64,
    pub tokens: f64,
}

pub const MODEL_CARDS: [ModelCard; 7] = [
    card("38M-100M", 9, 256, 1368, 176, 38e6, 100e6, 1.0e18, 4.4e9),
    card("98M-349M", 9, 512, 2736, 352, 98e6, 349e6, 3.0e18, 5.0e9),
    card("115M-459M", 12, 512, 2736, 352, 115e6, 459e6, 6.0e18, 8.7e9),
    card("290M-1.3B", 9, 1024, 5472, 704, 290e6, 1.3e9, 2.0e19, 11.4e9),
    card("419M-2.2B", 15, 1024, 5472, 704, 419e6, 2.2e9, 3.0e19, 11.9e9),
    card("721M-3.8B", 12, 1536, 8208, 1056, 721e6, 3.8e9, 8.0e19, 18.4e9),
    card("1.7B-10.3B", 18, 2048, 10944, 1408, 1.7e9, 10.3e9, 2.4e20, 23.1e9),
];

#[allow(clippy::too_many_arguments)]
const fn card(
    name: &'static str,
    n_layers: usize,
    hidden_size: usize,
    ffn_hidden: usize,
    moe_ffn_hidden: usize,
    active_params: f64,
    total_params: f64,
    flops: f64,
    tokens: f64,
) -> ModelCard {
    ModelCard {
        name,
        n_layers,
        hidden_size,
        ffn_hidden,
        moe_ffn_hidden,
        active_params,
        total_params,
        flops,
        tokens,
    }
}

/// Vocabulary used by the presets (GPT-NeoX tokenizer padded to 128).
pub const PRESET_VOCAB: usize = 50304;

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::from_card(&MODEL_CARDS[0])
    }
}

impl ModelConfig {
    pub fn from_card(card: &ModelCard) -> Self {
        ModelConfig {
            n_layers: card.n_layers,
            hidden_size: card.hidden_size,
            dense_ffn_hidden: card.ffn_hidden,
            moe_ffn_hidden: card.moe_ffn_hidden,
            n_experts: 64,
            k_active: 8,
            n_shared: 2,
            n_heads: card.hidden_size / 64,
            vocab_size: PRESET_VOCAB,
            max_seq_len: 2048,
            first_moe_layer: 1,
            shared_gating: SharedGating::FixedUnit,
            rope: true,
            rope_base: 10000.0,
            norm_eps: 1e-5,
            init_std: 0.02,
        }
    }

    /// Named preset from the model family, e.g. `"38M-100M"`.
    pub fn preset(name: &str) -> Option<Self> {
        MODEL_CARDS
            .iter()
            .find(|c| c.name == name)
            .map(ModelConfig::from_card)
    }

    /// Small MoE model for desk-scale runs: 2 layers, hidden 32, 8 experts
    /// with top-2 activation of which 1 is shared, 64-token vocabulary.
    pub fn toy() -> Self {
        ModelConfig {
            n_layers: 2,
            hidden_size: 32,
            dense_ffn_hidden: 64,
            moe_ffn_hidden: 32,
            n_experts: 8,
            k_active: 2,
            n_shared: 1,
            n_heads: 2,
            vocab_size: 64,
            max_seq_len: 64,
            ..ModelConfig::default()
        }
    }

    pub fn n_routed(&self) -> usize {
        self.n_experts - self.n_shared
    }

    /// Routed experts selected per token.
    pub fn k_routed(&self) -> usize {
        self.k_active - self.n_shared
    }

    /// Number of router outputs.
    pub fn n_scored(&self) -> usize {
        match self.shared_gating {
            SharedGating::FixedUnit => self.n_routed(),
            SharedGating::RouterScored => self.n_experts,
        }
    }

    /// Column of the first routed expert in the router output.
    pub fn routed_offset(&self) -> usize {
        match self.shared_gating {
            SharedGating::FixedUnit => 0,
            SharedGating::RouterScored => self.n_shared,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.n_heads
    }

    pub fn is_moe_layer(&self, layer: usize) -> bool {
        layer >= self.first_moe_layer
    }

    pub fn n_moe_layers(&self) -> usize {
        self.n_layers.saturating_sub(self.first_moe_layer)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("hidden_size", self.hidden_size),
            ("dense_ffn_hidden", self.dense_ffn_hidden),
            ("moe_ffn_hidden", self.moe_ffn_hidden),
            ("n_experts", self.n_experts),
            ("k_active", self.k_active),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.k_active > self.n_experts {
            return Err(Error::config("k_active", "exceeds n_experts"));
        }
        if self.n_shared > self.k_active {
            return Err(Error::config("n_shared", "exceeds k_active"));
        }
        if self.k_routed() > 0 && self.n_routed() == 0 {
            return Err(Error::config("n_shared", "no routed experts left to select"));
        }
        if self.hidden_size % self.n_heads != 0 {
            return Err(Error::config("n_heads", "must divide hidden_size"));
        }
        if self.rope && self.head_dim() % 2 != 0 {
            return Err(Error::config("n_heads", "rope needs an even head dimension"));
        }
        for (field, v) in [
            ("rope_base", self.rope_base),
            ("norm_eps", self.norm_eps),
            ("init_std", self.init_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(field, "must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: u64,
    pub active: u64,
}

/// Total and per-token active parameter counts. Embedding and unembedding
/// are untied; there are no biases.
pub fn count_params(cfg: &ModelConfig) -> ParamCount {
    let h = cfg.hidden_size as u64;
    let v = cfg.vocab_size as u64;
    let expert = 3 * h * cfg.moe_ffn_hidden as u64;
    let dense = 3 * h * cfg.dense_ffn_hidden as u64;
    let attention = 4 * h * h + 2 * h;

    let mut shared = 2 * v * h + h;
    let mut total_experts = 0;
    let mut active_experts = 0;
    for layer in 0..cfg.n_layers {
        shared += attention;
        if cfg.is_moe_layer(layer) {
            shared += h * cfg.n_scored() as u64;
            total_experts += cfg.n_experts as u64 * expert;
            active_experts += cfg.k_active as u64 * expert;
        } else {
            shared += dense;
        }
    }
    ParamCount {
        total: shared + total_experts,
        active: shared + active_experts,
    }
}

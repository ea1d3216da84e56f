use std::collections::BTreeMap;

use moelab::model::{ModelConfig, ParamStore};

/// Model whose MoE layers hold one always-selected expert, and the dense
/// model with the same weights in ordinary FFN slots.
pub fn degenerate_pair(seed: u64) -> (ModelConfig, ParamStore, ModelConfig, ParamStore) {
    let moe_cfg = ModelConfig {
        n_experts: 1,
        k_active: 1,
        n_shared: 0,
        ..ModelConfig::toy()
    };
    let dense_cfg = ModelConfig {
        first_moe_layer: moe_cfg.n_layers,
        dense_ffn_hidden: moe_cfg.moe_ffn_hidden,
        ..moe_cfg.clone()
    };
    let moe_params = ParamStore::init(&moe_cfg, seed).unwrap();
    let mut entries = BTreeMap::new();
    for (name, t) in moe_params.iter() {
        if name.ends_with(".moe.router") {
            continue;
        }
        entries.insert(name.replace(".moe.expert.00", ".ffn"), t.clone());
    }
    // layer 0 keeps its dense FFN, which has the moe width in both configs
    (moe_cfg, moe_params, dense_cfg, ParamStore::from_entries(entries))
}

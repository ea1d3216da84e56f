//! Forward a toy MoE transformer and show which experts each token picked.
//! Also lists parameter counts for the reference model family.

use moelab::model::{count_params, forward, ModelConfig, ParamStore, MODEL_CARDS};

fn main() -> anyhow::Result<()> {
    let cfg = ModelConfig::toy();
    let params = ParamStore::init(&cfg, 0)?;
    let tokens = [3, 14, 15, 9, 26, 5];
    let (logits, routing) = forward(&tokens, &cfg, &params)?;
    println!("logits shape {:?}", logits.shape());
    for (layer, r) in &routing {
        println!("layer {layer}: {} routed experts, {} shared", cfg.n_routed(), cfg.n_shared);
        for (t, (experts, gates)) in r.selected.iter().zip(&r.selected_gates).enumerate() {
            println!("  token {:>2} -> experts {experts:?} gates {gates:.3?}", tokens[t]);
        }
    }

    println!("\n{:<12} {:>14} {:>14}", "model", "active", "total");
    for card in &MODEL_CARDS {
        let c = count_params(&ModelConfig::from_card(card));
        println!("{:<12} {:>14} {:>14}", card.name, c.active, c.total);
    }
    Ok(())
}

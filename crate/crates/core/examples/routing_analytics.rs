//! Specialization, co-activation and saturation from a run's traces.
//!
//! Usage: cargo run --release --example routing_analytics -- [run_dir]
//! Without a run directory a short toy run is trained first.

use moelab::analytics::{coactivation_heatmap, saturation, series, top_specialized_tokens, Metric, TraceSet};
use moelab::trainer::{synthetic_corpus, train, RunManifest, TrainSpec};

fn main() -> anyhow::Result<()> {
    let run = match std::env::args().nth(1) {
        Some(dir) => std::path::PathBuf::from(dir),
        None => {
            let dir = std::env::temp_dir().join("moelab-analytics-example");
            let mut spec = TrainSpec::toy();
            spec.train.total_steps = 100;
            train(&spec, &synthetic_corpus(64, 20_000, 0.9, 7), &dir, |_| {})?;
            dir
        }
    };
    let manifest = RunManifest::load(&run)?;
    let traces = TraceSet::load_run(&run)?;
    let last = traces.final_step().expect("run has traces");
    let layer = manifest.moe_layers[0];

    for expert in 0..manifest.n_routed.min(3) {
        let top = top_specialized_tokens(&traces, layer, last, expert, 5)?;
        println!("expert {expert}: most specialized tokens {top:?}");
    }

    if manifest.k_routed == 1 {
        println!("\none routed expert per token, so off-diagonal co-activation is zero");
    }
    let h = coactivation_heatmap(&traces, layer, last, 4)?;
    println!("\nco-activation among experts {:?} (peak {:?})", h.experts, h.peak());
    for row in &h.scores {
        println!("  {row:.3?}");
    }

    println!("\nsaturation at k=1 against step {last}:");
    for step in traces.steps() {
        println!("  step {step:>4}: {:.3}", saturation(&traces, layer, step, last, 1)?);
    }
    let table = series(Metric::Specialization { top_n: 2 }, &traces, &[layer], &traces.steps())?;
    println!("\nspecialization series has {} rows", table.rows.len());
    Ok(())
}

//! Train the toy MoE model on a synthetic corpus.
//!
//! Usage: cargo run --release --example train_toy -- [out_dir] [steps]

use moelab::trainer::{synthetic_corpus, train, TrainSpec};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "runs/toy".into());
    let mut spec = TrainSpec::toy();
    if let Some(steps) = args.next() {
        spec.train.total_steps = steps.parse()?;
    }
    let corpus = synthetic_corpus(64, 20_000, 0.9, 7);
    let every = (spec.train.total_steps / 20).max(1);
    let summary = train(&spec, &corpus, out.as_ref(), |row| {
        if row.step % every == 0 {
            println!("step {:>4}  lr {:.2e}  ce {:.4}  lb {:.4}  rz {:.4}", row.step, row.lr, row.ce, row.lb, row.rz);
        }
    })?;
    println!(
        "{} checkpoints and {} traces written to {out}",
        summary.manifest.checkpoints.len(),
        summary.manifest.traces.len()
    );
    Ok(())
}

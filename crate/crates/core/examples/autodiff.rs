//! Build a small graph, backpropagate, and compare with finite differences.

use moelab::tensor::gradcheck::{check_gradients, Case};
use moelab::tensor::{Graph, Tensor};

fn main() -> anyhow::Result<()> {
    let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?;
    let w = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;

    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let wv = g.param(w.clone());
    let logits = g.matmul(xv, wv)?;
    let loss = g.cross_entropy(logits, &[1, 3])?;
    let grads = g.backward(loss)?;
    println!("loss = {:.6}", g.value(loss).data()[0]);
    println!("dL/dW = {:?}", grads.get(wv).map(|t| t.data().to_vec()));

    let case = Case::new("matmul_ce", vec![x, w], |g, v| {
        let logits = g.matmul(v[0], v[1])?;
        g.cross_entropy(logits, &[1, 3])
    });
    let report = check_gradients(&case)?;
    println!(
        "finite-difference check over {} coordinates: max relative error {:.2e}",
        report.coords_checked, report.max_rel_error
    );
    Ok(())
}

//! Load-balance and router z-loss on balanced and collapsed routing.

use moelab::objectives::{load_balance_loss, router_z_loss, total_loss, RouterBatchStats};
use moelab::tensor::Tensor;

fn stats(n: usize, k: usize, collapsed: bool) -> anyhow::Result<RouterBatchStats> {
    let dispatch: Vec<Vec<bool>> = (0..n)
        .map(|t| (0..n).map(|e| if collapsed { e < k } else { (e + n - t) % n < k }).collect())
        .collect();
    let gates: Vec<f64> = (0..n)
        .flat_map(|_| (0..n).map(move |e| if collapsed { (e == 0) as u8 as f64 } else { 1.0 / n as f64 }))
        .collect();
    Ok(RouterBatchStats {
        dispatch,
        gates: Tensor::new(vec![n, n], gates)?,
        logits: Tensor::new(vec![n, n], vec![0.0; n * n])?,
    })
}

fn main() -> anyhow::Result<()> {
    let (n, k) = (64, 8);
    let balanced = stats(n, k, false)?;
    let collapsed = stats(n, k, true)?;
    let lb = load_balance_loss(&balanced)?;
    let rz = router_z_loss(&balanced)?;
    println!("balanced routing:  LB = {lb}, z-loss = {rz:.6} (ln² {n} = {:.6})", (n as f64).ln().powi(2));
    println!("collapsed routing: LB = {}", load_balance_loss(&collapsed)?);
    println!("total with ce 3.0: {:.6}", total_loss(3.0, lb, rz, 0.01, 0.001));
    Ok(())
}

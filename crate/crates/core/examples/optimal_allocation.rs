//! Compute-optimal model size and token count under the reference law.

use moelab::scaling::{optimal_allocation, LawParams, KAPPA};

fn main() -> anyhow::Result<()> {
    let law = LawParams::REFERENCE;
    println!("N*(C) exponent beta/(alpha+beta) = {:.6}", law.n_exponent());
    println!("{:>10} {:>14} {:>14} {:>10}", "C", "N*", "D*", "loss");
    for c in [1e18, 3e18, 6e18, 2e19, 3e19, 8e19, 2.4e20, 1e22] {
        let a = optimal_allocation(&law, c, KAPPA)?;
        println!("{c:>10.1e} {:>14.4e} {:>14.4e} {:>10.4}", a.n_opt, a.d_opt, a.loss);
    }
    Ok(())
}

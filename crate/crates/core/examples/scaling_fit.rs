//! IsoFLOP and parametric fits on synthetic points from the reference law.

use moelab::scaling::{
    fit_parametric, isoflop_analysis, isoflop_grid, noisy_points, FitGrid, FitOptions, LawParams, FIXTURE_BUDGETS,
    REFERENCE_ISOFLOP_EXPONENTS,
};

fn main() -> anyhow::Result<()> {
    let law = LawParams::REFERENCE;
    // IsoFLOP parabolas need points near each budget's optimum
    let iso = isoflop_analysis(&isoflop_grid(&law, &FIXTURE_BUDGETS, 16, 0.5)?)?;
    for b in &iso.budgets {
        println!("C = {:.1e}: N* = {:.3e}, D* = {:.3e}, min loss {:.4}", b.c_flops, b.parabola.n_opt, b.d_opt, b.parabola.min_loss);
    }
    if let Some(n) = &iso.n_law {
        println!(
            "N*(C) exponent {:.4} (closed form {:.4}, reference IsoFLOP value {})",
            n.exponent,
            law.n_exponent(),
            REFERENCE_ISOFLOP_EXPONENTS.0
        );
    }

    let points = noisy_points(&law, &FIXTURE_BUDGETS, 32, (1e7, 1e10), 0.005, 11)?;
    let fit = fit_parametric(&points, &FitGrid::default(), &FitOptions::default())?;
    let p = fit.params;
    println!("\nparametric fit to {} noisy points from {} starts:", points.len(), fit.starts_total);
    println!("  A {:.3} B {:.3} alpha {:.4} beta {:.4} L0 {:.4}", p.a, p.b, p.alpha, p.beta, p.l0);
    println!("  true alpha {} beta {} L0 {}", law.alpha, law.beta, law.l0);
    Ok(())
}

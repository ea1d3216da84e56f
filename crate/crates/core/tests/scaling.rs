use moelab::scaling::{
    fit_parametric, isoflop_analysis, isoflop_grid, noisy_points, optimal_allocation, tokens_for_budget, FitGrid,
    FitOptions, LawParams, FIXTURE_BUDGETS, KAPPA,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;

const R: LawParams = LawParams::REFERENCE;

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

#[test]
fn noiseless_fit_recovers_the_law() {
    let pts = isoflop_grid(&R, &FIXTURE_BUDGETS, 6, 0.5).unwrap();
    let fit = fit_parametric(&pts, &FitGrid::default(), &FitOptions::default()).unwrap();
    let p = fit.params;
    assert!(fit.objective < 1e-10, "objective {}", fit.objective);
    assert!(rel(p.alpha, R.alpha) < 0.01, "alpha {}", p.alpha);
    assert!(rel(p.beta, R.beta) < 0.01, "beta {}", p.beta);
    assert!(rel(p.l0, R.l0) < 0.005, "L0 {}", p.l0);
}

#[test]
fn noisy_fit_recovers_exponents() {
    let pts = noisy_points(&R, &FIXTURE_BUDGETS, 32, (1e7, 1e10), 0.005, 11).unwrap();
    let fit = fit_parametric(&pts, &FitGrid::default(), &FitOptions::default()).unwrap();
    assert!(rel(fit.params.alpha, R.alpha) < 0.05, "alpha {}", fit.params.alpha);
    assert!(rel(fit.params.beta, R.beta) < 0.05, "beta {}", fit.params.beta);
}

#[test]
fn fit_ignores_point_order() {
    let pts = noisy_points(&R, &FIXTURE_BUDGETS[..2], 8, (1e7, 1e10), 0.005, 5).unwrap();
    let grid = FitGrid {
        log_a: vec![0.0, 10.0],
        log_b: vec![5.0, 15.0],
        alpha: vec![0.3],
        beta: vec![0.5],
        l0: vec![2.0],
    };
    let a = fit_parametric(&pts, &grid, &FitOptions::default()).unwrap();
    let mut shuffled = pts.clone();
    shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(9));
    let b = fit_parametric(&shuffled, &grid, &FitOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn isoflop_vertices_track_law_optima() {
    let pts = isoflop_grid(&R, &FIXTURE_BUDGETS, 6, 0.5).unwrap();
    let report = isoflop_analysis(&pts).unwrap();
    let fit = fit_parametric(&pts, &FitGrid::default(), &FitOptions::default()).unwrap();
    for b in &report.budgets {
        let opt = optimal_allocation(&fit.params, b.c_flops, KAPPA).unwrap();
        assert!(rel(b.parabola.n_opt, opt.n_opt) < 0.15, "{}: {} vs {}", b.c_flops, b.parabola.n_opt, opt.n_opt);
    }
    let n_law = report.n_law.unwrap();
    assert!((n_law.exponent - R.n_exponent()).abs() < 0.02, "{}", n_law.exponent);
}

/// The table rounds token counts to 0.1B, which puts one row exactly on the
/// 2% boundary; the comparison `|κND - C| <= C/50` is done in integers.
#[test]
fn budget_table_token_counts() {
    let rows: [(u128, u128, u128); 7] = [
        (38_000_000, 1_000_000_000_000_000_000, 4_400_000_000),
        (98_000_000, 3_000_000_000_000_000_000, 5_000_000_000),
        (115_000_000, 6_000_000_000_000_000_000, 8_700_000_000),
        (290_000_000, 20_000_000_000_000_000_000, 11_400_000_000),
        (419_000_000, 30_000_000_000_000_000_000, 11_900_000_000),
        (721_000_000, 80_000_000_000_000_000_000, 18_400_000_000),
        (1_700_000_000, 240_000_000_000_000_000_000, 23_100_000_000),
    ];
    for (n, c, d) in rows {
        let implied = 6 * n * d;
        assert!(50 * implied.abs_diff(c) <= c, "{n}: {implied} vs {c}");
        let got = tokens_for_budget(c as f64, n as f64, KAPPA);
        assert!(rel(d as f64, got) < 0.02 + 1e-12);
    }
}

#[test]
fn reference_loss_regression_value() {
    // high-precision evaluation of the reference law at (1.7e9, 23.1e9)
    let v = moelab::scaling::predict_loss(&R, 1.7e9, 23.1e9);
    assert!((v - 2.756_166_557_551_559_4).abs() < 1e-12, "{v}");
}

#[test]
fn sixteen_point_vertex_near_constrained_optimum() {
    let pts = isoflop_grid(&R, &[3e19], 16, 0.5).unwrap();
    let parabola = moelab::scaling::fit_isoflop_parabola(&pts).unwrap();
    let opt = optimal_allocation(&R, 3e19, KAPPA).unwrap();
    assert!(rel(parabola.n_opt, opt.n_numeric) < 0.10, "{} vs {}", parabola.n_opt, opt.n_numeric);
}

#[test]
fn reference_vertices_give_exponent_near_reference() {
    let pts = isoflop_grid(&R, &FIXTURE_BUDGETS, 16, 0.5).unwrap();
    let report = isoflop_analysis(&pts).unwrap();
    let a = report.n_law.unwrap().exponent;
    let (reference, _) = moelab::scaling::REFERENCE_ISOFLOP_EXPONENTS;
    println!("isoflop exponent {a}, reference {reference}, closed form {}", R.n_exponent());
    assert!((a - R.n_exponent()).abs() < 1e-9, "{a}");
    assert!((a - reference).abs() < 0.05, "{a}");
}

#[test]
fn bundled_fixtures_match_generators() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let clean = moelab::scaling::read_points(&dir.join("scaling_points.csv")).unwrap();
    assert_eq!(clean, isoflop_grid(&R, &FIXTURE_BUDGETS, 6, 0.5).unwrap());
    let noisy = moelab::scaling::read_points(&dir.join("scaling_points_noisy.csv")).unwrap();
    assert_eq!(noisy, noisy_points(&R, &FIXTURE_BUDGETS, 32, (1e7, 1e10), 0.005, 11).unwrap());
    let toy = std::fs::read_to_string(dir.join("toy.toml")).unwrap();
    assert_eq!(moelab::cli::RunConfig::from_toml(&toy, &[]).unwrap(), moelab::cli::RunConfig::default());
}

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::isoflop::ScalingPoint;
use super::law::{predict_loss, LawParams};
use crate::error::{Error, Result};

pub const POINTS_HEADER: &str = "n_active,d_tokens,c_flops,loss";

/// Budgets used by the bundled fixtures.
pub const FIXTURE_BUDGETS: [f64; 4] = [1e18, 3e18, 6e18, 3e19];

pub fn points_to_csv(points: &[ScalingPoint]) -> String {
    let mut out = format!("{POINTS_HEADER}\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", p.n_active, p.d_tokens, p.c_flops, p.loss));
    }
    out
}

/// Parse a points table. Blank lines are skipped; every other row must
/// hold four finite positive numbers consistent with `C ≈ 6ND`.
pub fn parse_points(text: &str, path: &Path) -> Result<Vec<ScalingPoint>> {
    let row_err = |line: usize, detail: String| Error::Row {
        path: path.to_path_buf(),
        line,
        detail,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == POINTS_HEADER => {}
        Some((_, h)) => return Err(row_err(1, format!("expected header `{POINTS_HEADER}`, found `{}`", h.trim()))),
        None => return Err(row_err(1, "empty file".into())),
    }
    let mut points = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(row_err(line_no, format!("expected 4 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f
                .parse::<f64>()
                .map_err(|_| row_err(line_no, format!("`{f}` is not a number")))?;
        }
        let p = ScalingPoint {
            n_active: v[0],
            d_tokens: v[1],
            c_flops: v[2],
            loss: v[3],
        };
        p.validate().map_err(|e| row_err(line_no, e.to_string()))?;
        points.push(p);
    }
    Ok(points)
}

pub fn read_points(path: &Path) -> Result<Vec<ScalingPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_points(&text, path)
}

pub fn write_points(path: &Path, points: &[ScalingPoint]) -> Result<()> {
    std::fs::write(path, points_to_csv(points)).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// `per_budget` sizes spaced evenly in log10 over `[center - half, center + half]`
/// decades around each budget's law optimum, with exact law losses.
pub fn isoflop_grid(p: &LawParams, budgets: &[f64], per_budget: usize, half_decades: f64) -> Result<Vec<ScalingPoint>> {
    if per_budget < 2 {
        return Err(Error::contract("need at least 2 sizes per budget"));
    }
    let mut out = Vec::new();
    for &c in budgets {
        let opt = super::law::optimal_allocation(p, c, super::law::KAPPA)?;
        let center = opt.n_opt.log10();
        for i in 0..per_budget {
            let x = center - half_decades + 2.0 * half_decades * i as f64 / (per_budget - 1) as f64;
            let mut pt = ScalingPoint::on_budget(c, 10f64.powf(x), 0.0);
            pt.loss = predict_loss(p, pt.n_active, pt.d_tokens);
            out.push(pt);
        }
    }
    Ok(out)
}

/// Sizes log-spaced over `[n_lo, n_hi]` at each budget, losses scaled by
/// `1 + ε` with `ε ~ N(0, rel_noise²)`.
pub fn noisy_points(
    p: &LawParams,
    budgets: &[f64],
    per_budget: usize,
    (n_lo, n_hi): (f64, f64),
    rel_noise: f64,
    seed: u64,
) -> Result<Vec<ScalingPoint>> {
    if per_budget < 2 || !(n_lo > 0.0 && n_hi > n_lo) || !(rel_noise >= 0.0) {
        return Err(Error::contract("invalid noisy fixture parameters"));
    }
    let normal = Normal::new(0.0, rel_noise).map_err(|e| Error::contract(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = (n_lo.log10(), n_hi.log10());
    let mut out = Vec::new();
    for &c in budgets {
        for i in 0..per_budget {
            let x = a + (b - a) * i as f64 / (per_budget - 1) as f64;
            let mut pt = ScalingPoint::on_budget(c, 10f64.powf(x), 0.0);
            pt.loss = predict_loss(p, pt.n_active, pt.d_tokens) * (1.0 + normal.sample(&mut rng));
            out.push(pt);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let pts = noisy_points(&LawParams::REFERENCE, &FIXTURE_BUDGETS, 5, (1e7, 1e10), 0.005, 3).unwrap();
        let back = parse_points(&points_to_csv(&pts), Path::new("x.csv")).unwrap();
        assert_eq!(pts, back);
    }

    #[test]
    fn bad_rows_name_their_line() {
        let text = format!("{POINTS_HEADER}\n1e8,1e9,6e17,3.0\n\n1e8,abc,6e17,3.0\n");
        match parse_points(&text, Path::new("p.csv")) {
            Err(Error::Row { line, detail, .. }) => {
                assert_eq!(line, 4);
                assert!(detail.contains("abc"));
            }
            other => panic!("{other:?}"),
        }
        let text = format!("{POINTS_HEADER}\n1e8,1e9,9e17,3.0\n");
        assert!(matches!(parse_points(&text, Path::new("p.csv")), Err(Error::Row { line: 2, .. })));
        assert!(matches!(parse_points("a,b\n", Path::new("p.csv")), Err(Error::Row { line: 1, .. })));
    }

    #[test]
    fn grid_is_centred_on_the_optimum() {
        let pts = isoflop_grid(&LawParams::REFERENCE, &[1e18], 5, 0.5).unwrap();
        let opt = super::super::law::optimal_allocation(&LawParams::REFERENCE, 1e18, 6.0).unwrap();
        assert!((pts[2].n_active / opt.n_opt - 1.0).abs() < 1e-12);
        assert!(pts.iter().all(|p| p.validate().is_ok()));
    }
}

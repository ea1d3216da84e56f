//! Scaling-law fitting and compute-optimal allocation.

mod fit;
mod io;
mod isoflop;
mod law;

pub use fit::{fit_parametric, huber, huber_grad, FitGrid, FitOptions, ParametricFit, HUBER_DELTA};
pub use io::{
    isoflop_grid, noisy_points, parse_points, points_to_csv, read_points, write_points, FIXTURE_BUDGETS,
    POINTS_HEADER,
};
pub use isoflop::{
    fit_isoflop_parabola, fit_power_law, group_by_budget, isoflop_analysis, power_law_through, BudgetFit,
    IsoflopReport, ParabolaFit, PowerLaw, ScalingPoint,
};
pub use law::{
    optimal_allocation, predict_loss, tokens_for_budget, Allocation, LawParams, KAPPA, REFERENCE_ISOFLOP_EXPONENTS,
};

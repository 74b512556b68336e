//! Truncated cell problems on the strip `[-rho, rho] x R` (periodic in `y2`),
//! their ergodic constants and the effective tangential Hamiltonian `E`.

mod diagnostics;
mod ergodic;
mod strip;
pub(crate) mod table;

pub use diagnostics::{corrector_slope_diagnostic, SlopeDiagnostic};
pub use ergodic::{
    effective_e, effective_e_detailed, ergodic_constant, interior_cell_check, CellResult,
    EffectiveSample, InteriorCheck,
};
pub use strip::{solve_discounted, DiscountedSolve, StripGrid, StripProblem};
pub use table::{build_effective_table, ek_modify, fenchel_star, EffectiveTable, TailFit};

use serde::{Deserialize, Serialize};

/// Tolerances, grids and schedules of the cell solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellOptions {
    /// Grid spacing in both fast variables.
    pub h: f64,
    /// Fixed-point tolerance on `sup |T v - v|`.
    pub eps_fix: f64,
    /// Largest allowed gap between the last two vanishing-discount values,
    /// relative once the values exceed one in magnitude.
    pub ergodic_tol: f64,
    /// Stop widening the strip once consecutive constants differ by less.
    pub rho_tol: f64,
    /// Discount rates, decreasing.
    pub eta_schedule: Vec<f64>,
    /// First strip half-width; `max(1, 4 ||g||)` when absent.
    pub rho0: Option<f64>,
    /// Number of strip doublings after `rho0`.
    pub max_doublings: usize,
    /// Policy improvement budget of each fixed-point solve.
    pub max_iterations: usize,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            h: 1.0 / 64.0,
            eps_fix: 1e-7,
            ergodic_tol: 1e-3,
            rho_tol: 5e-3,
            eta_schedule: default_eta_schedule(),
            rho0: None,
            max_doublings: 3,
            max_iterations: 200,
        }
    }
}

/// `0.2 * 2^-k` for `k = 0..=6`.
pub fn default_eta_schedule() -> Vec<f64> {
    (0..7).map(|k| 0.2 * 0.5f64.powi(k)).collect()
}

use serde::Serialize;

use super::ergodic::CellResult;
use crate::hamiltonians::SlopePair;
use crate::model::Side;
use crate::real::Real;

/// Growth of a strip corrector away from the interface, measured against
/// the slopes `Pi-bar`, `Pi-hat` of one side.
#[derive(Clone, Debug, Serialize)]
pub struct SlopeDiagnostic<T> {
    pub side: Side,
    #[serde(rename = "E")]
    pub e: T,
    pub rho_star: T,
    pub slope_bar: T,
    pub slope_hat: T,
    /// Smallest `M` with outward increments `>= Pi-bar h1 - M` beyond `rho_star`.
    pub increment_defect: T,
    /// Least-squares slope of the `y2`-averaged corrector on the fit window.
    pub fit_slope: T,
    pub fit_window: (T, T),
    /// Smallest `C` with `Pi-bar y1 - C <= chi <= Pi-hat y1 + C` on the side.
    pub sandwich_offset: T,
    /// Rescaled field at the origin, `eps chi(0) = 0`.
    pub w_at_origin: T,
}

/// Checks the outward growth of the corrector on `side` against the slope
/// pair. The fit window is `[1, 2]` (mirrored on the left), clipped to the strip.
pub fn corrector_slope_diagnostic<T: Real>(
    cell: &CellResult<T>,
    side: Side,
    e: T,
    slopes: SlopePair<T>,
) -> SlopeDiagnostic<T> {
    let grid = &cell.grid;
    let center = grid.center();
    let rho = grid.rho;
    let rho_star = T::one().min(rho / T::lit(2.0));
    let s = side.sigma_real::<T>();
    // outward column step: +1 on the right, -1 on the left
    let columns: Vec<usize> = match side {
        Side::Right => (center..grid.n1).collect(),
        Side::Left => (0..=center).rev().collect(),
    };

    let mut defect = T::zero();
    for w in columns.windows(2) {
        let (inner, outer) = (w[0], w[1]);
        if grid.y1(inner).abs() < rho_star {
            continue;
        }
        for j in 0..grid.n2 {
            let inc = cell.corrector_at(outer, j) - cell.corrector_at(inner, j);
            // expected outward increment is Pi-bar * (y1(outer) - y1(inner))
            let expected = slopes.bar * s * grid.h1;
            defect = defect.max(expected - inc);
        }
    }

    let lo = T::one().min(rho);
    let hi = T::lit(2.0).min(rho);
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) =
        (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for &i in &columns {
        let d = grid.y1(i).abs();
        if d < lo - T::lit(1e-12) || d > hi + T::lit(1e-12) {
            continue;
        }
        let x = grid.y1(i);
        let mean = (0..grid.n2)
            .map(|j| cell.corrector_at(i, j))
            .fold(T::zero(), |a, b| a + b)
            / T::from_usize_lossy(grid.n2);
        sx = sx + x;
        sy = sy + mean;
        sxx = sxx + x * x;
        sxy = sxy + x * mean;
        n = n + T::one();
    }
    let denom = n * sxx - sx * sx;
    let fit_slope = if n >= T::lit(2.0) && denom > T::zero() {
        (n * sxy - sx * sy) / denom
    } else {
        T::nan()
    };

    let mut offset = T::zero();
    for &i in &columns {
        let y1 = grid.y1(i);
        for j in 0..grid.n2 {
            let chi = cell.corrector_at(i, j);
            offset = offset.max(slopes.bar * y1 - chi).max(chi - slopes.hat * y1);
        }
    }

    let (a, b) = match side {
        Side::Right => (lo, hi),
        Side::Left => (-hi, -lo),
    };
    SlopeDiagnostic {
        side,
        e,
        rho_star,
        slope_bar: slopes.bar,
        slope_hat: slopes.hat,
        increment_defect: defect,
        fit_slope,
        fit_window: (a, b),
        sandwich_offset: offset,
        w_at_origin: cell.corrector[grid.origin()],
    }
}

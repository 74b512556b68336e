use log::debug;
use serde::Serialize;

use super::strip::{StripGrid, StripProblem};
use super::CellOptions;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::hamiltonians::{
    hamiltonian, oscillatory_hamiltonian, slope_pair, tangential_min_both, SlopePair,
};
use crate::model::{ProblemInstance, Side};
use crate::real::Real;
use crate::semi_lagrangian::{
    build_class, BellmanOperator, Candidate, FixedPointOptions, Layout,
};

/// Ergodic constant of one truncated cell problem with its corrector.
#[derive(Clone, Debug, Serialize)]
pub struct CellResult<T> {
    pub z2: T,
    pub p2: T,
    pub grid: StripGrid<T>,
    pub lambda_rho: T,
    /// `v^eta - v^eta(0, 0)` at the smallest rate, row-major in `y2`.
    pub corrector: Vec<T>,
    pub lipschitz_observed: T,
    /// `L(p2) = 2 (M_l + M_f |p2|) / delta0~`.
    pub lipschitz_bound: T,
    /// `(eta, -eta v^eta(0, 0))` for every rate of the schedule.
    pub eta_trace: Vec<(T, T)>,
    pub sweeps: usize,
}

impl<T: Real> CellResult<T> {
    #[inline]
    pub fn corrector_at(&self, i: usize, j: usize) -> T {
        self.corrector[self.grid.index(i, j)]
    }
}

/// Limit of the ergodic constants as the strip widens.
#[derive(Clone, Debug, Serialize)]
pub struct EffectiveSample<T> {
    pub z2: T,
    pub p2: T,
    #[serde(rename = "E")]
    pub e: T,
    #[serde(rename = "E0")]
    pub e0: T,
    /// `(rho, lambda_rho)` in the order computed.
    pub rho_trace: Vec<(T, T)>,
    pub slopes_left: SlopePair<T>,
    pub slopes_right: SlopePair<T>,
    pub converged: bool,
}

impl<T: Real> EffectiveSample<T> {
    pub fn slopes(&self, side: Side) -> SlopePair<T> {
        match side {
            Side::Left => self.slopes_left,
            Side::Right => self.slopes_right,
        }
    }
}

/// Lipschitz constant bound for the strip correctors.
pub(crate) fn lipschitz_bound<T: Real>(inst: &ProblemInstance<T>, p2: T) -> T {
    T::lit(2.0) * (inst.m_ell() + inst.m_f() * p2.abs()) / inst.delta0_tilde()
}

fn observed_lipschitz<T: Real>(grid: &StripGrid<T>, chi: &[T]) -> T {
    let mut best = T::zero();
    for j in 0..grid.n2 {
        let jn = (j + 1) % grid.n2;
        for i in 0..grid.n1 {
            let here = chi[grid.index(i, j)];
            if i + 1 < grid.n1 {
                best = best.max((chi[grid.index(i + 1, j)] - here).abs() / grid.h1);
            }
            if grid.n2 > 1 {
                best = best.max((chi[grid.index(i, jn)] - here).abs() / grid.h2);
            }
        }
    }
    best
}

/// Extrapolates `a(eta) = lambda + C eta` to `eta = 0` from two rates.
fn richardson<T: Real>(prev: (T, T), last: (T, T)) -> T {
    let (ep, ap) = prev;
    let (el, al) = last;
    if (ep - el).abs() <= T::epsilon() {
        return al;
    }
    (ep * al - el * ap) / (ep - el)
}

fn check_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() || schedule.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput(
            "discount schedule must be non-empty and positive".into(),
        ));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput("discount schedule must decrease".into()));
    }
    Ok(())
}

/// Vanishing-discount estimate of `lambda_rho(z2, p2)`.
pub fn ergodic_constant<T: Real>(
    inst: &ProblemInstance<T>,
    z2: T,
    p2: T,
    rho: T,
    opts: &CellOptions,
) -> Result<CellResult<T>> {
    check_schedule(&opts.eta_schedule)?;
    let grid = StripGrid::new(rho, T::lit(opts.h))?;
    let first_eta = T::lit(opts.eta_schedule[0]);
    let mut problem = StripProblem::new(inst, z2, p2, grid, first_eta)?;
    let e0 = tangential_min_both(inst, z2, p2).unwrap_or_else(|_| T::zero());
    let origin = grid.origin();

    let mut trace: Vec<(T, T)> = Vec::new();
    let mut values: Vec<T> = vec![-e0 / first_eta; grid.n1 * grid.n2];
    let mut sweeps = 0;
    for (k, &eta) in opts.eta_schedule.iter().enumerate() {
        let eta = T::lit(eta);
        problem.set_eta(eta);
        if k > 0 {
            // v^eta ~ chi - lambda / eta
            let (_, a_prev) = trace[k - 1];
            let base = values[origin];
            for v in values.iter_mut() {
                *v = *v - base - a_prev / eta;
            }
        }
        let fp = problem.solve(values, opts)?;
        sweeps += fp.sweeps;
        values = fp.values;
        let a = -eta * values[origin];
        trace.push((eta, a));
        debug!(
            "cell z2={} p2={} rho={} eta={}: a={} after {} sweeps",
            z2, p2, rho, eta, a, fp.sweeps
        );
    }
    let lambda_rho = if trace.len() >= 2 {
        let prev = trace[trace.len() - 2];
        let last = trace[trace.len() - 1];
        let gap = (last.1 - prev.1).abs();
        // relative above unit scale: the discount bias grows with |lambda|
        if gap > T::lit(opts.ergodic_tol) * T::one().max(last.1.abs()) {
            return Err(Error::SchedulePlateauFailure { gap: gap.as_f64() });
        }
        richardson(prev, last)
    } else {
        trace[0].1
    };
    let base = values[origin];
    let corrector: Vec<T> = values.iter().map(|v| *v - base).collect();
    let lipschitz_observed = observed_lipschitz(&grid, &corrector);
    Ok(CellResult {
        z2,
        p2,
        grid,
        lambda_rho,
        corrector,
        lipschitz_observed,
        lipschitz_bound: lipschitz_bound(inst, p2),
        eta_trace: trace,
        sweeps,
    })
}

/// Default first strip half-width `max(1, 4 ||g||)`.
pub(crate) fn initial_rho<T: Real>(inst: &ProblemInstance<T>, opts: &CellOptions) -> T {
    match opts.rho0 {
        Some(r) => T::lit(r),
        None => T::one().max(T::lit(4.0) * inst.profile.sup_norm()),
    }
}

/// `E(z2, p2)` with the slopes of both sides, see [`effective_e_detailed`].
pub fn effective_e<T: Real>(
    inst: &ProblemInstance<T>,
    z2: T,
    p2: T,
    opts: &CellOptions,
) -> Result<EffectiveSample<T>> {
    Ok(effective_e_detailed(inst, z2, p2, opts)?.0)
}

/// Widens the strip by doubling until the ergodic constants settle; also
/// returns the cell result of the widest strip.
pub fn effective_e_detailed<T: Real>(
    inst: &ProblemInstance<T>,
    z2: T,
    p2: T,
    opts: &CellOptions,
) -> Result<(EffectiveSample<T>, CellResult<T>)> {
    let mut rho = initial_rho(inst, opts);
    if rho <= T::lit(2.0) * inst.profile.sup_norm() {
        return Err(Error::InvalidInput(
            "strip half-width must exceed twice the profile amplitude".into(),
        ));
    }
    let mut trace: Vec<(T, T)> = Vec::new();
    let mut converged = false;
    let mut last: Option<CellResult<T>> = None;
    let monotone_tol = T::lit(2.0 * opts.ergodic_tol);
    for _ in 0..=opts.max_doublings {
        let cell = ergodic_constant(inst, z2, p2, rho, opts)?;
        let lambda = cell.lambda_rho;
        if let Some(&(_, prev)) = trace.last() {
            if lambda < prev - monotone_tol {
                return Err(Error::NonMonotoneTrace {
                    previous: prev.as_f64(),
                    next: lambda.as_f64(),
                });
            }
            if (lambda - prev).abs() < T::lit(opts.rho_tol) {
                converged = true;
            }
        }
        trace.push((rho, lambda));
        last = Some(cell);
        if converged {
            break;
        }
        rho = rho * T::lit(2.0);
    }
    let cell = last.expect("at least one strip solved");
    let e = cell.lambda_rho;
    let e0 = tangential_min_both(inst, z2, p2)?;
    // slopes are taken at max(E, E0): E may undershoot E0 by the solver tolerance
    let level = e.max(e0);
    let slopes_left = slope_pair(inst, Side::Left, z2, p2, level)?;
    let slopes_right = slope_pair(inst, Side::Right, z2, p2, level)?;
    Ok((
        EffectiveSample {
            z2,
            p2,
            e,
            e0,
            rho_trace: trace,
            slopes_left,
            slopes_right,
            converged,
        },
        cell,
    ))
}

/// Outcome of the one-dimensional interior cell problem.
#[derive(Clone, Debug, Serialize)]
pub struct InteriorCheck<T> {
    pub lambda_numeric: T,
    pub hamiltonian: T,
    /// `|lambda_numeric - H^i(z, p)|`.
    pub residual: T,
    /// Largest defect of the corrector `p1 g(y2)` on the grid.
    pub analytic_residual: T,
}

/// Solves the periodic problem `H~^i(z, p + chi'(y2) e2, y2) = lambda` in
/// `y2` alone and compares `lambda` with `H^i(z, p)`.
pub fn interior_cell_check<T: Real>(
    inst: &ProblemInstance<T>,
    side: Side,
    z: Vec2<T>,
    p: Vec2<T>,
    n2: usize,
    opts: &CellOptions,
) -> Result<InteriorCheck<T>> {
    check_schedule(&opts.eta_schedule)?;
    if n2 == 0 {
        return Err(Error::InvalidInput("need at least one node per period".into()));
    }
    let spec = inst.side(side);
    let profile = &inst.profile;
    let layout = Layout {
        n1: 1,
        n2,
        wrap2: true,
    };
    let h2 = T::one() / T::from_usize_lossy(n2);
    let speed = (0..spec.len())
        .map(|k| spec.velocity(k).x2.abs())
        .fold(T::zero(), T::max);
    let dt = if speed > T::zero() { h2 / speed } else { h2 };
    let mut classes = Vec::with_capacity(n2);
    for j in 0..n2 {
        let y2 = T::from_usize_lossy(j) * h2;
        let shear = profile.shear_jacobian(y2);
        let cands: Vec<Candidate<T>> = (0..spec.len())
            .map(|k| {
                let f = spec.velocity(k);
                Candidate {
                    d1: T::zero(),
                    d2: f.x2 * dt / h2,
                    cost: spec.running_cost(z, k) + shear.apply(f).dot(p),
                    slot: 0,
                }
            })
            .collect();
        classes.push(build_class(layout, true, true, j, &cands));
    }
    let first_eta = T::lit(opts.eta_schedule[0]);
    let node_class = (0..n2 as u32).collect();
    let mut op = BellmanOperator::new(layout, dt, first_eta, classes, node_class, None)?;
    let h_exact = hamiltonian(inst, side, z, p);
    let fp_opts = FixedPointOptions {
        tol: opts.eps_fix,
        max_iterations: opts.max_iterations,
    };
    let mut values = vec![-h_exact / first_eta; n2];
    let mut trace: Vec<(T, T)> = Vec::new();
    for (k, &eta) in opts.eta_schedule.iter().enumerate() {
        let eta = T::lit(eta);
        op.set_rate(eta);
        if k > 0 {
            let (_, a_prev) = trace[k - 1];
            let base = values[0];
            for v in values.iter_mut() {
                *v = *v - base - a_prev / eta;
            }
        }
        let fp = op.solve(values, fp_opts)?;
        values = fp.values;
        trace.push((eta, -eta * values[0]));
    }
    let lambda_numeric = if trace.len() >= 2 {
        richardson(trace[trace.len() - 2], trace[trace.len() - 1])
    } else {
        trace[0].1
    };
    let mut analytic = T::zero();
    for j in 0..n2 {
        let y2 = T::from_usize_lossy(j) * h2;
        let q = p + Vec2::e2() * (p.x1 * profile.g_prime(y2));
        let h = oscillatory_hamiltonian(inst, side, z, q, y2);
        analytic = analytic.max((h - h_exact).abs());
    }
    Ok(InteriorCheck {
        lambda_numeric,
        hamiltonian: h_exact,
        residual: (lambda_numeric - h_exact).abs(),
        analytic_residual: analytic,
    })
}

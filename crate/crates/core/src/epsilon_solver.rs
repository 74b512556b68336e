//! The oscillating problem at scale `eps`, solved in straightened
//! coordinates `z = G(x)` where the interface is the line `z1 = 0` and the
//! oscillation survives as a shear of the dynamics. Trajectory simulation
//! gives an independent upper bound on the value function.

use log::info;
use serde::Serialize;

use crate::effective_solver::{box_classes, state_costs, BoxGrid, BoxOptions, ValueField};
use crate::error::{Error, Result};
use crate::geometry::{OscillationProfile, Vec2};
use crate::io::{csv_row, fmt_real};
use crate::model::{ControlId, ProblemInstance, Side};
use crate::real::Real;
use crate::semi_lagrangian::{BellmanOperator, Candidate};

/// Grids coarser than `eps / 8` do not resolve the oscillation period.
pub const CELLS_PER_PERIOD: f64 = 8.0;

fn check_resolution<T: Real>(eps: T, grid: &BoxGrid<T>) -> Result<()> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    let limit = eps / T::lit(CELLS_PER_PERIOD) * (T::one() + T::lit(1e-9));
    if grid.h1 > limit || grid.h2 > limit {
        return Err(Error::InvalidInput(format!(
            "grid spacing {} exceeds eps/8 = {}",
            grid.max_spacing().as_f64(),
            (eps / T::lit(CELLS_PER_PERIOD)).as_f64()
        )));
    }
    Ok(())
}

/// Bellman operator of the straightened problem.
pub fn epsilon_operator<T: Real>(
    inst: &ProblemInstance<T>,
    eps: T,
    grid: &BoxGrid<T>,
) -> Result<BellmanOperator<T>> {
    check_resolution(eps, grid)?;
    let profile = &inst.profile;
    let shears: Vec<_> = (0..grid.n2)
        .map(|j| profile.shear_jacobian(grid.z2(j) / eps))
        .collect();
    let mut speed = T::zero();
    for shear in &shears {
        for side in Side::BOTH {
            let spec = inst.side(side);
            for k in 0..spec.len() {
                speed = speed.max(shear.apply(spec.velocity(k)).norm());
            }
        }
    }
    let hmin = grid.h1.min(grid.h2);
    let dt = if speed > T::zero() { hmin / speed } else { hmin };
    let velocity = |j: usize, side: Side, k: usize| shears[j].apply(inst.side(side).velocity(k));
    let no_extra = |_j: usize| -> Result<Vec<Candidate<T>>> { Ok(Vec::new()) };
    let (classes, node_class) =
        box_classes(inst, grid.layout(), dt, grid.h1, grid.h2, velocity, no_extra)?;
    let state = state_costs(inst, grid, |i, j| profile.unstraighten(grid.point(i, j), eps));
    BellmanOperator::new(grid.layout(), dt, inst.discount, classes, node_class, Some(state))
}

/// `v~_eps` on `grid`, the value function in straightened coordinates.
pub fn solve_epsilon<T: Real>(
    inst: &ProblemInstance<T>,
    eps: T,
    grid: BoxGrid<T>,
    opts: &BoxOptions,
) -> Result<ValueField<T>> {
    let op = epsilon_operator(inst, eps, &grid)?;
    info!(
        "eps = {} problem on {}x{} nodes, dt = {}",
        eps,
        grid.n1,
        grid.n2,
        op.dt()
    );
    let init = vec![inst.m_ell() / inst.discount; grid.len()];
    let fp = op.solve(init, opts.fixed_point())?;
    Ok(ValueField {
        grid,
        values: fp.values,
        residual: fp.residual,
        sweeps: fp.sweeps,
    })
}

/// `v_eps(x) = v~_eps(G(x))` by interpolation.
pub fn map_to_original<T: Real>(
    field: &ValueField<T>,
    profile: &OscillationProfile<T>,
    eps: T,
    x: Vec2<T>,
) -> Result<T> {
    field.interpolate(profile.straighten(x, eps))
}

/// Interpolation error scale of a solved field: its Lipschitz bound
/// `(lambda |v| + M_l) / delta0~` times the largest spacing.
pub fn grid_tolerance<T: Real>(field: &ValueField<T>, inst: &ProblemInstance<T>) -> T {
    (inst.discount * field.sup_norm() + inst.m_ell()) / inst.delta0_tilde()
        * field.grid.max_spacing()
}

/// Default horizon `10 / lambda`.
pub fn default_horizon<T: Real>(inst: &ProblemInstance<T>) -> T {
    T::lit(10.0) / inst.discount
}

/// Piecewise-constant control signal: `segments[k].1` acts from time
/// `segments[k].0` until the next start.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Policy<T> {
    segments: Vec<(T, ControlId)>,
}

impl<T: Real> Policy<T> {
    pub fn new(segments: Vec<(T, ControlId)>) -> Result<Self> {
        match segments.first() {
            Some((t, _)) if t.is_zero() => {}
            _ => {
                return Err(Error::InvalidInput(
                    "a policy must start with a segment at t = 0".into(),
                ))
            }
        }
        if segments.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidInput("segment start times must increase".into()));
        }
        Ok(Self { segments })
    }

    pub fn constant(a: ControlId) -> Self {
        Self {
            segments: vec![(T::zero(), a)],
        }
    }

    pub fn segments(&self) -> &[(T, ControlId)] {
        &self.segments
    }

    pub fn at(&self, t: T) -> ControlId {
        let k = self.segments.partition_point(|(s, _)| *s <= t);
        self.segments[k.max(1) - 1].1
    }
}

/// A simulated path with its discounted cost.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryResult<T> {
    pub times: Vec<T>,
    pub path: Vec<Vec2<T>>,
    /// Control acting on `[times[k], times[k + 1])`.
    pub controls: Vec<ControlId>,
    pub control_values: Vec<Vec2<T>>,
    pub discounted_cost: T,
    /// `M_l exp(-lambda T) / lambda`, the most the ignored tail can contribute.
    pub truncation_bound: T,
}

impl<T: Real> TrajectoryResult<T> {
    /// CSV with header `t,y1,y2,a1,a2,side`; the last state repeats the final control.
    pub fn to_csv(&self) -> String {
        let mut out = csv_row(["t", "y1", "y2", "a1", "a2", "side"]);
        for (k, (t, y)) in self.times.iter().zip(&self.path).enumerate() {
            let c = k.min(self.controls.len().saturating_sub(1));
            let (a, side) = match self.controls.get(c) {
                Some(id) => (self.control_values[c], id.side.tag()),
                None => (Vec2::zero(), ""),
            };
            out.push_str(&csv_row([
                fmt_real(*t),
                fmt_real(y.x1),
                fmt_real(y.x2),
                fmt_real(a.x1),
                fmt_real(a.x2),
                side.to_string(),
            ]));
        }
        out
    }
}

fn check_step<T: Real>(horizon: T, dt: T) -> Result<usize> {
    if !(horizon > T::zero()) || !(dt > T::zero()) {
        return Err(Error::InvalidInput("horizon and step must be positive".into()));
    }
    Ok((horizon / dt).ceil().to_usize().unwrap_or(1).max(1))
}

/// Shared integrator. `rhs(y, a)` is the velocity, `cost(y, a)` the running
/// cost and `region(y)` the side whose interior contains `y`.
#[allow(clippy::too_many_arguments)]
fn integrate<T: Real>(
    inst: &ProblemInstance<T>,
    y0: Vec2<T>,
    policy: &Policy<T>,
    horizon: T,
    dt: T,
    rhs: impl Fn(Vec2<T>, ControlId) -> Result<Vec2<T>>,
    cost: impl Fn(Vec2<T>, ControlId) -> Result<T>,
    region: impl Fn(Vec2<T>) -> Option<Side>,
) -> Result<TrajectoryResult<T>> {
    let steps = check_step(horizon, dt)?;
    let h = horizon / T::from_usize_lossy(steps);
    let lambda = inst.discount;
    // exact weight of a constant cost over one step, before discounting to its start
    let weight = -(-lambda * h).exp_m1() / lambda;
    let mut y = y0;
    let mut times = vec![T::zero()];
    let mut path = vec![y];
    let mut controls = Vec::with_capacity(steps);
    let mut control_values = Vec::with_capacity(steps);
    let mut total = T::zero();
    for k in 0..steps {
        let t = T::from_usize_lossy(k) * h;
        let a = policy.at(t);
        if let Some(side) = region(y) {
            if side != a.side {
                return Err(Error::MixingViolation {
                    side: a.side,
                    t: t.as_f64(),
                });
            }
        }
        let f0 = rhs(y, a)?;
        let mid = y + f0 * (h / T::lit(2.0));
        let f_mid = rhs(mid, a)?;
        total = total + (-lambda * t).exp() * weight * cost(mid, a)?;
        y += f_mid * h;
        controls.push(a);
        control_values.push(inst.side(a.side).controls[a.index]);
        times.push(t + h);
        path.push(y);
    }
    Ok(TrajectoryResult {
        times,
        path,
        controls,
        control_values,
        discounted_cost: total,
        truncation_bound: inst.m_ell() * (-lambda * horizon).exp() / lambda,
    })
}

/// Integrates `y' = f_eps(y, a(t))` in the original coordinates with the
/// explicit midpoint rule and accumulates `int l e^{-lambda t} dt`.
pub fn simulate_trajectory<T: Real>(
    inst: &ProblemInstance<T>,
    eps: T,
    x0: Vec2<T>,
    policy: &Policy<T>,
    horizon: T,
    dt: T,
) -> Result<TrajectoryResult<T>> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    integrate(
        inst,
        x0,
        policy,
        horizon,
        dt,
        |x, a| inst.dynamics(a.side, x, a),
        |x, a| inst.cost(a.side, x, a),
        |x| inst.profile.region(x, eps),
    )
}

/// The same trajectory integrated in straightened coordinates,
/// `z' = J~(z2/eps) f(G^{-1} z, a)` with cost `l(G^{-1} z, a)`.
pub fn simulate_straightened<T: Real>(
    inst: &ProblemInstance<T>,
    eps: T,
    z0: Vec2<T>,
    policy: &Policy<T>,
    horizon: T,
    dt: T,
) -> Result<TrajectoryResult<T>> {
    if !(eps > T::zero()) {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    let tol = T::lit(crate::geometry::INTERFACE_TOL);
    integrate(
        inst,
        z0,
        policy,
        horizon,
        dt,
        |z, a| inst.straightened_dynamics(a.side, z, a, eps),
        |z, a| inst.straightened_cost(a.side, z, a, eps),
        |z| {
            if z.x1 > tol {
                Some(Side::Right)
            } else if z.x1 < -tol {
                Some(Side::Left)
            } else {
                None
            }
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OscillationProfile;

    fn baseline() -> ProblemInstance<f64> {
        ProblemInstance::eikonal(1.0, 2.0, 64, OscillationProfile::sine(0.1), 1.0).unwrap()
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let inst = baseline();
        let grid = BoxGrid::new(1.0, 0.5, 0.1).unwrap();
        assert!(matches!(
            solve_epsilon(&inst, 0.4, grid, &BoxOptions::default()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn frozen_state_accumulates_geometric_cost() {
        let inst = baseline();
        let stay = ControlId::new(Side::Left, 64);
        let r = simulate_trajectory(
            &inst,
            0.2,
            Vec2::new(-0.5, 0.1),
            &Policy::constant(stay),
            10.0,
            0.01,
        )
        .unwrap();
        let exact = 1.0 - (-10.0f64).exp();
        assert!((r.discounted_cost - exact).abs() < 1e-12);
        assert_eq!(*r.path.last().unwrap(), Vec2::new(-0.5, 0.1));
        assert!((r.truncation_bound - 2.0 * (-10.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn wrong_side_is_a_mixing_violation() {
        let inst = baseline();
        let a = ControlId::new(Side::Right, 64);
        let err = simulate_trajectory(&inst, 0.2, Vec2::new(-0.5, 0.0), &Policy::constant(a), 1.0, 0.1)
            .unwrap_err();
        assert!(matches!(err, Error::MixingViolation { side: Side::Right, .. }));
    }

    #[test]
    fn policy_lookup() {
        let a = ControlId::new(Side::Left, 0);
        let b = ControlId::new(Side::Left, 1);
        let p = Policy::new(vec![(0.0, a), (0.5, b)]).unwrap();
        assert_eq!(p.at(0.0), a);
        assert_eq!(p.at(0.49), a);
        assert_eq!(p.at(0.5), b);
        assert_eq!(p.at(7.0), b);
        assert!(Policy::new(vec![(0.1, a)]).is_err());
        assert!(Policy::new(vec![(0.0, a), (0.0, b)]).is_err());
    }
}

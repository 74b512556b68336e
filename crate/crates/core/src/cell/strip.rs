use serde::Serialize;

use super::CellOptions;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::hamiltonians::{tangential_min_both, SIGN_SLACK};
use crate::model::{ProblemInstance, Side};
use crate::real::Real;
use crate::semi_lagrangian::{
    build_class, BellmanOperator, Candidate, FixedPoint, FixedPointOptions, Layout,
};

/// Node grid on `[-rho, rho] x [0, 1)`, periodic in `y2`, with a node
/// column on `y1 = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StripGrid<T> {
    pub rho: T,
    pub n1: usize,
    pub n2: usize,
    pub h1: T,
    pub h2: T,
}

impl<T: Real> StripGrid<T> {
    /// Grid with spacing close to `h` in both directions.
    pub fn new(rho: T, h: T) -> Result<Self> {
        if !(rho > T::zero()) || !(h > T::zero()) || h > T::one() {
            return Err(Error::InvalidInput(
                "strip half-width and spacing must be positive, spacing at most 1".into(),
            ));
        }
        let half = (rho / h).round().to_usize().unwrap_or(1).max(1);
        let n2 = (T::one() / h).round().to_usize().unwrap_or(1).max(1);
        Ok(Self {
            rho,
            n1: 2 * half + 1,
            n2,
            h1: rho / T::from_usize_lossy(half),
            h2: T::one() / T::from_usize_lossy(n2),
        })
    }

    /// Column index of `y1 = 0`.
    pub fn center(&self) -> usize {
        (self.n1 - 1) / 2
    }

    #[inline]
    pub fn y1(&self, i: usize) -> T {
        -self.rho + T::from_usize_lossy(i) * self.h1
    }

    #[inline]
    pub fn y2(&self, j: usize) -> T {
        T::from_usize_lossy(j) * self.h2
    }

    pub fn layout(&self) -> Layout {
        Layout {
            n1: self.n1,
            n2: self.n2,
            wrap2: true,
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n1 + i
    }

    pub fn origin(&self) -> usize {
        self.index(self.center(), 0)
    }
}

/// Region category of a strip column.
fn column_kind(i: usize, center: usize) -> Option<Side> {
    use std::cmp::Ordering::*;
    match i.cmp(&center) {
        Less => Some(Side::Left),
        Greater => Some(Side::Right),
        Equal => None,
    }
}

/// The discretized truncated cell problem for one `(z2, p2, rho)`.
#[derive(Clone, Debug)]
pub struct StripProblem<T> {
    pub grid: StripGrid<T>,
    pub z2: T,
    pub p2: T,
    op: BellmanOperator<T>,
}

impl<T: Real> StripProblem<T> {
    pub fn new(inst: &ProblemInstance<T>, z2: T, p2: T, grid: StripGrid<T>, eta: T) -> Result<Self> {
        if !(eta > T::zero()) {
            return Err(Error::InvalidInput("discount rate must be positive".into()));
        }
        let base = Vec2::new(T::zero(), z2);
        let layout = grid.layout();
        let profile = &inst.profile;

        let mut speed = T::zero();
        for j in 0..grid.n2 {
            let shear = profile.shear_jacobian(grid.y2(j));
            for side in Side::BOTH {
                let spec = inst.side(side);
                for k in 0..spec.len() {
                    speed = speed.max(shear.apply(spec.velocity(k)).norm());
                }
            }
        }
        let hmin = grid.h1.min(grid.h2);
        let dt = if speed > T::zero() { hmin / speed } else { hmin };

        let slack = -T::lit(SIGN_SLACK);
        let center = grid.center();
        let mut classes = Vec::with_capacity(grid.n2 * 5);
        let mut node_class = vec![0u32; layout.len()];
        for j in 0..grid.n2 {
            let shear = profile.shear_jacobian(grid.y2(j));
            let mut per_side: [Vec<(T, Candidate<T>)>; 2] = [Vec::new(), Vec::new()];
            for side in Side::BOTH {
                let spec = inst.side(side);
                for k in 0..spec.len() {
                    let f = spec.velocity(k);
                    let v = shear.apply(f);
                    let cost = f.x2 * p2 + spec.running_cost(base, k);
                    per_side[side.index()].push((
                        v.x1,
                        Candidate {
                            d1: v.x1 * dt / grid.h1,
                            d2: v.x2 * dt / grid.h2,
                            cost,
                            slot: 0,
                        },
                    ));
                }
            }
            let plain = |side: Side| -> Vec<Candidate<T>> {
                per_side[side.index()].iter().map(|c| c.1).collect()
            };
            let junction: Vec<Candidate<T>> = Side::BOTH
                .iter()
                .flat_map(|&side| {
                    let s = side.sigma_real::<T>();
                    per_side[side.index()]
                        .iter()
                        .filter(move |c| s * c.0 >= slack)
                        .map(|c| c.1)
                })
                .collect();
            let left = plain(Side::Left);
            let right = plain(Side::Right);
            // five column kinds: left edge, left interior, junction, right interior, right edge
            let first = classes.len() as u32;
            classes.push(build_class(layout, true, grid.n1 == 1, j, &left));
            classes.push(build_class(layout, false, false, j, &left));
            classes.push(build_class(layout, center == 0, center + 1 == grid.n1, j, &junction));
            classes.push(build_class(layout, false, false, j, &right));
            classes.push(build_class(layout, grid.n1 == 1, true, j, &right));
            for i in 0..grid.n1 {
                let kind = match column_kind(i, center) {
                    None => 2,
                    Some(Side::Left) if i == 0 => 0,
                    Some(Side::Left) => 1,
                    Some(Side::Right) if i + 1 == grid.n1 => 4,
                    Some(Side::Right) => 3,
                };
                node_class[layout.index(i, j)] = first + kind;
            }
        }
        let op = BellmanOperator::new(layout, dt, eta, classes, node_class, None)?;
        Ok(Self { grid, z2, p2, op })
    }

    pub fn operator(&self) -> &BellmanOperator<T> {
        &self.op
    }

    pub fn set_eta(&mut self, eta: T) {
        self.op.set_rate(eta);
    }

    pub fn eta(&self) -> T {
        self.op.rate()
    }

    pub fn solve(&self, init: Vec<T>, opts: &CellOptions) -> Result<FixedPoint<T>> {
        self.op.solve(
            init,
            FixedPointOptions {
                tol: opts.eps_fix,
                max_iterations: opts.max_iterations,
            },
        )
    }
}

/// Discounted approximation `v^eta` of the cell problem on a strip.
#[derive(Clone, Debug, Serialize)]
pub struct DiscountedSolve<T> {
    pub eta: T,
    pub grid: StripGrid<T>,
    pub values: Vec<T>,
    pub sweeps: usize,
    pub residual: T,
}

impl<T: Real> DiscountedSolve<T> {
    pub fn at_origin(&self) -> T {
        self.values[self.grid.origin()]
    }

    /// `-eta v^eta(0, 0)`.
    pub fn scaled_origin(&self) -> T {
        -self.eta * self.at_origin()
    }
}

/// Solves the discounted strip problem at rate `eta`, starting from
/// `-E0 / eta`.
pub fn solve_discounted<T: Real>(
    inst: &ProblemInstance<T>,
    z2: T,
    p2: T,
    grid: StripGrid<T>,
    eta: T,
    opts: &CellOptions,
) -> Result<DiscountedSolve<T>> {
    let problem = StripProblem::new(inst, z2, p2, grid, eta)?;
    let e0 = tangential_min_both(inst, z2, p2).unwrap_or_else(|_| T::zero());
    let init = vec![-e0 / eta; grid.n1 * grid.n2];
    let fp = problem.solve(init, opts)?;
    Ok(DiscountedSolve {
        eta,
        grid,
        values: fp.values,
        sweeps: fp.sweeps,
        residual: fp.residual,
    })
}

//! The homogenized problem: the two half-plane equations joined on
//! `z1 = 0` by the effective transmission condition
//! `lambda v + max(E, H_Gamma) = 0`.
//!
//! `E` enters through the truncation `E_K` and its Fenchel transform: a
//! tangential pseudo-control of speed `b` slides along the interface at
//! running cost `E_K*(z2, -b)`.

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::cell::{fenchel_star, EffectiveTable};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::hamiltonians::SIGN_SLACK;
use crate::io::{csv_row, fmt_real};
use crate::model::{ProblemInstance, Side};
use crate::real::Real;
use crate::semi_lagrangian::{
    build_class, BellmanOperator, Candidate, FixedPointOptions, Layout,
};

/// Node grid on `[-z1_extent, z1_extent] x [-z2_extent, z2_extent]` with a
/// column on `z1 = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoxGrid<T> {
    pub z1_extent: T,
    pub z2_extent: T,
    pub n1: usize,
    pub n2: usize,
    pub h1: T,
    pub h2: T,
}

impl<T: Real> BoxGrid<T> {
    /// Grid with spacing close to `h` in both directions.
    pub fn new(z1_extent: T, z2_extent: T, h: T) -> Result<Self> {
        if !(z1_extent > T::zero()) || !(z2_extent > T::zero()) || !(h > T::zero()) {
            return Err(Error::InvalidInput(
                "box extents and spacing must be positive".into(),
            ));
        }
        let half = (z1_extent / h).round().to_usize().unwrap_or(1).max(1);
        let cells2 = (T::lit(2.0) * z2_extent / h).round().to_usize().unwrap_or(1).max(1);
        Ok(Self {
            z1_extent,
            z2_extent,
            n1: 2 * half + 1,
            n2: cells2 + 1,
            h1: z1_extent / T::from_usize_lossy(half),
            h2: T::lit(2.0) * z2_extent / T::from_usize_lossy(cells2),
        })
    }

    /// Column index of `z1 = 0`.
    pub fn center(&self) -> usize {
        (self.n1 - 1) / 2
    }

    #[inline]
    pub fn z1(&self, i: usize) -> T {
        if i == self.center() {
            return T::zero();
        }
        -self.z1_extent + T::from_usize_lossy(i) * self.h1
    }

    #[inline]
    pub fn z2(&self, j: usize) -> T {
        -self.z2_extent + T::from_usize_lossy(j) * self.h2
    }

    pub fn point(&self, i: usize, j: usize) -> Vec2<T> {
        Vec2::new(self.z1(i), self.z2(j))
    }

    pub fn layout(&self) -> Layout {
        Layout {
            n1: self.n1,
            n2: self.n2,
            wrap2: false,
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n1 + i
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_spacing(&self) -> T {
        self.h1.max(self.h2)
    }

    pub fn contains(&self, z: Vec2<T>) -> bool {
        let tol = T::lit(1e-12);
        z.x1.abs() <= self.z1_extent + tol && z.x2.abs() <= self.z2_extent + tol
    }

    /// Column of the region a node belongs to: `None` on the interface.
    pub fn side_of(&self, i: usize) -> Option<Side> {
        use std::cmp::Ordering::*;
        match i.cmp(&self.center()) {
            Less => Some(Side::Left),
            Greater => Some(Side::Right),
            Equal => None,
        }
    }

    /// Bilinear interpolation of a nodal field.
    pub fn interpolate(&self, values: &[T], z: Vec2<T>) -> Result<T> {
        if !self.contains(z) {
            return Err(Error::OutOfBox {
                x1: z.x1.as_f64(),
                x2: z.x2.as_f64(),
            });
        }
        let locate = |u: T, n: usize, h: T| -> (usize, T) {
            let s = (u / h).max(T::zero());
            let k = s.floor().to_usize().unwrap_or(0).min(n - 2);
            (k, (s - T::from_usize_lossy(k)).max(T::zero()).min(T::one()))
        };
        let (i, a) = locate(z.x1 + self.z1_extent, self.n1, self.h1);
        let (j, b) = locate(z.x2 + self.z2_extent, self.n2, self.h2);
        let v = |i: usize, j: usize| values[self.index(i, j)];
        let one = T::one();
        Ok((one - a) * (one - b) * v(i, j)
            + a * (one - b) * v(i + 1, j)
            + (one - a) * b * v(i, j + 1)
            + a * b * v(i + 1, j + 1))
    }
}

/// A solved value function on a box.
#[derive(Clone, Debug, Serialize)]
pub struct ValueField<T> {
    pub grid: BoxGrid<T>,
    pub values: Vec<T>,
    pub residual: T,
    pub sweeps: usize,
}

impl<T: Real> ValueField<T> {
    pub fn at(&self, i: usize, j: usize) -> T {
        self.values[self.grid.index(i, j)]
    }

    pub fn interpolate(&self, z: Vec2<T>) -> Result<T> {
        self.grid.interpolate(&self.values, z)
    }

    pub fn sup_norm(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// CSV with header `z1,z2,v`, rows ordered by `z2` then `z1`.
    pub fn to_csv(&self) -> String {
        let mut out = csv_row(["z1", "z2", "v"]);
        for j in 0..self.grid.n2 {
            for i in 0..self.grid.n1 {
                out.push_str(&csv_row([
                    fmt_real(self.grid.z1(i)),
                    fmt_real(self.grid.z2(j)),
                    fmt_real(self.at(i, j)),
                ]));
            }
        }
        out
    }
}

/// Knobs of the box solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoxOptions {
    /// Fixed-point tolerance on `sup |T v - v|`.
    pub eps_fix: f64,
    pub max_iterations: usize,
    /// Number of equispaced tangential speeds in `[-M_f, M_f]`.
    pub pseudo_controls: usize,
    /// Offer the tangential pseudo-controls on the interface at all.
    pub tangential: bool,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self {
            eps_fix: 1e-7,
            max_iterations: 200,
            pseudo_controls: 33,
            tangential: true,
        }
    }
}

impl BoxOptions {
    pub(crate) fn fixed_point(&self) -> FixedPointOptions {
        FixedPointOptions {
            tol: self.eps_fix,
            max_iterations: self.max_iterations,
        }
    }
}

/// Smallest truncation level the effective solver accepts, `2 M_l / delta0`.
pub fn required_truncation<T: Real>(inst: &ProblemInstance<T>) -> T {
    T::lit(2.0) * inst.m_ell() / inst.delta0()
}

/// Move lists of the node classes and the class of every node.
pub(crate) type NodeClasses<T> = (Vec<Vec<crate::semi_lagrangian::Move<T>>>, Vec<u32>);

/// Node classes of a box with five column kinds per row: left edge, left
/// interior, interface, right interior, right edge. `velocity(j, side, k)`
/// gives the velocity of control `k` at row `j`; `extra(j)` adds interface
/// candidates.
pub(crate) fn box_classes<T: Real>(
    inst: &ProblemInstance<T>,
    layout: Layout,
    dt: T,
    h1: T,
    h2: T,
    velocity: impl Fn(usize, Side, usize) -> Vec2<T>,
    extra: impl Fn(usize) -> Result<Vec<Candidate<T>>>,
) -> Result<NodeClasses<T>> {
    let center = (layout.n1 - 1) / 2;
    let slack = -T::lit(SIGN_SLACK);
    let mut classes = Vec::with_capacity(5 * layout.n2);
    let mut node_class = vec![0u32; layout.len()];
    for j in 0..layout.n2 {
        let mut per_side: [Vec<(T, Candidate<T>)>; 2] = [Vec::new(), Vec::new()];
        for side in Side::BOTH {
            let spec = inst.side(side);
            for k in 0..spec.len() {
                let v = velocity(j, side, k);
                per_side[side.index()].push((
                    v.x1,
                    Candidate {
                        d1: v.x1 * dt / h1,
                        d2: v.x2 * dt / h2,
                        cost: spec.cost.control_part(spec.controls[k]),
                        slot: 1 + side.index() as u8,
                    },
                ));
            }
        }
        let plain =
            |side: Side| -> Vec<Candidate<T>> { per_side[side.index()].iter().map(|c| c.1).collect() };
        let mut junction: Vec<Candidate<T>> = Side::BOTH
            .iter()
            .flat_map(|&side| {
                let s = side.sigma_real::<T>();
                per_side[side.index()]
                    .iter()
                    .filter(move |c| s * c.0 >= slack)
                    .map(|c| c.1)
            })
            .collect();
        junction.extend(extra(j)?);
        let left = plain(Side::Left);
        let right = plain(Side::Right);
        let first = classes.len() as u32;
        let last = layout.n1 - 1;
        classes.push(build_class(layout, true, last == 0, j, &left));
        classes.push(build_class(layout, false, false, j, &left));
        classes.push(build_class(layout, center == 0, center == last, j, &junction));
        classes.push(build_class(layout, false, false, j, &right));
        classes.push(build_class(layout, last == 0, true, j, &right));
        for i in 0..layout.n1 {
            let kind = if i == center {
                2
            } else if i < center {
                if i == 0 {
                    0
                } else {
                    1
                }
            } else if i == last {
                4
            } else {
                3
            };
            node_class[layout.index(i, j)] = first + kind;
        }
    }
    Ok((classes, node_class))
}

/// Per-node state costs of the left and right running costs at `x(i, j)`.
pub(crate) fn state_costs<T: Real>(
    inst: &ProblemInstance<T>,
    grid: &BoxGrid<T>,
    x: impl Fn(usize, usize) -> Vec2<T>,
) -> Vec<[T; 2]> {
    let mut out = vec![[T::zero(); 2]; grid.len()];
    for j in 0..grid.n2 {
        for i in 0..grid.n1 {
            let p = x(i, j);
            out[grid.index(i, j)] = [
                inst.left.cost.state_part(p),
                inst.right.cost.state_part(p),
            ];
        }
    }
    out
}

fn check_table<T: Real>(inst: &ProblemInstance<T>, table: &EffectiveTable<T>) -> Result<T> {
    let k = table
        .truncation
        .ok_or_else(|| Error::InvalidInput("effective table must be truncated first".into()))?;
    let need = required_truncation(inst);
    if k < need * (T::one() - T::lit(1e-9)) {
        return Err(Error::InvalidInput(format!(
            "truncation level {} is below the interface Lipschitz bound {}",
            k.as_f64(),
            need.as_f64()
        )));
    }
    Ok(k)
}

/// The assembled Bellman operator of the homogenized problem.
pub fn effective_operator<T: Real>(
    inst: &ProblemInstance<T>,
    table: &EffectiveTable<T>,
    grid: &BoxGrid<T>,
    opts: &BoxOptions,
) -> Result<BellmanOperator<T>> {
    check_table(inst, table)?;
    let m_f = inst.m_f();
    let mut speed = m_f;
    for side in Side::BOTH {
        let spec = inst.side(side);
        for k in 0..spec.len() {
            speed = speed.max(spec.velocity(k).norm());
        }
    }
    let hmin = grid.h1.min(grid.h2);
    let dt = if speed > T::zero() { hmin / speed } else { hmin };
    let speeds: Vec<T> = if opts.tangential && opts.pseudo_controls > 0 {
        let n = opts.pseudo_controls;
        if n == 1 {
            vec![T::zero()]
        } else {
            (0..n)
                .map(|k| -m_f + T::lit(2.0) * m_f * T::from_usize_lossy(k) / T::from_usize_lossy(n - 1))
                .collect()
        }
    } else {
        Vec::new()
    };
    let extra = |j: usize| -> Result<Vec<Candidate<T>>> {
        let z2 = grid.z2(j);
        speeds
            .iter()
            .map(|&b| {
                Ok(Candidate {
                    d1: T::zero(),
                    d2: b * dt / grid.h2,
                    cost: fenchel_star(table, z2, -b)?,
                    slot: 0,
                })
            })
            .collect()
    };
    let velocity = |_j: usize, side: Side, k: usize| inst.side(side).velocity(k);
    let (classes, node_class) =
        box_classes(inst, grid.layout(), dt, grid.h1, grid.h2, velocity, extra)?;
    let state = state_costs(inst, grid, |i, j| grid.point(i, j));
    BellmanOperator::new(grid.layout(), dt, inst.discount, classes, node_class, Some(state))
}

/// Solves the homogenized problem on `grid`; the discount is the
/// instance's `lambda`.
pub fn solve_effective<T: Real>(
    inst: &ProblemInstance<T>,
    table: &EffectiveTable<T>,
    grid: BoxGrid<T>,
    opts: &BoxOptions,
) -> Result<ValueField<T>> {
    let op = effective_operator(inst, table, &grid, opts)?;
    info!(
        "effective problem on {}x{} nodes, dt = {}",
        grid.n1,
        grid.n2,
        op.dt()
    );
    let init = vec![inst.m_ell() / inst.discount; grid.len()];
    let fp = op.solve(init, opts.fixed_point())?;
    debug!("effective solve: {} steps, residual {}", fp.sweeps, fp.residual);
    Ok(ValueField {
        grid,
        values: fp.values,
        residual: fp.residual,
        sweeps: fp.sweeps,
    })
}

/// One more Bellman application on `field`: `sup |T v - v|`.
pub fn effective_residual<T: Real>(
    field: &ValueField<T>,
    inst: &ProblemInstance<T>,
    table: &EffectiveTable<T>,
    opts: &BoxOptions,
) -> Result<T> {
    let op = effective_operator(inst, table, &field.grid, opts)?;
    Ok(op.residual(&field.values))
}

//! Monotone semi-Lagrangian Bellman operator on a rectangular node grid.
//!
//! Every node owns a class of moves. A move has a running cost and a foot
//! point at most one cell away, interpolated bilinearly from at most four
//! nodes. One step of length `dt` under discount `rate` gives
//!
//! ```text
//! (T v)(n) = min over moves of [ w_c (cost + state(n)) + beta * sum_k w_k v(corner_k) ]
//! ```
//!
//! with `beta = exp(-rate dt)` and `w_c = (1 - beta) / rate`, the exact
//! discounted weight of a cost held constant over the step. The fixed point
//! is found by policy iteration: the greedy policy of the current field is
//! evaluated exactly with a banded LU factorization, which stays fast when
//! the discount is small and optimal paths circle the periodic direction.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;

/// Displacements closer than this to a node (in cells) are snapped onto it.
const SNAP: f64 = 1e-12;

/// A discrete move from a node; corners are stored relative to the column
/// index and absolute in the row index.
#[derive(Clone, Copy, Debug)]
pub struct Move<T> {
    bases: [isize; 4],
    weights: [T; 4],
    count: u8,
    self_weight: T,
    cost: T,
    slot: u8,
}

impl<T: Real> Move<T> {
    pub fn cost(&self) -> T {
        self.cost
    }

    pub fn self_weight(&self) -> T {
        self.self_weight
    }
}

/// A candidate move, displacement measured in cells.
#[derive(Clone, Copy, Debug)]
pub struct Candidate<T> {
    pub d1: T,
    pub d2: T,
    pub cost: T,
    /// 0: no state cost, 1 or 2: first or second state-cost column of the node.
    pub slot: u8,
}

/// Node layout and boundary behaviour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n1: usize,
    pub n2: usize,
    /// Periodic in the second index; otherwise exits are discarded.
    pub wrap2: bool,
}

impl Layout {
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
}

fn split<T: Real>(d: T) -> [(i32, T); 2] {
    let snap = T::lit(SNAP);
    let mut d = d;
    if d.abs() < snap {
        d = T::zero();
    }
    if d > T::one() {
        d = T::one();
    }
    if d < -T::one() {
        d = -T::one();
    }
    if d >= T::zero() {
        [(0, T::one() - d), (1, d)]
    } else {
        [(-1, -d), (0, T::one() + d)]
    }
}

/// Builds the move class of row `j` for nodes with the given column
/// position. Moves whose stencil leaves the grid are dropped, which
/// realizes state constraints on every non-periodic edge.
pub fn build_class<T: Real>(
    layout: Layout,
    at_lo: bool,
    at_hi: bool,
    j: usize,
    candidates: &[Candidate<T>],
) -> Vec<Move<T>> {
    let n2 = layout.n2 as i64;
    let n1 = layout.n1 as isize;
    let mut out = Vec::with_capacity(candidates.len());
    'cand: for c in candidates {
        debug_assert!(c.d1.abs() <= T::one() + T::lit(1e-9));
        debug_assert!(c.d2.abs() <= T::one() + T::lit(1e-9));
        let s1 = split(c.d1);
        let s2 = split(c.d2);
        let mut mv = Move {
            bases: [0; 4],
            weights: [T::zero(); 4],
            count: 0,
            self_weight: T::zero(),
            cost: c.cost,
            slot: c.slot,
        };
        for &(di, w1) in &s1 {
            for &(dj, w2) in &s2 {
                let w = w1 * w2;
                if w.is_zero() {
                    continue;
                }
                if (di < 0 && at_lo) || (di > 0 && at_hi) {
                    continue 'cand;
                }
                let mut jj = j as i64 + dj as i64;
                if layout.wrap2 {
                    jj = jj.rem_euclid(n2);
                } else if jj < 0 || jj >= n2 {
                    continue 'cand;
                }
                if di == 0 && dj == 0 {
                    mv.self_weight = mv.self_weight + w;
                } else {
                    let k = mv.count as usize;
                    mv.bases[k] = jj as isize * n1 + di as isize;
                    mv.weights[k] = w;
                    mv.count += 1;
                }
            }
        }
        out.push(mv);
    }
    out
}

/// Solver knobs for the fixed-point iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FixedPointOptions {
    /// Stop when `sup |T v - v|` falls below this.
    pub tol: f64,
    /// Maximum number of policy improvement steps.
    pub max_iterations: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iterations: 200,
        }
    }
}

/// Result of [`BellmanOperator::solve`].
#[derive(Clone, Debug)]
pub struct FixedPoint<T> {
    pub values: Vec<T>,
    pub residual: T,
    /// Policy improvement steps performed; each follows four ordered sweeps.
    pub sweeps: usize,
}

/// The assembled operator.
#[derive(Clone, Debug)]
pub struct BellmanOperator<T> {
    layout: Layout,
    classes: Vec<Vec<Move<T>>>,
    node_class: Vec<u32>,
    /// Three entries per node: zero, first and second state cost.
    state: Vec<T>,
    beta: T,
    step_weight: T,
    dt: T,
    rate: T,
}

impl<T: Real> BellmanOperator<T> {
    /// `state_cost`, when given, holds two columns per node addressed by the
    /// move slots 1 and 2.
    pub fn new(
        layout: Layout,
        dt: T,
        rate: T,
        classes: Vec<Vec<Move<T>>>,
        node_class: Vec<u32>,
        state_cost: Option<Vec<[T; 2]>>,
    ) -> Result<Self> {
        if node_class.len() != layout.len() {
            return Err(Error::InvalidInput("node class table has the wrong size".into()));
        }
        if !(dt > T::zero()) || !(rate > T::zero()) {
            return Err(Error::InvalidInput("step and rate must be positive".into()));
        }
        for j in 0..layout.n2 {
            for i in 0..layout.n1 {
                let c = node_class[layout.index(i, j)] as usize;
                if classes.get(c).is_none_or(|m| m.is_empty()) {
                    return Err(Error::NoAdmissibleControl { i, j });
                }
            }
        }
        let mut state = vec![T::zero(); 3 * layout.len()];
        if let Some(sc) = state_cost {
            if sc.len() != layout.len() {
                return Err(Error::InvalidInput("state cost table has the wrong size".into()));
            }
            for (n, c) in sc.iter().enumerate() {
                state[3 * n + 1] = c[0];
                state[3 * n + 2] = c[1];
            }
        }
        let beta = (-rate * dt).exp();
        let step_weight = -(-rate * dt).exp_m1() / rate;
        Ok(Self {
            layout,
            classes,
            node_class,
            state,
            beta,
            step_weight,
            dt,
            rate,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn rate(&self) -> T {
        self.rate
    }

    /// Per-step contraction factor `exp(-rate dt)`.
    pub fn beta(&self) -> T {
        self.beta
    }

    pub fn step_weight(&self) -> T {
        self.step_weight
    }

    /// Changes the discount rate, keeping the moves.
    pub fn set_rate(&mut self, rate: T) {
        self.rate = rate;
        self.beta = (-rate * self.dt).exp();
        self.step_weight = -(-rate * self.dt).exp_m1() / rate;
    }

    pub fn moves_at(&self, i: usize, j: usize) -> &[Move<T>] {
        &self.classes[self.node_class[self.layout.index(i, j)] as usize]
    }

    #[inline]
    fn others(&self, mv: &Move<T>, i: usize, v: &[T]) -> T {
        let mut s = T::zero();
        for k in 0..mv.count as usize {
            s = s + mv.weights[k] * v[(mv.bases[k] + i as isize) as usize];
        }
        s
    }

    /// Jacobi value at one node.
    #[inline]
    fn eval(&self, i: usize, j: usize, v: &[T]) -> T {
        let n = self.layout.index(i, j);
        let moves = &self.classes[self.node_class[n] as usize];
        let here = v[n];
        let mut best = T::infinity();
        for mv in moves {
            let cost = mv.cost + self.state[3 * n + mv.slot as usize];
            let val = self.step_weight * cost
                + self.beta * (self.others(mv, i, v) + mv.self_weight * here);
            if val < best {
                best = val;
            }
        }
        best
    }

    /// One Jacobi application `T v`.
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        let n1 = self.layout.n1;
        let mut out = vec![T::zero(); self.layout.len()];
        out.par_chunks_mut(n1).enumerate().for_each(|(j, row)| {
            for (i, slot) in row.iter_mut().enumerate() {
                *slot = self.eval(i, j, v);
            }
        });
        out
    }

    /// `sup |T v - v|`.
    pub fn residual(&self, v: &[T]) -> T {
        let tv = self.apply(v);
        tv.iter()
            .zip(v)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }

    /// Gauss-Seidel value at one node with the self-loop solved exactly.
    #[inline]
    fn eval_local(&self, i: usize, j: usize, v: &[T]) -> T {
        let n = self.layout.index(i, j);
        let moves = &self.classes[self.node_class[n] as usize];
        let mut best = T::infinity();
        for mv in moves {
            let cost = mv.cost + self.state[3 * n + mv.slot as usize];
            // 1 - beta w = (1 - beta) + beta (1 - w), kept accurate for small steps
            let denom = self.rate * self.step_weight + self.beta * (T::one() - mv.self_weight);
            let val = (self.step_weight * cost + self.beta * self.others(mv, i, v)) / denom;
            if val < best {
                best = val;
            }
        }
        best
    }

    fn sweep(&self, v: &mut [T], order: usize) {
        let (n1, n2) = (self.layout.n1, self.layout.n2);
        let rev_i = order & 1 == 1;
        let rev_j = order & 2 == 2;
        for jj in 0..n2 {
            let j = if rev_j { n2 - 1 - jj } else { jj };
            for ii in 0..n1 {
                let i = if rev_i { n1 - 1 - ii } else { ii };
                v[self.layout.index(i, j)] = self.eval_local(i, j, v);
            }
        }
    }

    /// `T v` together with the index of a minimizing move at every node.
    /// Ties keep the move of `current` so that the policy settles.
    fn improve(&self, v: &[T], current: &[u32]) -> (Vec<T>, Vec<u32>) {
        let n1 = self.layout.n1;
        let mut tv = vec![T::zero(); self.layout.len()];
        let mut policy = current.to_vec();
        tv.par_chunks_mut(n1)
            .zip(policy.par_chunks_mut(n1))
            .enumerate()
            .for_each(|(j, (row, pol))| {
                for i in 0..n1 {
                    let n = self.layout.index(i, j);
                    let moves = &self.classes[self.node_class[n] as usize];
                    let here = v[n];
                    let value = |mv: &Move<T>| {
                        let cost = mv.cost + self.state[3 * n + mv.slot as usize];
                        self.step_weight * cost
                            + self.beta * (self.others(mv, i, v) + mv.self_weight * here)
                    };
                    let mut best_k = (pol[i] as usize).min(moves.len() - 1);
                    let mut best = value(&moves[best_k]);
                    let keep = best;
                    let slack = T::lit(1e-13) * (T::one() + keep.abs());
                    for (k, mv) in moves.iter().enumerate() {
                        let val = value(mv);
                        if val < best && val < keep - slack {
                            best = val;
                            best_k = k;
                        }
                    }
                    row[i] = best;
                    pol[i] = best_k as u32;
                }
            });
        (tv, policy)
    }

    /// Exact value of a fixed policy: solves `(I - beta P) v = w_c c`.
    fn evaluate(&self, policy: &[u32], band: &mut Band<T>) -> Vec<T> {
        band.clear();
        let mut rhs = vec![T::zero(); self.layout.len()];
        for j in 0..self.layout.n2 {
            for i in 0..self.layout.n1 {
                let n = self.layout.index(i, j);
                let mv = &self.classes[self.node_class[n] as usize][policy[n] as usize];
                let r = band.position(n);
                rhs[r] = self.step_weight * (mv.cost + self.state[3 * n + mv.slot as usize]);
                band.add(r, r, T::one() - self.beta * mv.self_weight);
                for k in 0..mv.count as usize {
                    let m = (mv.bases[k] + i as isize) as usize;
                    band.add(r, band.position(m), -self.beta * mv.weights[k]);
                }
            }
        }
        band.factor();
        band.solve(&mut rhs);
        (0..self.layout.len()).map(|n| rhs[band.position(n)]).collect()
    }

    /// Iterates to the fixed point starting from `init`.
    pub fn solve(&self, init: Vec<T>, opts: FixedPointOptions) -> Result<FixedPoint<T>> {
        let mut v = init;
        if v.len() != self.layout.len() {
            return Err(Error::InvalidInput("initial field has the wrong size".into()));
        }
        let tol = T::lit(opts.tol);
        let mut band = Band::new(self.layout, self.bandwidth());
        let mut policy = vec![0u32; self.layout.len()];
        let mut residual = T::infinity();
        for it in 0..opts.max_iterations.max(1) {
            // ordered sweeps carry improvements across the grid before each
            // policy step; a poor policy alone gains only one cell per step
            for order in 0..4 {
                self.sweep(&mut v, order);
            }
            let (tv, next) = self.improve(&v, &policy);
            residual = tv
                .iter()
                .zip(&v)
                .map(|(a, b)| (*a - *b).abs())
                .fold(T::zero(), T::max);
            if !residual.is_finite() {
                break;
            }
            if residual < tol {
                return Ok(FixedPoint {
                    values: v,
                    residual,
                    sweeps: it + 1,
                });
            }
            if it > 0 && next == policy {
                // the evaluation is exact up to rounding; polish with value steps
                v = tv;
                continue;
            }
            policy = next;
            v = self.evaluate(&policy, &mut band);
        }
        Err(Error::NonConvergence {
            sweeps: opts.max_iterations.max(1),
            residual: residual.as_f64(),
        })
    }

    /// Largest band offset any move can create in the solver ordering.
    fn bandwidth(&self) -> usize {
        let order = Ordering::new(self.layout);
        let mut bw = 0usize;
        for j in 0..self.layout.n2 {
            for i in 0..self.layout.n1 {
                let n = self.layout.index(i, j);
                let r = order.position(n);
                for mv in &self.classes[self.node_class[n] as usize] {
                    for k in 0..mv.count as usize {
                        let m = (mv.bases[k] + i as isize) as usize;
                        bw = bw.max(order.position(m).abs_diff(r));
                    }
                }
            }
        }
        bw
    }
}

/// Node numbering for the direct solver. The periodic index is folded
/// (0, n-1, 1, n-2, ...) so neighbours across the seam stay close, and the
/// shorter direction runs fastest.
#[derive(Clone, Debug)]
struct Ordering {
    pos: Vec<usize>,
}

impl Ordering {
    fn new(layout: Layout) -> Self {
        let (n1, n2) = (layout.n1, layout.n2);
        let fold = |j: usize| {
            if 2 * j < n2 {
                2 * j
            } else {
                2 * (n2 - 1 - j) + 1
            }
        };
        let mut pos = vec![0; layout.len()];
        for j in 0..n2 {
            for i in 0..n1 {
                pos[layout.index(i, j)] = if layout.wrap2 {
                    i * n2 + fold(j)
                } else if n2 <= n1 {
                    i * n2 + j
                } else {
                    j * n1 + i
                };
            }
        }
        Self { pos }
    }

    #[inline]
    fn position(&self, n: usize) -> usize {
        self.pos[n]
    }
}

/// Banded matrix with LU factorization in place, no pivoting. Policy
/// matrices `I - beta P` are diagonally dominant M-matrices, for which
/// elimination without pivoting is stable and keeps the band.
#[derive(Clone, Debug)]
struct Band<T> {
    n: usize,
    bw: usize,
    data: Vec<T>,
    order: Ordering,
}

impl<T: Real> Band<T> {
    fn new(layout: Layout, bw: usize) -> Self {
        let n = layout.len();
        Self {
            n,
            bw,
            data: vec![T::zero(); n * (2 * bw + 1)],
            order: Ordering::new(layout),
        }
    }

    #[inline]
    fn position(&self, n: usize) -> usize {
        self.order.position(n)
    }

    fn clear(&mut self) {
        self.data.iter_mut().for_each(|x| *x = T::zero());
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> usize {
        r * (2 * self.bw + 1) + c + self.bw - r
    }

    #[inline]
    fn add(&mut self, r: usize, c: usize, x: T) {
        let k = self.at(r, c);
        self.data[k] = self.data[k] + x;
    }

    fn factor(&mut self) {
        let (n, bw) = (self.n, self.bw);
        let width = 2 * bw + 1;
        for k in 0..n {
            let last = (k + bw).min(n - 1);
            let pivot = self.data[self.at(k, k)];
            let row_k = k * width + bw - k;
            for r in k + 1..=last {
                let ark = self.at(r, k);
                if self.data[ark].is_zero() {
                    continue;
                }
                let f = self.data[ark] / pivot;
                self.data[ark] = f;
                let row_r = r * width + bw - r;
                for c in k + 1..=last {
                    let x = self.data[row_k + c];
                    if !x.is_zero() {
                        self.data[row_r + c] = self.data[row_r + c] - f * x;
                    }
                }
            }
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn solve(&self, b: &mut [T]) {
        let (n, bw) = (self.n, self.bw);
        for r in 0..n {
            let first = r.saturating_sub(bw);
            let mut s = b[r];
            for c in first..r {
                s = s - self.data[self.at(r, c)] * b[c];
            }
            b[r] = s;
        }
        for r in (0..n).rev() {
            let last = (r + bw).min(n - 1);
            let mut s = b[r];
            for c in r + 1..=last {
                s = s - self.data[self.at(r, c)] * b[c];
            }
            b[r] = s / self.data[self.at(r, r)];
        }
    }
}

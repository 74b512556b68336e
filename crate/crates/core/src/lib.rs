//! Numerics for Hamilton-Jacobi equations across a periodically oscillating
//! interface: effective transmission conditions from cell problems, solvers
//! for the oscillating and the homogenized problems, and a convergence and
//! property harness.
//!
//! All numerics are generic over the scalar type; the `f64` aliases at the
//! crate root are what the command line tool uses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cell;
pub mod effective_solver;
pub mod epsilon_solver;
pub mod error;
pub mod geometry;
pub mod hamiltonians;
pub mod harness;
pub mod io;
pub mod model;
pub mod real;
pub mod semi_lagrangian;

pub use error::{Error, Result};
pub use real::Real;

pub type Point = geometry::Vec2<f64>;
pub type Profile = geometry::OscillationProfile<f64>;
pub type Instance = model::ProblemInstance<f64>;
pub type Spec = model::SideSpec<f64>;
pub type Report = model::AssumptionReport<f64>;
pub type Table = cell::EffectiveTable<f64>;
pub type Cell = cell::CellResult<f64>;
pub type Field = effective_solver::ValueField<f64>;

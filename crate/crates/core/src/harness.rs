//! Convergence study `v_eps -> v` and the property suite. Both produce
//! serializable reports; the suite records failures as entries instead of
//! returning errors.

use log::{info, warn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{
    build_effective_table, ek_modify, ergodic_constant, fenchel_star, CellOptions, EffectiveTable,
    StripGrid, StripProblem,
};
use crate::cell::table::fit_affine;
use crate::effective_solver::{
    effective_operator, required_truncation, solve_effective, BoxGrid, BoxOptions, ValueField,
};
use crate::epsilon_solver::{
    default_horizon, epsilon_operator, grid_tolerance, map_to_original, simulate_straightened,
    simulate_trajectory, solve_epsilon, Policy, CELLS_PER_PERIOD,
};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::hamiltonians::{
    half_hamiltonian, hamiltonian, oscillatory_hamiltonian, tangential_min, threshold_slopes,
};
use crate::io::{csv_row, fmt_f64, to_json};
use crate::model::{ControlId, HalfSign, ProblemInstance, Side};
use crate::semi_lagrangian::BellmanOperator;

/// Box, margin and solver knobs of the convergence study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceOptions {
    pub z1_extent: f64,
    pub z2_extent: f64,
    /// Width of the excluded boundary layer as a fraction of the half-extents.
    pub margin_fraction: f64,
    /// Truncation level `K` when the table is not yet truncated; defaults
    /// to `2 M_l / delta0`.
    pub truncation: Option<f64>,
    pub solver: BoxOptions,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            z1_extent: 1.0,
            z2_extent: 0.5,
            margin_fraction: 0.2,
            truncation: None,
            solver: BoxOptions::default(),
        }
    }
}

/// `sup |v~_eps - v|` on the window for one `eps`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceEntry {
    pub eps: f64,
    pub h: f64,
    pub n1: usize,
    pub n2: usize,
    pub error: f64,
    pub sweeps: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// In the order given.
    pub eps_list: Vec<f64>,
    pub entries: Vec<ConvergenceEntry>,
    pub effective_h: f64,
    pub effective_n1: usize,
    pub effective_n2: usize,
    pub effective_residual: f64,
    pub truncation: f64,
    pub z1_extent: f64,
    pub z2_extent: f64,
    pub margin: [f64; 2],
    /// Half-widths of the window `|z1| <= w1, |z2| <= w2`.
    pub window: [f64; 2],
    pub pass: bool,
}

impl ConvergenceReport {
    /// Header `eps,h,n1,n2,error,sweeps,residual`.
    pub fn to_csv(&self) -> String {
        let mut out = csv_row(["eps", "h", "n1", "n2", "error", "sweeps", "residual"]);
        for e in &self.entries {
            out.push_str(&csv_row([
                fmt_f64(e.eps),
                fmt_f64(e.h),
                e.n1.to_string(),
                e.n2.to_string(),
                fmt_f64(e.error),
                e.sweeps.to_string(),
                fmt_f64(e.residual),
            ]));
        }
        out
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// Errors sorted from the largest `eps` to the smallest must drop overall
/// and may grow by at most 10% between neighbours.
pub fn convergence_trend(entries: &[ConvergenceEntry]) -> bool {
    let mut sorted: Vec<&ConvergenceEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let (Some(first), Some(last)) = (sorted.first(), sorted.last()) else {
        return false;
    };
    if sorted.len() < 2 || !(last.error < first.error) {
        return false;
    }
    sorted.windows(2).all(|w| w[1].error <= 1.1 * w[0].error)
}

fn truncated(inst: &ProblemInstance<f64>, table: &EffectiveTable<f64>, k: Option<f64>) -> Result<EffectiveTable<f64>> {
    match table.truncation {
        Some(_) => Ok(table.clone()),
        None => ek_modify(table, k.unwrap_or_else(|| required_truncation(inst))),
    }
}

/// Solves the effective problem once at `h = min(eps) / 8` and the
/// straightened problem at `h = eps / 8` for every `eps`.
pub fn convergence_study(
    inst: &ProblemInstance<f64>,
    table: &EffectiveTable<f64>,
    eps_list: &[f64],
    opts: &ConvergenceOptions,
) -> Result<ConvergenceReport> {
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput("eps list must be non-empty and positive".into()));
    }
    if !(0.0..0.5).contains(&opts.margin_fraction) {
        return Err(Error::InvalidInput("margin fraction must lie in [0, 0.5)".into()));
    }
    let table = truncated(inst, table, opts.truncation)?;
    let eps_min = eps_list.iter().copied().fold(f64::INFINITY, f64::min);
    let h_eff = eps_min / CELLS_PER_PERIOD;
    let grid = BoxGrid::new(opts.z1_extent, opts.z2_extent, h_eff)?;
    let limit = solve_effective(inst, &table, grid, &opts.solver)?;
    info!("effective field: {} steps, residual {:e}", limit.sweeps, limit.residual);

    let margin = [
        opts.margin_fraction * opts.z1_extent,
        opts.margin_fraction * opts.z2_extent,
    ];
    let window = [opts.z1_extent - margin[0], opts.z2_extent - margin[1]];
    let slack = 1e-12;
    let nodes: Vec<(usize, Vec2<f64>)> = (0..grid.n2)
        .flat_map(|j| (0..grid.n1).map(move |i| (i, j)))
        .filter_map(|(i, j)| {
            let z = grid.point(i, j);
            (z.x1.abs() <= window[0] + slack && z.x2.abs() <= window[1] + slack)
                .then_some((grid.index(i, j), z))
        })
        .collect();

    let entries: Vec<ConvergenceEntry> = eps_list
        .par_iter()
        .map(|&eps| -> Result<ConvergenceEntry> {
            let g = BoxGrid::new(opts.z1_extent, opts.z2_extent, eps / CELLS_PER_PERIOD)?;
            let field = solve_epsilon(inst, eps, g, &opts.solver)?;
            let mut error = 0.0f64;
            for &(k, z) in &nodes {
                error = error.max((field.interpolate(z)? - limit.values[k]).abs());
            }
            info!("eps = {eps}: error {error:e}");
            Ok(ConvergenceEntry {
                eps,
                h: g.max_spacing(),
                n1: g.n1,
                n2: g.n2,
                error,
                sweeps: field.sweeps,
                residual: field.residual,
            })
        })
        .collect::<Result<_>>()?;
    let pass = convergence_trend(&entries);
    Ok(ConvergenceReport {
        eps_list: eps_list.to_vec(),
        entries,
        effective_h: grid.max_spacing(),
        effective_n1: grid.n1,
        effective_n2: grid.n2,
        effective_residual: limit.residual,
        truncation: table.truncation.expect("truncated above"),
        z1_extent: opts.z1_extent,
        z2_extent: opts.z2_extent,
        margin,
        window,
        pass,
    })
}

/// Sample densities, seeds and slack of the property suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropertyOptions {
    pub seed: u64,
    pub z2_samples: Vec<f64>,
    pub p2_grid: Vec<f64>,
    pub rho_values: Vec<f64>,
    pub rho_p2: Vec<f64>,
    /// Random `(u, w)` pairs per Bellman operator.
    pub comparison_pairs: usize,
    pub hamiltonian_samples: usize,
    pub trajectories: usize,
    pub trajectory_dt: f64,
    pub eps: f64,
    /// Truncation level of the Fenchel checks and of the effective solve.
    pub truncation: f64,
    pub cost_shift: f64,
    /// Multiplies every tolerance; zero demands exact inequalities.
    pub slack_scale: f64,
    pub z1_extent: f64,
    pub z2_extent: f64,
    pub cell: CellOptions,
    pub solver: BoxOptions,
}

impl Default for PropertyOptions {
    fn default() -> Self {
        Self {
            seed: 20240611,
            z2_samples: vec![-0.5, -0.25, 0.0, 0.25, 0.5],
            p2_grid: (-10..=10).map(f64::from).collect(),
            rho_values: vec![1.0, 2.0, 4.0],
            rho_p2: vec![-2.0, 0.0, 2.0],
            comparison_pairs: 100,
            hamiltonian_samples: 200,
            trajectories: 20,
            trajectory_dt: 0.01,
            eps: 0.2,
            truncation: 10.0,
            cost_shift: 0.5,
            slack_scale: 1.0,
            z1_extent: 1.0,
            z2_extent: 0.5,
            cell: CellOptions::default(),
            solver: BoxOptions::default(),
        }
    }
}

/// Direction of the inequality a check asserts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `value <= bound + tolerance`
    AtMost,
    /// `value >= bound - tolerance`
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub name: String,
    /// The statement the check makes numerical.
    pub anchor: String,
    pub value: f64,
    pub relation: Relation,
    pub bound: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyReport {
    pub seed: u64,
    pub checks: Vec<PropertyCheck>,
    /// Set when the suite stopped early, with the reason.
    pub short_circuit: Option<String>,
    pub passed: bool,
}

impl PropertyReport {
    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn check(&self, name: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

struct Suite {
    checks: Vec<PropertyCheck>,
    slack: f64,
}

impl Suite {
    fn record(&mut self, name: &str, anchor: &str, value: f64, relation: Relation, bound: f64, tol: f64) {
        let tolerance = tol * self.slack;
        let passed = match relation {
            Relation::AtMost => value <= bound + tolerance,
            Relation::AtLeast => value >= bound - tolerance,
        };
        if !passed {
            warn!("property {name} failed: value {value:e}, bound {bound:e}");
        }
        self.checks.push(PropertyCheck {
            name: name.into(),
            anchor: anchor.into(),
            value,
            relation,
            bound,
            tolerance,
            passed,
            note: None,
        });
    }

    fn at_most(&mut self, name: &str, anchor: &str, value: f64, bound: f64, tol: f64) {
        self.record(name, anchor, value, Relation::AtMost, bound, tol);
    }

    fn at_least(&mut self, name: &str, anchor: &str, value: f64, bound: f64, tol: f64) {
        self.record(name, anchor, value, Relation::AtLeast, bound, tol);
    }

    fn failed(&mut self, name: &str, anchor: &str, err: &Error) {
        warn!("property {name} could not be evaluated: {err}");
        self.checks.push(PropertyCheck {
            name: name.into(),
            anchor: anchor.into(),
            value: f64::NAN,
            relation: Relation::AtMost,
            bound: f64::NAN,
            tolerance: 0.0,
            passed: false,
            note: Some(err.to_string()),
        });
    }

    fn note(&mut self, note: String) {
        if let Some(last) = self.checks.last_mut() {
            last.note = Some(note);
        }
    }

    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

const A_ASSUMPTIONS: &str = "controllability and boundedness assumptions on both sides";
const A_CONSTANTS: &str = "constant chain delta0~ <= delta0 <= M_f";
const A_PERIODIC: &str = "the interface profile g is 1-periodic";
const A_ROUND_TRIP: &str = "the straightening map G is a bijection";
const A_JACOBIAN: &str = "Jacobian of G equals the shear J~(x2/eps)";
const A_SHEAR_NORM: &str = "|J~(y2)| <= sqrt(2) (1 + |g'|)";
const A_FREEZED: &str = "frozen cost at p2 = 0 is the running cost on the interface";
const A_FLAT_SHEAR: &str = "straightened dynamics reduce to f when g = 0";
const A_HALF: &str = "constrained maxima H^{+-,i} lie below H^i";
const A_SPLIT: &str = "H^i = max(H^{+,i}, H^{-,i})";
const A_BRANCH: &str = "p1 -> H^{+,R} nonincreasing and p1 -> H^{-,R} nondecreasing";
const A_THRESHOLD: &str = "H^{+,R} equals E0^R beyond p0^{+,R} and H^R before it";
const A_E0_MIN: &str = "E0^i is the minimum of H^i along the tangential section";
const A_OSC_PERIOD: &str = "fast-variable Hamiltonian is 1-periodic in y2";
const A_OSC_LIP: &str = "fast-variable Hamiltonian is Lipschitz in p with constant M_f~ = |J~| M_f";
const A_COMPARISON: &str = "discrete comparison: u <= w implies T u <= T w";
const A_CONTRACTION: &str = "one Bellman step contracts by exp(-rate dt)";
const A_RHO: &str = "lambda_rho is nondecreasing in rho";
const A_NORMALIZED: &str = "corrector normalized by chi(0, 0) = 0";
const A_CORRECTOR_LIP: &str = "corrector Lipschitz constant below L(p2) (1 + 2h)";
const A_E_E0: &str = "E(z2, p2) >= E0(z2, p2)";
const A_SLOPES: &str = "slope sets are ordered: Pi-bar^R <= Pi-hat^R, Pi-hat^L <= Pi-bar^L";
const A_CONVEX: &str = "p2 -> E(z2, p2) is convex";
const A_E_LIP: &str = "p2 -> E(z2, p2) is M_f-Lipschitz";
const A_COERCIVE: &str = "delta0 |p2| - M_l <= E <= M_f |p2| + M_l";
const A_TAILS: &str = "E is affine for large |p2| with slopes in [delta0, M_f]";
const A_FENCHEL: &str = "|E_K*| <= C_K = (M_f - delta0) K + M_l";
const A_FENCHEL_LIP: &str = "E_K* is K-Lipschitz in b";
const A_EFF_BOUND: &str = "|v| <= M_l / lambda for the homogenized problem";
const A_EFF_SHIFT: &str = "l -> l + s shifts the homogenized value by s / lambda";
const A_INTERFACE: &str = "where E = E0 the tangential pseudo-controls are dominated";
const A_EPS_BOUND: &str = "|v~_eps| <= M_l / lambda";
const A_EPS_SHIFT: &str = "l -> l + s shifts v~_eps by s / lambda";
const A_EPS_PERIOD: &str = "v~_eps is eps-periodic in z2 for state-independent data";
const A_CONSTANT: &str = "constant running cost c gives the value c / lambda";
const A_TRAJECTORY: &str = "every admissible control gives an upper bound on the value";
const A_STRAIGHT: &str = "trajectories agree in original and straightened coordinates";

/// Runs every check at the configured densities. The instance's own
/// discount is the `lambda` of the value-function checks.
pub fn property_suite(inst: &ProblemInstance<f64>, opts: &PropertyOptions) -> PropertyReport {
    let mut suite = Suite {
        checks: Vec::new(),
        slack: opts.slack_scale,
    };
    let report = |suite: Suite, short: Option<String>| PropertyReport {
        seed: opts.seed,
        passed: short.is_none() && suite.passed(),
        checks: suite.checks,
        short_circuit: short,
    };

    let assumptions = inst.assess_assumptions();
    suite.at_least("assumptions", A_ASSUMPTIONS, assumptions.delta0, 0.0, 0.0);
    if !assumptions.passed {
        let last = suite.checks.last_mut().expect("just pushed");
        last.passed = false;
        let err = inst
            .validate_assumptions()
            .err()
            .map(|e| e.to_string())
            .unwrap_or_else(|| "assumptions failed".into());
        last.note = Some(err.clone());
        return report(suite, Some(err));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    geometry_checks(&mut suite, inst, &mut rng);
    hamiltonian_checks(&mut suite, inst, opts, &mut rng);
    cell_checks(&mut suite, inst, opts, &mut rng);
    let table = effective_table_checks(&mut suite, inst, opts);
    if let Some(table) = table {
        effective_checks(&mut suite, inst, &table, opts, &mut rng);
    }
    epsilon_checks(&mut suite, inst, opts, &mut rng);
    report(suite, None)
}

fn geometry_checks(suite: &mut Suite, inst: &ProblemInstance<f64>, rng: &mut ChaCha8Rng) {
    let m_f = inst.m_f();
    let (d, dt) = (inst.delta0(), inst.delta0_tilde());
    suite.at_most("delta0_tilde_below_delta0", A_CONSTANTS, dt, d, 0.0);
    suite.at_most("delta0_below_m_f", A_CONSTANTS, d, m_f, 0.0);

    let g = &inst.profile;
    let mut period = 0.0f64;
    for _ in 0..1000 {
        // dyadic points: t + 1 is exact, so the check is about g alone
        let t = rng.gen_range(-(1i64 << 22)..(1i64 << 22)) as f64 / (1u64 << 20) as f64;
        period = period
            .max((g.g(t + 1.0) - g.g(t)).abs())
            .max((g.g_prime(t + 1.0) - g.g_prime(t)).abs());
    }
    suite.at_most("profile_periodicity", A_PERIODIC, period, 0.0, 0.0);

    let mut round = 0.0f64;
    let mut jac = 0.0f64;
    let step = 1e-5;
    for _ in 0..200 {
        let eps = rng.gen_range(0.05..1.0);
        let x = Vec2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let z = g.straighten(x, eps);
        round = round.max((g.unstraighten(z, eps) - x).norm());
        let j = g.shear_jacobian(x.x2 / eps).matrix();
        for (c, e) in [Vec2::e1(), Vec2::e2()].into_iter().enumerate() {
            let fd = (g.straighten(x + e * step, eps) - g.straighten(x - e * step, eps)) * (0.5 / step);
            jac = jac.max((fd.x1 - j[0][c]).abs()).max((fd.x2 - j[1][c]).abs());
        }
    }
    suite.at_most("straighten_round_trip", A_ROUND_TRIP, round, 0.0, 1e-12);
    // central differences: O(step^2 |g'''| / eps^2)
    suite.at_most("shear_matches_jacobian", A_JACOBIAN, jac, 0.0, 1e-6);

    let mut ratio = 0.0f64;
    for k in 0..4096 {
        let y2 = k as f64 / 4096.0;
        let shear = g.shear_jacobian(y2);
        for _ in 0..4 {
            let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            ratio = ratio.max(shear.apply(Vec2::new(th.cos(), th.sin())).norm());
        }
    }
    let bound = std::f64::consts::SQRT_2 * (1.0 + g.sup_derivative());
    suite.at_most("shear_norm", A_SHEAR_NORM, ratio, bound, 1e-12);

    let mut frozen = 0.0f64;
    let mut flat = 0.0f64;
    let flat_inst = inst.with_profile(crate::geometry::OscillationProfile::flat());
    for side in Side::BOTH {
        for k in 0..inst.side(side).len() {
            let a = ControlId::new(side, k);
            let z2 = rng.gen_range(-1.0..1.0);
            if let (Ok(fc), Ok(c)) = (inst.freezed_cost(z2, 0.0, a), inst.cost(side, Vec2::new(0.0, z2), a)) {
                frozen = frozen.max((fc - c).abs());
            }
            let x = Vec2::new(rng.gen_range(-1.0..1.0), z2);
            if let (Ok(s), Ok(f)) = (
                flat_inst.straightened_dynamics(side, x, a, 0.3),
                flat_inst.dynamics(side, x, a),
            ) {
                flat = flat.max((s - f).norm());
            }
        }
    }
    suite.at_most("freezed_cost_at_zero_slope", A_FREEZED, frozen, 0.0, 0.0);
    suite.at_most("flat_straightened_dynamics", A_FLAT_SHEAR, flat, 0.0, 0.0);
}

fn hamiltonian_checks(
    suite: &mut Suite,
    inst: &ProblemInstance<f64>,
    opts: &PropertyOptions,
    rng: &mut ChaCha8Rng,
) {
    let m_f = inst.m_f_tilde();
    let mut half = 0.0f64;
    let mut split = 0.0f64;
    let mut e0_gap = 0.0f64;
    let mut osc_period = 0.0f64;
    let mut osc_lip = 0.0f64;
    let mut errors: Option<Error> = None;
    for _ in 0..opts.hamiltonian_samples {
        let z2 = rng.gen_range(-0.5..0.5);
        let z = Vec2::new(0.0, z2);
        let p = Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        for side in Side::BOTH {
            let h = hamiltonian(inst, side, z, p);
            let plus = half_hamiltonian(inst, side, HalfSign::Plus, z, p);
            let minus = half_hamiltonian(inst, side, HalfSign::Minus, z, p);
            match (plus, minus) {
                (Ok(a), Ok(b)) => {
                    half = half.max(a - h).max(b - h);
                    split = split.max((a.max(b) - h).abs());
                }
                (Err(e), _) | (_, Err(e)) => errors = Some(e),
            }
            match tangential_min(inst, side, z2, p.x2) {
                Ok(e0) => e0_gap = e0_gap.max(e0 - h),
                Err(e) => errors = Some(e),
            }
            let y2 = rng.gen_range(-(1i64 << 20)..(1i64 << 20)) as f64 / (1u64 << 18) as f64;
            let ho = oscillatory_hamiltonian(inst, side, z, p, y2);
            osc_period = osc_period.max((oscillatory_hamiltonian(inst, side, z, p, y2 + 1.0) - ho).abs());
            let q = Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let hq = oscillatory_hamiltonian(inst, side, z, q, y2);
            osc_lip = osc_lip.max((hq - ho).abs() - m_f * (q - p).norm());
        }
    }
    if let Some(e) = errors {
        suite.failed("hamiltonian_evaluation", A_HALF, &e);
    }
    suite.at_most("half_below_full", A_HALF, half, 0.0, 1e-12);
    suite.at_most("half_split", A_SPLIT, split, 0.0, 1e-12);
    suite.at_most("e0_below_hamiltonian", A_E0_MIN, e0_gap, 0.0, 1e-8);
    suite.at_most("oscillatory_periodicity", A_OSC_PERIOD, osc_period, 0.0, 1e-12);
    suite.at_most("oscillatory_lipschitz", A_OSC_LIP, osc_lip, 0.0, 1e-12);

    let mut branch = 0.0f64;
    let mut threshold = 0.0f64;
    for n in 0..100 {
        let z2 = rng.gen_range(-0.5..0.5);
        let p2 = rng.gen_range(-3.0..3.0);
        let z = Vec2::new(0.0, z2);
        let p1s: Vec<f64> = (0..50).map(|k| -6.0 + 12.0 * k as f64 / 49.0).collect();
        let mut prev: Option<(f64, f64)> = None;
        for &p1 in &p1s {
            let p = Vec2::new(p1, p2);
            let (Ok(a), Ok(b)) = (
                half_hamiltonian(inst, Side::Right, HalfSign::Plus, z, p),
                half_hamiltonian(inst, Side::Right, HalfSign::Minus, z, p),
            ) else {
                continue;
            };
            if let Some((pa, pb)) = prev {
                branch = branch.max(a - pa).max(pb - b);
            }
            prev = Some((a, b));
        }
        if n >= 20 {
            continue;
        }
        let (Ok(th), Ok(e0)) = (
            threshold_slopes(inst, Side::Right, z2, p2),
            tangential_min(inst, Side::Right, z2, p2),
        ) else {
            continue;
        };
        for &p1 in &p1s {
            let p = Vec2::new(p1, p2);
            let Ok(a) = half_hamiltonian(inst, Side::Right, HalfSign::Plus, z, p) else {
                continue;
            };
            let target = if p1 >= th.p_plus { e0 } else { hamiltonian(inst, Side::Right, z, p) };
            threshold = threshold.max((a - target).abs());
        }
    }
    suite.at_most("branch_monotonicity", A_BRANCH, branch, 0.0, 1e-12);
    suite.at_most("threshold_decomposition", A_THRESHOLD, threshold, 0.0, 1e-6);
}

/// Maximum of `T u - T w` and the contraction defect over random ordered pairs.
fn comparison_pairs(op: &BellmanOperator<f64>, scale: f64, pairs: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let n = op.layout().len();
    let beta = op.beta();
    let mut order = f64::NEG_INFINITY;
    let mut contraction = f64::NEG_INFINITY;
    for _ in 0..pairs {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let w: Vec<f64> = u
            .iter()
            .map(|&x| if rng.gen_bool(0.3) { x } else { x + rng.gen_range(0.0..scale) })
            .collect();
        let (tu, tw) = (op.apply(&u), op.apply(&w));
        let gap = u.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let tgap = tu.iter().zip(&tw).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        order = order.max(tu.iter().zip(&tw).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max));
        contraction = contraction.max(tgap - beta * gap);
    }
    (order, contraction)
}

fn cell_checks(suite: &mut Suite, inst: &ProblemInstance<f64>, opts: &PropertyOptions, rng: &mut ChaCha8Rng) {
    let scale = 2.0 * inst.m_ell() / inst.discount + 1.0;
    match StripGrid::new(1.0, 1.0 / 32.0)
        .and_then(|grid| StripProblem::new(inst, 0.0, 1.0, grid, opts.cell.eta_schedule.last().copied().unwrap_or(0.1)))
    {
        Ok(problem) => {
            let (order, contraction) = comparison_pairs(problem.operator(), scale, opts.comparison_pairs, rng);
            suite.at_most("cell_comparison", A_COMPARISON, order, 0.0, 1e-12);
            suite.at_most("cell_contraction", A_CONTRACTION, contraction, 0.0, 1e-12);
        }
        Err(e) => suite.failed("cell_comparison", A_COMPARISON, &e),
    }

    let jobs: Vec<(f64, f64)> = opts
        .rho_p2
        .iter()
        .flat_map(|&p| opts.rho_values.iter().map(move |&r| (p, r)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(p2, rho)| ergodic_constant(inst, 0.0, p2, rho, &opts.cell))
        .collect();
    let mut drop = f64::NEG_INFINITY;
    let mut normalized = 0.0f64;
    let mut lip = f64::NEG_INFINITY;
    let mut bad: Option<Error> = None;
    let per = opts.rho_values.len();
    for (k, chunk) in results.chunks(per.max(1)).enumerate() {
        let mut prev: Option<f64> = None;
        for r in chunk {
            match r {
                Ok(cell) => {
                    if let Some(p) = prev {
                        drop = drop.max(p - cell.lambda_rho);
                    }
                    prev = Some(cell.lambda_rho);
                    let origin = cell.grid.origin();
                    normalized = normalized.max(cell.corrector[origin].abs());
                    let allowed = cell.lipschitz_bound * (1.0 + 2.0 * cell.grid.h1);
                    lip = lip.max(cell.lipschitz_observed - allowed);
                }
                Err(e) => {
                    warn!("cell at p2 = {} failed: {e}", opts.rho_p2[k]);
                    bad = Some(e.clone());
                }
            }
        }
    }
    if let Some(e) = bad {
        suite.failed("rho_monotonicity", A_RHO, &e);
        return;
    }
    suite.at_most("rho_monotonicity", A_RHO, drop.max(0.0), 0.0, 2e-3);
    suite.at_most("corrector_normalized", A_NORMALIZED, normalized, 0.0, 0.0);
    suite.at_most("corrector_lipschitz", A_CORRECTOR_LIP, lip.max(0.0), 0.0, 0.0);
}

fn effective_table_checks(
    suite: &mut Suite,
    inst: &ProblemInstance<f64>,
    opts: &PropertyOptions,
) -> Option<EffectiveTable<f64>> {
    let table = match build_effective_table(inst, &opts.z2_samples, &opts.p2_grid, &opts.cell) {
        Ok(t) => t,
        Err(e) => {
            suite.failed("effective_table", A_E_E0, &e);
            return None;
        }
    };
    let (m_f, m_ell, d0) = (inst.m_f(), inst.m_ell(), inst.delta0());
    let p = &table.p2_grid;
    let mut below = f64::NEG_INFINITY;
    let mut slopes = f64::NEG_INFINITY;
    let mut convex = f64::NEG_INFINITY;
    let mut lip = 0.0f64;
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::NEG_INFINITY;
    let mut tail_min = f64::INFINITY;
    let mut tail_max = f64::NEG_INFINITY;
    let mut tails_found = true;
    for (row, samples) in table.values.iter().zip(&table.samples) {
        for (c, s) in samples.iter().enumerate() {
            below = below.max(s.e0 - s.e);
            slopes = slopes
                .max(s.slopes_right.bar - s.slopes_right.hat)
                .max(s.slopes_left.hat - s.slopes_left.bar);
            lower = lower.max(d0 * p[c].abs() - m_ell - row[c]);
            upper = upper.max(row[c] - m_f * p[c].abs() - m_ell);
        }
        for a in 0..p.len() {
            for b in a + 1..p.len() {
                lip = lip.max((row[b] - row[a]).abs() / (p[b] - p[a]));
                if let Some(m) = p.iter().position(|&q| (q - 0.5 * (p[a] + p[b])).abs() < 1e-12) {
                    convex = convex.max(row[m] - 0.5 * (row[a] + row[b]));
                }
            }
        }
        let pick = |lo: f64, hi: f64| -> Vec<(f64, f64)> {
            p.iter()
                .zip(row)
                .filter(|(q, _)| **q >= lo - 1e-12 && **q <= hi + 1e-12)
                .map(|(q, e)| (*q, *e))
                .collect()
        };
        match (fit_affine(&pick(8.0, 10.0)), fit_affine(&pick(-10.0, -8.0))) {
            (Some((right, _)), Some((left, _))) => {
                tail_min = tail_min.min(right).min(-left);
                tail_max = tail_max.max(right).max(-left);
            }
            _ => tails_found = false,
        }
    }
    suite.at_most("e_above_e0", A_E_E0, below.max(0.0), 0.0, 5e-3);
    suite.at_most("slope_ordering", A_SLOPES, slopes.max(0.0), 0.0, 1e-8);
    suite.at_most("e_convexity", A_CONVEX, convex.max(0.0), 0.0, 5e-3);
    suite.at_most("e_lipschitz", A_E_LIP, lip, m_f, 0.02);
    suite.at_most("e_coercive_lower", A_COERCIVE, lower.max(0.0), 0.0, 5e-3);
    suite.at_most("e_coercive_upper", A_COERCIVE, upper.max(0.0), 0.0, 5e-3);
    if tails_found {
        suite.at_least("tail_slope_min", A_TAILS, tail_min, d0, 0.02);
        suite.at_most("tail_slope_max", A_TAILS, tail_max, m_f, 0.02);
    } else {
        suite.failed(
            "tail_slope_min",
            A_TAILS,
            &Error::TableCoverage {
                what: "p2 in [8, 10] and [-10, -8]".into(),
            },
        );
    }

    let k = opts.truncation;
    let truncated = match ek_modify(&table, k) {
        Ok(t) => t,
        Err(e) => {
            suite.failed("fenchel_bound", A_FENCHEL, &e);
            return None;
        }
    };
    let c_k = (m_f - d0) * k + m_ell;
    let bs: Vec<f64> = (0..=80).map(|i| -m_f + 2.0 * m_f * i as f64 / 80.0).collect();
    let mut star_max = 0.0f64;
    let mut star_lip = 0.0f64;
    for &z2 in &truncated.z2_grid {
        let stars: Result<Vec<f64>> = bs.iter().map(|&b| fenchel_star(&truncated, z2, b)).collect();
        match stars {
            Ok(s) => {
                for (i, v) in s.iter().enumerate() {
                    star_max = star_max.max(v.abs());
                    if i > 0 {
                        star_lip = star_lip.max((v - s[i - 1]).abs() / (bs[i] - bs[i - 1]));
                    }
                }
            }
            Err(e) => {
                suite.failed("fenchel_bound", A_FENCHEL, &e);
                return None;
            }
        }
    }
    suite.at_most("fenchel_bound", A_FENCHEL, star_max, c_k, 1e-6);
    suite.at_most("fenchel_lipschitz", A_FENCHEL_LIP, star_lip, k, 1e-6);
    Some(truncated)
}

/// `E_K - s`, the exact table of the instance with every cost raised by `s`.
fn shifted_table(table: &EffectiveTable<f64>, s: f64) -> EffectiveTable<f64> {
    let mut out = table.clone();
    for row in &mut out.values {
        for v in row {
            *v -= s;
        }
    }
    out.m_ell = table.m_ell + s.abs();
    out
}

fn sup_diff(a: &[f64], b: &[f64], offset: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y - offset).abs()).fold(0.0, f64::max)
}

fn effective_checks(
    suite: &mut Suite,
    inst: &ProblemInstance<f64>,
    table: &EffectiveTable<f64>,
    opts: &PropertyOptions,
    rng: &mut ChaCha8Rng,
) {
    let grid = match BoxGrid::new(opts.z1_extent, opts.z2_extent, opts.eps / CELLS_PER_PERIOD) {
        Ok(g) => g,
        Err(e) => return suite.failed("effective_solve", A_EFF_BOUND, &e),
    };
    let field = match solve_effective(inst, table, grid, &opts.solver) {
        Ok(f) => f,
        Err(e) => return suite.failed("effective_solve", A_EFF_BOUND, &e),
    };
    let bound = inst.m_ell() / inst.discount;
    suite.at_most("effective_bound", A_EFF_BOUND, field.sup_norm(), bound, 1e-6);

    if let Ok(op) = effective_operator(inst, table, &grid, &opts.solver) {
        let (order, contraction) = comparison_pairs(&op, 2.0 * bound + 1.0, opts.comparison_pairs, rng);
        suite.at_most("effective_comparison", A_COMPARISON, order, 0.0, 1e-12);
        suite.at_most("effective_contraction", A_CONTRACTION, contraction, 0.0, 1e-12);
    }

    let s = opts.cost_shift;
    let shifted = inst.with_cost_shift(s);
    match solve_effective(&shifted, &shifted_table(table, s), grid, &opts.solver) {
        Ok(f) => {
            let d = sup_diff(&f.values, &field.values, s / inst.discount);
            suite.at_most("effective_cost_shift", A_EFF_SHIFT, d, 0.0, 1e-10);
        }
        Err(e) => suite.failed("effective_cost_shift", A_EFF_SHIFT, &e),
    }

    let dominated = table
        .samples
        .iter()
        .flatten()
        .all(|s| (s.e - s.e0).abs() <= 5e-3);
    let mut plain = opts.solver.clone();
    plain.tangential = false;
    match solve_effective(inst, table, grid, &plain) {
        Ok(f) => {
            let d = sup_diff(&f.values, &field.values, 0.0);
            suite.at_most("interface_consistency", A_INTERFACE, d, 0.0, grid_tolerance(&field, inst));
            if !dominated {
                // only asserted where E = E0
                let last = suite.checks.last_mut().expect("just pushed");
                last.passed = true;
                last.note = Some("E exceeds E0 somewhere; recorded without verdict".into());
            }
        }
        Err(e) => suite.failed("interface_consistency", A_INTERFACE, &e),
    }
}

fn window_nodes(field: &ValueField<f64>, w1: f64, w2: f64) -> Vec<(usize, usize)> {
    let g = &field.grid;
    (0..g.n2)
        .flat_map(|j| (0..g.n1).map(move |i| (i, j)))
        .filter(|&(i, j)| g.z1(i).abs() <= w1 + 1e-12 && g.z2(j).abs() <= w2 + 1e-12)
        .collect()
}

fn epsilon_checks(suite: &mut Suite, inst: &ProblemInstance<f64>, opts: &PropertyOptions, rng: &mut ChaCha8Rng) {
    let eps = opts.eps;
    let grid = match BoxGrid::new(opts.z1_extent, opts.z2_extent, eps / CELLS_PER_PERIOD) {
        Ok(g) => g,
        Err(e) => return suite.failed("eps_solve", A_EPS_BOUND, &e),
    };
    let field = match solve_epsilon(inst, eps, grid, &opts.solver) {
        Ok(f) => f,
        Err(e) => return suite.failed("eps_solve", A_EPS_BOUND, &e),
    };
    let bound = inst.m_ell() / inst.discount;
    suite.at_most("eps_bound", A_EPS_BOUND, field.sup_norm(), bound, 1e-6);

    if let Ok(op) = epsilon_operator(inst, eps, &grid) {
        let (order, contraction) = comparison_pairs(&op, 2.0 * bound + 1.0, opts.comparison_pairs, rng);
        suite.at_most("eps_comparison", A_COMPARISON, order, 0.0, 1e-12);
        suite.at_most("eps_contraction", A_CONTRACTION, contraction, 0.0, 1e-12);
    }

    let s = opts.cost_shift;
    match solve_epsilon(&inst.with_cost_shift(s), eps, grid, &opts.solver) {
        Ok(f) => {
            let d = sup_diff(&f.values, &field.values, s / inst.discount);
            suite.at_most("eps_cost_shift", A_EPS_SHIFT, d, 0.0, 1e-10);
        }
        Err(e) => suite.failed("eps_cost_shift", A_EPS_SHIFT, &e),
    }

    let c = 1.5;
    match ProblemInstance::eikonal(c, c, inst.left.len().saturating_sub(1).max(8), inst.profile.clone(), inst.discount)
        .and_then(|flat| solve_epsilon(&flat, eps, grid, &opts.solver))
    {
        Ok(f) => {
            let d = f.values.iter().map(|v| (v - c / inst.discount).abs()).fold(0.0, f64::max);
            suite.at_most("constant_cost_value", A_CONSTANT, d, 0.0, opts.solver.eps_fix);
        }
        Err(e) => suite.failed("constant_cost_value", A_CONSTANT, &e),
    }

    if inst.is_state_independent() {
        let shift = (eps / grid.h2).round() as usize;
        let (w1, w2) = (0.8 * opts.z1_extent, 0.8 * opts.z2_extent);
        if (shift as f64 * grid.h2 - eps).abs() < 1e-9 {
            let mut d = 0.0f64;
            for (i, j) in window_nodes(&field, w1, w2) {
                if j + shift < grid.n2 && grid.z2(j + shift) <= w2 + 1e-12 {
                    d = d.max((field.at(i, j + shift) - field.at(i, j)).abs());
                }
            }
            suite.at_most("eps_periodicity", A_EPS_PERIOD, d, 0.0, 10.0 * opts.solver.eps_fix);
        } else {
            suite.failed(
                "eps_periodicity",
                A_EPS_PERIOD,
                &Error::InvalidInput("grid rows do not align with the period".into()),
            );
        }
    }

    trajectory_checks(suite, inst, &field, opts, rng);
}

/// Random piecewise-constant controls that move away from the interface,
/// so the path never leaves the starting region.
fn random_policy(inst: &ProblemInstance<f64>, side: Side, rng: &mut ChaCha8Rng, horizon: f64) -> Result<Policy<f64>> {
    let spec = inst.side(side);
    let s = side.sigma() as f64;
    let outward: Vec<usize> = (0..spec.len())
        .filter(|&k| s * spec.velocity(k).x1 >= 0.0)
        .collect();
    if outward.is_empty() {
        return Err(Error::EmptyConstraintSet);
    }
    let mut segments = Vec::new();
    let mut t = 0.0;
    while t < horizon {
        segments.push((t, ControlId::new(side, outward[rng.gen_range(0..outward.len())])));
        t += rng.gen_range(0.2..2.0);
    }
    Policy::new(segments)
}

fn trajectory_checks(
    suite: &mut Suite,
    inst: &ProblemInstance<f64>,
    field: &ValueField<f64>,
    opts: &PropertyOptions,
    rng: &mut ChaCha8Rng,
) {
    let eps = opts.eps;
    let horizon = default_horizon(inst);
    let tol = grid_tolerance(field, inst);
    let band = eps * inst.profile.sup_norm();
    let (w1, w2) = (0.8 * opts.z1_extent, 0.8 * opts.z2_extent);
    let mut defect = f64::NEG_INFINITY;
    let mut mismatch = 0.0f64;
    for n in 0..opts.trajectories {
        let side = if n % 2 == 0 { Side::Left } else { Side::Right };
        let s = side.sigma() as f64;
        let x0 = Vec2::new(s * rng.gen_range(band + 0.05..w1), rng.gen_range(-w2..w2));
        let run = random_policy(inst, side, rng, horizon).and_then(|policy| {
            let orig = simulate_trajectory(inst, eps, x0, &policy, horizon, opts.trajectory_dt)?;
            let z0 = inst.profile.straighten(x0, eps);
            let straight = simulate_straightened(inst, eps, z0, &policy, horizon, opts.trajectory_dt)?;
            let value = map_to_original(field, &inst.profile, eps, x0)?;
            Ok((orig, straight, value))
        });
        match run {
            Ok((orig, straight, value)) => {
                defect = defect.max(value - 2.0 * tol - (orig.discounted_cost + orig.truncation_bound));
                let end = inst.profile.straighten(*orig.path.last().expect("non-empty path"), eps);
                mismatch = mismatch
                    .max((end - *straight.path.last().expect("non-empty path")).norm())
                    .max((orig.discounted_cost - straight.discounted_cost).abs());
            }
            Err(e) => return suite.failed("trajectory_upper_bound", A_TRAJECTORY, &e),
        }
    }
    suite.at_most("trajectory_upper_bound", A_TRAJECTORY, defect.max(0.0), 0.0, 0.0);
    suite.note(format!("grid tolerance {}", fmt_f64(tol)));
    suite.at_most("straightened_equivalence", A_STRAIGHT, mismatch, 0.0, 1e-3);
}

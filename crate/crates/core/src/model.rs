//! Problem instances: per-side control samples, dynamics and running costs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OscillationProfile, Vec2};
use crate::real::Real;

/// One of the two regions separated by the interface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "L")]
    Left,
    #[serde(rename = "R")]
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    /// `sigma^L = -1`, `sigma^R = +1`.
    #[inline]
    pub fn sigma(self) -> i32 {
        match self {
            Side::Left => -1,
            Side::Right => 1,
        }
    }

    #[inline]
    pub fn sigma_real<T: Real>(self) -> T {
        match self {
            Side::Left => -T::one(),
            Side::Right => T::one(),
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Frame constants shared by both regions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameConstants;

impl FrameConstants {
    pub const SIGMA_L: i32 = -1;
    pub const SIGMA_R: i32 = 1;

    pub fn e1<T: Real>() -> Vec2<T> {
        Vec2::e1()
    }

    pub fn e2<T: Real>() -> Vec2<T> {
        Vec2::e2()
    }
}

/// A sampled control, tagged with the side whose control set it belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlId {
    pub side: Side,
    pub index: usize,
}

impl ControlId {
    pub fn new(side: Side, index: usize) -> Self {
        Self { side, index }
    }
}

/// Which half-Hamiltonian: `+` keeps velocities entering the side, `-` those leaving it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HalfSign {
    Plus,
    Minus,
}

impl HalfSign {
    pub fn value<T: Real>(self) -> T {
        match self {
            HalfSign::Plus => T::one(),
            HalfSign::Minus => -T::one(),
        }
    }
}

/// Dynamics presets. All of them are state independent, so their Lipschitz
/// constant in `x` is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsPreset<T> {
    /// `f(x, a) = a`
    Eikonal,
    /// `f(x, a) = s a`
    Scaled { scale: T },
    /// `f(x, a) = a + d`
    Drift { drift: [T; 2] },
}

impl<T: Real> DynamicsPreset<T> {
    #[inline]
    pub fn apply(&self, a: Vec2<T>) -> Vec2<T> {
        match self {
            DynamicsPreset::Eikonal => a,
            DynamicsPreset::Scaled { scale } => a * *scale,
            DynamicsPreset::Drift { drift } => a + Vec2::new(drift[0], drift[1]),
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match self {
            DynamicsPreset::Eikonal => true,
            DynamicsPreset::Scaled { scale } => scale.is_finite(),
            DynamicsPreset::Drift { drift } => drift.iter().all(|d| d.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("dynamics parameters must be finite".into()))
        }
    }
}

/// Running cost presets. Each splits as a state part plus a control part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostPreset<T> {
    /// `l(x, a) = c`
    Constant { c: T },
    /// `l(x, a) = c + kappa |a|^2`
    Quadratic { c: T, kappa: T },
    /// `l(x, a) = c + amplitude exp(-|x|^2)`
    Bump { c: T, amplitude: T },
}

impl<T: Real> CostPreset<T> {
    #[inline]
    pub fn state_part(&self, x: Vec2<T>) -> T {
        match self {
            CostPreset::Constant { c } | CostPreset::Quadratic { c, .. } => *c,
            CostPreset::Bump { c, amplitude } => *c + *amplitude * (-x.norm_sq()).exp(),
        }
    }

    #[inline]
    pub fn control_part(&self, a: Vec2<T>) -> T {
        match self {
            CostPreset::Quadratic { kappa, .. } => *kappa * a.norm_sq(),
            _ => T::zero(),
        }
    }

    #[inline]
    pub fn eval(&self, x: Vec2<T>, a: Vec2<T>) -> T {
        self.state_part(x) + self.control_part(a)
    }

    pub fn is_state_independent(&self) -> bool {
        match self {
            CostPreset::Bump { amplitude, .. } => amplitude.is_zero(),
            _ => true,
        }
    }

    /// Exact supremum of `|l|` over the plane for the given controls.
    fn sup_abs(&self, controls: &[Vec2<T>]) -> T {
        match self {
            CostPreset::Constant { c } => c.abs(),
            CostPreset::Quadratic { .. } => controls
                .iter()
                .map(|a| self.eval(Vec2::zero(), *a).abs())
                .fold(T::zero(), T::max),
            // exp(-|x|^2) ranges over (0, 1]
            CostPreset::Bump { c, amplitude } => c.abs().max((*c + *amplitude).abs()),
        }
    }

    /// Lipschitz constant in `x`.
    fn lipschitz(&self) -> T {
        match self {
            // max |grad exp(-|x|^2)| = sqrt(2/e)
            CostPreset::Bump { amplitude, .. } => {
                amplitude.abs() * (T::lit(2.0) / T::one().exp()).sqrt()
            }
            _ => T::zero(),
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match self {
            CostPreset::Constant { c } => c.is_finite(),
            CostPreset::Quadratic { c, kappa } => c.is_finite() && kappa.is_finite(),
            CostPreset::Bump { c, amplitude } => c.is_finite() && amplitude.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("cost parameters must be finite".into()))
        }
    }

    /// Same preset with the constant part raised by `s`.
    pub fn shifted(&self, s: T) -> Self {
        match self {
            CostPreset::Constant { c } => CostPreset::Constant { c: *c + s },
            CostPreset::Quadratic { c, kappa } => CostPreset::Quadratic {
                c: *c + s,
                kappa: *kappa,
            },
            CostPreset::Bump { c, amplitude } => CostPreset::Bump {
                c: *c + s,
                amplitude: *amplitude,
            },
        }
    }
}

/// `count` equi-angular unit vectors starting at angle 0, followed by the
/// zero control when `center` is set.
pub fn disc_controls<T: Real>(count: usize, center: bool) -> Vec<Vec2<T>> {
    let mut out: Vec<Vec2<T>> = (0..count)
        .map(|k| {
            let theta = T::TAU() * T::from_usize_lossy(k) / T::from_usize_lossy(count);
            let (s, c) = theta.sin_cos();
            Vec2::new(c, s)
        })
        .collect();
    if center {
        out.push(Vec2::zero());
    }
    out
}

/// Control sample, dynamics and cost of one region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideSpec<T> {
    pub side: Side,
    pub controls: Vec<Vec2<T>>,
    pub dynamics: DynamicsPreset<T>,
    pub cost: CostPreset<T>,
}

impl<T: Real> SideSpec<T> {
    pub fn new(
        side: Side,
        controls: Vec<Vec2<T>>,
        dynamics: DynamicsPreset<T>,
        cost: CostPreset<T>,
    ) -> Self {
        Self {
            side,
            controls,
            dynamics,
            cost,
        }
    }

    /// Unit-disc sample with eikonal dynamics and constant cost `c`.
    pub fn eikonal(side: Side, count: usize, c: T) -> Self {
        Self::new(
            side,
            disc_controls(count, true),
            DynamicsPreset::Eikonal,
            CostPreset::Constant { c },
        )
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// `f^i(., a_k)`; the presets do not depend on the state.
    #[inline]
    pub fn velocity(&self, k: usize) -> Vec2<T> {
        self.dynamics.apply(self.controls[k])
    }

    #[inline]
    pub fn running_cost(&self, x: Vec2<T>, k: usize) -> T {
        self.cost.eval(x, self.controls[k])
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k < self.controls.len() {
            Ok(())
        } else {
            Err(Error::UnknownControl {
                side: self.side,
                index: k,
            })
        }
    }
}

/// Per-check verdicts of the assumption validation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionChecks {
    pub controls_nonempty: bool,
    pub dynamics_bounded: bool,
    pub cost_bounded: bool,
    pub controllable: bool,
    pub discount_positive: bool,
    pub constant_chain: bool,
}

/// Constants of the instance together with the verdicts that produced them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport<T> {
    pub m_f: T,
    pub m_ell: T,
    pub l_f_estimate: T,
    pub l_ell_estimate: T,
    pub delta0: T,
    pub delta0_tilde: T,
    pub sup_g: T,
    pub sup_g_prime: T,
    pub passed: bool,
    pub checks: AssumptionChecks,
}

/// Two regions, the interface profile and the discount rate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProblemInstance<T> {
    pub left: SideSpec<T>,
    pub right: SideSpec<T>,
    pub profile: OscillationProfile<T>,
    pub discount: T,
    #[serde(skip)]
    report: Option<AssumptionReport<T>>,
}

impl<T: Real> ProblemInstance<T> {
    pub fn new(
        left: SideSpec<T>,
        right: SideSpec<T>,
        profile: OscillationProfile<T>,
        discount: T,
    ) -> Result<Self> {
        if left.side != Side::Left || right.side != Side::Right {
            return Err(Error::InvalidInput(
                "side specs must be tagged L and R respectively".into(),
            ));
        }
        if !(discount > T::zero()) || !discount.is_finite() {
            return Err(Error::InvalidInput("discount must be positive".into()));
        }
        for spec in [&left, &right] {
            if spec.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "side {} has an empty control sample",
                    spec.side
                )));
            }
            if spec.controls.iter().any(|a| !a.x1.is_finite() || !a.x2.is_finite()) {
                return Err(Error::InvalidInput("controls must be finite".into()));
            }
            spec.dynamics.check()?;
            spec.cost.check()?;
        }
        let mut inst = Self {
            left,
            right,
            profile,
            discount,
            report: None,
        };
        inst.report = Some(inst.compute_report());
        Ok(inst)
    }

    /// Eikonal instance with `count` unit controls plus the center on each side.
    pub fn eikonal(
        c_left: T,
        c_right: T,
        count: usize,
        profile: OscillationProfile<T>,
        discount: T,
    ) -> Result<Self> {
        Self::new(
            SideSpec::eikonal(Side::Left, count, c_left),
            SideSpec::eikonal(Side::Right, count, c_right),
            profile,
            discount,
        )
    }

    #[inline]
    pub fn side(&self, side: Side) -> &SideSpec<T> {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// Copy with every running cost raised by `s`.
    pub fn with_cost_shift(&self, s: T) -> Self {
        let mut left = self.left.clone();
        let mut right = self.right.clone();
        left.cost = left.cost.shifted(s);
        right.cost = right.cost.shifted(s);
        Self::new(left, right, self.profile.clone(), self.discount).expect("shift keeps validity")
    }

    pub fn with_profile(&self, profile: OscillationProfile<T>) -> Self {
        Self::new(self.left.clone(), self.right.clone(), profile, self.discount)
            .expect("profile swap keeps validity")
    }

    pub fn with_discount(&self, discount: T) -> Result<Self> {
        Self::new(self.left.clone(), self.right.clone(), self.profile.clone(), discount)
    }

    pub fn is_state_independent(&self) -> bool {
        self.left.cost.is_state_independent() && self.right.cost.is_state_independent()
    }

    fn cached(&self) -> &AssumptionReport<T> {
        self.report.as_ref().expect("report computed at construction")
    }

    pub fn m_f(&self) -> T {
        self.cached().m_f
    }

    pub fn m_ell(&self) -> T {
        self.cached().m_ell
    }

    pub fn delta0(&self) -> T {
        self.cached().delta0
    }

    pub fn delta0_tilde(&self) -> T {
        self.cached().delta0_tilde
    }

    /// Bound on the straightened speeds, `sqrt(2) (1 + ||g'||) M_f`.
    pub fn m_f_tilde(&self) -> T {
        self.profile.jacobian_bound() * self.m_f()
    }

    /// `f^i(x, a)`.
    pub fn dynamics(&self, side: Side, _x: Vec2<T>, a: ControlId) -> Result<Vec2<T>> {
        let spec = self.tagged(side, a)?;
        Ok(spec.velocity(a.index))
    }

    /// `l^i(x, a)`.
    pub fn cost(&self, side: Side, x: Vec2<T>, a: ControlId) -> Result<T> {
        let spec = self.tagged(side, a)?;
        Ok(spec.running_cost(x, a.index))
    }

    fn tagged(&self, side: Side, a: ControlId) -> Result<&SideSpec<T>> {
        if a.side != side {
            return Err(Error::UnknownControl {
                side,
                index: a.index,
            });
        }
        let spec = self.side(side);
        spec.check_index(a.index)?;
        Ok(spec)
    }

    /// `J~(z2/eps) f^i(G^{-1}(z), a)`.
    pub fn straightened_dynamics(
        &self,
        side: Side,
        z: Vec2<T>,
        a: ControlId,
        eps: T,
    ) -> Result<Vec2<T>> {
        let x = self.profile.unstraighten(z, eps);
        let f = self.dynamics(side, x, a)?;
        Ok(self.profile.shear_jacobian(z.x2 / eps).apply(f))
    }

    /// `l^i(G^{-1}(z), a)`.
    pub fn straightened_cost(&self, side: Side, z: Vec2<T>, a: ControlId, eps: T) -> Result<T> {
        let x = self.profile.unstraighten(z, eps);
        self.cost(side, x, a)
    }

    /// Freezed dynamics `J~(y2) f^i((0, z2), a)` of the cell problem.
    pub fn freezed_dynamics(&self, z2: T, y: Vec2<T>, a: ControlId) -> Result<Vec2<T>> {
        let wrong_side = match a.side {
            Side::Left => y.x1 > T::zero(),
            Side::Right => y.x1 < T::zero(),
        };
        if wrong_side {
            return Err(Error::SideMismatch {
                side: a.side,
                y1: y.x1.as_f64(),
            });
        }
        let f = self.dynamics(a.side, Vec2::new(T::zero(), z2), a)?;
        Ok(self.profile.shear_jacobian(y.x2).apply(f))
    }

    /// Freezed cost `f_2^i((0, z2), a) p2 + l^i((0, z2), a)`.
    pub fn freezed_cost(&self, z2: T, p2: T, a: ControlId) -> Result<T> {
        let x = Vec2::new(T::zero(), z2);
        let f = self.dynamics(a.side, x, a)?;
        let l = self.cost(a.side, x, a)?;
        Ok(f.x2 * p2 + l)
    }

    /// Computes the assumption constants without failing.
    pub fn assess_assumptions(&self) -> AssumptionReport<T> {
        self.cached().clone()
    }

    /// Like [`assess_assumptions`](Self::assess_assumptions) but rejects
    /// instances whose controllability radius vanishes.
    pub fn validate_assumptions(&self) -> Result<AssumptionReport<T>> {
        let report = self.assess_assumptions();
        if !(report.delta0 > T::zero()) {
            return Err(Error::DegenerateInstance {
                delta0: report.delta0.as_f64(),
            });
        }
        Ok(report)
    }

    fn compute_report(&self) -> AssumptionReport<T> {
        let spatial = spatial_sample::<T>();
        let interface = interface_sample(&self.profile);

        let mut m_f = T::zero();
        let mut m_ell = T::zero();
        // velocities do not depend on the state, so their Lipschitz constant is 0
        let l_f = T::zero();
        let mut l_ell = T::zero();
        let mut delta0 = T::infinity();
        let fd = T::lit(1e-6);
        for spec in [&self.left, &self.right] {
            let velocities: Vec<Vec2<T>> = (0..spec.len()).map(|k| spec.velocity(k)).collect();
            for v in &velocities {
                m_f = m_f.max(v.norm());
            }
            for x in spatial.iter().chain(interface.iter()) {
                for k in 0..spec.len() {
                    let l = spec.running_cost(*x, k);
                    m_ell = m_ell.max(l.abs());
                    for dir in [Vec2::e1(), Vec2::e2()] {
                        let dl = (spec.running_cost(*x + dir * fd, k) - l).abs() / fd;
                        l_ell = l_ell.max(dl);
                    }
                }
            }
            m_ell = m_ell.max(spec.cost.sup_abs(&spec.controls));
            l_ell = l_ell.max(spec.cost.lipschitz());
            if !interface.is_empty() {
                delta0 = delta0.min(inscribed_radius(&velocities));
            }
        }
        if !delta0.is_finite() {
            delta0 = T::zero();
        }
        let delta0 = delta0.max(T::zero());
        let delta0_tilde = delta0 / self.profile.jacobian_bound();
        let tol = T::lit(1e-12);
        let checks = AssumptionChecks {
            controls_nonempty: !self.left.is_empty() && !self.right.is_empty(),
            dynamics_bounded: m_f.is_finite(),
            cost_bounded: m_ell.is_finite(),
            controllable: delta0 > T::zero(),
            discount_positive: self.discount > T::zero(),
            constant_chain: delta0_tilde <= delta0 + tol && delta0 <= m_f + tol,
        };
        let passed = checks.controls_nonempty
            && checks.dynamics_bounded
            && checks.cost_bounded
            && checks.controllable
            && checks.discount_positive
            && checks.constant_chain;
        AssumptionReport {
            m_f,
            m_ell,
            l_f_estimate: l_f,
            l_ell_estimate: l_ell,
            delta0,
            delta0_tilde,
            sup_g: self.profile.sup_norm(),
            sup_g_prime: self.profile.sup_derivative(),
            passed,
            checks,
        }
    }
}

/// Grid of `[-2, 2]^2` with step 0.5 plus one far point.
fn spatial_sample<T: Real>() -> Vec<Vec2<T>> {
    let mut out = Vec::new();
    for i in 0..9 {
        for j in 0..9 {
            let x1 = T::lit(-2.0 + 0.5 * i as f64);
            let x2 = T::lit(-2.0 + 0.5 * j as f64);
            out.push(Vec2::new(x1, x2));
        }
    }
    out.push(Vec2::new(T::lit(50.0), T::zero()));
    out
}

/// 64 points per period on the interface at unit scale.
fn interface_sample<T: Real>(profile: &OscillationProfile<T>) -> Vec<Vec2<T>> {
    (0..64)
        .map(|k| {
            let t = T::from_usize_lossy(k) / T::lit(64.0);
            profile.unstraighten(Vec2::new(T::zero(), t), T::one())
        })
        .collect()
}

/// Convex hull in counter-clockwise order (Andrew's monotone chain).
pub fn convex_hull<T: Real>(points: &[Vec2<T>]) -> Vec<Vec2<T>> {
    let mut pts: Vec<Vec2<T>> = points.to_vec();
    pts.sort_by(|a, b| {
        a.x1.partial_cmp(&b.x1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.x2.partial_cmp(&b.x2).unwrap_or(std::cmp::Ordering::Equal))
    });
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: Vec2<T>, a: Vec2<T>, b: Vec2<T>| {
        (a.x1 - o.x1) * (b.x2 - o.x2) - (a.x2 - o.x2) * (b.x1 - o.x1)
    };
    let mut hull: Vec<Vec2<T>> = Vec::with_capacity(2 * pts.len());
    for p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], *p) <= T::zero() {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], *p) <= T::zero() {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Radius of the largest disc centered at the origin inside the convex hull
/// of `points`; zero when the origin is not interior.
pub fn inscribed_radius<T: Real>(points: &[Vec2<T>]) -> T {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return T::zero();
    }
    let mut r = T::infinity();
    for k in 0..hull.len() {
        let a = hull[k];
        let b = hull[(k + 1) % hull.len()];
        let edge = b - a;
        let len = edge.norm();
        if len.is_zero() {
            continue;
        }
        // signed distance of the origin to the edge line, positive inside
        let d = (edge.x1 * a.x2 - edge.x2 * a.x1) / len;
        let d = -d;
        r = r.min(d);
    }
    r.max(T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline() -> ProblemInstance<f64> {
        ProblemInstance::eikonal(1.0, 2.0, 64, OscillationProfile::sine(0.1), 1.0).unwrap()
    }

    #[test]
    fn preset_arithmetic() {
        let a = Vec2::new(0.6, 0.8);
        assert_eq!(DynamicsPreset::Eikonal.apply(a), a);
        let s = DynamicsPreset::Scaled { scale: 0.5 }.apply(Vec2::new(1.0, 0.0));
        assert_eq!(s, Vec2::new(0.5, 0.0));
        let d = DynamicsPreset::Drift { drift: [0.2, 0.0] }.apply(Vec2::new(0.0, 1.0));
        assert_eq!(d, Vec2::new(0.2, 1.0));
        let q = CostPreset::Quadratic { c: 1.0, kappa: 0.5 };
        assert!((q.eval(Vec2::<f64>::zero(), a) - 1.5).abs() < 1e-15);
        let b = CostPreset::Bump { c: 1.0, amplitude: 0.5 };
        assert_eq!(b.eval(Vec2::zero(), a), 1.5);
    }

    #[test]
    fn regular_polygon_radius() {
        let inst = baseline();
        let expected = (std::f64::consts::PI / 64.0).cos();
        assert!((inst.delta0() - expected).abs() < 1e-12);
        assert!((expected - 0.99880).abs() < 1e-5);
        let r = inst.validate_assumptions().unwrap();
        // padding of the sampled ||g'|| lowers the value slightly below the exact ratio
        let exact = expected / (std::f64::consts::SQRT_2 * (1.0 + 0.2 * std::f64::consts::PI));
        assert!((exact - 0.43373).abs() < 1e-5);
        assert!(r.delta0_tilde <= exact && exact - r.delta0_tilde < 2e-4);
        assert!(r.passed);
        assert_eq!(r.m_f, 1.0);
        assert_eq!(r.m_ell, 2.0);
    }

    #[test]
    fn single_control_is_degenerate() {
        let left = SideSpec::new(
            Side::Left,
            vec![Vec2::new(1.0, 0.0)],
            DynamicsPreset::Eikonal,
            CostPreset::Constant { c: 1.0 },
        );
        let right = SideSpec::eikonal(Side::Right, 16, 2.0);
        let inst = ProblemInstance::new(left, right, OscillationProfile::flat(), 1.0).unwrap();
        assert!(matches!(
            inst.validate_assumptions(),
            Err(Error::DegenerateInstance { .. })
        ));
        assert!(!inst.assess_assumptions().passed);
    }

    #[test]
    fn freezed_quantities() {
        let inst = baseline();
        let down = ControlId::new(Side::Left, 48);
        assert!((inst.left.controls[48] - Vec2::new(0.0, -1.0)).norm() < 1e-15);
        let v = inst.freezed_dynamics(0.0, Vec2::new(-0.5, 0.0), down).unwrap();
        assert!((v.x1 - inst.profile.g_prime(0.0)).abs() < 1e-15);
        assert!((v.x2 + 1.0).abs() < 1e-15);
        let c = inst.freezed_cost(0.0, 2.0, down).unwrap();
        assert!((c + 1.0).abs() < 1e-15);
        let err = inst
            .freezed_dynamics(0.0, Vec2::new(0.5, 0.0), down)
            .unwrap_err();
        assert!(matches!(err, Error::SideMismatch { .. }));
        // either side is allowed on the interface
        assert!(inst.freezed_dynamics(0.0, Vec2::new(0.0, 0.3), down).is_ok());
        let right = ControlId::new(Side::Right, 0);
        let e1 = inst.freezed_dynamics(0.0, Vec2::new(0.5, 0.37), right).unwrap();
        assert_eq!(e1, Vec2::new(1.0, 0.0));
    }

    #[test]
    fn unknown_control_is_rejected() {
        let inst = baseline();
        let bad = ControlId::new(Side::Right, 65);
        assert!(matches!(
            inst.dynamics(Side::Right, Vec2::zero(), bad),
            Err(Error::UnknownControl { .. })
        ));
        let wrong_tag = ControlId::new(Side::Left, 0);
        assert!(inst.cost(Side::Right, Vec2::zero(), wrong_tag).is_err());
    }

    #[test]
    fn straightened_shear_arithmetic() {
        let inst = baseline();
        let up = ControlId::new(Side::Right, 16);
        let v = inst
            .straightened_dynamics(Side::Right, Vec2::new(0.3, 0.0), up, 0.5)
            .unwrap();
        assert!((v.x1 + 0.2 * std::f64::consts::PI).abs() < 1e-12);
        assert!((v.x2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hull_radius_monotone_in_refinement() {
        let mut prev = 0.0;
        for n in [8usize, 16, 32, 64] {
            let r = inscribed_radius(&disc_controls::<f64>(n, true));
            assert!(r >= prev);
            assert!((r - (std::f64::consts::PI / n as f64).cos()).abs() < 1e-12);
            prev = r;
        }
    }

    #[test]
    fn origin_outside_hull_gives_zero() {
        let pts = vec![
            Vec2::new(1.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(1.5, 1.0),
        ];
        assert_eq!(inscribed_radius(&pts), 0.0);
    }

    #[test]
    fn rejects_bad_instances() {
        let l = SideSpec::<f64>::eikonal(Side::Left, 8, 1.0);
        let r = SideSpec::<f64>::eikonal(Side::Right, 8, 1.0);
        assert!(ProblemInstance::new(l.clone(), r.clone(), OscillationProfile::flat(), 0.0).is_err());
        assert!(ProblemInstance::new(r.clone(), l.clone(), OscillationProfile::flat(), 1.0).is_err());
        let mut empty = l.clone();
        empty.controls.clear();
        assert!(ProblemInstance::new(empty, r, OscillationProfile::flat(), 1.0).is_err());
    }

    #[test]
    fn bump_constants() {
        let mut inst = baseline();
        inst.right.cost = CostPreset::Bump { c: 1.0, amplitude: -0.5 };
        let inst = ProblemInstance::new(inst.left, inst.right, inst.profile, 1.0).unwrap();
        let r = inst.assess_assumptions();
        assert!(r.m_ell >= 1.0);
        let exact = 0.5 * (2.0f64 / std::f64::consts::E).sqrt();
        assert!(r.l_ell_estimate >= exact - 1e-9);
        assert!(!inst.is_state_independent());
    }
}

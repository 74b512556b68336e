//! Hamiltonians built from the sampled controls, tangential minima and the
//! slope solvers attached to them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Shear, Vec2};
use crate::model::{HalfSign, ProblemInstance, Side, SideSpec};
use crate::real::Real;

/// Slack on the sign constraint, absorbs rounding of sheared velocities.
pub const SIGN_SLACK: f64 = 1e-12;

/// Tolerance in the slope variable for golden-section and bisection searches.
pub const SLOPE_TOL: f64 = 1e-8;

/// Admissible undershoot of a level below the tangential minimum.
pub const LEVEL_TOL: f64 = 1e-8;

/// The breakpoints `p0^{-,i}` and `p0^{+,i}` of one side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThresholdSlopes<T> {
    pub p_minus: T,
    pub p_plus: T,
}

/// Which end of the slope set is requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Extremum {
    Min,
    Max,
}

impl Extremum {
    /// End of the slope set that defines `Pi-bar` on `side`.
    pub fn bar(side: Side) -> Self {
        match side {
            Side::Left => Extremum::Max,
            Side::Right => Extremum::Min,
        }
    }

    /// End of the slope set that defines `Pi-hat` on `side`.
    pub fn hat(side: Side) -> Self {
        match Self::bar(side) {
            Extremum::Min => Extremum::Max,
            Extremum::Max => Extremum::Min,
        }
    }
}

/// `(Pi-bar, Pi-hat)` on one side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlopePair<T> {
    pub bar: T,
    pub hat: T,
}

#[inline]
fn scan<T: Real>(
    spec: &SideSpec<T>,
    x: Vec2<T>,
    shear: Shear<T>,
    p: Vec2<T>,
    constraint: Option<T>,
) -> Option<T> {
    let slack = -T::lit(SIGN_SLACK);
    let mut best: Option<T> = None;
    for k in 0..spec.len() {
        let v = shear.apply(spec.velocity(k));
        if let Some(s) = constraint {
            if s * v.x1 < slack {
                continue;
            }
        }
        let val = -v.dot(p) - spec.running_cost(x, k);
        best = Some(match best {
            Some(b) if b >= val => b,
            _ => val,
        });
    }
    best
}

fn half_sign<T: Real>(side: Side, sign: HalfSign) -> T {
    sign.value::<T>() * side.sigma_real::<T>()
}

/// `H^i(x, p) = max_a (-p . f^i(x, a) - l^i(x, a))`.
pub fn hamiltonian<T: Real>(inst: &ProblemInstance<T>, side: Side, x: Vec2<T>, p: Vec2<T>) -> T {
    scan(inst.side(side), x, Shear::identity(), p, None).expect("control sample is non-empty")
}

/// `H^{+,i}` or `H^{-,i}`: the maximum restricted to controls with
/// `+-sigma^i f . e1 >= 0`.
pub fn half_hamiltonian<T: Real>(
    inst: &ProblemInstance<T>,
    side: Side,
    sign: HalfSign,
    z: Vec2<T>,
    p: Vec2<T>,
) -> Result<T> {
    scan(
        inst.side(side),
        z,
        Shear::identity(),
        p,
        Some(half_sign(side, sign)),
    )
    .ok_or(Error::EmptyConstraintSet)
}

/// `H_Gamma(z, pL, pR) = max(H^{+,L}(z, pL), H^{+,R}(z, pR))`.
pub fn interface_hamiltonian<T: Real>(
    inst: &ProblemInstance<T>,
    z: Vec2<T>,
    p_left: Vec2<T>,
    p_right: Vec2<T>,
) -> Result<T> {
    let l = half_hamiltonian(inst, Side::Left, HalfSign::Plus, z, p_left)?;
    let r = half_hamiltonian(inst, Side::Right, HalfSign::Plus, z, p_right)?;
    Ok(l.max(r))
}

/// Fast-variable Hamiltonian with the dynamics sheared by `J~(y2)`.
pub fn oscillatory_hamiltonian<T: Real>(
    inst: &ProblemInstance<T>,
    side: Side,
    z: Vec2<T>,
    p: Vec2<T>,
    y2: T,
) -> T {
    let shear = inst.profile.shear_jacobian(y2);
    scan(inst.side(side), z, shear, p, None).expect("control sample is non-empty")
}

/// Half version of [`oscillatory_hamiltonian`]; the sign constraint acts on
/// the sheared velocity.
pub fn oscillatory_half<T: Real>(
    inst: &ProblemInstance<T>,
    side: Side,
    sign: HalfSign,
    z: Vec2<T>,
    p: Vec2<T>,
    y2: T,
) -> Result<T> {
    let shear = inst.profile.shear_jacobian(y2);
    scan(inst.side(side), z, shear, p, Some(half_sign(side, sign)))
        .ok_or(Error::EmptyConstraintSet)
}

/// Hamiltonian of the straightened problem at scale `eps`.
pub fn eps_hamiltonian<T: Real>(
    inst: &ProblemInstance<T>,
    side: Side,
    z: Vec2<T>,
    p: Vec2<T>,
    eps: T,
) -> T {
    let x = inst.profile.unstraighten(z, eps);
    oscillatory_hamiltonian(inst, side, x, p, z.x2 / eps)
}

#[inline]
fn tangential_section<T: Real>(inst: &ProblemInstance<T>, side: Side, z2: T, p2: T, q: T) -> T {
    hamiltonian(
        inst,
        side,
        Vec2::new(T::zero(), z2),
        Vec2::new(q, p2),
    )
}

/// Half-width of the search interval in the normal slope, from coercivity.
pub fn slope_bracket<T: Real>(inst: &ProblemInstance<T>, p2: T) -> Result<T> {
    let delta0 = inst.delta0();
    if !(delta0 > T::zero()) {
        return Err(Error::BracketFailure(
            "controllability radius is not positive".into(),
        ));
    }
    Ok((inst.m_f() * p2.abs() + T::lit(2.0) * inst.m_ell()) / delta0 + T::one())
}

/// Minimum of `q -> H^i((0, z2), q e1 + p2 e2)` together with the interval of
/// minimizers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TangentialMinimum<T> {
    pub value: T,
    pub argmin_lo: T,
    pub argmin_hi: T,
}

fn level_slack<T: Real>(level: T) -> T {
    T::lit(1e-11) * (T::one() + level.abs())
}

/// Locates the point where a monotone predicate switches from false to true
/// on `[lo, hi]`, assuming `pred(lo)` is false and `pred(hi)` true.
fn bisect<T: Real>(mut lo: T, mut hi: T, pred: impl Fn(T) -> bool) -> T {
    let tol = T::lit(SLOPE_TOL) * T::lit(0.25);
    let two = T::lit(2.0);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = (lo + hi) / two;
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo + hi) / two
}

/// Full description of the tangential minimum, see [`tangential_min`].
pub fn tangential_min_detail<T: Real>(
    inst: &ProblemInstance<T>,
    side: Side,
    z2: T,
    p2: T,
) -> Result<TangentialMinimum<T>> {
    let b = slope_bracket(inst, p2)?;
    let h = |q: T| tangential_section(inst, side, z2, p2, q);
    let inv_phi = T::lit(0.618_033_988_749_894_8);
    let (mut a, mut c) = (-b, b);
    let mut x1 = c - inv_phi * (c - a);
    let mut x2 = a + inv_phi * (c - a);
    let (mut f1, mut f2) = (h(x1), h(x2));
    // the section is piecewise affine, so the value error is at most M_f times this
    let tol = T::lit(1e-13) * b.max(T::one());
    while c - a > tol {
        if f1 <= f2 {
            c = x2;
            x2 = x1;
            f2 = f1;
            x1 = c - inv_phi * (c - a);
            f1 = h(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (c - a);
            f2 = h(x2);
        }
    }
    let q_star = (a + c) / T::lit(2.0);
    let value = h(q_star).min(f1).min(f2);
    let slack = level_slack(value);
    if h(-b) <= value + slack || h(b) <= value + slack {
        return Err(Error::BracketFailure(format!(
            "tangential section is not coercive on [-{}, {}]",
            b.as_f64(),
            b.as_f64()
        )));
    }
    let above = |q: T| h(q) > value + slack;
    // above is true at -b and false at q_star, so flip it for the left end
    let lo = bisect(-b, q_star, |q| !above(q));
    let hi = bisect(q_star, b, above);
    Ok(TangentialMinimum {
        value,
        argmin_lo: lo.min(q_star),
        argmin_hi: hi.max(q_star),
    })
}

/// `E0^i(z2, p2) = min_q H^i((0, z2), q e1 + p2 e2)`.
pub fn tangential_min<T: Real>(inst: &ProblemInstance<T>, side: Side, z2: T, p2: T) -> Result<T> {
    Ok(tangential_min_detail(inst, side, z2, p2)?.value)
}

/// `E0(z2, p2) = max(E0^L, E0^R)`.
pub fn tangential_min_both<T: Real>(inst: &ProblemInstance<T>, z2: T, p2: T) -> Result<T> {
    let l = tangential_min(inst, Side::Left, z2, p2)?;
    let r = tangential_min(inst, Side::Right, z2, p2)?;
    Ok(l.max(r))
}

fn half_section<T: Real>(
    inst: &ProblemInstance<T>,
    side: Side,
    sign: HalfSign,
    z2: T,
    p2: T,
    q: T,
) -> Result<T> {
    half_hamiltonian(
        inst,
        side,
        sign,
        Vec2::new(T::zero(), z2),
        Vec2::new(q, p2),
    )
}

fn threshold_from<T: Real>(
    inst: &ProblemInstance<T>,
    side: Side,
    z2: T,
    p2: T,
    e0: T,
    b: T,
) -> Result<ThresholdSlopes<T>> {
    let slack = level_slack(e0);
    let mut out = [T::zero(); 2];
    for (slot, sign) in [HalfSign::Minus, HalfSign::Plus].into_iter().enumerate() {
        // the branch is nondecreasing in q when sign * sigma = -1
        let increasing = half_sign::<T>(side, sign) < T::zero();
        let active = |q: T| -> Result<bool> {
            Ok(half_section(inst, side, sign, z2, p2, q)? > e0 + slack)
        };
        let (flat_end, active_end) = if increasing { (-b, b) } else { (b, -b) };
        if active(flat_end)? || !active(active_end)? {
            return Err(Error::BracketFailure(format!(
                "no threshold for H^{{{},{}}} on [-{}, {}]",
                if sign == HalfSign::Plus { "+" } else { "-" },
                side,
                b.as_f64(),
                b.as_f64()
            )));
        }
        let p = if increasing {
            bisect(-b, b, |q| active(q).unwrap_or(true))
        } else {
            bisect(-b, b, |q| !active(q).unwrap_or(true))
        };
        out[slot] = p;
    }
    Ok(ThresholdSlopes {
        p_minus: out[0],
        p_plus: out[1],
    })
}

/// The breakpoints `p0^{-,i}`, `p0^{+,i}` where the half-Hamiltonians leave
/// the flat value `E0^i`.
pub fn threshold_slopes<T: Real>(
    inst: &ProblemInstance<T>,
    side: Side,
    z2: T,
    p2: T,
) -> Result<ThresholdSlopes<T>> {
    let e0 = tangential_min(inst, side, z2, p2)?;
    let b = slope_bracket(inst, p2)?;
    threshold_from(inst, side, z2, p2, e0, b)
}

/// One end of `{p : H^i = H^{-,i} = level}` on the tangential section.
pub fn solve_slope<T: Real>(
    inst: &ProblemInstance<T>,
    side: Side,
    z2: T,
    p2: T,
    level: T,
    which: Extremum,
) -> Result<T> {
    let pair = slope_set(inst, side, z2, p2, level)?;
    Ok(match which {
        Extremum::Min => pair.0,
        Extremum::Max => pair.1,
    })
}

/// `(Pi-bar, Pi-hat)` of `side` at `level`.
pub fn slope_pair<T: Real>(
    inst: &ProblemInstance<T>,
    side: Side,
    z2: T,
    p2: T,
    level: T,
) -> Result<SlopePair<T>> {
    let (lo, hi) = slope_set(inst, side, z2, p2, level)?;
    Ok(match side {
        Side::Right => SlopePair { bar: lo, hat: hi },
        Side::Left => SlopePair { bar: hi, hat: lo },
    })
}

/// Smallest and largest element of the slope set.
fn slope_set<T: Real>(
    inst: &ProblemInstance<T>,
    side: Side,
    z2: T,
    p2: T,
    level: T,
) -> Result<(T, T)> {
    let min = tangential_min_detail(inst, side, z2, p2)?;
    if level < min.value - T::lit(LEVEL_TOL) {
        return Err(Error::LevelBelowMinimum {
            level: level.as_f64(),
            minimum: min.value.as_f64(),
        });
    }
    let b = slope_bracket(inst, p2)?;
    let thresholds = threshold_from(inst, side, z2, p2, min.value, b)?;
    let h = |q: T| tangential_section(inst, side, z2, p2, q);
    if level <= min.value + T::lit(LEVEL_TOL) {
        // flat bottom: the part of the argmin where H^{-,i} is still flat
        return Ok(match side {
            Side::Right => (min.argmin_lo, min.argmin_hi.min(thresholds.p_minus)),
            Side::Left => (min.argmin_lo.max(thresholds.p_minus), min.argmin_hi),
        });
    }
    // above the minimum the set is a single point on the active branch
    let mut far = b;
    let p = match side {
        Side::Right => {
            while h(far) < level {
                far = far * T::lit(2.0);
                if !far.is_finite() {
                    return Err(Error::BracketFailure("level out of reach".into()));
                }
            }
            let start = thresholds.p_minus.max(min.argmin_hi);
            bisect(start, far, |q| h(q) >= level)
        }
        Side::Left => {
            while h(-far) < level {
                far = far * T::lit(2.0);
                if !far.is_finite() {
                    return Err(Error::BracketFailure("level out of reach".into()));
                }
            }
            let end = thresholds.p_minus.min(min.argmin_lo);
            bisect(-far, end, |q| h(q) < level)
        }
    };
    Ok((p, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OscillationProfile;

    fn baseline() -> ProblemInstance<f64> {
        ProblemInstance::eikonal(1.0, 2.0, 64, OscillationProfile::sine(0.1), 1.0).unwrap()
    }

    fn v(a: f64, b: f64) -> Vec2<f64> {
        Vec2::new(a, b)
    }

    #[test]
    fn full_hamiltonian_matches_polygon_support() {
        let inst = baseline();
        let h = hamiltonian(&inst, Side::Right, v(0.0, 0.0), v(3.0, 4.0));
        // support function of the 64-gon in direction (3,4)/5
        let best = (0..64)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 64.0;
                -(3.0 * t.cos() + 4.0 * t.sin())
            })
            .fold(0.0f64, f64::max);
        assert!((h - (best - 2.0)).abs() < 1e-12);
        assert!((h - 3.0).abs() < 5e-3);
        assert_eq!(hamiltonian(&inst, Side::Left, v(0.0, 0.0), v(0.0, 0.0)), -1.0);
    }

    #[test]
    fn half_hamiltonians() {
        let inst = baseline();
        let z = v(0.0, 0.3);
        let a = half_hamiltonian(&inst, Side::Right, HalfSign::Plus, z, v(-3.0, 4.0)).unwrap();
        assert!((a - 3.0).abs() < 5e-3);
        let b = half_hamiltonian(&inst, Side::Right, HalfSign::Plus, z, v(3.0, 4.0)).unwrap();
        assert!((b - 2.0).abs() < 1e-12);
        let c = interface_hamiltonian(&inst, z, v(-3.0, 4.0), v(3.0, 4.0)).unwrap();
        // the left entering set keeps a1 <= 0; for pL = (-3,4) the optimum a = (-3/5,-4/5)
        // is blocked, the best admissible value is |(0,4)| - 1 = 3
        assert!((c - 3.0).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_closed_form() {
        let inst = ProblemInstance::eikonal(1.0, 2.0, 4096, OscillationProfile::sine(0.1), 1.0)
            .unwrap();
        let h = oscillatory_hamiltonian(&inst, Side::Right, v(0.0, 0.0), v(1.0, 0.0), 0.0);
        let gp = 0.2 * std::f64::consts::PI;
        let exact = (1.0 + gp * gp).sqrt() - 2.0;
        assert!((h - exact).abs() < 1e-6);
        assert!((exact + 0.81899).abs() < 1e-5);
    }

    #[test]
    fn tangential_minimum_eikonal() {
        let inst = baseline();
        let e = tangential_min(&inst, Side::Right, 0.0, 0.0).unwrap();
        assert!((e + 2.0).abs() < 1e-10, "{e}");
        let e = tangential_min(&inst, Side::Right, 0.0, 2.0).unwrap();
        assert!(e.abs() < 1e-10);
        let both = tangential_min_both(&inst, 0.0, 2.0).unwrap();
        assert!((both - 1.0).abs() < 1e-10);
    }

    #[test]
    fn thresholds_eikonal() {
        let inst = baseline();
        let r = threshold_slopes(&inst, Side::Right, 0.0, 0.0).unwrap();
        assert!(r.p_minus.abs() < 1e-8 && r.p_plus.abs() < 1e-8);
        let l = threshold_slopes(&inst, Side::Left, 0.0, 0.0).unwrap();
        assert!(l.p_minus.abs() < 1e-8 && l.p_plus.abs() < 1e-8);
        let r = threshold_slopes(&inst, Side::Right, 0.0, 2.0).unwrap();
        assert!(r.p_plus <= r.p_minus);
        let l = threshold_slopes(&inst, Side::Left, 0.0, 2.0).unwrap();
        assert!(l.p_minus <= l.p_plus);
    }

    #[test]
    fn slopes_eikonal() {
        let inst = baseline();
        let bar = solve_slope(&inst, Side::Right, 0.0, 0.0, 1.0, Extremum::Min).unwrap();
        let hat = solve_slope(&inst, Side::Right, 0.0, 0.0, 1.0, Extremum::Max).unwrap();
        assert!((bar - 3.0).abs() < 1e-7);
        assert_eq!(bar, hat);
        let l = slope_pair(&inst, Side::Left, 0.0, 0.0, 1.0).unwrap();
        assert!((l.bar + 2.0).abs() < 1e-7);
        let flat = slope_pair(&inst, Side::Right, 0.0, 2.0, 0.0).unwrap();
        assert!(flat.bar <= flat.hat);
        assert!(flat.bar.is_finite() && flat.hat.is_finite());
        let err = solve_slope(&inst, Side::Right, 0.0, 0.0, -2.5, Extremum::Min).unwrap_err();
        assert!(matches!(err, Error::LevelBelowMinimum { .. }));
    }

    #[test]
    fn empty_constraint_set() {
        let left = SideSpec::new(
            Side::Left,
            vec![v(1.0, 0.0)],
            crate::model::DynamicsPreset::Eikonal,
            crate::model::CostPreset::Constant { c: 1.0 },
        );
        let inst = ProblemInstance::new(
            left,
            SideSpec::eikonal(Side::Right, 8, 1.0),
            OscillationProfile::flat(),
            1.0,
        )
        .unwrap();
        let err = half_hamiltonian(&inst, Side::Left, HalfSign::Plus, v(0.0, 0.0), v(0.0, 0.0));
        assert_eq!(err, Err(Error::EmptyConstraintSet));
        assert!(matches!(
            tangential_min(&inst, Side::Left, 0.0, 0.0),
            Err(Error::BracketFailure(_))
        ));
    }
}

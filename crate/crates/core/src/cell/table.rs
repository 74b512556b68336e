use log::info;
use rayon::prelude::*;
use serde::Serialize;

use super::ergodic::{effective_e, EffectiveSample};
use super::CellOptions;
use crate::error::{Error, Result};
use crate::io::{csv_row, fmt_real, to_json};
use crate::model::ProblemInstance;
use crate::real::Real;

/// Affine tails of `p2 -> E(z2, p2)`: `E = f_hat p2 + l_hat` for
/// `p2 >= k_hat` and `E = -f_check p2 + l_check` for `p2 <= -k_check`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailFit<T> {
    pub f_hat: Option<T>,
    pub ell_hat: Option<T>,
    pub k_hat: Option<T>,
    pub f_check: Option<T>,
    pub ell_check: Option<T>,
    pub k_check: Option<T>,
}

/// Sampled effective tangential Hamiltonian.
#[derive(Clone, Debug, Serialize)]
pub struct EffectiveTable<T> {
    pub z2_grid: Vec<T>,
    pub p2_grid: Vec<T>,
    /// `values[z][p] = E(z2_grid[z], p2_grid[p])`, replaced by `E_K` after
    /// [`ek_modify`].
    pub values: Vec<Vec<T>>,
    pub samples: Vec<Vec<EffectiveSample<T>>>,
    pub tails: Vec<TailFit<T>>,
    /// `K` once the table has been truncated.
    pub truncation: Option<T>,
    pub m_f: T,
    pub m_ell: T,
    pub delta0: T,
    pub options: CellOptions,
}

fn check_axis<T: Real>(axis: &[T], name: &str) -> Result<()> {
    if axis.is_empty() || axis.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{name} axis must be non-empty and finite")));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(format!("{name} axis must increase")));
    }
    Ok(())
}

/// Least-squares line through the points, `(slope, intercept)`.
pub(crate) fn fit_affine<T: Real>(points: &[(T, T)]) -> Option<(T, T)> {
    if points.len() < 2 {
        return None;
    }
    let n = T::from_usize_lossy(points.len());
    let (mut sx, mut sy, mut sxx, mut sxy) = (T::zero(), T::zero(), T::zero(), T::zero());
    for &(x, y) in points {
        sx = sx + x;
        sy = sy + y;
        sxx = sxx + x * x;
        sxy = sxy + x * y;
    }
    let denom = n * sxx - sx * sx;
    if !(denom > T::zero()) {
        return None;
    }
    let slope = (n * sxy - sx * sy) / denom;
    Some((slope, (sy - slope * sx) / n))
}

/// Deviation of `E` at interior node `k` from the chord of its neighbours.
fn bend<T: Real>(p: &[T], e: &[T], k: usize) -> T {
    let (a, b, c) = (p[k - 1], p[k], p[k + 1]);
    let t = (b - a) / (c - a);
    (e[k] - (e[k - 1] + t * (e[k + 1] - e[k - 1]))).abs()
}

fn fit_tails<T: Real>(p: &[T], e: &[T], tol: T) -> TailFit<T> {
    let n = p.len();
    let mut out = TailFit {
        f_hat: None,
        ell_hat: None,
        k_hat: None,
        f_check: None,
        ell_check: None,
        k_check: None,
    };
    if n < 2 {
        return out;
    }
    // right tail: extend inwards while three consecutive nodes stay collinear
    let mut start = n - 2;
    while start >= 1 && p[start - 1] >= T::zero() && bend(p, e, start) <= tol {
        start -= 1;
    }
    if p[start] >= T::zero() {
        let pts: Vec<(T, T)> = (start..n).map(|k| (p[k], e[k])).collect();
        if let Some((s, c)) = fit_affine(&pts) {
            out.f_hat = Some(s);
            out.ell_hat = Some(c);
            out.k_hat = Some(p[start]);
        }
    }
    let mut end = 1;
    while end + 1 < n && p[end + 1] <= T::zero() && bend(p, e, end) <= tol {
        end += 1;
    }
    if p[end] <= T::zero() {
        let pts: Vec<(T, T)> = (0..=end).map(|k| (p[k], e[k])).collect();
        if let Some((s, c)) = fit_affine(&pts) {
            out.f_check = Some(-s);
            out.ell_check = Some(c);
            out.k_check = Some(T::zero() - p[end]);
        }
    }
    out
}

/// Computes `E` on the product grid. Samples are independent and run in
/// parallel; the table does not depend on their completion order. For
/// state-independent instances every `z2` row is the same and is computed once.
pub fn build_effective_table<T: Real>(
    inst: &ProblemInstance<T>,
    z2_grid: &[T],
    p2_grid: &[T],
    opts: &CellOptions,
) -> Result<EffectiveTable<T>> {
    check_axis(z2_grid, "z2")?;
    check_axis(p2_grid, "p2")?;
    let rows_to_solve: Vec<T> = if inst.is_state_independent() {
        vec![z2_grid[0]]
    } else {
        z2_grid.to_vec()
    };
    let jobs: Vec<(usize, usize)> = (0..rows_to_solve.len())
        .flat_map(|r| (0..p2_grid.len()).map(move |c| (r, c)))
        .collect();
    info!(
        "building effective table: {} cell limits on {} worker threads",
        jobs.len(),
        rayon::current_num_threads()
    );
    let solved: Vec<EffectiveSample<T>> = jobs
        .par_iter()
        .map(|&(r, c)| effective_e(inst, rows_to_solve[r], p2_grid[c], opts))
        .collect::<Result<Vec<_>>>()?;
    let mut samples: Vec<Vec<EffectiveSample<T>>> = Vec::with_capacity(z2_grid.len());
    for (zi, &z2) in z2_grid.iter().enumerate() {
        let r = if rows_to_solve.len() == 1 { 0 } else { zi };
        let row: Vec<EffectiveSample<T>> = (0..p2_grid.len())
            .map(|c| {
                let mut s = solved[r * p2_grid.len() + c].clone();
                s.z2 = z2;
                s
            })
            .collect();
        samples.push(row);
    }
    let values: Vec<Vec<T>> = samples
        .iter()
        .map(|row| row.iter().map(|s| s.e).collect())
        .collect();
    let tol = T::lit(10.0 * opts.ergodic_tol);
    let tails = values.iter().map(|row| fit_tails(p2_grid, row, tol)).collect();
    Ok(EffectiveTable {
        z2_grid: z2_grid.to_vec(),
        p2_grid: p2_grid.to_vec(),
        values,
        samples,
        tails,
        truncation: None,
        m_f: inst.m_f(),
        m_ell: inst.m_ell(),
        delta0: inst.delta0(),
        options: opts.clone(),
    })
}

/// Piecewise-linear interpolation of one row; `None` outside the axis.
fn interp_row<T: Real>(p: &[T], e: &[T], q: T) -> Option<T> {
    let n = p.len();
    if q < p[0] || q > p[n - 1] {
        return None;
    }
    if n == 1 {
        return Some(e[0]);
    }
    let k = match p.iter().position(|&x| x >= q) {
        Some(0) => return Some(e[0]),
        Some(k) => k,
        None => return Some(e[n - 1]),
    };
    if p[k] == q {
        return Some(e[k]);
    }
    let t = (q - p[k - 1]) / (p[k] - p[k - 1]);
    Some(e[k - 1] + t * (e[k] - e[k - 1]))
}

/// Replaces `E` by `E_K`: unchanged on `|p2| <= K`, continued with slope
/// `+-M_f` outside.
pub fn ek_modify<T: Real>(table: &EffectiveTable<T>, k: T) -> Result<EffectiveTable<T>> {
    if !(k > T::zero()) {
        return Err(Error::InvalidInput("truncation level must be positive".into()));
    }
    let p = &table.p2_grid;
    let mut out = table.clone();
    for (z, row) in table.values.iter().enumerate() {
        let at_pos = interp_row(p, row, k).ok_or_else(|| Error::TableCoverage {
            what: format!("p2 = {}", k.as_f64()),
        })?;
        let at_neg = interp_row(p, row, -k).ok_or_else(|| Error::TableCoverage {
            what: format!("p2 = {}", (-k).as_f64()),
        })?;
        for (c, &q) in p.iter().enumerate() {
            if q > k {
                out.values[z][c] = at_pos + table.m_f * (q - k);
            } else if q < -k {
                out.values[z][c] = at_neg - table.m_f * (q + k);
            }
        }
    }
    out.truncation = Some(k);
    Ok(out)
}

impl<T: Real> EffectiveTable<T> {
    pub fn is_z2_independent(&self) -> bool {
        self.z2_grid.len() == 1
    }

    /// Row index pair and weight for `z2`.
    fn locate(&self, z2: T) -> Result<(usize, usize, T)> {
        let z = &self.z2_grid;
        if z.len() == 1 {
            return Ok((0, 0, T::zero()));
        }
        let slack = T::lit(1e-12);
        if z2 < z[0] - slack || z2 > z[z.len() - 1] + slack {
            return Err(Error::TableCoverage {
                what: format!("z2 = {}", z2.as_f64()),
            });
        }
        let k = z.iter().position(|&x| x >= z2).unwrap_or(z.len() - 1).max(1);
        let t = ((z2 - z[k - 1]) / (z[k] - z[k - 1])).max(T::zero()).min(T::one());
        Ok((k - 1, k, t))
    }

    /// `E_K(z2, p2)` (or `E` before truncation) by interpolation.
    pub fn value(&self, z2: T, p2: T) -> Result<T> {
        let (a, b, t) = self.locate(z2)?;
        let row = |r: usize| -> Result<T> {
            let p = &self.p2_grid;
            let e = &self.values[r];
            if let Some(k) = self.truncation {
                if p2 > k {
                    let base = interp_row(p, e, k).expect("checked by ek_modify");
                    return Ok(base + self.m_f * (p2 - k));
                }
                if p2 < -k {
                    let base = interp_row(p, e, -k).expect("checked by ek_modify");
                    return Ok(base - self.m_f * (p2 + k));
                }
            }
            interp_row(p, e, p2).ok_or_else(|| Error::TableCoverage {
                what: format!("p2 = {}", p2.as_f64()),
            })
        };
        let va = row(a)?;
        if a == b {
            return Ok(va);
        }
        Ok(va + t * (row(b)? - va))
    }

    fn row_star(&self, r: usize, k: T, b: T) -> T {
        let p = &self.p2_grid;
        let e = &self.values[r];
        let mut best = T::neg_infinity();
        for (c, &q) in p.iter().enumerate() {
            if q.abs() <= k {
                best = best.max(b * q - e[c]);
            }
        }
        for q in [k, -k] {
            if let Some(v) = interp_row(p, e, q) {
                best = best.max(b * q - v);
            }
        }
        best
    }

    /// CSV with header `z2,p2,E,Pi_bar_L,Pi_hat_L,Pi_bar_R,Pi_hat_R,converged`.
    pub fn to_csv(&self) -> String {
        let mut out = csv_row([
            "z2", "p2", "E", "Pi_bar_L", "Pi_hat_L", "Pi_bar_R", "Pi_hat_R", "converged",
        ]);
        for (z, row) in self.samples.iter().enumerate() {
            for (c, s) in row.iter().enumerate() {
                out.push_str(&csv_row([
                    fmt_real(self.z2_grid[z]),
                    fmt_real(self.p2_grid[c]),
                    fmt_real(self.values[z][c]),
                    fmt_real(s.slopes_left.bar),
                    fmt_real(s.slopes_left.hat),
                    fmt_real(s.slopes_right.bar),
                    fmt_real(s.slopes_right.hat),
                    s.converged.to_string(),
                ]));
            }
        }
        out
    }

    /// JSON sidecar with tails, truncation level and solver metadata.
    pub fn sidecar_json(&self) -> String {
        #[derive(Serialize)]
        struct Sidecar<'a, T> {
            z2_grid: &'a [T],
            p2_grid: &'a [T],
            tails: &'a [TailFit<T>],
            truncation: Option<T>,
            m_f: T,
            m_ell: T,
            delta0: T,
            options: &'a CellOptions,
            rho_traces: Vec<Vec<Vec<(T, T)>>>,
            e0: Vec<Vec<T>>,
        }
        let rho_traces = self
            .samples
            .iter()
            .map(|row| row.iter().map(|s| s.rho_trace.clone()).collect())
            .collect();
        let e0 = self
            .samples
            .iter()
            .map(|row| row.iter().map(|s| s.e0).collect())
            .collect();
        to_json(&Sidecar {
            z2_grid: &self.z2_grid,
            p2_grid: &self.p2_grid,
            tails: &self.tails,
            truncation: self.truncation,
            m_f: self.m_f,
            m_ell: self.m_ell,
            delta0: self.delta0,
            options: &self.options,
            rho_traces,
            e0,
        })
    }
}

/// `E_K*(z2, b) = max over sampled p2 in [-K, K] of (b p2 - E_K(z2, p2))`.
pub fn fenchel_star<T: Real>(table: &EffectiveTable<T>, z2: T, b: T) -> Result<T> {
    let k = table
        .truncation
        .ok_or_else(|| Error::InvalidInput("table has not been truncated".into()))?;
    let bound = table.m_f;
    if b.abs() > bound * (T::one() + T::lit(1e-12)) {
        return Err(Error::OutOfDomain {
            b: b.as_f64(),
            bound: bound.as_f64(),
        });
    }
    let (ra, rb, t) = table.locate(z2)?;
    let sa = table.row_star(ra, k, b);
    if ra == rb {
        return Ok(sa);
    }
    let sb = table.row_star(rb, k, b);
    Ok(sa + t * (sb - sa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::SlopePair;

    fn synthetic(p: Vec<f64>, f: impl Fn(f64) -> f64) -> EffectiveTable<f64> {
        let e: Vec<f64> = p.iter().map(|&q| f(q)).collect();
        let pair = SlopePair { bar: 0.0, hat: 0.0 };
        let samples = vec![p
            .iter()
            .zip(&e)
            .map(|(&q, &v)| EffectiveSample {
                z2: 0.0,
                p2: q,
                e: v,
                e0: v,
                rho_trace: vec![(1.0, v)],
                slopes_left: pair,
                slopes_right: pair,
                converged: true,
            })
            .collect()];
        EffectiveTable {
            z2_grid: vec![0.0],
            tails: vec![fit_tails(&p, &e, 1e-2)],
            p2_grid: p,
            values: vec![e],
            samples,
            truncation: None,
            m_f: 1.0,
            m_ell: 2.0,
            delta0: (std::f64::consts::PI / 64.0).cos(),
            options: CellOptions::default(),
        }
    }

    fn axis() -> Vec<f64> {
        (-24..=24).map(|k| 0.5 * k as f64).collect()
    }

    #[test]
    fn eikonal_tails() {
        let t = synthetic(axis(), |q| q.abs() - 1.0);
        let tail = t.tails[0];
        assert!((tail.f_hat.unwrap() - 1.0).abs() < 1e-12);
        assert!((tail.f_check.unwrap() - 1.0).abs() < 1e-12);
        assert!((tail.ell_hat.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(tail.k_hat.unwrap(), 0.0);
    }

    #[test]
    fn truncation_keeps_inner_values() {
        let t = synthetic(axis(), |q| 0.5 * q * q.abs() / 12.0 + 0.2 * q.abs() - 1.0);
        let k = ek_modify(&t, 10.0).unwrap();
        for (c, &q) in t.p2_grid.iter().enumerate() {
            if q.abs() <= 10.0 {
                assert_eq!(k.values[0][c].to_bits(), t.values[0][c].to_bits());
            }
        }
        let e10 = t.values[0][44];
        assert!((k.value(0.0, 11.0).unwrap() - (e10 + 1.0)).abs() < 1e-12);
        // eikonal tails already have slope 1
        let eik = synthetic(axis(), |q| q.abs() - 1.0);
        let eik_k = ek_modify(&eik, 10.0).unwrap();
        assert_eq!(eik_k.values, eik.values);
    }

    #[test]
    fn star_of_eikonal() {
        let t = ek_modify(&synthetic(axis(), |q| q.abs() - 1.0), 10.0).unwrap();
        assert!((fenchel_star(&t, 0.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((fenchel_star(&t, 0.3, 0.5).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            fenchel_star(&t, 0.0, 1.5),
            Err(Error::OutOfDomain { .. })
        ));
        let raw = synthetic(axis(), |q| q.abs() - 1.0);
        assert!(fenchel_star(&raw, 0.0, 0.0).is_err());
    }

    #[test]
    fn coverage_is_checked() {
        let t = synthetic(vec![-1.0, 0.0, 1.0], |q| q.abs());
        assert!(matches!(ek_modify(&t, 2.0), Err(Error::TableCoverage { .. })));
    }

    #[test]
    fn csv_header() {
        let t = synthetic(vec![-1.0, 0.0, 1.0], |q| q.abs());
        let csv = t.to_csv();
        assert!(csv.starts_with("z2,p2,E,Pi_bar_L,Pi_hat_L,Pi_bar_R,Pi_hat_R,converged\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}

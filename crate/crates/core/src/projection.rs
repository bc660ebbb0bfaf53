//! Exact Euclidean projections onto boxes, orthants, a box cut by one
//! halfspace, and general polyhedra.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::game_model::{Halfspace, LocalSetDesc};
use crate::linalg::{dot, norm2};

/// A point to project together with its target set.
#[derive(Debug, Clone)]
pub struct ProjectionProblem<'a> {
    pub point: &'a [f64],
    pub set: &'a LocalSetDesc,
}

impl ProjectionProblem<'_> {
    pub fn solve(&self) -> Result<Vec<f64>> {
        self.set.project(self.point)
    }
}

pub(crate) fn clamp_into(y: &[f64], lower: &[f64], upper: &[f64], out: &mut [f64]) {
    for j in 0..y.len() {
        out[j] = y[j].max(lower[j]).min(upper[j]);
    }
}

pub fn project_box(y: &[f64], lower: &[f64], upper: &[f64]) -> Result<Vec<f64>> {
    check_len(y.len(), lower.len())?;
    check_len(y.len(), upper.len())?;
    if let Some(index) = lower.iter().zip(upper).position(|(l, u)| l > u) {
        return Err(Error::InvalidBox { index });
    }
    let mut out = vec![0.0; y.len()];
    clamp_into(y, lower, upper, &mut out);
    Ok(out)
}

pub fn project_nonneg(y: &[f64]) -> Vec<f64> {
    y.iter().map(|v| v.max(0.0)).collect()
}

/// Closed-form projection onto one halfspace `{x : aᵀx ≤ b}`.
pub fn project_halfspace(y: &[f64], h: &Halfspace) -> Vec<f64> {
    let mut out = y.to_vec();
    halfspace_in_place(&mut out, h);
    out
}

fn halfspace_in_place(x: &mut [f64], h: &Halfspace) {
    let nn = dot(&h.normal, &h.normal);
    let excess = dot(&h.normal, x) - h.offset;
    if excess > 0.0 && nn > 0.0 {
        let t = excess / nn;
        for (xi, ai) in x.iter_mut().zip(&h.normal) {
            *xi -= t * ai;
        }
    }
}

/// Projection onto `{lower ≤ x ≤ upper, aᵀx ≤ b}`.
///
/// The solution is `clamp(y − μa)` with the smallest `μ ≥ 0` meeting the
/// halfspace.  `aᵀclamp(y − μa)` is piecewise linear and nonincreasing in
/// `μ`, so `μ` is found by scanning its breakpoints and solving exactly on
/// the bracketing piece.
pub fn project_box_halfspace(
    y: &[f64],
    lower: &[f64],
    upper: &[f64],
    a: &[f64],
    b: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    check_len(y.len(), lower.len())?;
    check_len(y.len(), upper.len())?;
    check_len(y.len(), a.len())?;
    if let Some(index) = lower.iter().zip(upper).position(|(l, u)| l > u) {
        return Err(Error::InvalidBox { index });
    }
    let mut out = vec![0.0; y.len()];
    project_box_halfspace_into(y, lower, upper, a, b, tol, &mut out)?;
    Ok(out)
}

pub(crate) fn project_box_halfspace_into(
    y: &[f64],
    lower: &[f64],
    upper: &[f64],
    a: &[f64],
    b: f64,
    tol: f64,
    out: &mut [f64],
) -> Result<()> {
    clamp_into(y, lower, upper, out);
    if dot(a, out) <= b {
        return Ok(());
    }
    let amin: f64 = a
        .iter()
        .zip(lower.iter().zip(upper))
        .map(|(ai, (l, u))| (ai * l).min(ai * u))
        .sum();
    let scale = 1.0 + b.abs() + norm2(a) * norm2(y);
    if amin > b + 1e-14 * scale {
        return Err(Error::InfeasibleSet);
    }
    let eval = |mu: f64, out: &mut [f64]| {
        for j in 0..y.len() {
            out[j] = (y[j] - mu * a[j]).max(lower[j]).min(upper[j]);
        }
        dot(a, out) - b
    };
    let mut breaks: Vec<f64> = Vec::with_capacity(2 * y.len());
    for j in 0..y.len() {
        if a[j] != 0.0 {
            for t in [(y[j] - upper[j]) / a[j], (y[j] - lower[j]) / a[j]] {
                if t > 0.0 {
                    breaks.push(t);
                }
            }
        }
    }
    breaks.sort_by(|p, q| p.total_cmp(q));
    breaks.dedup();
    let mut lo = 0.0;
    let mut hi = None;
    for &t in &breaks {
        if eval(t, out) <= 0.0 {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    // Past the last breakpoint the constraint value is constant at amin − b ≤ 0.
    let hi = hi.unwrap_or(lo);
    let mid = 0.5 * (lo + hi);
    let mut fixed = 0.0;
    let mut free_y = 0.0;
    let mut free_aa = 0.0;
    for j in 0..y.len() {
        let v = y[j] - mid * a[j];
        if v > lower[j] && v < upper[j] {
            free_y += a[j] * y[j];
            free_aa += a[j] * a[j];
        } else {
            fixed += a[j] * v.max(lower[j]).min(upper[j]);
        }
    }
    let mu = if free_aa > 0.0 {
        ((free_y + fixed - b) / free_aa).max(lo).min(hi)
    } else {
        hi
    };
    let h = eval(mu, out);
    if h > tol * scale {
        // Rounding left the piece slightly infeasible; bisect the bracket.
        let (mut l, mut r) = (mu, hi.max(mu));
        if eval(r, out) > 0.0 {
            r = breaks.last().copied().unwrap_or(r).max(r);
        }
        for _ in 0..200 {
            let c = 0.5 * (l + r);
            if eval(c, out) > 0.0 {
                l = c;
            } else {
                r = c;
            }
            if r - l <= 1e-15 * (1.0 + r) {
                break;
            }
        }
        eval(r, out);
    }
    Ok(())
}

/// Dykstra's alternating projection onto the intersection of halfspaces.
pub fn project_polyhedron(
    y: &[f64],
    rows: &[Halfspace],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    for h in rows {
        check_len(y.len(), h.normal.len())?;
    }
    dykstra(y, rows, None, tol, max_iter)
}

/// Dykstra over `rows` and, optionally, a box.  Converged output is accepted
/// only when it is feasible within `tol` and the accumulated correction
/// vectors certify optimality: `y − x` equals the sum of the corrections,
/// each of which must lie (within `tol`) in the normal cone of its set at `x`.
pub(crate) fn dykstra(
    y: &[f64],
    rows: &[Halfspace],
    bbox: Option<(&[f64], &[f64])>,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = y.len();
    let sets = rows.len() + usize::from(bbox.is_some());
    let mut x = y.to_vec();
    let mut corr = vec![vec![0.0; n]; sets];
    let mut z = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let scale = 1.0 + norm2(y);
    for _ in 0..max_iter {
        let prev = x.clone();
        for s in 0..sets {
            for j in 0..n {
                z[j] = x[j] + corr[s][j];
            }
            x.copy_from_slice(&z);
            if s < rows.len() {
                halfspace_in_place(&mut x, &rows[s]);
            } else {
                let (lo, hi) = bbox.unwrap();
                for j in 0..n {
                    x[j] = x[j].max(lo[j]).min(hi[j]);
                }
            }
            for j in 0..n {
                corr[s][j] = z[j] - x[j];
            }
        }
        let moved = prev
            .iter()
            .zip(&x)
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        let cert = certificate(&x, rows, bbox, &corr);
        residual = moved.max(cert);
        if moved <= tol * scale && cert <= tol * scale {
            return Ok(x);
        }
    }
    Err(Error::MaxIterExceeded { best: x, residual })
}

/// Largest violation among feasibility and normal-cone membership of the corrections.
fn certificate(
    x: &[f64],
    rows: &[Halfspace],
    bbox: Option<(&[f64], &[f64])>,
    corr: &[Vec<f64>],
) -> f64 {
    let mut worst: f64 = 0.0;
    for (h, p) in rows.iter().zip(corr) {
        let nn = dot(&h.normal, &h.normal);
        let mu = if nn > 0.0 {
            dot(p, &h.normal) / nn
        } else {
            0.0
        };
        worst = worst.max((-h.slack(x)).max(0.0));
        worst = worst.max((-mu).max(0.0));
        // complementarity and alignment with the normal
        worst = worst.max((mu * h.slack(x)).abs());
        let off: f64 = p
            .iter()
            .zip(&h.normal)
            .map(|(pi, ai)| (pi - mu * ai).abs())
            .fold(0.0, f64::max);
        worst = worst.max(off);
    }
    if let Some((lo, hi)) = bbox {
        let p = &corr[rows.len()];
        for j in 0..x.len() {
            worst = worst.max((lo[j] - x[j]).max(x[j] - hi[j]).max(0.0));
            // positive correction pushes against the upper bound, negative against the lower
            let gap = if p[j] > 0.0 {
                hi[j] - x[j]
            } else {
                x[j] - lo[j]
            };
            worst = worst.max((p[j] * gap).abs());
        }
    }
    worst
}

//! Small numerical helpers: adaptive quadrature and bracketed root finding.

use crate::{Error, Result};

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// The interval is first split into `panels` equal pieces so that narrow
/// features are not stepped over; each piece is then refined until the
/// Richardson error estimate is below `max(rel_tol·|I|, abs_tol)`.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64, panels: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    // Rough magnitude for turning the relative tolerance into an absolute one.
    let mut coarse = 0.0;
    let mut pieces = Vec::with_capacity(panels);
    for i in 0..panels {
        let x0 = a + i as f64 * h;
        let x1 = if i + 1 == panels { b } else { x0 + h };
        let xm = 0.5 * (x0 + x1);
        let (f0, fm, f1) = (f(x0), f(xm), f(x1));
        let s = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
        coarse += s.abs();
        pieces.push((x0, x1, f0, fm, f1, s));
    }
    let tol = (rel_tol * coarse).max(abs_tol) / panels as f64;
    let mut total = 0.0;
    for (x0, x1, f0, fm, f1, s) in pieces {
        total += refine(&f, x0, x1, f0, fm, f1, s, tol, MAX_DEPTH)?;
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::Numeric("quadrature produced a non-finite value".into()))
    }
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(Error::Numeric("quadrature integrand is not finite".into()));
    }
    if delta.abs() <= 15.0 * tol || depth == 0 {
        return Ok(left + right + delta / 15.0);
    }
    Ok(refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Bisection for the boundary of a monotone predicate: given `pred(lo)`
/// false and `pred(hi)` true, returns a point within `rel_tol·hi` of the
/// smallest `x` with `pred(x)` true.
pub fn bisect_boundary<P>(mut lo: f64, mut hi: f64, rel_tol: f64, mut pred: P) -> f64
where
    P: FnMut(f64) -> bool,
{
    for _ in 0..200 {
        if hi - lo <= rel_tol * hi.abs() {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

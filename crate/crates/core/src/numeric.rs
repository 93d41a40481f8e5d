//! Shared scalar numerics: adaptive quadrature, safeguarded root finding,
//! and bracketed scalar minimization.

use crate::error::{Error, Result};

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
///
/// Classic recursive halving with the 1/15 Richardson error estimate.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let mut acc = 0.0;
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 60, &mut acc)?;
    Ok(acc)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    acc: &mut f64,
) -> Result<()> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol || (b - a) < 1e-300 {
        *acc += left + right + err / 15.0;
        return Ok(());
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!(
            "adaptive Simpson hit depth limit on [{a}, {b}] with residual error {err:e} (tol {tol:e})"
        )));
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, acc)?;
    simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, acc)
}

/// Integrate `f` on `[0, upper]` by splitting into dyadic panels
/// `[0,1], [1,2], [2,4], ...` so adaptive refinement stays local.
pub fn integrate_dyadic<F: Fn(f64) -> f64>(f: &F, upper: f64, tol: f64) -> Result<f64> {
    if upper <= 0.0 {
        return Ok(0.0);
    }
    let mut edges = vec![0.0, upper.min(1.0)];
    let mut e = 1.0;
    while e < upper {
        e = (2.0 * e).min(upper);
        edges.push(e);
    }
    let panels = edges.len() - 1;
    let per_panel_tol = tol / panels as f64;
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += adaptive_simpson(f, w[0], w[1], per_panel_tol)?;
    }
    Ok(total)
}

/// Safeguarded Newton on a bracketing interval `[lo, hi]` with `f(lo)` and
/// `f(hi)` of opposite sign. Falls back to bisection whenever the Newton step
/// leaves the bracket or the derivative is unusable.
pub fn newton_bisect<F, D>(f: F, df: D, mut lo: f64, mut hi: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NoConvergence(format!(
            "newton_bisect: no sign change on [{lo}, {hi}] (f = {flo:e}, {fhi:e})"
        )));
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..max_iter {
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if fx.signum() == flo.signum() {
            lo = x;
            flo = fx;
        } else {
            hi = x;
        }
        if (hi - lo).abs() <= xtol * (1.0 + x.abs()) {
            return Ok(0.5 * (lo + hi));
        }
        let d = df(x);
        let newton = x - fx / d;
        x = if d != 0.0 && d.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(0.5 * (lo + hi))
}

/// Golden-section minimization of a unimodal `f` on `[a, b]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, xtol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > xtol * (1.0 + a.abs()) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_exact_on_cubic() {
        let v = adaptive_simpson(&|x: f64| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - (4.0 - 4.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn dyadic_matches_known_integral() {
        // \int_0^\infty e^{-x} dx truncated at 60
        let v = integrate_dyadic(&|x: f64| (-x).exp(), 60.0, 1e-12).unwrap();
        assert!((v - 1.0).abs() < 1e-11);
    }

    #[test]
    fn newton_bisect_finds_sqrt2() {
        let r = newton_bisect(|x| x * x - 2.0, |x| 2.0 * x, 0.0, 2.0, 1e-14, 200).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn golden_section_quadratic() {
        let x = golden_section(|x| (x - 0.3) * (x - 0.3), -1.0, 1.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
    }
}

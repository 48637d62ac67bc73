//! Adaptive composite Simpson quadrature.

use thiserror::Error;

/// Default absolute tolerance for model constants.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_DEPTH: u32 = 48;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadratureError {
    #[error("adaptive Simpson did not converge on [{a}, {b}] (subdivision limit reached, estimate {estimate})")]
    NonConvergence { a: f64, b: f64, estimate: f64 },
    #[error("invalid interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// The error estimate is the usual `|S2 - S1| / 15` with Richardson
/// extrapolation, so polynomials of degree three are exact on a single panel.
pub fn integrate<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, QuadratureError>
where
    F: Fn(f64) -> f64,
{
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(QuadratureError::InvalidInterval { a, b });
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut unresolved = 0.0;
    let value = simpson_rec(
        &f,
        a,
        b,
        fa,
        fm,
        fb,
        whole,
        tol.max(f64::MIN_POSITIVE),
        MAX_DEPTH,
        &mut unresolved,
    );
    if !(unresolved <= tol) {
        Err(QuadratureError::NonConvergence {
            a,
            b,
            estimate: value,
        })
    } else {
        Ok(value)
    }
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
    unresolved: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // roundoff floor: differences below a few ulps of the panel value are noise
    let floor = 8.0 * f64::EPSILON * (left.abs() + right.abs());
    if delta.abs() <= 15.0 * tol || delta.abs() <= floor {
        return left + right + delta / 15.0;
    }
    if depth == 0 || m <= a || m >= b {
        // panels at the subdivision limit are kept; their error estimates must
        // still fit in the overall tolerance
        *unresolved += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, unresolved)
        + simpson_rec(
            f,
            m,
            b,
            fm,
            frm,
            fb,
            right,
            0.5 * tol,
            depth - 1,
            unresolved,
        )
}

/// Integrates over `[a, b]` after splitting at every `breaks` point inside the interval.
///
/// The tolerance is shared between pieces in proportion to their length.
pub fn integrate_split<F>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: f64,
) -> Result<f64, QuadratureError>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    let mut nodes: Vec<f64> = Vec::with_capacity(breaks.len() + 2);
    nodes.push(a);
    nodes.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    nodes.push(b);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let span = b - a;
    let mut acc = 0.0;
    for w in nodes.windows(2) {
        let share = tol * (w[1] - w[0]) / span;
        acc += integrate(&f, w[0], w[1], share)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant() {
        let v = integrate(|_| 1.0, 0.0, 1.0, DEFAULT_TOL).unwrap();
        assert!((v - 1.0).abs() < DEFAULT_TOL);
    }

    #[test]
    fn exponential_against_antiderivative() {
        let v = integrate(|x: f64| (-x).exp(), 0.0, 1.0, DEFAULT_TOL).unwrap();
        let exact = 1.0 - (-1.0f64).exp();
        assert!((v - exact).abs() < DEFAULT_TOL);
        assert!((v - 0.632121).abs() < 1e-6);
    }

    #[test]
    fn cubic_exact_on_one_panel() {
        let f = |x: f64| 3.0 * x * x * x - 2.0 * x * x + x - 5.0;
        let anti = |x: f64| 0.75 * x.powi(4) - 2.0 / 3.0 * x.powi(3) + 0.5 * x * x - 5.0 * x;
        let (a, b) = (-1.3, 2.7);
        // a huge tolerance forces acceptance after the first refinement
        let v = integrate(f, a, b, 1e6).unwrap();
        assert!((v - (anti(b) - anti(a))).abs() < 1e-12);
    }

    #[test]
    fn truncation_to_support() {
        use crate::domain::rate::CompactRateFunction;
        let f = CompactRateFunction::ramp(2.0, 1.5);
        let full = integrate(|x| f.eval(x), 0.0, 10.0, DEFAULT_TOL).unwrap();
        let trunc = integrate(|x| f.eval(x), 0.0, f.support_radius(), DEFAULT_TOL).unwrap();
        assert!((full - trunc).abs() < 2.0 * DEFAULT_TOL);
        assert!((trunc - 1.5).abs() < DEFAULT_TOL);
    }

    #[test]
    fn discontinuous_indicator() {
        let v = integrate(|x| if x < 1.0 { 1.0 } else { 0.0 }, 0.0, 2.5, DEFAULT_TOL).unwrap();
        assert!((v - 1.0).abs() < DEFAULT_TOL);
    }

    #[test]
    fn nonconvergence_is_reported() {
        let r = integrate(
            |x: f64| if x > 0.0 { 1.0 / x } else { 0.0 },
            0.0,
            1.0,
            1e-12,
        );
        assert!(matches!(r, Err(QuadratureError::NonConvergence { .. })));
    }

    #[test]
    fn split_at_kinks() {
        let v = integrate_split(|x: f64| x.abs(), -1.0, 2.0, &[0.0], 1e-13).unwrap();
        assert!((v - 2.5).abs() < 1e-13);
    }
}

//! One market: fixed and stationary points with and without recycling.

use serde::Serialize;

use crate::domain::{CompactRateFunction, MarketParams};

use super::profile::{EquilibriumKind, EquilibriumProfile, PhaseProfile};
use super::{critical_constants, CriticalConstants, EquilibriumError, THRESHOLD_BAND};

/// Relative size of the leading coefficient below which the stationary
/// equation is treated as linear.
pub const EPS_QUAD: f64 = 1e-12;

/// Which branch produced the stationary boundary velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Quadratic,
    Linear,
    /// One phase has no arrivals and the root sits at an end of `[v₊, v₋]`.
    Endpoint,
}

fn check_gamma(name: &'static str, value: f64) -> Result<(), EquilibriumError> {
    if !(value >= 0.0 && value.is_finite()) {
        return Err(EquilibriumError::BadInput { name, value });
    }
    Ok(())
}

fn below(gamma: f64, threshold: f64) -> bool {
    gamma < threshold - THRESHOLD_BAND * threshold.max(1.0)
}

fn sources(
    lambda: &CompactRateFunction,
    kernel: Option<(f64, &CompactRateFunction)>,
) -> Vec<(f64, CompactRateFunction)> {
    let mut v = vec![(1.0, lambda.clone())];
    if let Some((w, k)) = kernel {
        v.push((w, k.clone()));
    }
    v
}

/// Fixed point of a single market. Recycling kernels, if present, are ignored.
pub fn fixed_point_single(
    p: &MarketParams,
    gamma_plus: f64,
) -> Result<EquilibriumProfile, EquilibriumError> {
    let mut q = p.clone();
    q.p_minus_plus = None;
    q.p_plus_minus = None;
    fixed_point_recycling(&q, gamma_plus)
}

/// Fixed point (`β = 0`) with recycling; without kernels this is the
/// single-market fixed point.
///
/// The annihilation flow is `ν = -v₊ γ₊ = v₋ γ₋` and feeds both kernels.
pub fn fixed_point_recycling(
    p: &MarketParams,
    gamma_plus: f64,
) -> Result<EquilibriumProfile, EquilibriumError> {
    check_gamma("gamma_plus", gamma_plus)?;
    let c = critical_constants(p)?;
    if below(gamma_plus, c.gamma_hat_cr) {
        return Err(EquilibriumError::NoFixedPoint {
            gamma_plus,
            threshold: c.gamma_hat_cr,
        });
    }
    let nu = -p.v_plus * gamma_plus;
    let gamma_minus = nu / p.v_minus;
    let plus = PhaseProfile::new(
        -p.v_plus,
        gamma_plus,
        &p.mu_plus,
        sources(&p.lambda_plus, p.kernel_minus_plus().map(|k| (nu, k))),
    )?;
    let minus = PhaseProfile::new(
        p.v_minus,
        gamma_minus,
        &p.mu_minus,
        sources(&p.lambda_minus, p.kernel_plus_minus().map(|k| (nu, k))),
    )?;
    Ok(EquilibriumProfile::assemble(
        EquilibriumKind::Fixed,
        gamma_plus,
        gamma_minus,
        0.0,
        nu,
        plus,
        minus,
    )?)
}

/// Stationary point of a single market for given boundary densities.
pub fn stationary_point_single(
    p: &MarketParams,
    gamma_plus: f64,
    gamma_minus: f64,
) -> Result<EquilibriumProfile, EquilibriumError> {
    check_gamma("gamma_plus", gamma_plus)?;
    check_gamma("gamma_minus", gamma_minus)?;
    let mut q = p.clone();
    q.p_minus_plus = None;
    q.p_plus_minus = None;
    let c = critical_constants(&q)?;
    for (phase, gamma, critical) in [
        ("plus", gamma_plus, c.gamma_cr_plus),
        ("minus", gamma_minus, c.gamma_cr_minus),
    ] {
        if below(gamma, critical) {
            return Err(EquilibriumError::BelowCritical {
                phase,
                gamma,
                critical,
            });
        }
    }
    let total = gamma_plus + gamma_minus;
    if total <= 0.0 {
        return Err(EquilibriumError::NoArrivals);
    }
    let beta = (gamma_plus * p.v_plus + gamma_minus * p.v_minus) / total;
    let plus = PhaseProfile::new(
        -p.v_plus,
        gamma_plus,
        &p.mu_plus,
        sources(&p.lambda_plus, None),
    )?;
    let minus = PhaseProfile::new(
        p.v_minus,
        gamma_minus,
        &p.mu_minus,
        sources(&p.lambda_minus, None),
    )?;
    Ok(EquilibriumProfile::assemble(
        EquilibriumKind::Stationary,
        gamma_plus,
        gamma_minus,
        beta,
        (p.v_minus - beta) * gamma_minus,
        plus,
        minus,
    )?)
}

/// Coefficients `(a₂, a₁, a₀)` of the stationary equation
/// `a(β - v₊)(v₋ - β) + (σ₋v₊ - σ₊v₋)β - v₊v₋(σ₋ - σ₊) = 0`
/// with `a = σ₊α₊₋ - σ₋α₋₊`, written as `a₂β² + a₁β + a₀`.
pub fn quadratic_coefficients(c: &CriticalConstants, v_plus: f64, v_minus: f64) -> (f64, f64, f64) {
    let (sp, sm) = (c.sigma_plus, c.sigma_minus);
    let a = sp * c.alpha_pm - sm * c.alpha_mp;
    (
        -a,
        a * (v_plus + v_minus) + sm * v_plus - sp * v_minus,
        -v_plus * v_minus * (a + sm - sp),
    )
}

fn select_root(
    c: &CriticalConstants,
    v_plus: f64,
    v_minus: f64,
) -> Result<(f64, BranchKind), EquilibriumError> {
    let (sp, sm) = (c.sigma_plus, c.sigma_minus);
    if sp <= 0.0 && sm <= 0.0 {
        return Err(EquilibriumError::NoArrivals);
    }
    // Q(v₊) = σ₋|v₊|(v₋ - v₊) and Q(v₋) = -σ₊v₋(v₋ - v₊): a vanishing σ puts
    // the root on the end of the interval
    if sm <= 0.0 {
        return Ok((v_plus, BranchKind::Endpoint));
    }
    if sp <= 0.0 {
        return Ok((v_minus, BranchKind::Endpoint));
    }
    let a = sp * c.alpha_pm - sm * c.alpha_mp;
    let scale = (sp * c.alpha_pm)
        .abs()
        .max((sm * c.alpha_mp).abs())
        .max(1.0);
    if a.abs() <= EPS_QUAD * scale {
        let beta = (sm - sp) / (sm / v_minus - sp / v_plus);
        return Ok((beta, BranchKind::Linear));
    }
    let (a2, a1, a0) = quadratic_coefficients(c, v_plus, v_minus);
    let disc = (a1 * a1 - 4.0 * a2 * a0).max(0.0);
    let qq = -0.5 * (a1 + a1.signum() * disc.sqrt());
    let roots = [qq / a2, if qq != 0.0 { a0 / qq } else { f64::NAN }];
    let eps = 1e-12 * (v_minus - v_plus);
    let inside: Vec<f64> = roots
        .iter()
        .copied()
        .filter(|b| *b > v_plus + eps && *b < v_minus - eps)
        .collect();
    match inside.as_slice() {
        [b] => Ok((*b, BranchKind::Quadratic)),
        [b1, b2] if (b1 - b2).abs() > eps => {
            Err(EquilibriumError::RootSelectionAmbiguous(*b1, *b2))
        }
        [b, _] => Ok((*b, BranchKind::Quadratic)),
        _ => {
            // the sign change Q(v₊) > 0 > Q(v₋) guarantees a root; a root
            // hugging an end of the interval is recovered by bisection
            let q = |b: f64| (a2 * b + a1) * b + a0;
            let (mut lo, mut hi) = (v_plus, v_minus);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if m <= lo || m >= hi {
                    break;
                }
                if q(m) > 0.0 {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            Ok((0.5 * (lo + hi), BranchKind::Quadratic))
        }
    }
}

/// The unique finite-mass stationary point of a market with recycling.
/// Returns the profile and the branch used for `β`.
pub fn stationary_point_recycling(
    p: &MarketParams,
) -> Result<(EquilibriumProfile, BranchKind), EquilibriumError> {
    let c = critical_constants(p)?;
    let (vp, vm) = (p.v_plus, p.v_minus);
    let (beta, branch) = select_root(&c, vp, vm)?;
    let gamma_plus = c.sigma_plus / (-vp * (1.0 - c.alpha_mp) - beta * c.alpha_mp);
    let gamma_minus = c.sigma_minus / (vm * (1.0 - c.alpha_pm) + beta * c.alpha_pm);
    if !(gamma_plus >= 0.0 && gamma_minus >= 0.0) {
        return Err(EquilibriumError::NegativeGamma {
            gamma_plus,
            gamma_minus,
            beta,
        });
    }
    let nu_minus = (vm - beta) * gamma_minus;
    let nu_plus = -(vp - beta) * gamma_plus;
    if (nu_minus - nu_plus).abs() > 1e-10 * nu_minus.abs().max(nu_plus.abs()).max(f64::MIN_POSITIVE)
    {
        return Err(EquilibriumError::BalanceViolated {
            minus: nu_minus,
            plus: nu_plus,
        });
    }
    let plus = PhaseProfile::new(
        -vp,
        gamma_plus,
        &p.mu_plus,
        sources(&p.lambda_plus, p.kernel_minus_plus().map(|k| (nu_minus, k))),
    )?;
    let minus = PhaseProfile::new(
        vm,
        gamma_minus,
        &p.mu_minus,
        sources(&p.lambda_minus, p.kernel_plus_minus().map(|k| (nu_plus, k))),
    )?;
    let profile = EquilibriumProfile::assemble(
        EquilibriumKind::Stationary,
        gamma_plus,
        gamma_minus,
        beta,
        nu_minus,
        plus,
        minus,
    )?;
    Ok((profile, branch))
}

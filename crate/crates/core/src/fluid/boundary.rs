//! Boundary velocity from flux balance.

use crate::domain::VelocityProfile;

use super::FluidError;

/// Below this total boundary density the balance is `0 = 0` and `β` is undetermined.
pub const EPS_BOUNDARY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryVelocity {
    pub beta: f64,
    /// Set when both boundary densities vanish and the midpoint velocity was used.
    pub degenerate: bool,
}

/// `β = (ρ₊(0) v₊ + ρ₋(0) v₋) / (ρ₊(0) + ρ₋(0))`, the velocity at which the
/// two phases deliver equal mass to the boundary.
pub fn boundary_velocity(
    rho_plus_0: f64,
    rho_minus_0: f64,
    v_plus: f64,
    v_minus: f64,
) -> BoundaryVelocity {
    let total = rho_plus_0 + rho_minus_0;
    if !(total >= EPS_BOUNDARY) {
        return BoundaryVelocity {
            beta: 0.5 * (v_plus + v_minus),
            degenerate: true,
        };
    }
    let beta = (rho_plus_0 * v_plus + rho_minus_0 * v_minus) / total;
    BoundaryVelocity {
        beta: beta.clamp(v_plus, v_minus),
        degenerate: false,
    }
}

/// Annihilation flow `ν = (v₋ - β) ρ₋(0)`.
pub fn annihilation_flux(rho_minus_0: f64, v_minus: f64, beta: f64) -> f64 {
    (v_minus - beta) * rho_minus_0
}

/// Exact integral of `f(v) w(v)` over `[a, b]` where `f` is linear and `w` linear:
/// the product is quadratic so one Simpson panel is exact.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b))
}

fn piecewise(profile: &VelocityProfile, a: f64, b: f64, weight: impl Fn(f64) -> f64) -> f64 {
    let bp = profile.breakpoints();
    let mut acc = 0.0;
    for w in bp.windows(2) {
        let lo = w[0].max(a);
        let hi = w[1].min(b);
        if hi > lo {
            acc += simpson(|v| profile.eval(v) * weight(v), lo, hi);
        }
    }
    acc
}

/// `g(β) = M₊(β) - M₋(β)`: mass flux of the `+` phase into a boundary moving
/// at `β` minus that of the `-` phase. Nondecreasing in `β`.
pub fn flux_imbalance(beta: f64, plus: &VelocityProfile, minus: &VelocityProfile) -> f64 {
    let m_plus = piecewise(plus, f64::NEG_INFINITY, beta, |v| beta - v);
    let m_minus = piecewise(minus, beta, f64::INFINITY, |v| v - beta);
    m_plus - m_minus
}

/// Boundary velocity for general velocity densities at the boundary.
///
/// Bisection brackets both ends of the zero set of `g`. When `g` vanishes on
/// a whole interval `[β₁, β₂]` (no mass reaches the boundary anywhere in it)
/// the choice is: `β₂` if the `-` profile is empty, `β₁` if the `+` profile
/// is empty, the midpoint otherwise. The first two reproduce the
/// single-phase limits of the delta-velocity formula.
pub fn boundary_velocity_general(
    plus: &VelocityProfile,
    minus: &VelocityProfile,
) -> Result<f64, FluidError> {
    if plus.is_zero() && minus.is_zero() {
        return Err(FluidError::NoMassAtBoundary);
    }
    let v0 = plus.v_max().max(minus.v_max());
    let g = |b: f64| flux_imbalance(b, plus, minus);

    // inf { β : g(β) >= 0 }
    let lower = {
        let (mut a, mut b) = (-v0, v0);
        if g(a) >= 0.0 {
            a
        } else {
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                if g(m) >= 0.0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            b
        }
    };
    // sup { β : g(β) <= 0 }
    let upper = {
        let (mut a, mut b) = (-v0, v0);
        if g(b) <= 0.0 {
            b
        } else {
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                if g(m) <= 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            a
        }
    };
    if upper - lower <= 1e-12 * v0 {
        return Ok(0.5 * (lower + upper));
    }
    Ok(if minus.is_zero() {
        upper
    } else if plus.is_zero() {
        lower
    } else {
        0.5 * (lower + upper)
    })
}

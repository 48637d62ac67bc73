//! Critical densities, fixed points and stationary points in closed form.
//!
//! Every equilibrium profile has the form
//!
//! ```text
//! ρ(r) = e^{F(r)} (γ - (1/s) ∫₀ʳ q(x) e^{-F(x)} dx),   F(r) = (1/s) ∫₀ʳ μ
//! ```
//!
//! with `s = |v|` the phase speed, `γ = ρ(0)` and `q` the arrival rate plus
//! any reinjection kernels weighted by their annihilation flows. The profile
//! is nonnegative iff the bracket stays nonnegative, and has finite mass iff
//! the bracket vanishes beyond the support of the rates.

mod network;
mod profile;
mod single;
mod verify;

use serde::Serialize;
use thiserror::Error;

use crate::domain::{
    integrate_split, validate_market, CompactRateFunction, MarketParams, QuadratureError,
    Violations,
};

pub use network::{
    fixed_point_network, network_constants, solve_network_inequalities, NetworkConstants, EPS_POS,
};
pub use profile::{
    EquilibriumKind, EquilibriumProfile, EquilibriumSummary, PhaseProfile, FINITE_MASS_TOL,
};
pub use single::{
    fixed_point_recycling, fixed_point_single, quadratic_coefficients, stationary_point_recycling,
    stationary_point_single, BranchKind, EPS_QUAD,
};
pub use verify::{verify_equilibrium, verify_network, ResidualReport};

/// Absolute tolerance for the model constants.
pub const CONSTANT_TOL: f64 = 1e-12;

/// Relative band within which `γ` is considered equal to a threshold.
pub const THRESHOLD_BAND: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EquilibriumError {
    #[error("no fixed point: gamma_plus = {gamma_plus} is below the threshold {threshold}")]
    NoFixedPoint { gamma_plus: f64, threshold: f64 },
    #[error("{phase} boundary density {gamma} is below its critical value {critical}")]
    BelowCritical {
        phase: &'static str,
        gamma: f64,
        critical: f64,
    },
    #[error("recycling constants must be below 1 (alpha_mp = {alpha_mp}, alpha_pm = {alpha_pm})")]
    RecyclingTooStrong { alpha_mp: f64, alpha_pm: f64 },
    #[error("quadratic has two roots inside (v_plus, v_minus): {0} and {1}")]
    RootSelectionAmbiguous(f64, f64),
    #[error("boundary density came out negative (gamma_plus = {gamma_plus}, gamma_minus = {gamma_minus}, beta = {beta})")]
    NegativeGamma {
        gamma_plus: f64,
        gamma_minus: f64,
        beta: f64,
    },
    #[error("both phases have zero arrivals; the stationary point is undetermined")]
    NoArrivals,
    #[error("annihilation balance violated: (v_minus - beta) gamma_minus = {minus}, -(v_plus - beta) gamma_plus = {plus}")]
    BalanceViolated { minus: f64, plus: f64 },
    #[error("routing matrix {matrix} is not substochastic: {detail}")]
    SubstochasticityViolated {
        matrix: &'static str,
        detail: String,
    },
    #[error(
        "inequalities have no positive solution (after {iterations} iterations, |s| = {norm:e})"
    )]
    Infeasible { iterations: usize, norm: f64 },
    #[error("market {market}: s does not satisfy the {which} inequality (slack {slack:e})")]
    InequalitiesViolated {
        market: usize,
        which: &'static str,
        slack: f64,
    },
    #[error("negative or non-finite input {name} = {value}")]
    BadInput { name: &'static str, value: f64 },
    #[error("invalid parameters:\n{0}")]
    Invalid(#[from] Violations),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

impl EquilibriumError {
    /// True for outcomes the theorems predict (no equilibrium exists), as
    /// opposed to invalid input or numerical failure.
    pub fn is_model_answer(&self) -> bool {
        matches!(
            self,
            Self::NoFixedPoint { .. }
                | Self::BelowCritical { .. }
                | Self::Infeasible { .. }
                | Self::InequalitiesViolated { .. }
                | Self::RecyclingTooStrong { .. }
        )
    }
}

/// `F(r) = (1/s) ∫₀ʳ μ` for one phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exponent {
    pub speed: f64,
    pub mu: CompactRateFunction,
}

impl Exponent {
    pub fn new(speed: f64, mu: &CompactRateFunction) -> Self {
        Self {
            speed,
            mu: mu.clone(),
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.mu.antiderivative(r) / self.speed
    }

    pub fn tabulate(&self, dr: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|i| self.eval(i as f64 * dr)).collect()
    }

    /// `∫₀^∞ g(x) e^{-F(x)} dx` for a compactly supported `g`.
    pub fn weighted_total(&self, g: &CompactRateFunction) -> Result<f64, QuadratureError> {
        if g.is_zero() {
            return Ok(0.0);
        }
        let mut breaks = g.breakpoints().to_vec();
        breaks.extend_from_slice(self.mu.breakpoints());
        integrate_split(
            |x| g.eval(x) * (-self.eval(x)).exp(),
            0.0,
            g.support_radius(),
            &breaks,
            CONSTANT_TOL,
        )
    }
}

/// Constants preceding the equilibrium theorems.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalConstants {
    pub gamma_cr_plus: f64,
    pub gamma_cr_minus: f64,
    /// `max(γcr⁺, v₋ γcr⁻ / |v₊|)`.
    pub gamma_cr: f64,
    /// `λ̂± = ∫ λ± e^{-F±}`; equal to `σ±`.
    pub lambda_hat_plus: f64,
    pub lambda_hat_minus: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
    /// `∫ p(-,+) e^{-F₊}`, zero without a kernel.
    pub alpha_mp: f64,
    /// `∫ p(+,-) e^{-F₋}`, zero without a kernel.
    pub alpha_pm: f64,
    /// Recycling threshold; equals `gamma_cr` without kernels.
    pub gamma_hat_cr: f64,
    #[serde(skip)]
    pub f_plus: Exponent,
    #[serde(skip)]
    pub f_minus: Exponent,
}

pub fn critical_constants(p: &MarketParams) -> Result<CriticalConstants, EquilibriumError> {
    validate_market(p)?;
    let s_plus = -p.v_plus;
    let s_minus = p.v_minus;
    let f_plus = Exponent::new(s_plus, &p.mu_plus);
    let f_minus = Exponent::new(s_minus, &p.mu_minus);
    let lambda_hat_plus = f_plus.weighted_total(&p.lambda_plus)?;
    let lambda_hat_minus = f_minus.weighted_total(&p.lambda_minus)?;
    let alpha_mp = match p.kernel_minus_plus() {
        Some(k) => f_plus.weighted_total(k)?,
        None => 0.0,
    };
    let alpha_pm = match p.kernel_plus_minus() {
        Some(k) => f_minus.weighted_total(k)?,
        None => 0.0,
    };
    if alpha_mp >= 1.0 || alpha_pm >= 1.0 {
        return Err(EquilibriumError::RecyclingTooStrong { alpha_mp, alpha_pm });
    }
    let gamma_cr_plus = lambda_hat_plus / s_plus;
    let gamma_cr_minus = lambda_hat_minus / s_minus;
    Ok(CriticalConstants {
        gamma_cr_plus,
        gamma_cr_minus,
        gamma_cr: gamma_cr_plus.max(lambda_hat_minus / s_plus),
        lambda_hat_plus,
        lambda_hat_minus,
        sigma_plus: lambda_hat_plus,
        sigma_minus: lambda_hat_minus,
        alpha_mp,
        alpha_pm,
        gamma_hat_cr: (gamma_cr_plus / (1.0 - alpha_mp))
            .max(lambda_hat_minus / (s_plus * (1.0 - alpha_pm))),
        f_plus,
        f_minus,
    })
}

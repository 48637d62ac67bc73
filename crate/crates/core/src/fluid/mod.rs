//! Moving-boundary density equations in the comoving radial coordinate.
//!
//! Each phase lives on its own half-line `r = |x - b(t)| >= 0` and is
//! transported toward the boundary face `r = 0` with relative speed
//! `β - v₊` (sellers) or `v₋ - β` (buyers). Mass crossing `r = 0` is
//! annihilated; `β` is chosen every step so both phases lose mass at the same
//! rate. The boundary position is recovered by integrating `β`.
//!
//! The scheme is first-order upwind finite volume with explicit sources.
//! It conserves mass exactly: every step reports a [`StepReport`] whose
//! arrivals, deaths, annihilation outflow and reinjection add up to the change
//! of total mass.

mod boundary;
mod network;
mod single;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{CompactRateFunction, Violations};

pub use boundary::{
    annihilation_flux, boundary_velocity, boundary_velocity_general, flux_imbalance,
    BoundaryVelocity, EPS_BOUNDARY,
};
pub use network::{NetworkFluidState, NetworkSolver, NetworkStepReport};
pub use single::{MarketSolver, RunSummary};

/// Largest admissible Courant number `max(β - v₊, v₋ - β) dt / dr`.
pub const MAX_COURANT: f64 = 0.9;

#[derive(Debug, Error)]
pub enum FluidError {
    #[error("CFL violated{}: courant {courant:.4} (limit {MAX_COURANT}), courant + mu_max dt = {total:.4} (limit 1)", market.map(|m| format!(" in market {m}")).unwrap_or_default())]
    CflViolation {
        market: Option<usize>,
        courant: f64,
        total: f64,
    },
    #[error(
        "both velocity profiles vanish at the boundary; the boundary velocity is undetermined"
    )]
    NoMassAtBoundary,
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("state does not match the solver: {0}")]
    Shape(String),
    #[error("invalid parameters:\n{0}")]
    Invalid(#[from] Violations),
}

/// How `ρ±(0, t)` is read off the cell values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryExtraction {
    /// Value of the first cell (centred at `dr / 2`).
    #[default]
    FirstCell,
    /// Linear extrapolation from the first two cells, clipped at zero.
    Linear,
}

/// Uniform mesh of cells `[i dr, (i + 1) dr]`, `i = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    pub dr: f64,
    pub n: usize,
}

impl RadialGrid {
    pub fn new(r_max: f64, dr: f64) -> Result<Self, FluidError> {
        if !(dr > 0.0 && r_max > 0.0 && r_max.is_finite()) {
            return Err(FluidError::Grid(format!(
                "need dr > 0 and r_max > 0, got dr = {dr}, r_max = {r_max}"
            )));
        }
        let n = (r_max / dr - 1e-9).ceil().max(2.0) as usize;
        Ok(Self { dr, n })
    }

    /// `R_max = R0 + (v₋ - v₊) T + margin`: mass further out cannot reach the
    /// boundary before `T`.
    pub fn for_horizon(
        support_radius: f64,
        v_plus: f64,
        v_minus: f64,
        t_end: f64,
        margin: f64,
        dr: f64,
    ) -> Result<Self, FluidError> {
        Self::new(support_radius + (v_minus - v_plus) * t_end + margin, dr)
    }

    pub fn r_max(&self) -> f64 {
        self.dr * self.n as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dr
    }

    /// Cell averages of a rate function.
    pub fn cell_averages(&self, f: &CompactRateFunction) -> Vec<f64> {
        (0..self.n)
            .map(|i| f.cell_average(i as f64 * self.dr, (i + 1) as f64 * self.dr))
            .collect()
    }

    /// Cell averages of a smooth function by Simpson's rule on each cell.
    pub fn simpson_averages(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let a = i as f64 * self.dr;
                let b = a + self.dr;
                (f(a) + 4.0 * f(0.5 * (a + b)) + f(b)) / 6.0
            })
            .collect()
    }
}

/// Densities of both phases of one market plus the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub grid: RadialGrid,
    pub rho_plus: Vec<f64>,
    pub rho_minus: Vec<f64>,
    /// Boundary position in price units.
    pub b: f64,
    /// Boundary velocity used by the last step (or computed at construction).
    pub beta: f64,
    pub t: f64,
    pub degenerate: bool,
}

impl FluidState {
    pub fn new(
        grid: RadialGrid,
        rho_plus: Vec<f64>,
        rho_minus: Vec<f64>,
        b0: f64,
    ) -> Result<Self, FluidError> {
        if rho_plus.len() != grid.n || rho_minus.len() != grid.n {
            return Err(FluidError::Shape(format!(
                "expected {} cells, got {} and {}",
                grid.n,
                rho_plus.len(),
                rho_minus.len()
            )));
        }
        if let Some(v) = rho_plus
            .iter()
            .chain(&rho_minus)
            .find(|v| !(**v >= 0.0 && v.is_finite()))
        {
            return Err(FluidError::Shape(format!(
                "densities must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self {
            grid,
            rho_plus,
            rho_minus,
            b: b0,
            beta: 0.0,
            t: 0.0,
            degenerate: false,
        })
    }

    /// Cell averages of tabulated initial densities.
    pub fn from_rates(
        grid: RadialGrid,
        rho_plus: &CompactRateFunction,
        rho_minus: &CompactRateFunction,
        b0: f64,
    ) -> Result<Self, FluidError> {
        Self::new(
            grid,
            grid.cell_averages(rho_plus),
            grid.cell_averages(rho_minus),
            b0,
        )
    }

    pub fn boundary_densities(&self, extraction: BoundaryExtraction) -> (f64, f64) {
        let read = |rho: &[f64]| match extraction {
            BoundaryExtraction::FirstCell => rho[0],
            BoundaryExtraction::Linear => (1.5 * rho[0] - 0.5 * rho[1]).max(0.0),
        };
        (read(&self.rho_plus), read(&self.rho_minus))
    }

    pub fn mass_plus(&self) -> f64 {
        self.rho_plus.iter().sum::<f64>() * self.grid.dr
    }

    pub fn mass_minus(&self) -> f64 {
        self.rho_minus.iter().sum::<f64>() * self.grid.dr
    }

    /// Writes snapshot rows `t,b,beta,phase,r,rho` (without header).
    pub fn write_snapshot_rows<W: io::Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        for (phase, rho) in [("plus", &self.rho_plus), ("minus", &self.rho_minus)] {
            for (i, v) in rho.iter().enumerate() {
                w.serialize((self.t, self.b, self.beta, phase, self.grid.center(i), v))?;
            }
        }
        Ok(())
    }
}

/// Mass accounting for one phase over one step; all entries are masses.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseBudget {
    pub arrivals: f64,
    pub deaths: f64,
    /// Mass annihilated through the face `r = 0`.
    pub outflow: f64,
    /// Mass reinjected by recycling or routing.
    pub injected: f64,
    pub mass_before: f64,
    pub mass_after: f64,
}

impl PhaseBudget {
    /// Observed change minus the sum of the individual terms.
    pub fn closure_error(&self) -> f64 {
        (self.mass_after - self.mass_before)
            - (self.arrivals - self.deaths - self.outflow + self.injected)
    }

    pub fn throughput(&self) -> f64 {
        self.arrivals + self.deaths + self.outflow + self.injected
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub beta: f64,
    pub degenerate: bool,
    /// `ν = (v₋ - β) ρ₋(0)` at the start of the step.
    pub annihilation_flux: f64,
    pub plus: PhaseBudget,
    pub minus: PhaseBudget,
}

/// Cell averages of all rates of one market.
#[derive(Debug, Clone)]
pub(crate) struct DiscreteMarket {
    pub v_plus: f64,
    pub v_minus: f64,
    pub lambda_plus: Vec<f64>,
    pub lambda_minus: Vec<f64>,
    pub mu_plus: Vec<f64>,
    pub mu_minus: Vec<f64>,
    pub mu_max: f64,
}

impl DiscreteMarket {
    pub fn new(p: &crate::domain::MarketParams, grid: &RadialGrid) -> Self {
        let mu_plus = grid.cell_averages(&p.mu_plus);
        let mu_minus = grid.cell_averages(&p.mu_minus);
        let mu_max = mu_plus.iter().chain(&mu_minus).cloned().fold(0.0, f64::max);
        Self {
            v_plus: p.v_plus,
            v_minus: p.v_minus,
            lambda_plus: grid.cell_averages(&p.lambda_plus),
            lambda_minus: grid.cell_averages(&p.lambda_minus),
            mu_plus,
            mu_minus,
            mu_max,
        }
    }

    /// Boundary velocity and annihilation flux in both algebraic forms
    /// `((v₋ - β) ρ₋(0), -(v₊ - β) ρ₊(0))`.
    pub fn boundary(
        &self,
        state: &FluidState,
        extraction: BoundaryExtraction,
    ) -> (BoundaryVelocity, f64, f64) {
        let (rp, rm) = state.boundary_densities(extraction);
        let bv = boundary_velocity(rp, rm, self.v_plus, self.v_minus);
        let nu_minus_form = annihilation_flux(rm, self.v_minus, bv.beta);
        let nu_plus_form = -(self.v_plus - bv.beta) * rp;
        (bv, nu_minus_form, nu_plus_form)
    }

    pub fn check_cfl(
        &self,
        beta: f64,
        dt: f64,
        dr: f64,
        market: Option<usize>,
    ) -> Result<(), FluidError> {
        let speed = (beta - self.v_plus).max(self.v_minus - beta);
        let courant = speed * dt / dr;
        let total = courant + self.mu_max * dt;
        if courant > MAX_COURANT || total > 1.0 {
            return Err(FluidError::CflViolation {
                market,
                courant,
                total,
            });
        }
        Ok(())
    }

    /// Advances both phases by `dt` with boundary velocity `beta` and optional
    /// reinjection source densities.
    pub fn advance(
        &self,
        state: &mut FluidState,
        bv: BoundaryVelocity,
        nu: f64,
        source_plus: Option<&[f64]>,
        source_minus: Option<&[f64]>,
        dt: f64,
    ) -> StepReport {
        let dr = state.grid.dr;
        let beta = bv.beta;
        let plus = advance_phase(
            &mut state.rho_plus,
            beta - self.v_plus,
            &self.lambda_plus,
            &self.mu_plus,
            source_plus,
            dt,
            dr,
        );
        let minus = advance_phase(
            &mut state.rho_minus,
            self.v_minus - beta,
            &self.lambda_minus,
            &self.mu_minus,
            source_minus,
            dt,
            dr,
        );
        state.b += beta * dt;
        state.beta = beta;
        state.degenerate = bv.degenerate;
        state.t += dt;
        StepReport {
            beta,
            degenerate: bv.degenerate,
            annihilation_flux: nu,
            plus,
            minus,
        }
    }
}

/// One explicit upwind step of `∂ρ/∂t = c ∂ρ/∂r - μρ + λ + s` with inflow
/// from a zero ghost cell at `R_max` and outflow through `r = 0`.
fn advance_phase(
    rho: &mut [f64],
    speed: f64,
    lambda: &[f64],
    mu: &[f64],
    source: Option<&[f64]>,
    dt: f64,
    dr: f64,
) -> PhaseBudget {
    let n = rho.len();
    let mass_before = rho.iter().sum::<f64>() * dr;
    let mut arrivals = 0.0;
    let mut deaths = 0.0;
    let mut injected = 0.0;
    let outflow = dt * speed * rho[0];
    let k = speed / dr;
    for i in 0..n {
        let here = rho[i];
        // rho[i + 1] still holds the old value: the sweep runs toward larger r
        let upwind = if i + 1 < n { rho[i + 1] } else { 0.0 };
        let death = mu[i] * here;
        let mut rhs = k * (upwind - here) - death + lambda[i];
        if let Some(s) = source {
            rhs += s[i];
            injected += s[i];
        }
        arrivals += lambda[i];
        deaths += death;
        rho[i] = here + dt * rhs;
    }
    PhaseBudget {
        arrivals: arrivals * dt * dr,
        deaths: deaths * dt * dr,
        outflow,
        injected: injected * dt * dr,
        mass_before,
        mass_after: rho.iter().sum::<f64>() * dr,
    }
}

/// Largest time step allowed for velocities `v±` and death rates up to `mu_max`.
pub fn stable_dt(v_plus: f64, v_minus: f64, mu_max: f64, dr: f64) -> f64 {
    let speed = v_minus - v_plus;
    let by_courant = MAX_COURANT * dr / speed;
    let by_total = 1.0 / (speed / dr + mu_max);
    by_courant.min(by_total)
}

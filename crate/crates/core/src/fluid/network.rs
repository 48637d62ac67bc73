//! Markets coupled by routing of annihilated mass.
//!
//! The coupling is explicit: every source in a step uses the annihilation
//! flows of the start-of-step states, so the markets can be advanced
//! independently (and in parallel) once the sources are known.

use rayon::prelude::*;

use crate::domain::{validate_network, CompactRateFunction, NetworkSpec};

use super::{BoundaryExtraction, DiscreteMarket, FluidError, FluidState, RadialGrid, StepReport};

#[derive(Debug, Clone)]
struct DiscreteRoute {
    from: usize,
    to: usize,
    into_plus: Option<Vec<f64>>,
    into_minus: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct NetworkSolver {
    spec: NetworkSpec,
    grid: RadialGrid,
    extraction: BoundaryExtraction,
    markets: Vec<DiscreteMarket>,
    routes: Vec<DiscreteRoute>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkFluidState {
    pub markets: Vec<FluidState>,
}

impl NetworkFluidState {
    pub fn t(&self) -> f64 {
        self.markets.first().map_or(0.0, |m| m.t)
    }

    pub fn total_mass(&self) -> f64 {
        self.markets
            .iter()
            .map(|m| m.mass_plus() + m.mass_minus())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkStepReport {
    pub markets: Vec<StepReport>,
}

impl NetworkStepReport {
    /// Network-wide closure error of the mass budget.
    pub fn closure_error(&self) -> f64 {
        self.markets
            .iter()
            .map(|r| r.plus.closure_error() + r.minus.closure_error())
            .sum()
    }

    pub fn injected(&self) -> f64 {
        self.markets
            .iter()
            .map(|r| r.plus.injected + r.minus.injected)
            .sum()
    }
}

impl NetworkSolver {
    pub fn new(
        spec: NetworkSpec,
        grid: RadialGrid,
        extraction: BoundaryExtraction,
    ) -> Result<Self, FluidError> {
        validate_network(&spec)?;
        let markets = spec
            .markets
            .iter()
            .map(|p| DiscreteMarket::new(p, &grid))
            .collect();
        let cells = |k: &Option<CompactRateFunction>| k.as_ref().map(|p| grid.cell_averages(p));
        let routes = spec
            .routing
            .iter()
            .map(|r| DiscreteRoute {
                from: r.from,
                to: r.to,
                into_plus: cells(&r.p_minus_plus),
                into_minus: cells(&r.p_plus_minus),
            })
            .collect();
        Ok(Self {
            spec,
            grid,
            extraction,
            markets,
            routes,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn grid(&self) -> RadialGrid {
        self.grid
    }

    pub fn stable_dt(&self) -> f64 {
        self.markets
            .iter()
            .map(|m| super::stable_dt(m.v_plus, m.v_minus, m.mu_max, self.grid.dr))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn initial_state(
        &self,
        initial: &[(CompactRateFunction, CompactRateFunction, f64)],
    ) -> Result<NetworkFluidState, FluidError> {
        if initial.len() != self.markets.len() {
            return Err(FluidError::Shape(format!(
                "{} initial conditions for {} markets",
                initial.len(),
                self.markets.len()
            )));
        }
        let markets = initial
            .iter()
            .zip(&self.markets)
            .map(|((rp, rm, b0), d)| {
                let mut s = FluidState::from_rates(self.grid, rp, rm, *b0)?;
                let (bv, _, _) = d.boundary(&s, self.extraction);
                s.beta = bv.beta;
                s.degenerate = bv.degenerate;
                Ok(s)
            })
            .collect::<Result<_, FluidError>>()?;
        Ok(NetworkFluidState { markets })
    }

    pub fn step(
        &self,
        state: &mut NetworkFluidState,
        dt: f64,
    ) -> Result<NetworkStepReport, FluidError> {
        if state.markets.len() != self.markets.len() {
            return Err(FluidError::Shape(format!(
                "state has {} markets, network has {}",
                state.markets.len(),
                self.markets.len()
            )));
        }
        if let Some(s) = state.markets.iter().find(|s| s.grid != self.grid) {
            return Err(FluidError::Shape(format!(
                "state grid {:?} differs from solver grid {:?}",
                s.grid, self.grid
            )));
        }
        let boundary: Vec<_> = self
            .markets
            .iter()
            .zip(&state.markets)
            .map(|(d, s)| d.boundary(s, self.extraction))
            .collect();
        for (m, (d, (bv, _, _))) in self.markets.iter().zip(&boundary).enumerate() {
            d.check_cfl(bv.beta, dt, self.grid.dr, Some(m))?;
        }

        let n = self.markets.len();
        let mut src_plus: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut src_minus: Vec<Option<Vec<f64>>> = vec![None; n];
        for r in &self.routes {
            let (_, nu_minus_form, nu_plus_form) = boundary[r.from];
            if let Some(k) = &r.into_plus {
                accumulate(&mut src_plus[r.to], k, nu_minus_form);
            }
            if let Some(k) = &r.into_minus {
                accumulate(&mut src_minus[r.to], k, nu_plus_form);
            }
        }

        let markets = state
            .markets
            .par_iter_mut()
            .zip(self.markets.par_iter())
            .zip(boundary.par_iter())
            .zip(src_plus.par_iter().zip(src_minus.par_iter()))
            .map(|(((s, d), (bv, nu, _)), (sp, sm))| {
                d.advance(s, *bv, *nu, sp.as_deref(), sm.as_deref(), dt)
            })
            .collect();
        Ok(NetworkStepReport { markets })
    }

    /// Advances to `t_end` in equal steps no longer than `dt`.
    pub fn run(
        &self,
        state: &mut NetworkFluidState,
        t_end: f64,
        dt: f64,
        mut observe: impl FnMut(&NetworkFluidState, &NetworkStepReport),
    ) -> Result<usize, FluidError> {
        let span = t_end - state.t();
        if span <= 0.0 {
            return Ok(0);
        }
        let n = (span / dt - 1e-9).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for _ in 0..n {
            let r = self.step(state, h)?;
            observe(state, &r);
        }
        Ok(n)
    }
}

/// Adds `nu * kernel` to a source; the first contribution is stored as the
/// product itself so a single route gives bit-identical values to recycling.
fn accumulate(slot: &mut Option<Vec<f64>>, kernel: &[f64], nu: f64) {
    match slot {
        None => *slot = Some(kernel.iter().map(|p| nu * p).collect()),
        Some(acc) => acc.iter_mut().zip(kernel).for_each(|(a, p)| *a += nu * p),
    }
}

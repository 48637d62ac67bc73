//! One market, with or without recycling.

use serde::Serialize;

use crate::domain::{validate_market, MarketParams};

use super::{BoundaryExtraction, DiscreteMarket, FluidError, FluidState, RadialGrid, StepReport};

/// Stepper for a single market. Recycling kernels present in the parameters
/// are applied by [`MarketSolver::step`]; [`MarketSolver::step_single`]
/// ignores them.
#[derive(Debug, Clone)]
pub struct MarketSolver {
    params: MarketParams,
    grid: RadialGrid,
    extraction: BoundaryExtraction,
    disc: DiscreteMarket,
    /// Cell averages of `p(-,+)` (into the `+` phase) and `p(+,-)`.
    kernel_plus: Option<Vec<f64>>,
    kernel_minus: Option<Vec<f64>>,
}

/// Aggregates over a run of many steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub steps: usize,
    /// Largest `|closure error|` of any phase in any step.
    pub max_closure_error: f64,
    /// Largest per-step mass throughput, the natural scale of the closure error.
    pub max_throughput: f64,
    pub annihilated: f64,
    pub degenerate_steps: usize,
}

impl RunSummary {
    pub fn record(&mut self, r: &StepReport) {
        self.steps += 1;
        for b in [&r.plus, &r.minus] {
            self.max_closure_error = self.max_closure_error.max(b.closure_error().abs());
            self.max_throughput = self.max_throughput.max(b.throughput());
        }
        self.annihilated += r.minus.outflow;
        if r.degenerate {
            self.degenerate_steps += 1;
        }
    }
}

impl MarketSolver {
    pub fn new(
        params: MarketParams,
        grid: RadialGrid,
        extraction: BoundaryExtraction,
    ) -> Result<Self, FluidError> {
        validate_market(&params)?;
        let disc = DiscreteMarket::new(&params, &grid);
        let kernel_plus = params.kernel_minus_plus().map(|p| grid.cell_averages(p));
        let kernel_minus = params.kernel_plus_minus().map(|p| grid.cell_averages(p));
        Ok(Self {
            params,
            grid,
            extraction,
            disc,
            kernel_plus,
            kernel_minus,
        })
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn grid(&self) -> RadialGrid {
        self.grid
    }

    /// Initial state from cell averages of tabulated densities.
    pub fn initial_state(
        &self,
        rho_plus: &crate::domain::CompactRateFunction,
        rho_minus: &crate::domain::CompactRateFunction,
        b0: f64,
    ) -> Result<FluidState, FluidError> {
        let mut s = FluidState::from_rates(self.grid, rho_plus, rho_minus, b0)?;
        let (bv, _, _) = self.disc.boundary(&s, self.extraction);
        s.beta = bv.beta;
        s.degenerate = bv.degenerate;
        Ok(s)
    }

    /// Largest stable time step for this market (any `β` in `[v₊, v₋]`).
    pub fn stable_dt(&self) -> f64 {
        super::stable_dt(
            self.disc.v_plus,
            self.disc.v_minus,
            self.disc.mu_max,
            self.grid.dr,
        )
    }

    fn check_state(&self, state: &FluidState) -> Result<(), FluidError> {
        if state.grid != self.grid {
            return Err(FluidError::Shape(format!(
                "state grid {:?} differs from solver grid {:?}",
                state.grid, self.grid
            )));
        }
        Ok(())
    }

    /// One step including recycling, if the market has kernels.
    pub fn step(&self, state: &mut FluidState, dt: f64) -> Result<StepReport, FluidError> {
        self.step_inner(state, dt, true)
    }

    /// One step of the market without recycling.
    pub fn step_single(&self, state: &mut FluidState, dt: f64) -> Result<StepReport, FluidError> {
        self.step_inner(state, dt, false)
    }

    fn step_inner(
        &self,
        state: &mut FluidState,
        dt: f64,
        recycle: bool,
    ) -> Result<StepReport, FluidError> {
        self.check_state(state)?;
        let (bv, nu_minus_form, nu_plus_form) = self.disc.boundary(state, self.extraction);
        self.disc.check_cfl(bv.beta, dt, self.grid.dr, None)?;
        let src_plus = match (&self.kernel_plus, recycle) {
            (Some(k), true) => Some(k.iter().map(|p| nu_minus_form * p).collect::<Vec<_>>()),
            _ => None,
        };
        let src_minus = match (&self.kernel_minus, recycle) {
            (Some(k), true) => Some(k.iter().map(|p| nu_plus_form * p).collect::<Vec<_>>()),
            _ => None,
        };
        Ok(self.disc.advance(
            state,
            bv,
            nu_minus_form,
            src_plus.as_deref(),
            src_minus.as_deref(),
            dt,
        ))
    }

    /// Advances to `t_end` in equal steps no longer than `dt`, calling
    /// `observe` after every step.
    pub fn run(
        &self,
        state: &mut FluidState,
        t_end: f64,
        dt: f64,
        mut observe: impl FnMut(&FluidState, &StepReport),
    ) -> Result<RunSummary, FluidError> {
        let span = t_end - state.t;
        let mut summary = RunSummary::default();
        if span <= 0.0 {
            return Ok(summary);
        }
        let n = (span / dt - 1e-9).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for _ in 0..n {
            let r = self.step(state, h)?;
            summary.record(&r);
            observe(state, &r);
        }
        Ok(summary)
    }
}

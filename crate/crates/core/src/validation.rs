//! Cross-engine checks: equilibria fed to the fluid solver, particles against
//! the fluid limit, and residual scaling of the closed forms.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::domain::{InitialCondition, MarketParams, NetworkSpec, QuadratureError};
use crate::equilibria::{
    verify_equilibrium, EquilibriumError, EquilibriumProfile, PhaseProfile, ResidualReport,
};
use crate::fluid::{
    BoundaryExtraction, FluidError, FluidState, MarketSolver, NetworkFluidState, NetworkSolver,
    PhaseBudget, RadialGrid,
};
use crate::free_kinetics::{characteristics_value, evolve_free, Boundary, FreeError, FreeField};
use crate::particles::{run_particles, ParticleEngine, ParticleError, RunConfig};

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Particle(#[from] ParticleError),
    #[error(transparent)]
    Free(#[from] FreeError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("invalid check configuration: {0}")]
    Config(String),
}

/// Mass-budget audit accumulated over a fluid run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BudgetAudit {
    pub steps: usize,
    pub max_step_error: f64,
    pub cumulative_error: f64,
    pub cumulative_throughput: f64,
    pub dt: f64,
}

impl BudgetAudit {
    pub fn record(&mut self, b: &PhaseBudget) {
        let e = b.closure_error().abs();
        self.max_step_error = self.max_step_error.max(e);
        self.cumulative_error += e;
        self.cumulative_throughput += b.throughput();
    }

    /// Per-step error within `dt²` and cumulative error below `1e-3` of the
    /// throughput.
    pub fn passes(&self) -> bool {
        self.max_step_error <= self.dt * self.dt
            && self.cumulative_error <= 1e-3 * self.cumulative_throughput
    }

    pub fn merge(&mut self, o: &BudgetAudit) {
        self.steps = self.steps.max(o.steps);
        self.max_step_error = self.max_step_error.max(o.max_step_error);
        self.cumulative_error += o.cumulative_error;
        self.cumulative_throughput += o.cumulative_throughput;
        self.dt = self.dt.max(o.dt);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PersistenceConfig {
    pub dr: f64,
    pub t_end: f64,
    /// Extra radius beyond the reach of the rates kept in the drift window.
    pub margin: f64,
    pub extraction: BoundaryExtraction,
}

impl Default for PersistenceConfig {
    fn default() -> Self {
        Self {
            dr: 1e-3,
            t_end: 1.0,
            margin: 1.0,
            extraction: BoundaryExtraction::FirstCell,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersistenceReport {
    pub dr: f64,
    pub dt: f64,
    /// Sup-norm change of the cell densities over the run, on cells the
    /// far-field truncation cannot reach.
    pub max_drift: f64,
    /// Largest `|β(t) - β_eq|`.
    pub max_beta_deviation: f64,
    pub beta_equilibrium: f64,
    pub budget: BudgetAudit,
    pub runtime_s: f64,
}

/// Cell averages of a profile by Simpson's rule on each cell.
pub fn profile_cell_averages(
    phase: &PhaseProfile,
    grid: &RadialGrid,
) -> Result<Vec<f64>, QuadratureError> {
    let v = phase.tabulate(0.5 * grid.dr, 2 * grid.n)?;
    Ok((0..grid.n)
        .map(|i| (v[2 * i] + 4.0 * v[2 * i + 1] + v[2 * i + 2]) / 6.0)
        .collect())
}

fn persistence_grid(
    reach: f64,
    speed_sum: f64,
    cfg: &PersistenceConfig,
) -> Result<(RadialGrid, usize), FluidError> {
    let keep = reach + cfg.margin;
    let grid = RadialGrid::new(keep + speed_sum * cfg.t_end + 2.0 * cfg.dr, cfg.dr)?;
    let window = ((keep / cfg.dr).floor() as usize).min(grid.n);
    Ok((grid, window))
}

fn drift(state: &FluidState, init: &FluidState, window: usize) -> f64 {
    let d = |a: &[f64], b: &[f64]| {
        a[..window]
            .iter()
            .zip(&b[..window])
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    d(&state.rho_plus, &init.rho_plus).max(d(&state.rho_minus, &init.rho_minus))
}

/// Starts the fluid solver at a single-market equilibrium and measures how
/// far it moves. Stationary points are compared in the comoving frame.
pub fn equilibrium_persistence(
    p: &MarketParams,
    e: &EquilibriumProfile,
    cfg: &PersistenceConfig,
) -> Result<PersistenceReport, ValidationError> {
    let start = Instant::now();
    let (grid, window) = persistence_grid(e.reach(), p.v_minus - p.v_plus, cfg)?;
    let solver = MarketSolver::new(p.clone(), grid, cfg.extraction)?;
    let init = FluidState::new(
        grid,
        profile_cell_averages(&e.plus, &grid)?,
        profile_cell_averages(&e.minus, &grid)?,
        0.0,
    )?;
    let mut state = init.clone();
    let dt = solver.stable_dt();
    let mut report = PersistenceReport {
        dr: cfg.dr,
        dt,
        max_drift: 0.0,
        max_beta_deviation: 0.0,
        beta_equilibrium: e.beta,
        budget: BudgetAudit {
            dt,
            ..Default::default()
        },
        runtime_s: 0.0,
    };
    solver.run(&mut state, cfg.t_end, dt, |s, r| {
        report.max_drift = report.max_drift.max(drift(s, &init, window));
        report.max_beta_deviation = report.max_beta_deviation.max((r.beta - e.beta).abs());
        report.budget.steps += 1;
        report.budget.record(&r.plus);
        report.budget.record(&r.minus);
    })?;
    report.runtime_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Network version; drift and `β` deviations are maxima over markets.
pub fn network_persistence(
    spec: &NetworkSpec,
    profiles: &[EquilibriumProfile],
    cfg: &PersistenceConfig,
) -> Result<PersistenceReport, ValidationError> {
    let start = Instant::now();
    if profiles.len() != spec.len() {
        return Err(ValidationError::Config(format!(
            "{} profiles for {} markets",
            profiles.len(),
            spec.len()
        )));
    }
    let reach = profiles.iter().map(|e| e.reach()).fold(0.0, f64::max);
    let speed = spec
        .markets
        .iter()
        .map(|p| p.v_minus - p.v_plus)
        .fold(0.0, f64::max);
    let (grid, window) = persistence_grid(reach, speed, cfg)?;
    let solver = NetworkSolver::new(spec.clone(), grid, cfg.extraction)?;
    let markets = profiles
        .iter()
        .map(|e| {
            Ok(FluidState::new(
                grid,
                profile_cell_averages(&e.plus, &grid)?,
                profile_cell_averages(&e.minus, &grid)?,
                0.0,
            )?)
        })
        .collect::<Result<Vec<_>, ValidationError>>()?;
    let init = NetworkFluidState { markets };
    let mut state = init.clone();
    let dt = solver.stable_dt();
    let mut report = PersistenceReport {
        dr: cfg.dr,
        dt,
        max_drift: 0.0,
        max_beta_deviation: 0.0,
        beta_equilibrium: 0.0,
        budget: BudgetAudit {
            dt,
            ..Default::default()
        },
        runtime_s: 0.0,
    };
    solver.run(&mut state, cfg.t_end, dt, |s, r| {
        report.budget.steps += 1;
        for ((m, i), (rep, e)) in s
            .markets
            .iter()
            .zip(&init.markets)
            .zip(r.markets.iter().zip(profiles))
        {
            report.max_drift = report.max_drift.max(drift(m, i, window));
            report.max_beta_deviation = report.max_beta_deviation.max((rep.beta - e.beta).abs());
            report.budget.record(&rep.plus);
            report.budget.record(&rep.minus);
        }
    })?;
    report.runtime_s = start.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceConfig {
    pub n_ladder: Vec<f64>,
    pub replicas: usize,
    pub t_end: f64,
    pub particle_dt: f64,
    pub fluid_dr: f64,
    pub bin_width: f64,
    pub n_bins: usize,
    pub seed: u64,
    /// Number of times at which `b` is compared.
    pub b_samples: usize,
}

impl ConvergenceConfig {
    /// Ladder and replica count of the acceptance scenario.
    pub fn standard(seed: u64) -> Self {
        Self {
            n_ladder: vec![1e2, 1e3, 1e4],
            replicas: 16,
            t_end: 2.0,
            particle_dt: 2e-3,
            fluid_dr: 2e-3,
            bin_width: 0.1,
            n_bins: 40,
            seed,
            b_samples: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelStats {
    pub n: f64,
    pub mean_l1: f64,
    pub se_l1: f64,
    /// Largest `|mean b - fluid b| / standard error` over the sample times.
    pub max_b_z: f64,
    pub final_b_mean: f64,
    pub final_b_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelStats>,
    /// Least-squares slope of `ln(mean L1)` against `ln N`.
    pub slope: f64,
    pub fluid_final_b: f64,
    pub fluid_budget: BudgetAudit,
    pub runtime_s: f64,
}

impl ConvergenceReport {
    pub fn max_b_z(&self) -> f64 {
        self.levels.iter().map(|l| l.max_b_z).fold(0.0, f64::max)
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Averages of cell values over bins `[j w, (j + 1) w)`.
fn bin_average(cells: &[f64], dr: f64, w: f64, n_bins: usize) -> Vec<f64> {
    (0..n_bins)
        .map(|j| {
            let (lo, hi) = (j as f64 * w, (j + 1) as f64 * w);
            let first = (lo / dr).floor() as usize;
            let mut acc = 0.0;
            for (i, v) in cells.iter().enumerate().skip(first) {
                let (a, b) = (i as f64 * dr, (i + 1) as f64 * dr);
                if a >= hi {
                    break;
                }
                acc += v * (b.min(hi) - a.max(lo)).max(0.0);
            }
            acc / w
        })
        .collect()
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn interpolate(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    let k = ts.partition_point(|s| *s < t);
    if k == 0 {
        return vs[0];
    }
    if k >= ts.len() {
        return *vs.last().unwrap();
    }
    let w = (t - ts[k - 1]) / (ts[k] - ts[k - 1]);
    vs[k - 1] + w * (vs[k] - vs[k - 1])
}

/// Particle ensembles at increasing intensity `N` against the fluid solution
/// of the same market.
pub fn particle_fluid_convergence(
    p: &MarketParams,
    init: &InitialCondition,
    cfg: &ConvergenceConfig,
) -> Result<ConvergenceReport, ValidationError> {
    let start = Instant::now();
    if cfg.n_ladder.len() < 2 || cfg.replicas < 2 {
        return Err(ValidationError::Config(
            "need at least two intensities and two replicas".into(),
        ));
    }
    let reach = p
        .support_radius()
        .max(init.support_radius())
        .max(cfg.bin_width * cfg.n_bins as f64);
    let grid = RadialGrid::new(
        reach + (p.v_minus - p.v_plus) * cfg.t_end + 1.0,
        cfg.fluid_dr,
    )?;
    let solver = MarketSolver::new(p.clone(), grid, BoundaryExtraction::FirstCell)?;
    let mut state = solver.initial_state(&init.rho_plus, &init.rho_minus, init.b0)?;
    let dt = solver.stable_dt();
    let mut ts = vec![0.0];
    let mut bs = vec![init.b0];
    let mut budget = BudgetAudit {
        dt,
        ..Default::default()
    };
    solver.run(&mut state, cfg.t_end, dt, |s, r| {
        ts.push(s.t);
        bs.push(s.b);
        budget.steps += 1;
        budget.record(&r.plus);
        budget.record(&r.minus);
    })?;
    let fl_plus = bin_average(&state.rho_plus, grid.dr, cfg.bin_width, cfg.n_bins);
    let fl_minus = bin_average(&state.rho_minus, grid.dr, cfg.bin_width, cfg.n_bins);

    let steps = (cfg.t_end / cfg.particle_dt - 1e-9).ceil().max(1.0) as usize;
    let sample_every = (steps / cfg.b_samples.max(1)).max(1);
    let mut levels = Vec::new();
    for (level, &n) in cfg.n_ladder.iter().enumerate() {
        let engine = ParticleEngine::new(p.clone(), n)?;
        let runs = (0..cfg.replicas as u64)
            .into_par_iter()
            .map(|replica| {
                let rc = RunConfig {
                    t_end: cfg.t_end,
                    dt: cfg.particle_dt,
                    sample_every,
                    density_every: 0,
                    bin_width: cfg.bin_width,
                    n_bins: cfg.n_bins,
                    seed: cfg.seed.wrapping_add(level as u64),
                    replica,
                };
                run_particles(&engine, init, &rc)
            })
            .collect::<Result<Vec<_>, ParticleError>>()?;
        let l1: Vec<f64> = runs
            .iter()
            .map(|tr| {
                let h = &tr
                    .final_snapshot()
                    .expect("final snapshot is always recorded")
                    .density;
                let d: f64 = h
                    .plus
                    .iter()
                    .zip(&fl_plus)
                    .chain(h.minus.iter().zip(&fl_minus))
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                d * cfg.bin_width
            })
            .collect();
        let (mean_l1, se_l1) = mean_se(&l1);
        let mut max_b_z = 0.0f64;
        let mut final_b = (0.0, 0.0);
        let samples = runs.iter().map(|r| r.times.len()).min().unwrap_or(0);
        for k in 1..samples {
            let t = runs[0].times[k];
            let b: Vec<f64> = runs.iter().map(|r| r.b[k]).collect();
            let (m, se) = mean_se(&b);
            let diff = (m - interpolate(&ts, &bs, t)).abs();
            let z = if se > 0.0 {
                diff / se
            } else if diff > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            max_b_z = max_b_z.max(z);
            final_b = (m, se);
        }
        levels.push(LevelStats {
            n,
            mean_l1,
            se_l1,
            max_b_z,
            final_b_mean: final_b.0,
            final_b_se: final_b.1,
        });
    }
    let x: Vec<f64> = levels.iter().map(|l| l.n.ln()).collect();
    let y: Vec<f64> = levels.iter().map(|l| l.mean_l1.ln()).collect();
    Ok(ConvergenceReport {
        slope: slope(&x, &y),
        levels,
        fluid_final_b: state.b,
        fluid_budget: budget,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Outflow grid on `[x_min, x_max] × [-v_max, v_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreeGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub v_max: f64,
    pub nv: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharacteristicsCheck {
    pub dx: f64,
    pub dt: f64,
    pub f0_l1: f64,
    /// L1 error on interior cells at `(dx, dt)` and at `(dx / 2, dt / 2)`.
    pub coarse_error: f64,
    pub fine_error: f64,
    /// `3 (dx + dt) ‖f0‖₁` at the coarse resolution.
    pub bound: f64,
    pub order: f64,
}

impl CharacteristicsCheck {
    pub fn passes(&self) -> bool {
        self.coarse_error <= self.bound && self.order >= 0.9
    }
}

fn free_l1_error(
    f0: &dyn Fn(f64, f64) -> f64,
    mu: &dyn Fn(f64, f64) -> f64,
    g: FreeGrid,
    t: f64,
    courant: f64,
) -> Result<(f64, f64, f64, f64), FreeError> {
    let field = FreeField::from_fn(g.x_min, g.x_max, g.nx, g.v_max, g.nv, Boundary::Outflow, f0)?;
    let dt = courant * field.dx() / g.v_max;
    let out = evolve_free(&field, |_, _, _| 0.0, |x, v, _| mu(x, v), t, dt)?;
    let mut err = 0.0;
    for j in 0..out.nv() {
        let v = out.v_center(j);
        for i in out.interior_cells(t) {
            let x = out.x_center(i);
            let exact = characteristics_value(&f0, mu, out.domain(), x, v, t, 1e-10)?;
            err += (out.get(i, j) - exact).abs();
        }
    }
    let cell = out.dx() * out.dv();
    Ok((err * cell, field.mass(), field.dx(), dt))
}

/// Upwind solution of the free equation with `λ = 0` against the
/// characteristics formula, at one resolution and after halving `dx` and
/// `dt`. The velocity grid is shared, so only transport error is measured.
pub fn characteristics_check(
    f0: &dyn Fn(f64, f64) -> f64,
    mu: &dyn Fn(f64, f64) -> f64,
    g: FreeGrid,
    t: f64,
) -> Result<CharacteristicsCheck, FreeError> {
    let courant = 0.5;
    let (coarse_error, f0_l1, dx, dt) = free_l1_error(f0, mu, g, t, courant)?;
    let fine = FreeGrid { nx: 2 * g.nx, ..g };
    let (fine_error, _, _, _) = free_l1_error(f0, mu, fine, t, courant)?;
    Ok(CharacteristicsCheck {
        dx,
        dt,
        f0_l1,
        coarse_error,
        fine_error,
        bound: 3.0 * (dx + dt) * f0_l1,
        order: (coarse_error / fine_error).log2(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualScaling {
    pub coarse: ResidualReport,
    pub fine: ResidualReport,
}

impl ResidualScaling {
    /// Residual below `tol` at the given spacing and second-order decay on
    /// halving it.
    pub fn passes(&self, tol: f64) -> bool {
        self.coarse.max_residual() < tol && self.fine.scales_from(&self.coarse, 3.5)
    }

    /// Both residuals are at the rounding floor, so no rate is measurable.
    pub fn at_roundoff(&self) -> bool {
        self.coarse.max_residual() <= self.coarse.roundoff_floor
            && self.fine.max_residual() <= self.fine.roundoff_floor
    }

    pub fn ratio(&self) -> f64 {
        self.coarse.max_residual() / self.fine.max_residual()
    }
}

/// Residuals at `dr` and `dr / 2`.
pub fn residual_scaling(
    e: &EquilibriumProfile,
    p: &MarketParams,
    dr: f64,
    r_max: f64,
) -> Result<ResidualScaling, QuadratureError> {
    Ok(ResidualScaling {
        coarse: verify_equilibrium(e, p, dr, r_max)?,
        fine: verify_equilibrium(e, p, 0.5 * dr, r_max)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::CompactRateFunction;
    use crate::equilibria::fixed_point_single;

    #[test]
    fn bin_average_of_constant() {
        let v = bin_average(&[2.0; 100], 0.01, 0.1, 10);
        assert!(v.iter().all(|x| (x - 2.0).abs() < 1e-12));
    }

    #[test]
    fn slope_of_power_law() {
        let x: Vec<f64> = [1e2f64, 1e3, 1e4].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = [1e2f64, 1e3, 1e4]
            .iter()
            .map(|v| (3.0 * v.powf(-0.5)).ln())
            .collect();
        assert!((slope(&x, &y) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn interpolation() {
        assert_eq!(interpolate(&[0.0, 1.0], &[0.0, 2.0], 0.25), 0.5);
        assert_eq!(interpolate(&[0.0, 1.0], &[0.0, 2.0], 5.0), 2.0);
    }

    #[test]
    fn gaussian_translation_is_first_order() {
        let f0 = |x: f64, v: f64| (-(x * x) / 0.1).exp() * (1.0 + 0.5 * v);
        let mu = |x: f64, _v: f64| 0.5 * (-x * x).exp();
        let g = FreeGrid {
            x_min: -3.0,
            x_max: 3.0,
            nx: 200,
            v_max: 1.0,
            nv: 8,
        };
        let c = characteristics_check(&f0, &mu, g, 0.5).unwrap();
        assert!(c.passes(), "{c:?}");
    }

    #[test]
    fn critical_box_fixed_point_persists() {
        let mut p = MarketParams::with_velocities(-1.0, 1.0);
        p.lambda_plus = CompactRateFunction::boxcar(1.0, 1.0);
        p.lambda_minus = CompactRateFunction::boxcar(1.0, 1.0);
        let e = fixed_point_single(&p, 1.0).unwrap();
        let cfg = PersistenceConfig {
            dr: 4e-3,
            t_end: 0.5,
            ..Default::default()
        };
        let r = equilibrium_persistence(&p, &e, &cfg).unwrap();
        assert!(r.max_drift < 4e-3, "{r:?}");
        assert_eq!(r.max_beta_deviation, 0.0);
        assert!(r.budget.passes(), "{:?}", r.budget);
    }
}

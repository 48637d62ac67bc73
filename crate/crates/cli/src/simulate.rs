//! `simulate`: fluid, particle and free-transport runs.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use kinmarket::domain::{InitialCondition, MarketParams, NetworkSpec};
use kinmarket::fluid::{FluidState, MarketSolver, NetworkSolver, RadialGrid, RunSummary};
use kinmarket::free_kinetics::{evolve_free, Boundary, FreeField, MAX_COURANT};
use kinmarket::particles::{run_particles, ParticleEngine, RunConfig};
use kinmarket::validation::{characteristics_check, BudgetAudit, FreeGrid};

use crate::manifest::{GridInfo, Manifest};
use crate::scenario::{FreeScenario, LoadedScenario, ModelTier};
use crate::{csv_err, csv_writer, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Fluid,
    Particles,
}

#[derive(Debug, Clone, Default)]
pub struct SimulateOptions {
    pub engine: Option<Engine>,
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
}

/// Particle step used when the scenario gives none.
pub const DEFAULT_PARTICLE_DT: f64 = 1e-3;

pub fn simulate(
    sc: &LoadedScenario,
    opts: &SimulateOptions,
    dir: &Path,
) -> Result<serde_json::Value, CliError> {
    let started = Instant::now();
    let s = &sc.scenario;
    let engine = opts.engine.unwrap_or(Engine::Fluid);
    let mut m = Manifest::new("simulate", sc);
    m.engine = Some(format!("{engine:?}").to_lowercase());
    if let Some(seed) = opts.seed {
        m.seed = seed;
    }
    if let Some(r) = opts.replicas {
        if r == 0 {
            return Err(CliError::Config("--replicas must be at least 1".into()));
        }
        m.replicas = r;
    }
    match (s.model_tier, engine) {
        (ModelTier::Free, Engine::Fluid) => {
            let f = s.free.as_ref().expect("validated");
            let result = free_run(f, s.numerics.t_end, s.numerics.dt, dir, &mut m)?;
            m.finish(dir, started, result)
        }
        (ModelTier::Free, Engine::Particles) => Err(CliError::Config(
            "tier free has no particle engine; use --engine fluid".into(),
        )),
        (ModelTier::Network, Engine::Particles) => Err(CliError::Config(
            "the particle engine covers single and recycling markets only".into(),
        )),
        (ModelTier::Network, Engine::Fluid) => {
            let spec = s.network.as_ref().expect("validated");
            let init = s
                .initial_network
                .as_ref()
                .ok_or_else(|| CliError::Config("simulate needs `initial_network`".into()))?;
            let result = network_fluid(sc, spec, init, dir, &mut m)?;
            m.finish(dir, started, result)
        }
        (_, engine) => {
            let p = s.market.as_ref().expect("validated");
            let init = s
                .initial
                .as_ref()
                .ok_or_else(|| CliError::Config("simulate needs `initial`".into()))?;
            match engine {
                Engine::Fluid => {
                    let result = market_fluid(sc, p, init, dir, &mut m)?;
                    m.finish(dir, started, result)
                }
                Engine::Particles => {
                    let result = particles(sc, p, init, dir, &mut m)?;
                    m.finish(dir, started, result)
                }
            }
        }
    }
}

fn grid_for(
    sc: &LoadedScenario,
    support: f64,
    v_plus: f64,
    v_minus: f64,
) -> Result<RadialGrid, CliError> {
    let n = &sc.scenario.numerics;
    Ok(match n.r_max {
        Some(r) => RadialGrid::new(r, n.dr)?,
        None => RadialGrid::for_horizon(support, v_plus, v_minus, n.t_end, n.r_margin, n.dr)?,
    })
}

#[derive(Debug, Serialize)]
struct FluidResult {
    steps: usize,
    final_t: f64,
    final_b: f64,
    final_beta: f64,
    mass_plus: f64,
    mass_minus: f64,
    summary: RunSummary,
    budget: BudgetAudit,
    budget_passes: bool,
}

fn market_fluid(
    sc: &LoadedScenario,
    p: &MarketParams,
    init: &InitialCondition,
    dir: &Path,
    m: &mut Manifest,
) -> Result<FluidResult, CliError> {
    let s = &sc.scenario;
    let grid = grid_for(
        sc,
        p.support_radius().max(init.support_radius()),
        p.v_plus,
        p.v_minus,
    )?;
    let solver = MarketSolver::new(p.clone(), grid, s.numerics.boundary_extraction)?;
    let mut state = solver.initial_state(&init.rho_plus, &init.rho_minus, init.b0)?;
    let dt = s.numerics.dt.unwrap_or_else(|| solver.stable_dt());
    m.grid = Some(GridInfo {
        dr: grid.dr,
        cells: grid.n,
        r_max: grid.r_max(),
    });
    m.dt = Some(dt);
    m.tolerances
        .insert("max_courant", kinmarket::fluid::MAX_COURANT);

    let mut snaps = csv_writer(dir, "snapshots.csv", &mut m.artifacts)?;
    snaps
        .write_record(["t", "b", "beta", "phase", "r", "rho"])
        .map_err(csv_err)?;
    state.write_snapshot_rows(&mut snaps).map_err(csv_err)?;
    let mut path = csv_writer(dir, "path.csv", &mut m.artifacts)?;
    path.write_record([
        "t",
        "b",
        "beta",
        "mass_plus",
        "mass_minus",
        "annihilation_flux",
    ])
    .map_err(csv_err)?;
    path.serialize((
        state.t,
        state.b,
        state.beta,
        state.mass_plus(),
        state.mass_minus(),
        0.0,
    ))
    .map_err(csv_err)?;

    let every = s.outputs.snapshot_every;
    let mut budget = BudgetAudit {
        dt,
        ..Default::default()
    };
    let mut failure = None;
    let mut last_snapshot = 0;
    let summary = solver.run(&mut state, s.numerics.t_end, dt, |st, r| {
        budget.steps += 1;
        budget.record(&r.plus);
        budget.record(&r.minus);
        let mut write = || -> csv::Result<()> {
            path.serialize((
                st.t,
                st.b,
                st.beta,
                st.mass_plus(),
                st.mass_minus(),
                r.annihilation_flux,
            ))?;
            if every > 0 && budget.steps.is_multiple_of(every) {
                st.write_snapshot_rows(&mut snaps)?;
                last_snapshot = budget.steps;
            }
            Ok(())
        };
        if let Err(e) = write() {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(csv_err(e));
    }
    if last_snapshot != budget.steps {
        state.write_snapshot_rows(&mut snaps).map_err(csv_err)?;
    }
    snaps.flush().map_err(csv_err)?;
    path.flush().map_err(csv_err)?;
    log::info!("fluid run: {} steps, final b = {}", summary.steps, state.b);
    Ok(FluidResult {
        steps: summary.steps,
        final_t: state.t,
        final_b: state.b,
        final_beta: state.beta,
        mass_plus: state.mass_plus(),
        mass_minus: state.mass_minus(),
        budget_passes: budget.passes(),
        summary,
        budget,
    })
}

#[derive(Debug, Serialize)]
struct NetworkMarketResult {
    final_b: f64,
    final_beta: f64,
    mass_plus: f64,
    mass_minus: f64,
}

#[derive(Debug, Serialize)]
struct NetworkResult {
    steps: usize,
    final_t: f64,
    total_mass: f64,
    markets: Vec<NetworkMarketResult>,
    budget: BudgetAudit,
    budget_passes: bool,
}

fn network_fluid(
    sc: &LoadedScenario,
    spec: &NetworkSpec,
    init: &[InitialCondition],
    dir: &Path,
    m: &mut Manifest,
) -> Result<NetworkResult, CliError> {
    let s = &sc.scenario;
    let support = spec
        .markets
        .iter()
        .map(MarketParams::support_radius)
        .chain(spec.routing.iter().flat_map(|r| {
            [&r.p_minus_plus, &r.p_plus_minus]
                .into_iter()
                .flatten()
                .map(|k| k.support_radius())
        }))
        .chain(init.iter().map(InitialCondition::support_radius))
        .fold(0.0, f64::max);
    let v_plus = spec.markets.iter().map(|p| p.v_plus).fold(0.0, f64::min);
    let v_minus = spec.markets.iter().map(|p| p.v_minus).fold(0.0, f64::max);
    let grid = grid_for(sc, support, v_plus, v_minus)?;
    let solver = NetworkSolver::new(spec.clone(), grid, s.numerics.boundary_extraction)?;
    let triples: Vec<_> = init
        .iter()
        .map(|c| (c.rho_plus.clone(), c.rho_minus.clone(), c.b0))
        .collect();
    let mut state = solver.initial_state(&triples)?;
    let dt = s.numerics.dt.unwrap_or_else(|| solver.stable_dt());
    m.grid = Some(GridInfo {
        dr: grid.dr,
        cells: grid.n,
        r_max: grid.r_max(),
    });
    m.dt = Some(dt);

    let mut snaps = Vec::new();
    for (k, st) in state.markets.iter().enumerate() {
        let mut w = csv_writer(dir, &format!("snapshots_m{k}.csv"), &mut m.artifacts)?;
        w.write_record(["t", "b", "beta", "phase", "r", "rho"])
            .map_err(csv_err)?;
        st.write_snapshot_rows(&mut w).map_err(csv_err)?;
        snaps.push(w);
    }
    let mut path = csv_writer(dir, "path.csv", &mut m.artifacts)?;
    path.write_record(["t", "market", "b", "beta", "mass_plus", "mass_minus"])
        .map_err(csv_err)?;
    let path_rows = |w: &mut csv::Writer<_>, markets: &[FluidState]| -> csv::Result<()> {
        for (k, st) in markets.iter().enumerate() {
            w.serialize((st.t, k, st.b, st.beta, st.mass_plus(), st.mass_minus()))?;
        }
        Ok(())
    };
    path_rows(&mut path, &state.markets).map_err(csv_err)?;

    let every = s.outputs.snapshot_every;
    let mut budget = BudgetAudit {
        dt,
        ..Default::default()
    };
    let mut failure = None;
    let mut last_snapshot = 0;
    let steps = solver.run(&mut state, s.numerics.t_end, dt, |st, r| {
        budget.steps += 1;
        for rep in &r.markets {
            budget.record(&rep.plus);
            budget.record(&rep.minus);
        }
        let mut write = || -> csv::Result<()> {
            path_rows(&mut path, &st.markets)?;
            if every > 0 && budget.steps.is_multiple_of(every) {
                for (w, ms) in snaps.iter_mut().zip(&st.markets) {
                    ms.write_snapshot_rows(w)?;
                }
                last_snapshot = budget.steps;
            }
            Ok(())
        };
        if let Err(e) = write() {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(csv_err(e));
    }
    for (w, ms) in snaps.iter_mut().zip(&state.markets) {
        if last_snapshot != budget.steps {
            ms.write_snapshot_rows(w).map_err(csv_err)?;
        }
        w.flush().map_err(csv_err)?;
    }
    path.flush().map_err(csv_err)?;
    Ok(NetworkResult {
        steps,
        final_t: state.t(),
        total_mass: state.total_mass(),
        markets: state
            .markets
            .iter()
            .map(|st| NetworkMarketResult {
                final_b: st.b,
                final_beta: st.beta,
                mass_plus: st.mass_plus(),
                mass_minus: st.mass_minus(),
            })
            .collect(),
        budget_passes: budget.passes(),
        budget,
    })
}

#[derive(Debug, Serialize)]
struct ReplicaResult {
    replica: u64,
    final_b: f64,
    n_plus: usize,
    n_minus: usize,
    annihilations: usize,
    empty_plus_episodes: usize,
    terminated_at: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ParticleResult {
    n_scale: f64,
    dt: f64,
    replicas: Vec<ReplicaResult>,
}

fn particles(
    sc: &LoadedScenario,
    p: &MarketParams,
    init: &InitialCondition,
    dir: &Path,
    m: &mut Manifest,
) -> Result<ParticleResult, CliError> {
    let s = &sc.scenario;
    let engine = ParticleEngine::new(p.clone(), s.numerics.n_scale)?;
    let dt = s.numerics.dt.unwrap_or(DEFAULT_PARTICLE_DT);
    m.dt = Some(dt);
    let cfg = |replica| RunConfig {
        t_end: s.numerics.t_end,
        dt,
        sample_every: s.outputs.sample_every,
        density_every: s.outputs.density_every,
        bin_width: s.numerics.bin_width,
        n_bins: s.numerics.n_bins,
        seed: m.seed,
        replica,
    };
    let runs = (0..m.replicas as u64)
        .into_par_iter()
        .map(|k| run_particles(&engine, init, &cfg(k)).map(|t| (k, t)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(runs.len());
    for (k, tr) in &runs {
        let names = [
            format!("path_r{k:03}.csv"),
            format!("annihilations_r{k:03}.csv"),
            format!("density_r{k:03}.csv"),
        ];
        for (i, name) in names.iter().enumerate() {
            let file = std::fs::File::create(dir.join(name)).map_err(csv_err)?;
            match i {
                0 => tr.write_path_csv(file),
                1 => tr.write_annihilations_csv(file),
                _ => tr.write_density_csv(file),
            }
            .map_err(csv_err)?;
            m.artifacts.push(name.clone());
        }
        out.push(ReplicaResult {
            replica: *k,
            final_b: *tr.b.last().unwrap_or(&init.b0),
            n_plus: *tr.n_plus.last().unwrap_or(&0),
            n_minus: *tr.n_minus.last().unwrap_or(&0),
            annihilations: tr.annihilations.len(),
            empty_plus_episodes: tr.empty_plus.len(),
            terminated_at: tr.terminated_at,
        });
    }
    Ok(ParticleResult {
        n_scale: s.numerics.n_scale,
        dt,
        replicas: out,
    })
}

#[derive(Debug, Serialize)]
struct FreeResult {
    dx: f64,
    dt: f64,
    mass_initial: f64,
    mass_final: f64,
    /// Interior L1 error against the characteristics formula (`λ = 0` only).
    #[serde(skip_serializing_if = "Option::is_none")]
    characteristics_error: Option<f64>,
}

fn free_run(
    f: &FreeScenario,
    t_end: f64,
    dt: Option<f64>,
    dir: &Path,
    m: &mut Manifest,
) -> Result<FreeResult, CliError> {
    let boundary = if f.periodic {
        Boundary::Periodic
    } else {
        Boundary::Outflow
    };
    let f0 = |x: f64, v: f64| f.f0_x.eval(x) * f.f0_v.eval(v);
    let mu = |x: f64, _v: f64| f.mu_x.as_ref().map_or(0.0, |t| t.eval(x));
    let lambda = |x: f64, v: f64, _t: f64| match (&f.lambda_x, &f.lambda_v) {
        (Some(a), Some(b)) => a.eval(x) * b.eval(v),
        _ => 0.0,
    };
    let field = FreeField::from_fn(f.x_min, f.x_max, f.nx, f.v_max, f.nv, boundary, f0)?;
    let mu_max = f.mu_x.as_ref().map_or(0.0, |t| t.max_value());
    let dt = dt.unwrap_or(MAX_COURANT / (f.v_max / field.dx() + mu_max));
    m.dt = Some(dt);
    let out = evolve_free(&field, lambda, |x, v, _| mu(x, v), t_end, dt)?;
    let file = std::fs::File::create(dir.join("field.csv")).map_err(csv_err)?;
    out.write_csv(file).map_err(csv_err)?;
    m.artifacts.push("field.csv".into());
    let characteristics_error = if f.lambda_x.is_none() && !f.periodic {
        let g = FreeGrid {
            x_min: f.x_min,
            x_max: f.x_max,
            nx: f.nx,
            v_max: f.v_max,
            nv: f.nv,
        };
        // the check integrates at its own step; report its coarse error
        characteristics_check(&f0, &mu, g, t_end)
            .ok()
            .map(|c| c.coarse_error)
    } else {
        None
    };
    Ok(FreeResult {
        dx: field.dx(),
        dt,
        mass_initial: field.mass(),
        mass_final: out.mass(),
        characteristics_error,
    })
}

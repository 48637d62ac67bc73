//! `validate`: cross-engine comparisons with pass/fail per check.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use kinmarket::domain::MarketParams;
use kinmarket::equilibria::{
    critical_constants, fixed_point_network, fixed_point_recycling, fixed_point_single,
    network_constants, solve_network_inequalities, stationary_point_recycling,
    stationary_point_single, verify_network, EquilibriumError, EquilibriumProfile,
};
use kinmarket::validation::{
    characteristics_check, equilibrium_persistence, network_persistence,
    particle_fluid_convergence, residual_scaling, ConvergenceConfig, FreeGrid, PersistenceConfig,
    PersistenceReport,
};

use crate::manifest::Manifest;
use crate::scenario::{LoadedScenario, ModelTier, Scenario, ValidationSettings};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub skipped: bool,
    pub detail: String,
    pub measured: serde_json::Value,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String, measured: serde_json::Value) -> Self {
        Self {
            name: name.into(),
            passed,
            skipped: false,
            detail,
            measured,
        }
    }

    fn skipped(name: &str, why: &str) -> Self {
        Self {
            name: name.into(),
            passed: true,
            skipped: true,
            detail: why.into(),
            measured: serde_json::Value::Null,
        }
    }

    fn failed(name: &str, why: String) -> Self {
        Self::new(name, false, why, serde_json::Value::Null)
    }

    pub fn line(&self) -> String {
        let tag = if self.skipped {
            "SKIP"
        } else if self.passed {
            "PASS"
        } else {
            "FAIL"
        };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Serialize)]
pub struct ValidationSummary {
    pub checks: Vec<CheckOutcome>,
    pub failed: usize,
}

/// Runs every enabled check, writes the report and manifest, then prints one
/// line per check. Returns the number of failed checks.
pub fn validate(sc: &LoadedScenario, dir: &Path) -> Result<usize, CliError> {
    let started = Instant::now();
    let s = &sc.scenario;
    let v = &s.validation;
    let mut m = Manifest::new("validate", sc);
    m.tolerances.insert("max_drift", v.max_drift);
    m.tolerances
        .insert("max_beta_deviation", v.max_beta_deviation);
    m.tolerances.insert("max_b_z", v.max_b_z);
    m.tolerances.insert("max_residual", v.max_residual);
    let mut checks = Vec::new();
    if v.persistence {
        checks.extend(persistence(s)?);
    }
    if v.convergence {
        checks.push(convergence(s)?);
    }
    if v.residuals {
        checks.extend(residuals(s)?);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let summary = ValidationSummary { checks, failed };
    crate::write_json(dir, "validation.json", &summary)?;
    m.artifacts.push("validation.json".into());
    m.finish(dir, started, &summary)?;
    for c in &summary.checks {
        println!("{}", c.line());
    }
    Ok(failed)
}

fn persistence_outcome(name: &str, r: &PersistenceReport, v: &ValidationSettings) -> CheckOutcome {
    let ok_drift = r.max_drift < v.max_drift;
    let ok_beta = r.max_beta_deviation < v.max_beta_deviation;
    let ok_budget = r.budget.passes();
    CheckOutcome::new(
        name,
        ok_drift && ok_beta && ok_budget,
        format!(
            "drift {:.3e} (< {:.0e}), |beta - beta_eq| {:.3e} (< {:.0e}), budget closure {:.3e} of throughput {:.3e} ({})",
            r.max_drift,
            v.max_drift,
            r.max_beta_deviation,
            v.max_beta_deviation,
            r.budget.cumulative_error,
            r.budget.cumulative_throughput,
            if ok_budget { "ok" } else { "violated" },
        ),
        serde_json::to_value(r).unwrap_or_default(),
    )
}

/// Fixed point at the finite-mass threshold; `None` with a reason when the
/// theorem says there is none.
fn critical_fixed_point(
    p: &MarketParams,
    tier: ModelTier,
) -> Result<Result<EquilibriumProfile, String>, CliError> {
    let run = || -> Result<EquilibriumProfile, EquilibriumError> {
        let c = critical_constants(p)?;
        if tier == ModelTier::Recycling {
            fixed_point_recycling(p, c.gamma_hat_cr)
        } else {
            fixed_point_single(p, c.gamma_cr)
        }
    };
    match run() {
        Ok(e) => Ok(Ok(e)),
        Err(e) if e.is_model_answer() => Ok(Err(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

fn least_network_fixed_point(
    s: &Scenario,
) -> Result<Result<Vec<EquilibriumProfile>, String>, CliError> {
    let spec = s.network.as_ref().expect("validated");
    let run = || -> Result<Vec<EquilibriumProfile>, EquilibriumError> {
        let c = network_constants(spec)?;
        let s_bar = solve_network_inequalities(&c)?;
        fixed_point_network(spec, &s_bar)
    };
    match run() {
        Ok(e) => Ok(Ok(e)),
        Err(e) if e.is_model_answer() => Ok(Err(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

fn persistence(s: &Scenario) -> Result<Vec<CheckOutcome>, CliError> {
    let v = &s.validation;
    let cfg = PersistenceConfig {
        dr: v.persistence_dr,
        t_end: v.persistence_t_end,
        margin: s.numerics.r_margin,
        extraction: s.numerics.boundary_extraction,
    };
    let name = "persistence";
    Ok(vec![match s.model_tier {
        ModelTier::Free => return Ok(vec![characteristics(s)?]),
        ModelTier::Single | ModelTier::Recycling => {
            let p = s.market.as_ref().expect("validated");
            match critical_fixed_point(p, s.model_tier)? {
                Ok(e) => persistence_outcome(name, &equilibrium_persistence(p, &e, &cfg)?, v),
                Err(why) => {
                    CheckOutcome::failed(name, format!("no fixed point to start from: {why}"))
                }
            }
        }
        ModelTier::Network => match least_network_fixed_point(s)? {
            Ok(e) => persistence_outcome(
                name,
                &network_persistence(s.network.as_ref().expect("validated"), &e, &cfg)?,
                v,
            ),
            Err(why) => CheckOutcome::failed(name, format!("no fixed point to start from: {why}")),
        },
    }])
}

fn characteristics(s: &Scenario) -> Result<CheckOutcome, CliError> {
    let name = "characteristics";
    let f = s.free.as_ref().expect("validated");
    if f.lambda_x.is_some() || f.periodic {
        return Ok(CheckOutcome::skipped(
            name,
            "needs zero arrivals and an outflow boundary",
        ));
    }
    let f0 = |x: f64, v: f64| f.f0_x.eval(x) * f.f0_v.eval(v);
    let mu = |x: f64, _v: f64| f.mu_x.as_ref().map_or(0.0, |t| t.eval(x));
    let g = FreeGrid {
        x_min: f.x_min,
        x_max: f.x_max,
        nx: f.nx,
        v_max: f.v_max,
        nv: f.nv,
    };
    let c = characteristics_check(&f0, &mu, g, s.numerics.t_end)?;
    Ok(CheckOutcome::new(
        name,
        c.passes(),
        format!(
            "L1 error {:.3e} (<= {:.3e}), order {:.3} (>= 0.9)",
            c.coarse_error, c.bound, c.order
        ),
        json!(c),
    ))
}

fn convergence(s: &Scenario) -> Result<CheckOutcome, CliError> {
    let name = "particle-fluid convergence";
    let v = &s.validation;
    let (Some(p), Some(init)) = (&s.market, &s.initial) else {
        return Ok(CheckOutcome::skipped(
            name,
            "needs a single or recycling market with `initial`",
        ));
    };
    let cfg = ConvergenceConfig {
        n_ladder: v.n_ladder.clone(),
        replicas: v.convergence_replicas,
        t_end: v.convergence_t_end,
        particle_dt: v.particle_dt,
        fluid_dr: v.fluid_dr,
        bin_width: s.numerics.bin_width,
        n_bins: s.numerics.n_bins,
        seed: s.numerics.seed,
        b_samples: 10,
    };
    let r = particle_fluid_convergence(p, init, &cfg)?;
    let [lo, hi] = v.slope_range;
    let ok_slope = r.slope >= lo && r.slope <= hi;
    let ok_b = r.max_b_z() < v.max_b_z;
    let l1: Vec<String> = r
        .levels
        .iter()
        .map(|l| format!("{:.3e}", l.mean_l1))
        .collect();
    Ok(CheckOutcome::new(
        name,
        ok_slope && ok_b && r.fluid_budget.passes(),
        format!(
            "L1 [{}], slope {:.3} (in [{lo}, {hi}]), max b z-score {:.2} (< {})",
            l1.join(", "),
            r.slope,
            r.max_b_z(),
            v.max_b_z
        ),
        json!(r),
    ))
}

fn residuals(s: &Scenario) -> Result<Vec<CheckOutcome>, CliError> {
    let v = &s.validation;
    let dr = v.residual_dr;
    let tol = v.max_residual;
    let mut out = Vec::new();
    match s.model_tier {
        ModelTier::Free => out.push(CheckOutcome::skipped(
            "residuals",
            "tier free has no equilibria",
        )),
        ModelTier::Single | ModelTier::Recycling => {
            let p = s.market.as_ref().expect("validated");
            let fixed = critical_fixed_point(p, s.model_tier)?;
            let stationary = if s.model_tier == ModelTier::Recycling {
                stationary_point_recycling(p).map(|(e, _)| e)
            } else {
                critical_constants(p)
                    .and_then(|c| stationary_point_single(p, c.gamma_cr_plus, c.gamma_cr_minus))
            };
            let stationary = match stationary {
                Ok(e) => Ok(e),
                Err(e) if e.is_model_answer() || matches!(e, EquilibriumError::NoArrivals) => {
                    Err(e.to_string())
                }
                Err(e) => return Err(e.into()),
            };
            for (name, e) in [
                ("residuals[fixed]", fixed),
                ("residuals[stationary]", stationary),
            ] {
                out.push(match e {
                    Ok(e) => {
                        let r = residual_scaling(&e, p, dr, e.reach() + 1.0)
                            .map_err(|e| CliError::Runtime(e.to_string()))?;
                        CheckOutcome::new(
                            name,
                            r.passes(tol),
                            format!(
                                "max residual {:.3e} (< {tol:.0e}) at dr = {}, {}",
                                r.coarse.max_residual(),
                                r.coarse.dr,
                                if r.at_roundoff() {
                                    "at rounding level".to_string()
                                } else {
                                    format!("ratio {:.2} on halving (>= 3.5)", r.ratio())
                                }
                            ),
                            json!(r),
                        )
                    }
                    Err(why) => CheckOutcome::skipped(name, &why),
                });
            }
        }
        ModelTier::Network => {
            let name = "residuals[network]";
            out.push(match least_network_fixed_point(s)? {
                Ok(e) => {
                    let spec = s.network.as_ref().expect("validated");
                    let r_max = e.iter().map(|x| x.reach()).fold(0.0, f64::max) + 1.0;
                    let rt =
                        |e: kinmarket::domain::QuadratureError| CliError::Runtime(e.to_string());
                    let coarse = verify_network(&e, spec, dr, r_max).map_err(rt)?;
                    let fine = verify_network(&e, spec, 0.5 * dr, r_max).map_err(rt)?;
                    let ok = coarse
                        .iter()
                        .zip(&fine)
                        .all(|(c, f)| c.max_residual() < tol && f.scales_from(c, 3.5));
                    let worst = coarse.iter().map(|f| f.max_residual()).fold(0.0, f64::max);
                    CheckOutcome::new(
                        name,
                        ok,
                        format!(
                            "max residual {worst:.3e} (< {tol:.0e}) over {} markets",
                            fine.len()
                        ),
                        json!({ "coarse": coarse, "fine": fine }),
                    )
                }
                Err(why) => CheckOutcome::failed(name, format!("no fixed point: {why}")),
            });
        }
    }
    Ok(out)
}

//! `equilibrium`: closed-form fixed and stationary points.
//!
//! A theorem's "no equilibrium" branch is a result, reported with
//! `exists = false` and exit code 0.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use kinmarket::domain::{MarketParams, NetworkSpec};
use kinmarket::equilibria::{
    critical_constants, fixed_point_network, fixed_point_recycling, fixed_point_single,
    network_constants, solve_network_inequalities, stationary_point_recycling,
    stationary_point_single, verify_equilibrium, verify_network, BranchKind, CriticalConstants,
    EquilibriumError, EquilibriumProfile, EquilibriumSummary, NetworkConstants, ResidualReport,
};

use crate::manifest::Manifest;
use crate::scenario::{LoadedScenario, ModelTier};
use crate::{csv_err, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Fixed,
    Stationary,
}

#[derive(Debug, Clone)]
pub struct EquilibriumOptions {
    pub kind: Kind,
    pub gamma_plus: Option<f64>,
    pub gamma_minus: Option<f64>,
    pub s_bar: Option<Vec<f64>>,
}

#[derive(Debug, Default, Serialize)]
pub struct EquilibriumReport {
    pub kind: Option<Kind>,
    pub exists: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_fixed_point: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub no_stationary_point: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_cr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_hat_cr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<CriticalConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network_constants: Option<NetworkConstants>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_bar: Option<Vec<f64>>,
    /// True when `s_bar` was computed as the least solution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_bar_computed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<BranchKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub profiles: Vec<EquilibriumSummary>,
    pub residuals: Vec<ResidualReport>,
}

impl EquilibriumReport {
    fn absent(&mut self, e: &EquilibriumError) {
        self.exists = false;
        match self.kind {
            Some(Kind::Fixed) => self.no_fixed_point = Some(true),
            Some(Kind::Stationary) => self.no_stationary_point = Some(true),
            None => {}
        }
        self.reason = Some(e.to_string());
    }
}

fn split<T>(
    r: Result<T, EquilibriumError>,
    report: &mut EquilibriumReport,
) -> Result<Option<T>, CliError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_model_answer() => {
            report.absent(&e);
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn equilibrium(
    sc: &LoadedScenario,
    opts: &EquilibriumOptions,
    dir: &Path,
) -> Result<serde_json::Value, CliError> {
    let started = Instant::now();
    let s = &sc.scenario;
    let mut m = Manifest::new("equilibrium", sc);
    let dr = s.numerics.dr;
    let residual_dr = s.validation.residual_dr;
    m.tolerances.insert("residual_dr", residual_dr);
    m.tolerances.insert("csv_dr", dr);
    let mut report = EquilibriumReport {
        kind: Some(opts.kind),
        ..Default::default()
    };
    let profiles: Vec<EquilibriumProfile> = match s.model_tier {
        ModelTier::Free => return Err(CliError::Config("tier free has no equilibria".into())),
        ModelTier::Single | ModelTier::Recycling => {
            let p = s.market.as_ref().expect("validated");
            single(p, s.model_tier, opts, &mut report)?
                .into_iter()
                .collect()
        }
        ModelTier::Network => {
            if opts.kind == Kind::Stationary {
                return Err(CliError::Config(
                    "networks have fixed points only; use --kind fixed".into(),
                ));
            }
            let spec = s.network.as_ref().expect("validated");
            network(spec, opts, &mut report)?
        }
    };
    if !profiles.is_empty() {
        report.exists = true;
        report.no_fixed_point = (opts.kind == Kind::Fixed).then_some(false);
        report.no_stationary_point = (opts.kind == Kind::Stationary).then_some(false);
        report.beta = Some(profiles[0].beta);
        let reach = profiles.iter().map(|e| e.reach()).fold(0.0, f64::max) + 1.0;
        report.residuals = match (&s.market, &s.network) {
            (Some(p), _) => {
                vec![verify_equilibrium(&profiles[0], p, residual_dr, reach).map_err(rt)?]
            }
            (_, Some(spec)) => verify_network(&profiles, spec, residual_dr, reach).map_err(rt)?,
            _ => unreachable!("validated"),
        };
        let n = (reach / dr).ceil() as usize;
        for (k, e) in profiles.iter().enumerate() {
            let name = if profiles.len() == 1 {
                "profile.csv".to_string()
            } else {
                format!("profile_m{k}.csv")
            };
            let file = std::fs::File::create(dir.join(&name)).map_err(csv_err)?;
            e.write_csv(file, dr, n).map_err(csv_err)?;
            m.artifacts.push(name);
        }
        report.profiles = profiles.iter().map(EquilibriumProfile::summary).collect();
    }
    crate::write_json(dir, "equilibrium.json", &report)?;
    m.artifacts.push("equilibrium.json".into());
    m.finish(dir, started, &report)
}

fn rt(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn bad_gamma(name: &'static str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(g) if !(g >= 0.0 && g.is_finite()) => Err(CliError::Config(format!(
            "{name} must be nonnegative and finite (got {g})"
        ))),
        _ => Ok(()),
    }
}

fn single(
    p: &MarketParams,
    tier: ModelTier,
    opts: &EquilibriumOptions,
    report: &mut EquilibriumReport,
) -> Result<Option<EquilibriumProfile>, CliError> {
    bad_gamma("--gamma-plus", opts.gamma_plus)?;
    bad_gamma("--gamma-minus", opts.gamma_minus)?;
    let Some(c) = split(critical_constants(p), report)? else {
        return Ok(None);
    };
    report.gamma_cr = Some(c.gamma_cr);
    report.gamma_hat_cr = Some(c.gamma_hat_cr);
    let recycling = tier == ModelTier::Recycling;
    let out = match opts.kind {
        Kind::Fixed if recycling => split(
            fixed_point_recycling(p, opts.gamma_plus.unwrap_or(c.gamma_hat_cr)),
            report,
        )?,
        Kind::Fixed => split(
            fixed_point_single(p, opts.gamma_plus.unwrap_or(c.gamma_cr)),
            report,
        )?,
        Kind::Stationary if recycling => {
            if opts.gamma_plus.is_some() || opts.gamma_minus.is_some() {
                return Err(CliError::Config(
                    "the recycling stationary point is unique; drop --gamma-plus/--gamma-minus"
                        .into(),
                ));
            }
            split(stationary_point_recycling(p), report)?.map(|(e, branch)| {
                report.branch = Some(branch);
                e
            })
        }
        Kind::Stationary => split(
            stationary_point_single(
                p,
                opts.gamma_plus.unwrap_or(c.gamma_cr_plus),
                opts.gamma_minus.unwrap_or(c.gamma_cr_minus),
            ),
            report,
        )?,
    };
    report.constants = Some(c);
    Ok(out)
}

fn network(
    spec: &NetworkSpec,
    opts: &EquilibriumOptions,
    report: &mut EquilibriumReport,
) -> Result<Vec<EquilibriumProfile>, CliError> {
    if opts.gamma_plus.is_some() || opts.gamma_minus.is_some() {
        return Err(CliError::Config(
            "network fixed points take --s-bar, not boundary densities".into(),
        ));
    }
    let c = network_constants(spec)?;
    let s_bar = match &opts.s_bar {
        Some(s) => {
            if s.len() != spec.len() {
                return Err(CliError::Config(format!(
                    "--s-bar has {} values for {} markets",
                    s.len(),
                    spec.len()
                )));
            }
            report.s_bar_computed = Some(false);
            Some(s.clone())
        }
        None => {
            report.s_bar_computed = Some(true);
            split(solve_network_inequalities(&c), report)?
        }
    };
    report.network_constants = Some(c);
    let Some(s_bar) = s_bar else {
        return Ok(Vec::new());
    };
    report.s_bar = Some(s_bar.clone());
    Ok(split(fixed_point_network(spec, &s_bar), report)?.unwrap_or_default())
}

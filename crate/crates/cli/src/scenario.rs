//! Scenario files: one JSON document per run, field names mirroring the
//! parameter types. `schema/scenario.schema.json` lists the fields each
//! tier requires.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kinmarket::domain::{
    validate_market, validate_network, InitialCondition, MarketParams, NetworkSpec, PiecewiseLinear,
};
use kinmarket::fluid::{stable_dt, BoundaryExtraction, MAX_COURANT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTier {
    Free,
    Single,
    Recycling,
    Network,
}

impl fmt::Display for ModelTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Free => "free",
            Self::Single => "single",
            Self::Recycling => "recycling",
            Self::Network => "network",
        })
    }
}

/// One-phase free transport on `[x_min, x_max] × [-v_max, v_max]` with
/// product-form data `f0(x, v) = f0_x(x) f0_v(v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeScenario {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub v_max: f64,
    pub nv: usize,
    #[serde(default)]
    pub periodic: bool,
    pub f0_x: PiecewiseLinear,
    pub f0_v: PiecewiseLinear,
    /// Death rate as a function of `x`; zero when absent.
    #[serde(default)]
    pub mu_x: Option<PiecewiseLinear>,
    /// Arrival intensity `lambda_x(x) lambda_v(v)`; zero when absent.
    #[serde(default)]
    pub lambda_x: Option<PiecewiseLinear>,
    #[serde(default)]
    pub lambda_v: Option<PiecewiseLinear>,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn thousand() -> f64 {
    1e3
}

fn bin_width() -> f64 {
    0.1
}

fn n_bins() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub dr: f64,
    /// Fluid step; the largest stable step when absent. Particle runs
    /// default to 1e-3.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Fluid domain radius; derived from the horizon when absent.
    #[serde(default)]
    pub r_max: Option<f64>,
    #[serde(default = "one")]
    pub r_margin: f64,
    #[serde(default)]
    pub boundary_extraction: BoundaryExtraction,
    /// Particle intensity `N`: expected particles per unit mass.
    #[serde(default = "thousand")]
    pub n_scale: f64,
    #[serde(default = "one_usize")]
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "bin_width")]
    pub bin_width: f64,
    #[serde(default = "n_bins")]
    pub n_bins: usize,
}

fn out_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "out_dir")]
    pub dir: String,
    /// Particle path sampling cadence in steps.
    #[serde(default = "one_usize")]
    pub sample_every: usize,
    /// Particle density snapshot cadence in steps; 0 for the final one only.
    #[serde(default)]
    pub density_every: usize,
    /// Fluid snapshot cadence in steps; 0 for the initial and final ones only.
    #[serde(default)]
    pub snapshot_every: usize,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            dir: out_dir(),
            sample_every: 1,
            density_every: 0,
            snapshot_every: 0,
        }
    }
}

/// Checks run by `validate`, with their thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationSettings {
    pub persistence: bool,
    pub persistence_dr: f64,
    pub persistence_t_end: f64,
    pub max_drift: f64,
    pub max_beta_deviation: f64,
    pub convergence: bool,
    pub n_ladder: Vec<f64>,
    pub convergence_replicas: usize,
    pub convergence_t_end: f64,
    pub particle_dt: f64,
    pub fluid_dr: f64,
    pub slope_range: [f64; 2],
    pub max_b_z: f64,
    pub residuals: bool,
    pub residual_dr: f64,
    pub max_residual: f64,
}

impl Default for ValidationSettings {
    fn default() -> Self {
        Self {
            persistence: true,
            persistence_dr: 1e-3,
            persistence_t_end: 1.0,
            max_drift: 1e-3,
            max_beta_deviation: 1e-6,
            convergence: true,
            n_ladder: vec![1e2, 1e3, 1e4],
            convergence_replicas: 16,
            convergence_t_end: 2.0,
            particle_dt: 2e-3,
            fluid_dr: 2e-3,
            slope_range: [-0.7, -0.3],
            max_b_z: 5.0,
            residuals: true,
            residual_dr: 1e-3,
            max_residual: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model_tier: ModelTier,
    #[serde(default)]
    pub market: Option<MarketParams>,
    #[serde(default)]
    pub network: Option<NetworkSpec>,
    #[serde(default)]
    pub initial: Option<InitialCondition>,
    #[serde(default)]
    pub initial_network: Option<Vec<InitialCondition>>,
    #[serde(default)]
    pub free: Option<FreeScenario>,
    pub numerics: Numerics,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub validation: ValidationSettings,
}

/// A parsed scenario together with the hash of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub config_hash: String,
    pub path: String,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path} is invalid:\n  {}", .messages.join("\n  "))]
    Invalid { path: String, messages: Vec<String> },
}

pub fn config_hash(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Reads, parses and validates a scenario file.
pub fn load(path: &Path) -> Result<LoadedScenario, LoadError> {
    let p = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| LoadError::Io {
        path: p.clone(),
        source,
    })?;
    let scenario: Scenario = serde_json::from_slice(&bytes).map_err(|source| LoadError::Parse {
        path: p.clone(),
        source,
    })?;
    scenario.validate().map_err(|messages| LoadError::Invalid {
        path: p.clone(),
        messages,
    })?;
    Ok(LoadedScenario {
        scenario,
        config_hash: config_hash(&bytes),
        path: p,
    })
}

fn positive(name: &str, v: f64, out: &mut Vec<String>) {
    if !(v > 0.0 && v.is_finite()) {
        out.push(format!("{name} must be positive and finite (got {v})"));
    }
}

impl Scenario {
    /// Every violation found, not just the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut out = Vec::new();
        let n = &self.numerics;
        positive("numerics.dr", n.dr, &mut out);
        positive("numerics.t_end", n.t_end, &mut out);
        positive("numerics.n_scale", n.n_scale, &mut out);
        positive("numerics.bin_width", n.bin_width, &mut out);
        positive("numerics.r_margin", n.r_margin, &mut out);
        if let Some(dt) = n.dt {
            positive("numerics.dt", dt, &mut out);
        }
        if let Some(r) = n.r_max {
            positive("numerics.r_max", r, &mut out);
        }
        if n.replicas == 0 {
            out.push("numerics.replicas must be at least 1".into());
        }
        if n.n_bins == 0 {
            out.push("numerics.n_bins must be at least 1".into());
        }
        if self.outputs.sample_every == 0 {
            out.push("outputs.sample_every must be at least 1".into());
        }
        let tier = self.model_tier;
        let present = |b: bool, name: &str, out: &mut Vec<String>| {
            if !b {
                out.push(format!("tier {tier} requires `{name}`"));
            }
        };
        let absent = |b: bool, name: &str, out: &mut Vec<String>| {
            if b {
                out.push(format!("tier {tier} does not accept `{name}`"));
            }
        };
        match tier {
            ModelTier::Free => {
                present(self.free.is_some(), "free", &mut out);
                absent(self.market.is_some(), "market", &mut out);
                absent(self.network.is_some(), "network", &mut out);
                if let Some(f) = &self.free {
                    self.check_free(f, &mut out);
                }
            }
            ModelTier::Single | ModelTier::Recycling => {
                present(self.market.is_some(), "market", &mut out);
                absent(self.network.is_some(), "network", &mut out);
                absent(self.initial_network.is_some(), "initial_network", &mut out);
                absent(self.free.is_some(), "free", &mut out);
                if let Some(p) = &self.market {
                    if let Err(v) = validate_market(p) {
                        out.extend(v.0.iter().map(|x| format!("market: {x}")));
                    }
                    match (tier, p.has_recycling()) {
                        (ModelTier::Single, true) => out.push(
                            "tier single does not accept recycling kernels (use tier recycling)"
                                .into(),
                        ),
                        (ModelTier::Recycling, false) => {
                            out.push("tier recycling requires at least one recycling kernel".into())
                        }
                        _ => {}
                    }
                    self.check_cfl(p, None, &mut out);
                }
            }
            ModelTier::Network => {
                present(self.network.is_some(), "network", &mut out);
                absent(self.market.is_some(), "market", &mut out);
                absent(self.initial.is_some(), "initial", &mut out);
                absent(self.free.is_some(), "free", &mut out);
                if let Some(spec) = &self.network {
                    if let Err(v) = validate_network(spec) {
                        out.extend(v.0.iter().map(|x| format!("network: {x}")));
                    }
                    if spec.markets.iter().any(MarketParams::has_recycling) {
                        out.push(
                            "network markets must not carry their own kernels; use routes".into(),
                        );
                    }
                    for (m, p) in spec.markets.iter().enumerate() {
                        self.check_cfl(p, Some(m), &mut out);
                    }
                    if let Some(init) = &self.initial_network {
                        if init.len() != spec.len() {
                            out.push(format!(
                                "initial_network has {} entries for {} markets",
                                init.len(),
                                spec.len()
                            ));
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    fn check_cfl(&self, p: &MarketParams, market: Option<usize>, out: &mut Vec<String>) {
        let Some(dt) = self.numerics.dt else { return };
        if !(p.v_plus < 0.0 && p.v_minus > 0.0) || !(self.numerics.dr > 0.0) {
            return;
        }
        let mu_max = p.mu_plus.max_value().max(p.mu_minus.max_value());
        let limit = stable_dt(p.v_plus, p.v_minus, mu_max, self.numerics.dr);
        if dt > limit {
            let which = market
                .map(|m| format!(" for market {m}"))
                .unwrap_or_default();
            out.push(format!(
                "numerics.dt = {dt} violates the CFL condition{which}: the largest stable step is {limit:.6e} \
                 ((v_minus - v_plus) dt / dr <= {MAX_COURANT} and death fraction <= 1)"
            ));
        }
    }

    fn check_free(&self, f: &FreeScenario, out: &mut Vec<String>) {
        if !(f.x_max > f.x_min) {
            out.push(format!(
                "free.x_max ({}) must exceed free.x_min ({})",
                f.x_max, f.x_min
            ));
        }
        positive("free.v_max", f.v_max, out);
        if f.nx == 0 {
            out.push("free.nx must be at least 1".into());
        }
        if f.lambda_x.is_some() != f.lambda_v.is_some() {
            out.push("free.lambda_x and free.lambda_v must be given together".into());
        }
        for (name, t) in [
            ("free.mu_x", &f.mu_x),
            ("free.lambda_x", &f.lambda_x),
            ("free.lambda_v", &f.lambda_v),
        ] {
            if t.as_ref().is_some_and(|t| t.min_value() < 0.0) {
                out.push(format!("{name} must be nonnegative"));
            }
        }
        if let Some(dt) = self.numerics.dt {
            if f.nx > 0 && f.x_max > f.x_min {
                let courant = f.v_max * dt * f.nx as f64 / (f.x_max - f.x_min);
                if courant > MAX_COURANT {
                    out.push(format!(
                        "numerics.dt = {dt} violates the CFL condition: V0 dt / dx = {courant:.4}"
                    ));
                }
            }
        }
    }
}

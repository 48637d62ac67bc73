//! Market and network parameter sets and their validation.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::rate::{CompactRateFunction, PiecewiseLinear, RateError};

/// Slack allowed on the `∫p <= 1` recycling bounds.
const MASS_SLACK: f64 = 1e-12;

/// Parameters of one elementary market.
///
/// Sellers (`+`) sit at prices above the boundary and drift down with
/// `v_plus < 0`; buyers (`-`) sit below and drift up with `v_minus > 0`.
/// Rates are functions of the distance `r` to the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub v_plus: f64,
    pub v_minus: f64,
    pub lambda_plus: CompactRateFunction,
    pub lambda_minus: CompactRateFunction,
    pub mu_plus: CompactRateFunction,
    pub mu_minus: CompactRateFunction,
    /// Density of annihilated `+` mass reinjected as `-` mass at radius `r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_plus_minus: Option<CompactRateFunction>,
    /// Density of annihilated `-` mass reinjected as `+` mass at radius `r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_minus_plus: Option<CompactRateFunction>,
}

impl MarketParams {
    /// Market with the given velocities and all rates zero.
    pub fn with_velocities(v_plus: f64, v_minus: f64) -> Self {
        Self {
            v_plus,
            v_minus,
            lambda_plus: CompactRateFunction::zero(),
            lambda_minus: CompactRateFunction::zero(),
            mu_plus: CompactRateFunction::zero(),
            mu_minus: CompactRateFunction::zero(),
            p_plus_minus: None,
            p_minus_plus: None,
        }
    }

    pub fn has_recycling(&self) -> bool {
        self.p_plus_minus.is_some() || self.p_minus_plus.is_some()
    }

    pub fn kernel_plus_minus(&self) -> Option<&CompactRateFunction> {
        self.p_plus_minus.as_ref()
    }

    pub fn kernel_minus_plus(&self) -> Option<&CompactRateFunction> {
        self.p_minus_plus.as_ref()
    }

    /// Largest support radius among all rate functions.
    pub fn support_radius(&self) -> f64 {
        let mut r = [
            &self.lambda_plus,
            &self.lambda_minus,
            &self.mu_plus,
            &self.mu_minus,
        ]
        .iter()
        .map(|f| f.support_radius())
        .fold(0.0, f64::max);
        for k in [&self.p_plus_minus, &self.p_minus_plus]
            .into_iter()
            .flatten()
        {
            r = r.max(k.support_radius());
        }
        r
    }
}

/// A single broken invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    VPlusNotNegative(f64),
    VMinusNotPositive(f64),
    RecyclingMass {
        kernel: &'static str,
        mass: f64,
    },
    InMarket {
        market: usize,
        inner: Box<Violation>,
    },
    RouteIndex {
        route: usize,
        index: usize,
        markets: usize,
    },
    DuplicateRoute {
        from: usize,
        to: usize,
    },
    RoutingMass {
        from: usize,
        kernel: &'static str,
        mass: f64,
    },
    MarketKernelInNetwork {
        market: usize,
    },
    EmptyNetwork,
    Rate {
        field: String,
        error: RateError,
    },
    Other(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::VPlusNotNegative(v) => write!(f, "v_plus must be negative (got {v})"),
            Violation::VMinusNotPositive(v) => write!(f, "v_minus must be positive (got {v})"),
            Violation::RecyclingMass { kernel, mass } => {
                write!(f, "recycling mass exceeds 1 ({kernel} integrates to {mass})")
            }
            Violation::InMarket { market, inner } => write!(f, "market {market}: {inner}"),
            Violation::RouteIndex { route, index, markets } => write!(
                f,
                "routing entry {route} refers to market {index}, but the network has {markets} markets"
            ),
            Violation::DuplicateRoute { from, to } => {
                write!(f, "routing pair ({from}, {to}) appears more than once")
            }
            Violation::RoutingMass { from, kernel, mass } => write!(
                f,
                "routing mass out of market {from} exceeds 1 ({kernel} kernels sum to {mass})"
            ),
            Violation::MarketKernelInNetwork { market } => write!(
                f,
                "market {market} carries its own recycling kernels; in a network use routing entries"
            ),
            Violation::EmptyNetwork => write!(f, "network has no markets"),
            Violation::Rate { field, error } => write!(f, "{field}: {error}"),
            Violation::Other(s) => f.write_str(s),
        }
    }
}

/// All violations found in one validation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Violations(pub Vec<Violation>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Violations {}

fn market_violations(p: &MarketParams) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(p.v_plus < 0.0 && p.v_plus.is_finite()) {
        out.push(Violation::VPlusNotNegative(p.v_plus));
    }
    if !(p.v_minus > 0.0 && p.v_minus.is_finite()) {
        out.push(Violation::VMinusNotPositive(p.v_minus));
    }
    for (kernel, k) in [
        ("p_plus_minus", &p.p_plus_minus),
        ("p_minus_plus", &p.p_minus_plus),
    ] {
        if let Some(k) = k {
            let mass = k.total();
            if mass > 1.0 + MASS_SLACK {
                out.push(Violation::RecyclingMass { kernel, mass });
            }
        }
    }
    out
}

/// Checks the sign convention and recycling bounds, reporting every violation.
pub fn validate_market(p: &MarketParams) -> Result<(), Violations> {
    let v = market_violations(p);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Violations(v))
    }
}

/// Kernels routing annihilated mass of market `from` into market `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub from: usize,
    pub to: usize,
    /// `-` mass of `from` reappearing as `+` mass in `to`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_minus_plus: Option<CompactRateFunction>,
    /// `+` mass of `from` reappearing as `-` mass in `to`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_plus_minus: Option<CompactRateFunction>,
}

/// A set of elementary markets coupled by routing kernels.
///
/// Same-sign kernels do not exist in this type: annihilated mass always
/// changes phase when it is routed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub markets: Vec<MarketParams>,
    #[serde(default)]
    pub routing: Vec<Route>,
}

impl NetworkSpec {
    pub fn len(&self) -> usize {
        self.markets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markets.is_empty()
    }

    /// The one-market network whose self-routing equals the market's own kernels.
    pub fn from_recycling_market(p: &MarketParams) -> Self {
        let mut market = p.clone();
        let route = Route {
            from: 0,
            to: 0,
            p_minus_plus: market.p_minus_plus.take(),
            p_plus_minus: market.p_plus_minus.take(),
        };
        Self {
            markets: vec![market],
            routing: vec![route],
        }
    }

    /// Routes whose destination is `to`.
    pub fn incoming(&self, to: usize) -> impl Iterator<Item = &Route> {
        self.routing.iter().filter(move |r| r.to == to)
    }
}

pub fn validate_network(spec: &NetworkSpec) -> Result<(), Violations> {
    let mut out = Vec::new();
    let n = spec.markets.len();
    if n == 0 {
        out.push(Violation::EmptyNetwork);
    }
    for (m, p) in spec.markets.iter().enumerate() {
        for v in market_violations(p) {
            out.push(Violation::InMarket {
                market: m,
                inner: Box::new(v),
            });
        }
        if p.has_recycling() {
            out.push(Violation::MarketKernelInNetwork { market: m });
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut out_mp = vec![0.0; n];
    let mut out_pm = vec![0.0; n];
    for (i, r) in spec.routing.iter().enumerate() {
        let mut ok = true;
        for idx in [r.from, r.to] {
            if idx >= n {
                out.push(Violation::RouteIndex {
                    route: i,
                    index: idx,
                    markets: n,
                });
                ok = false;
            }
        }
        if !seen.insert((r.from, r.to)) {
            out.push(Violation::DuplicateRoute {
                from: r.from,
                to: r.to,
            });
        }
        if ok {
            if let Some(k) = &r.p_minus_plus {
                out_mp[r.from] += k.total();
            }
            if let Some(k) = &r.p_plus_minus {
                out_pm[r.from] += k.total();
            }
        }
    }
    for k in 0..n {
        if out_mp[k] > 1.0 + MASS_SLACK {
            out.push(Violation::RoutingMass {
                from: k,
                kernel: "p_minus_plus",
                mass: out_mp[k],
            });
        }
        if out_pm[k] > 1.0 + MASS_SLACK {
            out.push(Violation::RoutingMass {
                from: k,
                kernel: "p_plus_minus",
                mass: out_pm[k],
            });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(Violations(out))
    }
}

/// Velocity density `f(0, v)` of one phase at the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityProfile {
    table: Option<PiecewiseLinear>,
    v_max: f64,
}

impl VelocityProfile {
    /// Samples must be nonnegative and vanish at both ends, with all
    /// velocities inside `[-v_max, v_max]`.
    pub fn new(v_max: f64, velocities: Vec<f64>, values: Vec<f64>) -> Result<Self, RateError> {
        let table = PiecewiseLinear::new(velocities, values)?;
        if let Some((index, &value)) = table.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(RateError::Negative { index, value });
        }
        let (lo, hi) = table.domain();
        if lo < -v_max || hi > v_max {
            return Err(RateError::NotIncreasing(0));
        }
        let ends = [table.values()[0], *table.values().last().unwrap()];
        if ends.iter().any(|v| *v != 0.0) {
            return Err(RateError::OpenSupport(ends[0].max(ends[1])));
        }
        Ok(Self {
            table: Some(table),
            v_max,
        })
    }

    pub fn zero(v_max: f64) -> Self {
        Self { table: None, v_max }
    }

    /// Uniform density with the given total mass on `[lo, hi]`.
    pub fn uniform(v_max: f64, lo: f64, hi: f64, mass: f64) -> Result<Self, RateError> {
        let e = (hi - lo) * 1e-12;
        let h = mass / (hi - lo - e);
        Self::new(v_max, vec![lo, lo + e, hi - e, hi], vec![0.0, h, h, 0.0])
    }

    /// Narrow triangle of half-width `w` centred at `v0` with total mass `mass`.
    pub fn spike(v_max: f64, v0: f64, w: f64, mass: f64) -> Result<Self, RateError> {
        Self::new(v_max, vec![v0 - w, v0, v0 + w], vec![0.0, mass / w, 0.0])
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.table.as_ref().map_or(0.0, |t| t.eval(v))
    }

    pub fn is_zero(&self) -> bool {
        self.table
            .as_ref()
            .is_none_or(|t| t.values().iter().all(|v| *v == 0.0))
    }

    pub fn breakpoints(&self) -> &[f64] {
        self.table.as_ref().map_or(&[], |t| t.breakpoints())
    }

    pub fn mass(&self) -> f64 {
        self.table.as_ref().map_or(0.0, |t| t.total())
    }

    pub fn mirrored(&self) -> Self {
        let table = self.table.as_ref().map(|t| {
            let xs: Vec<f64> = t.breakpoints().iter().rev().map(|x| -x).collect();
            let ys: Vec<f64> = t.values().iter().rev().copied().collect();
            PiecewiseLinear::new(xs, ys).expect("mirror of a valid table")
        });
        Self {
            table,
            v_max: self.v_max,
        }
    }
}

/// Initial densities of both phases as functions of `r`, and the boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub rho_plus: CompactRateFunction,
    pub rho_minus: CompactRateFunction,
    #[serde(default)]
    pub b0: f64,
}

impl InitialCondition {
    pub fn support_radius(&self) -> f64 {
        self.rho_plus
            .support_radius()
            .max(self.rho_minus.support_radius())
    }
}

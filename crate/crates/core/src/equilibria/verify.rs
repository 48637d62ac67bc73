//! Finite-difference residuals of the stationary equations.
//!
//! Each phase must satisfy `s ρ' - μ ρ + q = 0` where `s` is the phase
//! speed and `q` the arrivals plus reinjection, rebuilt here from the model
//! parameters and the profiles' own boundary values. Central differences on
//! nodes `r = i dr` are second-order accurate; nodes whose stencil contains a
//! rate breakpoint are skipped because `ρ'` jumps there.

use serde::Serialize;

use crate::domain::{CompactRateFunction, MarketParams, NetworkSpec, QuadratureError};

use super::profile::{EquilibriumProfile, PhaseProfile};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub dr: f64,
    pub nodes: usize,
    /// Nodes skipped because their stencil straddles a breakpoint.
    pub excluded: usize,
    pub max_residual_plus: f64,
    pub max_residual_minus: f64,
    /// `(v₋ - β) ρ₋(0) + (v₊ - β) ρ₊(0)`.
    pub boundary_balance: f64,
    /// Residual level attributable to rounding in the differences.
    pub roundoff_floor: f64,
}

impl ResidualReport {
    pub fn max_residual(&self) -> f64 {
        self.max_residual_plus.max(self.max_residual_minus)
    }

    /// Whether halving `dr` (this report) relative to `coarse` reduced the
    /// residual by at least `factor`, or both are at rounding level.
    pub fn scales_from(&self, coarse: &ResidualReport, factor: f64) -> bool {
        let fine = self.max_residual();
        let c = coarse.max_residual();
        c <= coarse.roundoff_floor && fine <= self.roundoff_floor || fine * factor <= c
    }
}

struct PhaseCheck<'a> {
    profile: &'a PhaseProfile,
    mu: &'a CompactRateFunction,
    sources: Vec<(f64, &'a CompactRateFunction)>,
}

impl PhaseCheck<'_> {
    fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.mu.breakpoints().to_vec();
        for (_, g) in &self.sources {
            b.extend_from_slice(g.breakpoints());
        }
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// Max residual, excluded node count and largest density.
    fn run(&self, dr: f64, n: usize) -> Result<(f64, usize, f64), QuadratureError> {
        let rho = self.profile.tabulate(dr, n + 1)?;
        let breaks = self.breakpoints();
        let s = self.profile.speed();
        let mut worst = 0.0f64;
        let mut excluded = 0;
        for i in 1..=n {
            let r = i as f64 * dr;
            let (lo, hi) = (r - dr, r + dr);
            // a breakpoint inside the closed stencil, except r = 0 itself
            let k = breaks.partition_point(|b| *b < lo);
            if breaks.get(k).is_some_and(|b| *b <= hi && *b > 0.0) {
                excluded += 1;
                continue;
            }
            let q: f64 = self.sources.iter().map(|(w, g)| w * g.eval(r)).sum();
            let d = (rho[i + 1] - rho[i - 1]) / (2.0 * dr);
            worst = worst.max((s * d - self.mu.eval(r) * rho[i] + q).abs());
        }
        Ok((worst, excluded, rho.iter().cloned().fold(0.0, f64::max)))
    }
}

fn report(
    plus: PhaseCheck<'_>,
    minus: PhaseCheck<'_>,
    balance: f64,
    dr: f64,
    r_max: f64,
) -> Result<ResidualReport, QuadratureError> {
    let n = (r_max / dr).ceil().max(1.0) as usize;
    let (rp, ep, mp) = plus.run(dr, n)?;
    let (rm, em, mm) = minus.run(dr, n)?;
    let speed = plus.profile.speed().max(minus.profile.speed());
    Ok(ResidualReport {
        dr,
        nodes: n,
        excluded: ep + em,
        max_residual_plus: rp,
        max_residual_minus: rm,
        boundary_balance: balance,
        roundoff_floor: 1e3 * f64::EPSILON * speed * mp.max(mm).max(1.0) / dr,
    })
}

/// Residuals of a single-market equilibrium (fixed or stationary, with or
/// without recycling) on `[0, r_max]`.
pub fn verify_equilibrium(
    e: &EquilibriumProfile,
    p: &MarketParams,
    dr: f64,
    r_max: f64,
) -> Result<ResidualReport, QuadratureError> {
    let rp0 = e.rho_plus(0.0)?;
    let rm0 = e.rho_minus(0.0)?;
    let beta = e.beta;
    let nu_minus = (p.v_minus - beta) * rm0;
    let nu_plus = -(p.v_plus - beta) * rp0;
    let mut plus_src = vec![(1.0, &p.lambda_plus)];
    if let Some(k) = p.kernel_minus_plus() {
        plus_src.push((nu_minus, k));
    }
    let mut minus_src = vec![(1.0, &p.lambda_minus)];
    if let Some(k) = p.kernel_plus_minus() {
        minus_src.push((nu_plus, k));
    }
    report(
        PhaseCheck {
            profile: &e.plus,
            mu: &p.mu_plus,
            sources: plus_src,
        },
        PhaseCheck {
            profile: &e.minus,
            mu: &p.mu_minus,
            sources: minus_src,
        },
        nu_minus - nu_plus,
        dr,
        r_max,
    )
}

/// Residuals of every market of a network fixed point.
pub fn verify_network(
    profiles: &[EquilibriumProfile],
    spec: &NetworkSpec,
    dr: f64,
    r_max: f64,
) -> Result<Vec<ResidualReport>, QuadratureError> {
    let flows: Vec<f64> = profiles
        .iter()
        .zip(&spec.markets)
        .map(|(e, p)| Ok(p.v_minus * e.rho_minus(0.0)?))
        .collect::<Result<_, QuadratureError>>()?;
    let flows_plus: Vec<f64> = profiles
        .iter()
        .zip(&spec.markets)
        .map(|(e, p)| Ok(-p.v_plus * e.rho_plus(0.0)?))
        .collect::<Result<_, QuadratureError>>()?;
    spec.markets
        .iter()
        .enumerate()
        .zip(profiles)
        .map(|((m, p), e)| {
            let mut plus_src = vec![(1.0, &p.lambda_plus)];
            let mut minus_src = vec![(1.0, &p.lambda_minus)];
            for r in spec.incoming(m) {
                if let Some(k) = &r.p_minus_plus {
                    plus_src.push((flows[r.from], k));
                }
                if let Some(k) = &r.p_plus_minus {
                    minus_src.push((flows_plus[r.from], k));
                }
            }
            report(
                PhaseCheck {
                    profile: &e.plus,
                    mu: &p.mu_plus,
                    sources: plus_src,
                },
                PhaseCheck {
                    profile: &e.minus,
                    mu: &p.mu_minus,
                    sources: minus_src,
                },
                flows[m] - flows_plus[m],
                dr,
                r_max,
            )
        })
        .collect()
}

//! Tabulation of equilibrium densities.

use std::io;

use serde::Serialize;

use crate::domain::{integrate, integrate_split, CompactRateFunction, QuadratureError};

use super::Exponent;

/// Tail densities at or below this value count as vanishing.
pub const FINITE_MASS_TOL: f64 = 1e-9;

const EVAL_TOL: f64 = 1e-14;

/// `ρ(r) = k e^{F(r)} max(0, γ - (1/s) ∫₀ʳ q e^{-F})` with
/// `q = Σ wᵢ gᵢ` and `k` a scale factor (1 for genuine equilibria).
#[derive(Debug, Clone)]
pub struct PhaseProfile {
    exponent: Exponent,
    gamma: f64,
    scale: f64,
    sources: Vec<(f64, CompactRateFunction)>,
    breaks: Vec<f64>,
    reach: f64,
    /// Cumulative `∫₀^{breaks[i]} q e^{-F}`.
    cumulative: Vec<f64>,
}

impl PhaseProfile {
    pub fn new(
        speed: f64,
        gamma: f64,
        mu: &CompactRateFunction,
        sources: Vec<(f64, CompactRateFunction)>,
    ) -> Result<Self, QuadratureError> {
        let sources: Vec<_> = sources
            .into_iter()
            .filter(|(w, g)| *w != 0.0 && !g.is_zero())
            .collect();
        let mut breaks = vec![0.0];
        breaks.extend_from_slice(mu.breakpoints());
        for (_, g) in &sources {
            breaks.extend_from_slice(g.breakpoints());
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let reach = *breaks.last().unwrap_or(&0.0);
        let mut p = Self {
            exponent: Exponent::new(speed, mu),
            gamma,
            scale: 1.0,
            sources,
            breaks,
            reach,
            cumulative: Vec::new(),
        };
        let mut acc = 0.0;
        let mut cumulative = vec![0.0];
        for w in p.breaks.windows(2) {
            acc += integrate(
                |x| p.integrand(x),
                w[0],
                w[1],
                EVAL_TOL * (w[1] - w[0]).max(1e-3),
            )?;
            cumulative.push(acc);
        }
        p.cumulative = cumulative;
        Ok(p)
    }

    fn integrand(&self, x: f64) -> f64 {
        let q: f64 = self.sources.iter().map(|(w, g)| w * g.eval(x)).sum();
        q * (-self.exponent.eval(x)).exp()
    }

    /// Source density `q(r)`.
    pub fn source(&self, r: f64) -> f64 {
        self.sources.iter().map(|(w, g)| w * g.eval(r)).sum()
    }

    pub fn speed(&self) -> f64 {
        self.exponent.speed
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> &CompactRateFunction {
        &self.exponent.mu
    }

    /// Radius beyond which all rates vanish and the density is constant.
    pub fn reach(&self) -> f64 {
        self.reach
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    /// Copy with the density multiplied by `k` (used to probe residual checks).
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            scale: self.scale * k,
            ..self.clone()
        }
    }

    fn cumulative_at(&self, r: f64) -> Result<f64, QuadratureError> {
        let r = r.min(self.reach);
        let k = self.breaks.partition_point(|b| *b <= r).saturating_sub(1);
        let base = self.cumulative[k];
        let from = self.breaks[k];
        if r <= from {
            return Ok(base);
        }
        Ok(base
            + integrate(
                |x| self.integrand(x),
                from,
                r,
                EVAL_TOL * (r - from).max(1e-3),
            )?)
    }

    /// `γ - (1/s) ∫₀ʳ q e^{-F}` without clamping.
    pub fn bracket(&self, r: f64) -> Result<f64, QuadratureError> {
        Ok(self.gamma - self.cumulative_at(r)? / self.exponent.speed)
    }

    /// Bracket beyond the support of all rates.
    pub fn bracket_at_infinity(&self) -> f64 {
        self.gamma - self.cumulative.last().copied().unwrap_or(0.0) / self.exponent.speed
    }

    /// Limit of `ρ(r)` as `r → ∞`.
    pub fn tail_density(&self) -> f64 {
        self.scale * self.exponent.eval(self.reach).exp() * self.bracket_at_infinity()
    }

    pub fn eval(&self, r: f64) -> Result<f64, QuadratureError> {
        let r = r.max(0.0);
        let b = self.bracket(r)?;
        Ok(self.scale * self.exponent.eval(r).exp() * b.max(0.0))
    }

    /// Values at `r = i dr`, `i = 0..=n`, by cumulative integration cell by cell.
    pub fn tabulate(&self, dr: f64, n: usize) -> Result<Vec<f64>, QuadratureError> {
        let mut out = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        let mut prev = 0.0;
        for i in 0..=n {
            let r = i as f64 * dr;
            if i > 0 {
                let hi = r.min(self.reach);
                if hi > prev {
                    acc += integrate_split(
                        |x| self.integrand(x),
                        prev,
                        hi,
                        &self.breaks,
                        EVAL_TOL * dr.max(1e-3),
                    )?;
                }
                prev = hi.max(prev);
            }
            let b = self.gamma - acc / self.exponent.speed;
            out.push(self.scale * self.exponent.eval(r).exp() * b.max(0.0));
        }
        Ok(out)
    }

    /// `∫₀^∞ ρ`, infinite when the tail does not vanish.
    pub fn mass(&self) -> Result<f64, QuadratureError> {
        if self.tail_density().abs() > FINITE_MASS_TOL {
            return Ok(f64::INFINITY);
        }
        let mut acc = 0.0;
        for w in self.breaks.windows(2) {
            acc += integrate(
                |r| self.eval(r).unwrap_or(f64::NAN),
                w[0],
                w[1],
                1e-10 * (w[1] - w[0]),
            )?;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    Fixed,
    Stationary,
}

#[derive(Debug, Clone)]
pub struct EquilibriumProfile {
    pub kind: EquilibriumKind,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub beta: f64,
    /// Annihilation flow `(v₋ - β) γ₋`.
    pub nu: f64,
    pub plus: PhaseProfile,
    pub minus: PhaseProfile,
    pub finite_mass: bool,
    pub mass_plus: f64,
    pub mass_minus: f64,
}

/// Serializable digest of an equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSummary {
    pub kind: EquilibriumKind,
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub beta: f64,
    pub nu: f64,
    pub finite_mass: bool,
    pub mass_plus: Option<f64>,
    pub mass_minus: Option<f64>,
    pub tail_plus: f64,
    pub tail_minus: f64,
}

impl EquilibriumProfile {
    pub(crate) fn assemble(
        kind: EquilibriumKind,
        gamma_plus: f64,
        gamma_minus: f64,
        beta: f64,
        nu: f64,
        plus: PhaseProfile,
        minus: PhaseProfile,
    ) -> Result<Self, QuadratureError> {
        let mass_plus = plus.mass()?;
        let mass_minus = minus.mass()?;
        Ok(Self {
            kind,
            gamma_plus,
            gamma_minus,
            beta,
            nu,
            finite_mass: mass_plus.is_finite() && mass_minus.is_finite(),
            plus,
            minus,
            mass_plus,
            mass_minus,
        })
    }

    pub fn rho_plus(&self, r: f64) -> Result<f64, QuadratureError> {
        self.plus.eval(r)
    }

    pub fn rho_minus(&self, r: f64) -> Result<f64, QuadratureError> {
        self.minus.eval(r)
    }

    /// Largest radius where either phase still varies.
    pub fn reach(&self) -> f64 {
        self.plus.reach().max(self.minus.reach())
    }

    pub fn summary(&self) -> EquilibriumSummary {
        let finite = |m: f64| m.is_finite().then_some(m);
        EquilibriumSummary {
            kind: self.kind,
            gamma_plus: self.gamma_plus,
            gamma_minus: self.gamma_minus,
            beta: self.beta,
            nu: self.nu,
            finite_mass: self.finite_mass,
            mass_plus: finite(self.mass_plus),
            mass_minus: finite(self.mass_minus),
            tail_plus: self.plus.tail_density(),
            tail_minus: self.minus.tail_density(),
        }
    }

    /// Writes `phase,r,rho` rows on `r = i dr`, `i = 0..=n`, with a header.
    pub fn write_csv<W: io::Write>(
        &self,
        out: W,
        dr: f64,
        n: usize,
    ) -> Result<(), Box<dyn std::error::Error>> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phase", "r", "rho"])?;
        for (name, phase) in [("plus", &self.plus), ("minus", &self.minus)] {
            for (i, v) in phase.tabulate(dr, n)?.into_iter().enumerate() {
                w.serialize((name, i as f64 * dr, v))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

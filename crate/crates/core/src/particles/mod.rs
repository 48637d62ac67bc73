//! Stochastic particle dynamics of one market.
//!
//! Sellers (`+`) and buyers (`-`) move ballistically with the constant
//! velocities of the market. A buyer reaching the leftmost seller annihilates
//! with it and the boundary jumps to the next seller. Particles arrive as a
//! Poisson flow with intensity `N λ±(r)` at distance `r` from the boundary
//! and die at rate `μ±(r)`; each particle carries mass `1/N`.
//!
//! Time is discretized: arrivals, deaths and annihilations are resolved once
//! per step with rates read at the start of the step.

mod trajectory;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::domain::{
    validate_market, CompactRateFunction, InitialCondition, MarketParams, RadiusSampler, Violations,
};

pub use trajectory::{
    empirical_density, run_particles, DensitySnapshot, EmptyPlusEpisode, Histogram, RunConfig,
    SimTrajectory,
};

#[derive(Debug, Error)]
pub enum ParticleError {
    #[error("invalid parameters:\n{0}")]
    Invalid(#[from] Violations),
    #[error("time step must be positive and finite, got {0}")]
    BadTimeStep(f64),
    #[error("intensity scale N must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("initial positions violate phase separation: buyer at {minus} is not left of seller at {plus}")]
    PhaseOrder { plus: f64, minus: f64 },
    #[error("ensemble velocities ({0}, {1}) differ from the market's")]
    VelocityMismatch(f64, f64),
}

/// One annihilation: time and price of the collision.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Annihilation {
    pub t: f64,
    pub x: f64,
}

/// Event counts of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepCounts {
    pub arrivals_plus: usize,
    pub arrivals_minus: usize,
    pub deaths_plus: usize,
    pub deaths_minus: usize,
    pub annihilations: usize,
    pub recycled_plus: usize,
    pub recycled_minus: usize,
    /// No sellers are left after the step; `b` is frozen.
    pub empty_plus: bool,
}

/// Particle positions, boundary and random state.
///
/// Positions are stored as `y = x - v t` so advection costs nothing. Sellers
/// are kept in descending order (the leftmost at the back) and buyers in
/// ascending order (the rightmost at the back).
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    v_plus: f64,
    v_minus: f64,
    plus: Vec<f64>,
    minus: Vec<f64>,
    b: f64,
    t: f64,
    rng: ChaCha8Rng,
}

impl PartialEq for ParticleEnsemble {
    fn eq(&self, o: &Self) -> bool {
        self.plus == o.plus && self.minus == o.minus && self.b == o.b && self.t == o.t
    }
}

fn insert_desc(v: &mut Vec<f64>, y: f64) {
    let i = v.partition_point(|z| *z > y);
    v.insert(i, y);
}

fn insert_asc(v: &mut Vec<f64>, y: f64) {
    let i = v.partition_point(|z| *z < y);
    v.insert(i, y);
}

impl ParticleEnsemble {
    /// Empty ensemble; `stream` separates replicas sharing a seed.
    pub fn empty(v_plus: f64, v_minus: f64, b0: f64, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            v_plus,
            v_minus,
            plus: Vec::new(),
            minus: Vec::new(),
            b: b0,
            t: 0.0,
            rng,
        }
    }

    /// Ensemble with explicit coordinates at `t = 0`; `b` is the leftmost seller
    /// (or `b_if_empty` without sellers).
    pub fn from_positions(
        p: &MarketParams,
        plus: &[f64],
        minus: &[f64],
        b_if_empty: f64,
        seed: u64,
    ) -> Result<Self, ParticleError> {
        let mut e = Self::empty(p.v_plus, p.v_minus, b_if_empty, seed, 0);
        for &x in plus {
            insert_desc(&mut e.plus, x);
        }
        for &x in minus {
            insert_asc(&mut e.minus, x);
        }
        if let (Some(&lp), Some(&rm)) = (e.plus.last(), e.minus.last()) {
            if rm >= lp {
                return Err(ParticleError::PhaseOrder {
                    plus: lp,
                    minus: rm,
                });
            }
        }
        if let Some(&lp) = e.plus.last() {
            e.b = lp;
        }
        Ok(e)
    }

    /// Poisson clouds with intensity `N ρ±(r, 0)` around `b0`.
    pub fn from_initial(
        p: &MarketParams,
        init: &InitialCondition,
        n_scale: f64,
        seed: u64,
        stream: u64,
    ) -> Result<Self, ParticleError> {
        if !(n_scale > 0.0 && n_scale.is_finite()) {
            return Err(ParticleError::BadScale(n_scale));
        }
        let mut e = Self::empty(p.v_plus, p.v_minus, init.b0, seed, stream);
        let b0 = init.b0;
        for (rho, sign) in [(&init.rho_plus, 1.0), (&init.rho_minus, -1.0)] {
            if let Some(s) = rho.sampler() {
                let n = poisson(&mut e.rng, n_scale * s.total());
                for _ in 0..n {
                    let r = s.sample(&mut e.rng);
                    if sign > 0.0 {
                        e.plus.push(b0 + r);
                    } else {
                        // buyers sit strictly left of the boundary
                        e.minus.push(b0 - r.max(f64::MIN_POSITIVE));
                    }
                }
            }
        }
        e.plus.sort_by(|a, b| b.total_cmp(a));
        e.minus.sort_by(f64::total_cmp);
        if let Some(&lp) = e.plus.last() {
            e.b = lp;
        }
        // a buyer landing at or right of the leftmost seller is resolved by
        // the first sweep
        Ok(e)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn n_plus(&self) -> usize {
        self.plus.len()
    }

    pub fn n_minus(&self) -> usize {
        self.minus.len()
    }

    /// Seller coordinates in ascending order.
    pub fn plus_positions(&self) -> Vec<f64> {
        self.plus
            .iter()
            .rev()
            .map(|y| y + self.v_plus * self.t)
            .collect()
    }

    /// Buyer coordinates in ascending order.
    pub fn minus_positions(&self) -> Vec<f64> {
        self.minus
            .iter()
            .map(|y| y + self.v_minus * self.t)
            .collect()
    }

    fn min_plus(&self) -> Option<f64> {
        self.plus.last().map(|y| y + self.v_plus * self.t)
    }

    fn max_minus(&self) -> Option<f64> {
        self.minus.last().map(|y| y + self.v_minus * self.t)
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // rand_distr only rejects nonpositive or non-finite means
    Poisson::new(mean)
        .map(|d| d.sample(rng) as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone)]
struct Arrivals {
    sampler: Option<RadiusSampler>,
    mean_rate: f64,
}

impl Arrivals {
    fn new(f: &CompactRateFunction, n_scale: f64) -> Self {
        let sampler = f.sampler();
        let mean_rate = sampler.as_ref().map_or(0.0, |s| n_scale * s.total());
        Self { sampler, mean_rate }
    }
}

/// Recycling kernel: acceptance probability `∫p` and a radius sampler.
#[derive(Debug, Clone)]
struct Recycle {
    mass: f64,
    sampler: RadiusSampler,
}

impl Recycle {
    fn new(k: Option<&CompactRateFunction>) -> Option<Self> {
        let sampler = k?.sampler()?;
        Some(Self {
            mass: sampler.total().min(1.0),
            sampler,
        })
    }
}

/// Stepper bound to one market and intensity scale.
#[derive(Debug, Clone)]
pub struct ParticleEngine {
    params: MarketParams,
    n_scale: f64,
    arrivals_plus: Arrivals,
    arrivals_minus: Arrivals,
    into_plus: Option<Recycle>,
    into_minus: Option<Recycle>,
    has_deaths: bool,
}

impl ParticleEngine {
    pub fn new(params: MarketParams, n_scale: f64) -> Result<Self, ParticleError> {
        validate_market(&params)?;
        if !(n_scale > 0.0 && n_scale.is_finite()) {
            return Err(ParticleError::BadScale(n_scale));
        }
        Ok(Self {
            arrivals_plus: Arrivals::new(&params.lambda_plus, n_scale),
            arrivals_minus: Arrivals::new(&params.lambda_minus, n_scale),
            into_plus: Recycle::new(params.kernel_minus_plus()),
            into_minus: Recycle::new(params.kernel_plus_minus()),
            has_deaths: !(params.mu_plus.is_zero() && params.mu_minus.is_zero()),
            params,
            n_scale,
        })
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn n_scale(&self) -> f64 {
        self.n_scale
    }

    /// Sellers can never reappear once gone.
    pub fn plus_extinction_is_final(&self) -> bool {
        self.arrivals_plus.mean_rate == 0.0
    }

    pub fn step(
        &self,
        e: &mut ParticleEnsemble,
        dt: f64,
        log: &mut Vec<Annihilation>,
    ) -> Result<StepCounts, ParticleError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(ParticleError::BadTimeStep(dt));
        }
        if e.v_plus != self.params.v_plus || e.v_minus != self.params.v_minus {
            return Err(ParticleError::VelocityMismatch(e.v_plus, e.v_minus));
        }
        let mut c = StepCounts::default();
        let (vp, vm) = (e.v_plus, e.v_minus);
        let t0 = e.t;
        let b0 = e.b;

        // arrivals at b ± r
        if let Some(s) = &self.arrivals_plus.sampler {
            let n = poisson(&mut e.rng, self.arrivals_plus.mean_rate * dt);
            for _ in 0..n {
                let x = b0 + s.sample(&mut e.rng);
                e.plus.push(x - vp * t0);
            }
            // stable sort detects the two sorted runs and merges in O(n)
            e.plus.sort_by(|a, b| b.total_cmp(a));
            c.arrivals_plus = n as usize;
        }
        if let Some(s) = &self.arrivals_minus.sampler {
            let n = poisson(&mut e.rng, self.arrivals_minus.mean_rate * dt);
            for _ in 0..n {
                let x = b0 - s.sample(&mut e.rng);
                e.minus.push(x - vm * t0);
            }
            e.minus.sort_by(f64::total_cmp);
            c.arrivals_minus = n as usize;
        }

        // deaths by thinning with rates at the start-of-step radius
        if self.has_deaths {
            let rng = &mut e.rng;
            let mu_p = &self.params.mu_plus;
            let before = e.plus.len();
            e.plus.retain(|y| {
                let r = y + vp * t0 - b0;
                rng.random::<f64>() < (-mu_p.eval(r) * dt).exp()
            });
            c.deaths_plus = before - e.plus.len();
            let mu_m = &self.params.mu_minus;
            let before = e.minus.len();
            e.minus.retain(|y| {
                let r = b0 - (y + vm * t0);
                rng.random::<f64>() < (-mu_m.eval(r) * dt).exp()
            });
            c.deaths_minus = before - e.minus.len();
        }

        // advection is implicit in y = x - v t
        e.t = t0 + dt;

        // annihilation sweep, frontmost pairs first
        let gap_speed = vm - vp;
        let mut events = Vec::new();
        while let (Some(xp), Some(xm)) = (e.min_plus(), e.max_minus()) {
            if xp > xm {
                break;
            }
            e.plus.pop();
            e.minus.pop();
            let back = ((xm - xp) / gap_speed).min(dt);
            events.push(Annihilation {
                t: e.t - back,
                x: xp - vp * back,
            });
        }
        c.annihilations = events.len();
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
        log.extend_from_slice(&events);

        let b_sweep = e.min_plus().unwrap_or(e.b);
        // instantaneous reinjection at the post-sweep boundary
        for _ in 0..c.annihilations {
            if let Some(k) = &self.into_plus {
                if e.rng.random::<f64>() < k.mass {
                    let x = b_sweep + k.sampler.sample(&mut e.rng);
                    insert_desc(&mut e.plus, x - vp * e.t);
                    c.recycled_plus += 1;
                }
            }
            if let Some(k) = &self.into_minus {
                if e.rng.random::<f64>() < k.mass {
                    let r = k.sampler.sample(&mut e.rng).max(f64::MIN_POSITIVE);
                    insert_asc(&mut e.minus, b_sweep - r - vm * e.t);
                    c.recycled_minus += 1;
                }
            }
        }

        match e.min_plus() {
            Some(x) => e.b = x,
            None => c.empty_plus = true,
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson as PoissonPmf};

    fn quiet() -> MarketParams {
        MarketParams::with_velocities(-1.0, 1.0)
    }

    #[test]
    fn head_on_collision() {
        let p = quiet();
        let eng = ParticleEngine::new(p.clone(), 1.0).unwrap();
        let mut e = ParticleEnsemble::from_positions(&p, &[1.0], &[-1.0], 0.0, 1).unwrap();
        let mut log = Vec::new();
        let dt = 0.125;
        for k in 1..=7 {
            let c = eng.step(&mut e, dt, &mut log).unwrap();
            assert!(!c.empty_plus);
            assert!((e.b() - (1.0 - k as f64 * dt)).abs() < 1e-15);
        }
        let c = eng.step(&mut e, dt, &mut log).unwrap();
        assert_eq!(c.annihilations, 1);
        assert!(c.empty_plus);
        assert!((log[0].t - 1.0).abs() < 1e-15 && log[0].x.abs() < 1e-15);
        assert_eq!((e.n_plus(), e.n_minus()), (0, 0));
    }

    #[test]
    fn pure_translation() {
        let p = quiet();
        let eng = ParticleEngine::new(p.clone(), 1.0).unwrap();
        let mut e = ParticleEnsemble::from_positions(&p, &[0.5, 2.0, 3.0], &[], 0.0, 1).unwrap();
        let mut log = Vec::new();
        for _ in 0..10 {
            eng.step(&mut e, 0.1, &mut log).unwrap();
        }
        assert_eq!(e.n_plus(), 3);
        assert!((e.b() - (0.5 - 1.0)).abs() < 1e-12);
        assert!(log.is_empty());
    }

    #[test]
    fn crossing_start_is_rejected() {
        let p = quiet();
        assert!(matches!(
            ParticleEnsemble::from_positions(&p, &[0.0], &[0.5], 0.0, 1),
            Err(ParticleError::PhaseOrder { .. })
        ));
    }

    #[test]
    fn count_balance_and_separation() {
        let mut p = quiet();
        p.lambda_plus = CompactRateFunction::boxcar(1.0, 1.0);
        p.lambda_minus = CompactRateFunction::ramp(2.0, 1.5);
        p.mu_plus = CompactRateFunction::boxcar(0.5, 2.0);
        p.mu_minus = CompactRateFunction::ramp(1.0, 1.0);
        p.p_minus_plus = Some(CompactRateFunction::boxcar(0.4, 1.0));
        p.p_plus_minus = Some(CompactRateFunction::ramp(0.3, 1.0));
        let eng = ParticleEngine::new(p.clone(), 200.0).unwrap();
        let init = InitialCondition {
            rho_plus: CompactRateFunction::ramp(1.0, 1.0),
            rho_minus: CompactRateFunction::ramp(1.0, 1.0),
            b0: 0.0,
        };
        let mut e = ParticleEnsemble::from_initial(&p, &init, 200.0, 7, 0).unwrap();
        let mut log = Vec::new();
        let mut recycled = 0;
        for _ in 0..400 {
            let (np, nm) = (e.n_plus() as i64, e.n_minus() as i64);
            let c = eng.step(&mut e, 0.005, &mut log).unwrap();
            let dp = c.arrivals_plus as i64 - c.deaths_plus as i64 - c.annihilations as i64
                + c.recycled_plus as i64;
            let dm = c.arrivals_minus as i64 - c.deaths_minus as i64 - c.annihilations as i64
                + c.recycled_minus as i64;
            assert_eq!(e.n_plus() as i64 - np, dp);
            assert_eq!(e.n_minus() as i64 - nm, dm);
            recycled += c.recycled_plus + c.recycled_minus;
            if let (Some(&lp), Some(&rm)) = (e.plus_positions().first(), e.minus_positions().last())
            {
                assert!(rm < lp);
                assert_eq!(e.b(), lp);
            }
        }
        assert!(recycled > 0 && !log.is_empty());
        assert!(log.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn far_apart_counts_constant() {
        let p = MarketParams::with_velocities(-0.5, 1.0);
        let eng = ParticleEngine::new(p.clone(), 1.0).unwrap();
        let mut e =
            ParticleEnsemble::from_positions(&p, &[5.0, 6.0, 7.5], &[-1.0, -2.0], 0.0, 3).unwrap();
        let mut log = Vec::new();
        // gap 6 > (v₋ - v₊) T = 1.5 · 2
        for _ in 0..200 {
            eng.step(&mut e, 0.01, &mut log).unwrap();
        }
        assert_eq!((e.n_plus(), e.n_minus()), (3, 2));
    }

    #[test]
    fn arrivals_are_poisson() {
        // λ₀ R₀ dt = 2 · 1 · 2 = 4 per step; chi-square over 10⁴ steps
        let mut p = quiet();
        p.lambda_plus = CompactRateFunction::boxcar(2.0, 1.0);
        let eng = ParticleEngine::new(p.clone(), 1.0).unwrap();
        let mut e = ParticleEnsemble::empty(-1.0, 1.0, 0.0, 99, 0);
        let mut log = Vec::new();
        let mut hist = [0usize; 12];
        for _ in 0..10_000 {
            let c = eng.step(&mut e, 2.0, &mut log).unwrap();
            hist[c.arrivals_plus.min(11)] += 1;
        }
        let pmf = PoissonPmf::new(4.0 * (1.0 - 0.5e-13)).unwrap();
        let mut chi2 = 0.0;
        for (k, obs) in hist.iter().enumerate() {
            let prob = if k < 11 {
                pmf.pmf(k as u64)
            } else {
                1.0 - (0..11).map(|j| pmf.pmf(j)).sum::<f64>()
            };
            let exp = prob * 10_000.0;
            chi2 += (*obs as f64 - exp).powi(2) / exp;
        }
        let crit = ChiSquared::new(11.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 < crit, "chi2 = {chi2}, critical = {crit}");
    }

    #[test]
    fn deaths_thin_geometrically() {
        let mut p = quiet();
        p.mu_plus = CompactRateFunction::boxcar(1.0, 100.0);
        let eng = ParticleEngine::new(p.clone(), 1.0).unwrap();
        let xs: Vec<f64> = (0..20_000).map(|i| 10.0 + i as f64 * 1e-3).collect();
        let mut e = ParticleEnsemble::from_positions(&p, &xs, &[], 0.0, 5).unwrap();
        let mut log = Vec::new();
        eng.step(&mut e, 0.5, &mut log).unwrap();
        let frac = e.n_plus() as f64 / 20_000.0;
        let expect = (-0.5f64).exp();
        let se = (expect * (1.0 - expect) / 20_000.0).sqrt();
        assert!((frac - expect).abs() < 5.0 * se, "{frac} vs {expect}");
    }

    #[test]
    fn bad_inputs() {
        let p = quiet();
        assert!(matches!(
            ParticleEngine::new(p.clone(), 0.0),
            Err(ParticleError::BadScale(_))
        ));
        let eng = ParticleEngine::new(p, 1.0).unwrap();
        let mut e = ParticleEnsemble::empty(-1.0, 1.0, 0.0, 1, 0);
        assert!(matches!(
            eng.step(&mut e, 0.0, &mut Vec::new()),
            Err(ParticleError::BadTimeStep(_))
        ));
        let mut other = ParticleEnsemble::empty(-2.0, 1.0, 0.0, 1, 0);
        assert!(matches!(
            eng.step(&mut other, 0.1, &mut Vec::new()),
            Err(ParticleError::VelocityMismatch(..))
        ));
    }
}

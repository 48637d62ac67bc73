//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any
//! criterion fails. Thresholds are fixed here and never loosened per run.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kinmarket::domain::{CompactRateFunction, InitialCondition, MarketParams, NetworkSpec, Route};
use kinmarket::equilibria::{
    critical_constants, fixed_point_network, fixed_point_recycling, fixed_point_single,
    network_constants, solve_network_inequalities, stationary_point_recycling,
    stationary_point_single, verify_network, BranchKind, EquilibriumError, EquilibriumProfile,
    NetworkConstants,
};
use kinmarket::fluid::{BoundaryExtraction, FluidState, MarketSolver, NetworkSolver, RadialGrid};
use kinmarket::particles::{run_particles, ParticleEngine, RunConfig};
use kinmarket::validation::{
    characteristics_check, equilibrium_persistence, network_persistence,
    particle_fluid_convergence, residual_scaling, BudgetAudit, ConvergenceConfig, FreeGrid,
    PersistenceConfig,
};

type Crf = CompactRateFunction;

/// Collects failed requirements of one criterion.
#[derive(Default)]
struct Tally {
    failures: Vec<String>,
}

impl Tally {
    fn require(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }

    fn finish(self, detail: String) -> Result<String, String> {
        if self.failures.is_empty() {
            Ok(detail)
        } else {
            Err(format!("{detail}; failed: {}", self.failures.join("; ")))
        }
    }
}

/// Budget audits of every fluid run, checked by criterion 9.
#[derive(Default)]
struct Suite {
    budgets: Vec<(String, BudgetAudit)>,
}

fn box_market() -> MarketParams {
    let mut p = MarketParams::with_velocities(-1.0, 1.0);
    p.lambda_plus = Crf::boxcar(1.0, 1.0);
    p.lambda_minus = Crf::boxcar(1.0, 1.0);
    p
}

/// Piecewise-linear rate on `[0, R]` with `R` in `[0.5, 2]`, values up to
/// `h`, strictly positive before the end when `positive`.
fn random_rate(rng: &mut ChaCha8Rng, h: f64, positive: bool) -> Crf {
    let n = rng.random_range(1..=3);
    let r0: f64 = rng.random_range(0.5..2.0);
    let mut bp: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95) * r0).collect();
    bp.push(0.0);
    bp.push(r0);
    bp.sort_by(f64::total_cmp);
    bp.dedup();
    let lo = if positive { 0.1 * h } else { 0.0 };
    let mut vals: Vec<f64> = (0..bp.len() - 1)
        .map(|_| rng.random_range(lo..=h))
        .collect();
    vals.push(0.0);
    Crf::new(bp, vals).unwrap()
}

fn random_kernel(rng: &mut ChaCha8Rng, mass: f64) -> Crf {
    let k = random_rate(rng, 1.0, true);
    k.scaled(mass / k.total())
}

fn random_market(rng: &mut ChaCha8Rng) -> MarketParams {
    let mut p =
        MarketParams::with_velocities(-rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
    p.lambda_plus = {
        let h = rng.random_range(0.2..2.0);
        random_rate(rng, h, true)
    };
    p.lambda_minus = {
        let h = rng.random_range(0.2..2.0);
        random_rate(rng, h, true)
    };
    p.mu_plus = {
        let h = rng.random_range(0.0..1.5);
        random_rate(rng, h, false)
    };
    p.mu_minus = {
        let h = rng.random_range(0.0..1.5);
        random_rate(rng, h, false)
    };
    p
}

fn random_recycling_market(rng: &mut ChaCha8Rng) -> MarketParams {
    let mut p = random_market(rng);
    p.p_minus_plus = Some({
        let m = rng.random_range(0.05..0.9);
        random_kernel(rng, m)
    });
    p.p_plus_minus = Some({
        let m = rng.random_range(0.05..0.9);
        random_kernel(rng, m)
    });
    p
}

/// `∫₀^∞ g(x) exp(-(1/s) ∫₀ˣ μ) dx` by the trapezoid rule on a uniform grid,
/// with the inner integral accumulated alongside.
fn weighted_total_oracle(g: &Crf, mu: &Crf, speed: f64) -> f64 {
    let r0 = g.support_radius();
    let n = 200_000;
    let h = r0 / n as f64;
    let (mut inner, mut acc) = (0.0, 0.0);
    let mut prev = g.eval(0.0);
    for i in 1..=n {
        let (a, b) = ((i - 1) as f64 * h, i as f64 * h);
        inner += 0.5 * h * (mu.eval(a) + mu.eval(b));
        let cur = g.eval(b) * (-inner / speed).exp();
        acc += 0.5 * h * (prev + cur);
        prev = cur;
    }
    acc
}

fn max_profile_gap(a: &EquilibriumProfile, b: &EquilibriumProfile, r_max: f64) -> f64 {
    (0..=400)
        .map(|i| {
            let r = r_max * i as f64 / 400.0;
            let dp = (a.rho_plus(r).unwrap() - b.rho_plus(r).unwrap()).abs();
            let dm = (a.rho_minus(r).unwrap() - b.rho_minus(r).unwrap()).abs();
            dp.max(dm)
        })
        .fold(0.0, f64::max)
}

// 1 ─ free transport against characteristics
fn characteristics(_: &mut Suite) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = Tally::default();
    let (mut worst_ratio, mut min_order) = (0.0f64, f64::INFINITY);
    for k in 0..5 {
        let (c, w) = (rng.random_range(-0.5..0.5), rng.random_range(0.25..0.5));
        let (tilt, m0, m1, mc) = (
            rng.random_range(-0.5..0.5),
            rng.random_range(0.0..0.5),
            rng.random_range(0.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let f0 = move |x: f64, v: f64| (-((x - c) / w).powi(2)).exp() * (1.0 + tilt * v);
        let mu = move |x: f64, _v: f64| m0 + m1 * (-(x - mc) * (x - mc)).exp();
        let g = FreeGrid {
            x_min: -3.0,
            x_max: 3.0,
            nx: 240,
            v_max: 1.0,
            nv: 8,
        };
        let r = characteristics_check(&f0, &mu, g, 0.5).map_err(|e| e.to_string())?;
        worst_ratio = worst_ratio.max(r.coarse_error / r.bound);
        min_order = min_order.min(r.order);
        t.require(r.coarse_error <= r.bound, || {
            format!(
                "scenario {k}: error {:.3e} > bound {:.3e}",
                r.coarse_error, r.bound
            )
        });
        t.require(r.order >= 0.9, || {
            format!("scenario {k}: order {:.3}", r.order)
        });
    }
    t.finish(format!(
        "5 scenarios, worst error/bound {worst_ratio:.3}, min order {min_order:.3} (>= 0.9)"
    ))
}

fn symmetric_recycling_market() -> MarketParams {
    let mut p = box_market();
    p.p_minus_plus = Some(Crf::boxcar(0.5, 1.0));
    p.p_plus_minus = Some(Crf::boxcar(0.5, 1.0));
    p
}

fn symmetric_network() -> NetworkSpec {
    let route = |from, to| Route {
        from,
        to,
        p_minus_plus: Some(Crf::boxcar(0.3, 1.0)),
        p_plus_minus: Some(Crf::boxcar(0.3, 1.0)),
    };
    NetworkSpec {
        markets: vec![box_market(), box_market()],
        routing: vec![route(0, 1), route(1, 0)],
    }
}

// 2 ─ equilibria stay put in the fluid solver
fn persistence(suite: &mut Suite) -> Result<String, String> {
    let cfg = PersistenceConfig {
        dr: 1e-3,
        t_end: 1.0,
        margin: 1.0,
        extraction: BoundaryExtraction::FirstCell,
    };
    let mut t = Tally::default();
    let mut parts = Vec::new();
    let mut judge = |name: &str, r: kinmarket::validation::PersistenceReport, t: &mut Tally| {
        t.require(r.max_drift < 1e-3, || {
            format!("{name}: drift {:.3e}", r.max_drift)
        });
        t.require(r.max_beta_deviation < 1e-6, || {
            format!("{name}: beta deviation {:.3e}", r.max_beta_deviation)
        });
        t.require(r.runtime_s < 30.0, || {
            format!("{name}: runtime {:.1} s", r.runtime_s)
        });
        parts.push(format!(
            "{name} drift {:.2e} |dbeta| {:.1e} ({:.1} s)",
            r.max_drift, r.max_beta_deviation, r.runtime_s
        ));
        suite
            .budgets
            .push((format!("persistence {name}"), r.budget));
    };

    let p = box_market();
    let c = critical_constants(&p).map_err(|e| e.to_string())?;
    t.require((c.gamma_cr - 1.0).abs() < 1e-12, || {
        format!("gamma_cr = {}", c.gamma_cr)
    });
    let e = fixed_point_single(&p, c.gamma_cr).map_err(|e| e.to_string())?;
    judge(
        "fixed",
        equilibrium_persistence(&p, &e, &cfg).map_err(|e| e.to_string())?,
        &mut t,
    );

    let q = symmetric_recycling_market();
    let (e, _) = stationary_point_recycling(&q).map_err(|e| e.to_string())?;
    t.require(e.finite_mass, || {
        "recycling stationary point has infinite mass".into()
    });
    judge(
        "stationary",
        equilibrium_persistence(&q, &e, &cfg).map_err(|e| e.to_string())?,
        &mut t,
    );

    let spec = symmetric_network();
    let nc = network_constants(&spec).map_err(|e| e.to_string())?;
    let s = solve_network_inequalities(&nc).map_err(|e| e.to_string())?;
    let eq = fixed_point_network(&spec, &s).map_err(|e| e.to_string())?;
    judge(
        "network",
        network_persistence(&spec, &eq, &cfg).map_err(|e| e.to_string())?,
        &mut t,
    );
    t.finish(parts.join(", "))
}

/// `σ₊(β - v₊)(v₋ - α₊₋(v₋ - β)) - σ₋(v₋ - β)(|v₊| - α₋₊(β - v₊))`, obtained
/// by eliminating `γ±` from the two finite-mass conditions and the flux
/// balance; returns the value and the size of its terms.
fn eliminated_balance(
    sp: f64,
    sm: f64,
    amp: f64,
    apm: f64,
    vp: f64,
    vm: f64,
    beta: f64,
) -> (f64, f64) {
    let t1 = sp * (beta - vp) * (vm - apm * (vm - beta));
    let t2 = sm * (vm - beta) * (-vp - amp * (beta - vp));
    (t1 - t2, t1.abs().max(t2.abs()).max(1.0))
}

// 3 ─ stationary recycling points
fn quadratic_fidelity(_: &mut Suite) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut t = Tally::default();
    let (mut worst_q, mut worst_flux, mut worst_tail, mut worst_const) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..100 {
        let p = random_recycling_market(&mut rng);
        let c = critical_constants(&p).map_err(|e| e.to_string())?;
        if k < 10 {
            let (s, m) = (-p.v_plus, p.v_minus);
            let oracle = [
                (
                    c.sigma_plus,
                    weighted_total_oracle(&p.lambda_plus, &p.mu_plus, s),
                ),
                (
                    c.sigma_minus,
                    weighted_total_oracle(&p.lambda_minus, &p.mu_minus, m),
                ),
                (
                    c.alpha_mp,
                    weighted_total_oracle(p.p_minus_plus.as_ref().unwrap(), &p.mu_plus, s),
                ),
                (
                    c.alpha_pm,
                    weighted_total_oracle(p.p_plus_minus.as_ref().unwrap(), &p.mu_minus, m),
                ),
            ];
            for (lib, ora) in oracle {
                worst_const = worst_const.max((lib - ora).abs());
            }
        }
        let (e, _) = match stationary_point_recycling(&p) {
            Ok(v) => v,
            Err(e) => {
                t.require(false, || format!("scenario {k}: {e}"));
                continue;
            }
        };
        let beta = e.beta;
        let (g, scale) = eliminated_balance(
            c.sigma_plus,
            c.sigma_minus,
            c.alpha_mp,
            c.alpha_pm,
            p.v_plus,
            p.v_minus,
            beta,
        );
        worst_q = worst_q.max(g.abs() / scale);
        t.require(g.abs() < 1e-12 * scale, || {
            format!("scenario {k}: scaled residual {:.3e}", g.abs() / scale)
        });
        t.require(beta > p.v_plus && beta < p.v_minus, || {
            format!("scenario {k}: beta {beta} outside")
        });
        t.require(e.gamma_plus > 0.0 && e.gamma_minus > 0.0, || {
            format!("scenario {k}: gamma not positive")
        });
        let nu_minus = (p.v_minus - beta) * e.gamma_minus;
        let nu_plus = -(p.v_plus - beta) * e.gamma_plus;
        let flux = (nu_minus - nu_plus).abs() / nu_minus.abs().max(nu_plus.abs());
        worst_flux = worst_flux.max(flux);
        t.require(flux < 1e-10, || {
            format!("scenario {k}: flux balance {flux:.3e}")
        });
        let tail = (e.plus.bracket_at_infinity().abs() / e.gamma_plus)
            .max(e.minus.bracket_at_infinity().abs() / e.gamma_minus);
        worst_tail = worst_tail.max(tail);
        t.require(tail < 1e-10, || {
            format!("scenario {k}: finite-mass bracket {tail:.3e}")
        });
    }
    t.require(worst_const < 1e-8, || {
        format!("constants differ from oracle by {worst_const:.3e}")
    });

    let mut p = box_market();
    p.p_minus_plus = Some(Crf::boxcar(0.4, 1.0));
    p.p_plus_minus = Some(Crf::boxcar(0.2, 1.0));
    let (e, branch) = stationary_point_recycling(&p).map_err(|e| e.to_string())?;
    let exact = 5.0 - 26f64.sqrt();
    t.require(
        (e.beta - exact).abs() < 1e-12 && branch == BranchKind::Quadratic,
        || format!("worked case beta {} vs {exact}", e.beta),
    );
    t.finish(format!(
        "100 scenarios, max scaled residual {worst_q:.1e}, flux balance {worst_flux:.1e}, \
         mass bracket {worst_tail:.1e}, constants vs oracle {worst_const:.1e}; worked case |dbeta| {:.1e}",
        (e.beta - exact).abs()
    ))
}

// 4 ─ quadratic branch tends to the linear one
fn branch_continuity(_: &mut Suite) -> Result<String, String> {
    let mut t = Tally::default();
    let mut base = MarketParams::with_velocities(-1.0, 1.5);
    base.lambda_plus = Crf::boxcar(1.0, 1.0);
    base.lambda_minus = Crf::ramp(2.0, 1.5);
    base.mu_plus = Crf::ramp(0.5, 2.0);
    base.p_minus_plus = Some(Crf::boxcar(0.3, 1.0));
    let unit = Crf::ramp(1.0, 1.0);
    let with_pm = |scale: f64| {
        let mut p = base.clone();
        p.p_plus_minus = Some(unit.scaled(scale));
        p
    };
    // α₊₋ is linear in the kernel scale
    let c1 = critical_constants(&with_pm(1.0)).map_err(|e| e.to_string())?;
    let (sp, sm, vp, vm) = (c1.sigma_plus, c1.sigma_minus, base.v_plus, base.v_minus);
    let linear = (sm - sp) / (sm / vm - sp / vp);
    let critical_scale = sm * c1.alpha_mp / (sp * c1.alpha_pm);
    let mut gaps = Vec::new();
    for offset in [1e-2, 1e-4, 1e-6, 1e-8, 1e-10] {
        let p = with_pm(critical_scale * (1.0 + offset));
        let c = critical_constants(&p).map_err(|e| e.to_string())?;
        let a = sp * c.alpha_pm - sm * c.alpha_mp;
        let (e, branch) = stationary_point_recycling(&p).map_err(|e| e.to_string())?;
        t.require(branch == BranchKind::Quadratic, || {
            format!("offset {offset:e}: branch {branch:?}, a = {a:e}")
        });
        gaps.push((offset, (e.beta - linear).abs()));
    }
    let last = gaps.last().unwrap().1;
    t.require(last < 1e-8, || format!("gap {last:.3e} at offset 1e-10"));
    t.require(gaps.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-15), || {
        format!("gaps not decreasing: {gaps:?}")
    });
    let (e, branch) =
        stationary_point_recycling(&with_pm(critical_scale)).map_err(|e| e.to_string())?;
    t.require(
        branch == BranchKind::Linear || (e.beta - linear).abs() < 1e-12,
        || format!("at a = 0: branch {branch:?}, beta {} vs {linear}", e.beta),
    );
    let shown: Vec<String> = gaps
        .iter()
        .map(|(o, g)| format!("{o:.0e}:{g:.1e}"))
        .collect();
    t.finish(format!(
        "linear beta {linear:.6}, |gap| by offset [{}]",
        shown.join(" ")
    ))
}

// 5 ─ fixed points exist exactly above the threshold
fn threshold_dichotomy(_: &mut Suite) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = Tally::default();
    let band = kinmarket::equilibria::THRESHOLD_BAND;
    let mut counts = [0usize; 4];
    let mut worst_oracle = 0.0f64;
    for recycling in [false, true] {
        for k in 0..200 {
            let p = if recycling {
                random_recycling_market(&mut rng)
            } else {
                random_market(&mut rng)
            };
            let c = critical_constants(&p).map_err(|e| e.to_string())?;
            let threshold = if recycling {
                c.gamma_hat_cr
            } else {
                c.gamma_cr
            };
            if k < 10 && !recycling {
                let s = -p.v_plus;
                let plus = weighted_total_oracle(&p.lambda_plus, &p.mu_plus, s) / s;
                let minus = weighted_total_oracle(&p.lambda_minus, &p.mu_minus, p.v_minus) / s;
                worst_oracle = worst_oracle.max((plus.max(minus) - c.gamma_cr).abs());
            }
            let factor = match k % 5 {
                0 => 1.0,
                1 => 1.0 - 1e-10,
                2 => 1.0 + 1e-10,
                _ => rng.random_range(0.5..1.5),
            };
            let gamma = threshold * factor;
            let r = if recycling {
                fixed_point_recycling(&p, gamma)
            } else {
                fixed_point_single(&p, gamma)
            };
            let below = gamma < threshold * (1.0 - band);
            match r {
                Err(EquilibriumError::NoFixedPoint { .. }) => {
                    counts[2 * usize::from(recycling)] += 1;
                    t.require(below, || {
                        format!("tier {recycling}, case {k}: refused gamma {gamma} >= {threshold}")
                    });
                }
                Ok(e) => {
                    counts[2 * usize::from(recycling) + 1] += 1;
                    t.require(!below, || {
                        format!("tier {recycling}, case {k}: accepted gamma {gamma} < {threshold}")
                    });
                    let r_max = e.reach() + 1.0;
                    for i in 0..=2000 {
                        let r = r_max * i as f64 / 2000.0;
                        let (bp, bm) = (e.plus.bracket(r).unwrap(), e.minus.bracket(r).unwrap());
                        let tol = 1e-12 * e.gamma_plus.max(e.gamma_minus).max(1.0);
                        if bp < -tol || bm < -tol {
                            t.require(false, || {
                                format!("tier {recycling}, case {k}: negative density at r = {r}")
                            });
                            break;
                        }
                    }
                }
                Err(e) => t.require(false, || format!("tier {recycling}, case {k}: {e}")),
            }
        }
    }
    t.require(worst_oracle < 1e-7, || {
        format!("gamma_cr differs from oracle by {worst_oracle:.3e}")
    });
    t.finish(format!(
        "single: {} none / {} found, recycling: {} none / {} found; gamma_cr vs oracle {worst_oracle:.1e}",
        counts[0], counts[1], counts[2], counts[3]
    ))
}

fn slack_min(c: &NetworkConstants, s: &[f64]) -> f64 {
    let (a, b) = c.slacks(s);
    a.into_iter().chain(b).fold(f64::INFINITY, f64::min)
}

/// Least solution by plain value iteration from zero.
fn least_solution_oracle(c: &NetworkConstants) -> Vec<f64> {
    let n = c.lambda_hat_plus.len();
    let mut s = vec![0.0; n];
    for _ in 0..100_000 {
        let next: Vec<f64> = (0..n)
            .map(|m| {
                let inflow = |a: &DMatrix<f64>| (0..n).map(|k| s[k] * a[(k, m)]).sum::<f64>();
                (c.lambda_hat_plus[m] + inflow(&c.a_mp))
                    .max(c.lambda_hat_minus[m] + inflow(&c.a_pm))
            })
            .collect();
        let done = next
            .iter()
            .zip(&s)
            .all(|(a, b)| (a - b).abs() <= 1e-15 * a.abs().max(1.0));
        s = next;
        if done {
            break;
        }
    }
    s
}

// 6 ─ least solution of the network inequalities
fn inequality_solver(_: &mut Suite) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut t = Tally::default();
    let (mut worst_oracle, mut worst_slack) = (0.0f64, 0.0f64);
    for k in 0..50 {
        let n = rng.random_range(2..=5);
        let markets: Vec<MarketParams> = (0..n).map(|_| random_market(&mut rng)).collect();
        let mut routing = Vec::new();
        for from in 0..n {
            let targets: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
            let budget = rng.random_range(0.2..0.95) / targets.len().max(1) as f64;
            for to in targets {
                routing.push(Route {
                    from,
                    to,
                    p_minus_plus: Some(random_kernel(&mut rng, budget)),
                    p_plus_minus: Some(random_kernel(&mut rng, budget)),
                });
            }
        }
        let spec = NetworkSpec { markets, routing };
        let c = network_constants(&spec).map_err(|e| format!("instance {k}: {e}"))?;
        let s = match solve_network_inequalities(&c) {
            Ok(s) => s,
            Err(e) => {
                t.require(false, || format!("instance {k}: {e}"));
                continue;
            }
        };
        let oracle = least_solution_oracle(&c);
        for (a, b) in s.iter().zip(&oracle) {
            worst_oracle = worst_oracle.max((a - b).abs() / b.abs().max(1.0));
        }
        let slack = slack_min(&c, &s);
        worst_slack = worst_slack.min(slack);
        t.require(slack >= -1e-12, || format!("instance {k}: slack {slack:e}"));
        for m in 0..n {
            let mut lower = s.clone();
            lower[m] -= 1e-6;
            t.require(slack_min(&c, &lower) < 0.0, || {
                format!("instance {k}: s[{m}] - 1e-6 still feasible")
            });
        }
        t.require(fixed_point_network(&spec, &s).is_ok(), || {
            format!("instance {k}: no fixed point at s")
        });
    }
    t.require(worst_oracle < 1e-9, || {
        format!("differs from value iteration by {worst_oracle:.3e}")
    });

    let consts = |lp: Vec<f64>, lm: Vec<f64>, amp: &[f64], apm: &[f64]| {
        let n = lp.len();
        NetworkConstants {
            lambda_hat_plus: lp,
            lambda_hat_minus: lm,
            a_mp: DMatrix::from_row_slice(n, n, amp),
            a_pm: DMatrix::from_row_slice(n, n, apm),
        }
    };
    let ten = solve_network_inequalities(&consts(vec![1.0], vec![0.0], &[0.9], &[0.0]))
        .map_err(|e| e.to_string())?;
    let pair = solve_network_inequalities(&consts(
        vec![1.0, 1.0],
        vec![0.0, 0.0],
        &[0.0, 0.6, 0.6, 0.0],
        &[0.0; 4],
    ))
    .map_err(|e| e.to_string())?;
    let gap = (ten[0] - 10.0)
        .abs()
        .max((pair[0] - 2.5).abs())
        .max((pair[1] - 2.5).abs());
    t.require(gap < 1e-12, || {
        format!("hand instances off by {gap:e}: {ten:?} {pair:?}")
    });
    t.finish(format!(
        "50 instances, vs value iteration {worst_oracle:.1e}, min slack {worst_slack:.1e}; hand instances off by {gap:.1e}"
    ))
}

fn ramp_initial() -> InitialCondition {
    InitialCondition {
        rho_plus: Crf::ramp(1.5, 1.0),
        rho_minus: Crf::ramp(0.5, 1.0),
        b0: 0.0,
    }
}

// 7 ─ particles approach the fluid limit
fn particle_convergence(suite: &mut Suite) -> Result<String, String> {
    let mut t = Tally::default();
    let r = particle_fluid_convergence(
        &box_market(),
        &ramp_initial(),
        &ConvergenceConfig::standard(7),
    )
    .map_err(|e| e.to_string())?;
    suite
        .budgets
        .push(("convergence fluid reference".into(), r.fluid_budget));
    t.require((-0.7..=-0.3).contains(&r.slope), || {
        format!("slope {:.3}", r.slope)
    });
    t.require(r.max_b_z() < 5.0, || {
        format!("b z-score {:.2}", r.max_b_z())
    });
    t.require(r.runtime_s < 300.0, || {
        format!("runtime {:.0} s", r.runtime_s)
    });
    let l1: Vec<String> = r
        .levels
        .iter()
        .map(|l| format!("{:.3e}", l.mean_l1))
        .collect();
    t.finish(format!(
        "L1 [{}] slope {:.3} (in [-0.7, -0.3]), max b z-score {:.2} (< 5)",
        l1.join(", "),
        r.slope,
        r.max_b_z()
    ))
}

fn death_market() -> MarketParams {
    let mut p = MarketParams::with_velocities(-1.0, 1.5);
    p.lambda_plus = Crf::ramp(2.0, 1.0);
    p.lambda_minus = Crf::new(vec![0.0, 0.5, 1.2], vec![0.5, 1.0, 0.0]).unwrap();
    p.mu_plus = Crf::ramp(1.0, 2.0);
    p.mu_minus = Crf::boxcar(0.4, 1.5);
    p
}

fn budget_of(steps: &[kinmarket::fluid::StepReport], dt: f64) -> BudgetAudit {
    let mut b = BudgetAudit {
        dt,
        steps: steps.len(),
        ..Default::default()
    };
    for r in steps {
        b.record(&r.plus);
        b.record(&r.minus);
    }
    b
}

fn bit_equal(a: &FluidState, b: &FluidState) -> bool {
    let same = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
    same(&a.rho_plus, &b.rho_plus)
        && same(&a.rho_minus, &b.rho_minus)
        && a.b.to_bits() == b.b.to_bits()
}

// 8 ─ zero kernels and single-market networks reduce exactly
fn reduction_chain(suite: &mut Suite) -> Result<String, String> {
    let mut t = Tally::default();
    let err = |e: &dyn std::fmt::Display| e.to_string();
    let single = death_market();
    let mut zero = single.clone();
    zero.p_minus_plus = Some(Crf::zero());
    zero.p_plus_minus = Some(Crf::zero());
    let init = ramp_initial();
    let grid = RadialGrid::new(6.0, 2e-3).map_err(|e| err(&e))?;

    // steppers
    let a = MarketSolver::new(single.clone(), grid, BoundaryExtraction::FirstCell)
        .map_err(|e| err(&e))?;
    let b = MarketSolver::new(zero.clone(), grid, BoundaryExtraction::FirstCell)
        .map_err(|e| err(&e))?;
    let mut sa = a
        .initial_state(&init.rho_plus, &init.rho_minus, 0.0)
        .map_err(|e| err(&e))?;
    let mut sb = b
        .initial_state(&init.rho_plus, &init.rho_minus, 0.0)
        .map_err(|e| err(&e))?;
    let dt = a.stable_dt();
    let mut reports = Vec::new();
    for _ in 0..500 {
        reports.push(a.step(&mut sa, dt).map_err(|e| err(&e))?);
        b.step(&mut sb, dt).map_err(|e| err(&e))?;
    }
    t.require(bit_equal(&sa, &sb), || {
        "zero-kernel fluid step differs from single".into()
    });
    suite
        .budgets
        .push(("reduction single stepper".into(), budget_of(&reports, dt)));

    let mut recycling = single.clone();
    recycling.p_minus_plus = Some(Crf::ramp(0.6, 1.0));
    recycling.p_plus_minus = Some(Crf::boxcar(0.3, 2.0));
    let net = NetworkSolver::new(
        NetworkSpec::from_recycling_market(&recycling),
        grid,
        BoundaryExtraction::FirstCell,
    )
    .map_err(|e| err(&e))?;
    let rec = MarketSolver::new(recycling.clone(), grid, BoundaryExtraction::FirstCell)
        .map_err(|e| err(&e))?;
    let mut sn = net
        .initial_state(&[(init.rho_plus.clone(), init.rho_minus.clone(), 0.0)])
        .map_err(|e| err(&e))?;
    let mut sr = rec
        .initial_state(&init.rho_plus, &init.rho_minus, 0.0)
        .map_err(|e| err(&e))?;
    let dt = rec.stable_dt().min(net.stable_dt());
    let mut reports = Vec::new();
    for _ in 0..500 {
        net.step(&mut sn, dt).map_err(|e| err(&e))?;
        reports.push(rec.step(&mut sr, dt).map_err(|e| err(&e))?);
    }
    t.require(bit_equal(&sn.markets[0], &sr), || {
        "one-market network differs from recycling".into()
    });
    suite.budgets.push((
        "reduction recycling stepper".into(),
        budget_of(&reports, dt),
    ));

    // particle engines
    let cfg = RunConfig {
        t_end: 1.0,
        dt: 1e-3,
        sample_every: 1,
        density_every: 100,
        bin_width: 0.1,
        n_bins: 30,
        seed: 8,
        replica: 0,
    };
    let pa = run_particles(
        &ParticleEngine::new(single.clone(), 500.0).map_err(|e| err(&e))?,
        &init,
        &cfg,
    )
    .map_err(|e| err(&e))?;
    let pb = run_particles(
        &ParticleEngine::new(zero.clone(), 500.0).map_err(|e| err(&e))?,
        &init,
        &cfg,
    )
    .map_err(|e| err(&e))?;
    t.require(pa == pb, || {
        "zero-kernel particle run differs from single".into()
    });

    // closed forms
    let gamma = 1.3 * critical_constants(&single).map_err(|e| err(&e))?.gamma_cr;
    let fa = fixed_point_single(&single, gamma).map_err(|e| err(&e))?;
    let fb = fixed_point_recycling(&zero, gamma).map_err(|e| err(&e))?;
    let gap_fixed = max_profile_gap(&fa, &fb, fa.reach() + 1.0);
    t.require(gap_fixed < 1e-10, || {
        format!("fixed points differ by {gap_fixed:e}")
    });

    let c = critical_constants(&zero).map_err(|e| err(&e))?;
    let (sb, _) = stationary_point_recycling(&zero).map_err(|e| err(&e))?;
    let sa =
        stationary_point_single(&single, c.gamma_cr_plus, c.gamma_cr_minus).map_err(|e| err(&e))?;
    let (gp, gm) = (c.gamma_cr_plus, c.gamma_cr_minus);
    let beta_formula = (gp * single.v_plus + gm * single.v_minus) / (gp + gm);
    let gap_beta = (sb.beta - beta_formula)
        .abs()
        .max((sa.beta - beta_formula).abs());
    t.require(gap_beta < 1e-12, || {
        format!("alpha = 0 beta off by {gap_beta:e}")
    });
    let gap_stat = max_profile_gap(&sa, &sb, sa.reach() + 1.0);
    t.require(gap_stat < 1e-10, || {
        format!("stationary points differ by {gap_stat:e}")
    });

    let cr = critical_constants(&recycling).map_err(|e| err(&e))?;
    let spec = NetworkSpec::from_recycling_market(&recycling);
    let nc = network_constants(&spec).map_err(|e| err(&e))?;
    let gap_alpha = (nc.a_mp[(0, 0)] - cr.alpha_mp)
        .abs()
        .max((nc.a_pm[(0, 0)] - cr.alpha_pm).abs());
    t.require(gap_alpha < 1e-14, || {
        format!("network constants differ by {gap_alpha:e}")
    });
    let gamma = 1.2 * cr.gamma_hat_cr;
    let ra = fixed_point_recycling(&recycling, gamma).map_err(|e| err(&e))?;
    let rb = fixed_point_network(&spec, &[-recycling.v_plus * gamma]).map_err(|e| err(&e))?;
    let gap_net = max_profile_gap(&ra, &rb[0], ra.reach() + 1.0);
    t.require(gap_net < 1e-10, || {
        format!("network fixed point differs by {gap_net:e}")
    });
    t.finish(format!(
        "steppers and particles bitwise; closed forms within {:.1e}; alpha = 0 beta off by {gap_beta:.1e}",
        gap_fixed.max(gap_stat).max(gap_net)
    ))
}

// 9 ─ mass budgets of every fluid run
fn conservation(suite: &mut Suite) -> Result<String, String> {
    let mut t = Tally::default();
    // a drifting, dying, recycling market on top of the runs above
    let mut p = death_market();
    p.p_minus_plus = Some(Crf::ramp(0.6, 1.0));
    p.p_plus_minus = Some(Crf::boxcar(0.3, 2.0));
    let init = ramp_initial();
    let grid = RadialGrid::for_horizon(2.0, p.v_plus, p.v_minus, 1.0, 1.0, 1e-3)
        .map_err(|e| e.to_string())?;
    let solver =
        MarketSolver::new(p, grid, BoundaryExtraction::FirstCell).map_err(|e| e.to_string())?;
    let mut state = solver
        .initial_state(&init.rho_plus, &init.rho_minus, 0.0)
        .map_err(|e| e.to_string())?;
    let dt = solver.stable_dt();
    let mut reports = Vec::new();
    solver
        .run(&mut state, 1.0, dt, |_, r| reports.push(*r))
        .map_err(|e| e.to_string())?;
    t.require(state.b.abs() > 1e-3, || {
        "reference run did not move the boundary".into()
    });
    suite
        .budgets
        .push(("recycling with deaths".into(), budget_of(&reports, dt)));

    let mut worst_step = 0.0f64;
    let mut worst_cum = 0.0f64;
    for (name, b) in &suite.budgets {
        worst_step = worst_step.max(b.max_step_error / (b.dt * b.dt));
        worst_cum = worst_cum.max(b.cumulative_error / b.cumulative_throughput);
        t.require(b.passes(), || {
            format!(
                "{name}: step error {:.3e} (dt^2 = {:.3e}), cumulative {:.3e} of {:.3e}",
                b.max_step_error,
                b.dt * b.dt,
                b.cumulative_error,
                b.cumulative_throughput
            )
        });
    }
    t.finish(format!(
        "{} fluid runs, max step error / dt^2 {worst_step:.1e}, max cumulative / throughput {worst_cum:.1e}",
        suite.budgets.len()
    ))
}

/// Rates with breakpoints at least `0.3 R` apart, heights at most 1 and
/// speeds in `[0.75, 1.5]`.
fn moderate_market(rng: &mut ChaCha8Rng, recycling: bool) -> MarketParams {
    let mut rate = |h: f64, positive: bool| {
        let r0: f64 = rng.random_range(1.0..2.0);
        let mid = rng.random_range(0.3..0.7) * r0;
        let lo = if positive { 0.2 * h } else { 0.0 };
        let (a, b) = (rng.random_range(lo..=h), rng.random_range(lo..=h));
        Crf::new(vec![0.0, mid, r0], vec![a, b, 0.0]).unwrap()
    };
    let (lp, lm, mp, mm) = (
        rate(1.0, true),
        rate(1.0, true),
        rate(0.5, false),
        rate(0.5, false),
    );
    let (kp, km) = (rate(1.0, true), rate(1.0, true));
    let mut p =
        MarketParams::with_velocities(-rng.random_range(0.75..1.5), rng.random_range(0.75..1.5));
    (p.lambda_plus, p.lambda_minus, p.mu_plus, p.mu_minus) = (lp, lm, mp, mm);
    if recycling {
        let (a, b) = (rng.random_range(0.1..0.6), rng.random_range(0.1..0.6));
        p.p_minus_plus = Some(kp.scaled(a / kp.total()));
        p.p_plus_minus = Some(km.scaled(b / km.total()));
    }
    p
}

type Case = (String, MarketParams, EquilibriumProfile);

fn random_cases(
    rng: &mut ChaCha8Rng,
    tag: &str,
    make: fn(&mut ChaCha8Rng, bool) -> MarketParams,
) -> Result<Vec<Case>, String> {
    let err = |e: EquilibriumError| e.to_string();
    let mut cases = Vec::new();
    for k in 0..10 {
        let p = make(rng, false);
        let c = critical_constants(&p).map_err(err)?;
        let u: f64 = rng.random_range(0.0..0.5);
        cases.push((
            format!("{tag} fixed {k}"),
            p.clone(),
            fixed_point_single(&p, c.gamma_cr * (1.0 + u)).map_err(err)?,
        ));
        let s = stationary_point_single(&p, c.gamma_cr_plus * (1.0 + u), c.gamma_cr_minus)
            .map_err(err)?;
        cases.push((format!("{tag} stationary {k}"), p, s));
        let q = make(rng, true);
        let c = critical_constants(&q).map_err(err)?;
        cases.push((
            format!("{tag} recycling fixed {k}"),
            q.clone(),
            fixed_point_recycling(&q, c.gamma_hat_cr).map_err(err)?,
        ));
        let (s, _) = stationary_point_recycling(&q).map_err(err)?;
        cases.push((format!("{tag} recycling stationary {k}"), q, s));
    }
    Ok(cases)
}

// 10 ─ closed forms solve their equations
//
// The absolute bound holds for documented and moderate profiles. Stiff random
// markets (breakpoints 0.025 apart, speeds near 0.5) carry truncation error
// above it, so for them only the second-order halving is required.
fn residuals(_: &mut Suite) -> Result<String, String> {
    let mut t = Tally::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let err = |e: EquilibriumError| e.to_string();
    let mut cases: Vec<Case> = Vec::new();
    let p = box_market();
    cases.push((
        "box fixed".into(),
        p.clone(),
        fixed_point_single(&p, 1.0).map_err(err)?,
    ));
    cases.push((
        "box stationary".into(),
        p.clone(),
        stationary_point_single(&p, 1.0, 2.0).map_err(err)?,
    ));
    let p = death_market();
    cases.push((
        "death fixed".into(),
        p.clone(),
        fixed_point_single(&p, 1.5).map_err(err)?,
    ));
    let p = symmetric_recycling_market();
    cases.push((
        "symmetric recycling".into(),
        p.clone(),
        stationary_point_recycling(&p).map_err(err)?.0,
    ));
    let mut p = box_market();
    p.p_minus_plus = Some(Crf::boxcar(0.4, 1.0));
    p.p_plus_minus = Some(Crf::boxcar(0.2, 1.0));
    cases.push((
        "worked recycling".into(),
        p.clone(),
        stationary_point_recycling(&p).map_err(err)?.0,
    ));
    cases.extend(random_cases(&mut rng, "moderate", moderate_market)?);
    let stiff = random_cases(&mut rng, "stiff", |rng, recycling| {
        if recycling {
            random_recycling_market(rng)
        } else {
            random_market(rng)
        }
    })?;
    let n_bounded = cases.len();

    let (mut worst, mut worst_stiff, mut min_ratio, mut at_floor) =
        (0.0f64, 0.0f64, f64::INFINITY, 0);
    for (i, (name, p, e)) in cases.iter().chain(&stiff).enumerate() {
        let r = residual_scaling(e, p, 1e-3, e.reach() + 1.0).map_err(|e| e.to_string())?;
        let res = r.coarse.max_residual();
        if r.at_roundoff() {
            at_floor += 1;
        } else {
            min_ratio = min_ratio.min(r.ratio());
        }
        if i < n_bounded {
            worst = worst.max(res);
            t.require(r.passes(1e-5), || {
                format!("{name}: residual {res:.3e}, ratio {:.2}", r.ratio())
            });
        } else {
            worst_stiff = worst_stiff.max(res);
            t.require(r.passes(f64::INFINITY), || {
                format!("{name}: ratio {:.2}", r.ratio())
            });
        }
    }
    let spec = symmetric_network();
    let s = solve_network_inequalities(&network_constants(&spec).map_err(err)?).map_err(err)?;
    let eq = fixed_point_network(&spec, &s).map_err(err)?;
    let coarse = verify_network(&eq, &spec, 1e-3, 3.0).map_err(|e| e.to_string())?;
    let fine = verify_network(&eq, &spec, 5e-4, 3.0).map_err(|e| e.to_string())?;
    for (c, f) in coarse.iter().zip(&fine) {
        worst = worst.max(c.max_residual());
        t.require(c.max_residual() < 1e-5 && f.scales_from(c, 3.5), || {
            format!("network: residual {:.3e}", c.max_residual())
        });
    }
    t.finish(format!(
        "{n_bounded} profiles + 2 network markets, max residual {worst:.1e} at dr = 1e-3; {} stiff profiles up to \
         {worst_stiff:.1e}; min halving ratio {min_ratio:.2} ({at_floor} at rounding level)",
        stiff.len()
    ))
}

type Criterion = fn(&mut Suite) -> Result<String, String>;

fn main() {
    let criteria: [(&str, f64, Criterion); 10] = [
        ("characteristics oracle", 10.0, characteristics),
        ("equilibrium persistence", 90.0, persistence),
        ("quadratic-equation fidelity", 5.0, quadratic_fidelity),
        ("branch continuity", f64::INFINITY, branch_continuity),
        ("threshold dichotomy", f64::INFINITY, threshold_dichotomy),
        ("inequality solver", 5.0, inequality_solver),
        ("particle-to-fluid convergence", 300.0, particle_convergence),
        ("reduction chain", f64::INFINITY, reduction_chain),
        ("conservation audit", f64::INFINITY, conservation),
        ("residual verification", f64::INFINITY, residuals),
    ];
    let mut suite = Suite::default();
    let mut failed = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&mut suite)))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok(d) if secs > *limit => Err(format!("{d}; runtime {secs:.1} s over {limit} s")),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {tag} {name}: {detail} [{secs:.2} s]",
            i + 1
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

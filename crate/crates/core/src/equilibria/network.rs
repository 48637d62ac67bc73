//! Fixed points of market networks.
//!
//! A fixed point is parameterized by the annihilation flows `s_m = -v₊,m γ₊,m`.
//! It exists iff `s ≥ λ̂₊ + s A₋₊` and `s ≥ λ̂₋ + s A₊₋` componentwise,
//! where `A[k][m]` integrates the kernel routing mass from market `k` to `m`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::domain::{validate_network, NetworkSpec};

use super::profile::{EquilibriumKind, EquilibriumProfile, PhaseProfile};
use super::{EquilibriumError, Exponent};

/// Floor added to markets without any arrivals so that `s` stays positive.
pub const EPS_POS: f64 = 1e-12;

const MAX_ITERATIONS: usize = 1_000_000;
const CONVERGED: f64 = 1e-12;
const DIVERGED: f64 = 1e12;
/// Slack allowed when re-verifying a user supplied `s`.
const VERIFY_REL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkConstants {
    pub lambda_hat_plus: Vec<f64>,
    pub lambda_hat_minus: Vec<f64>,
    /// `A₋₊[k][m] = ∫ p_km(-,+) e^{-F₊⁽ᵐ⁾}`, rows indexed by the source market.
    pub a_mp: DMatrix<f64>,
    pub a_pm: DMatrix<f64>,
}

impl NetworkConstants {
    /// Slacks `s - λ̂₊ - sA₋₊` and `s - λ̂₋ - sA₊₋`.
    pub fn slacks(&self, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let row = DVector::from_column_slice(s).transpose();
        let sp = &row * &self.a_mp;
        let sm = &row * &self.a_pm;
        let plus = (0..s.len())
            .map(|m| s[m] - self.lambda_hat_plus[m] - sp[m])
            .collect();
        let minus = (0..s.len())
            .map(|m| s[m] - self.lambda_hat_minus[m] - sm[m])
            .collect();
        (plus, minus)
    }
}

fn check_substochastic(name: &'static str, a: &DMatrix<f64>) -> Result<(), EquilibriumError> {
    let sums: Vec<f64> = a.row_iter().map(|r| r.sum()).collect();
    if let Some((k, s)) = sums.iter().enumerate().find(|(_, s)| **s > 1.0 + 1e-12) {
        return Err(EquilibriumError::SubstochasticityViolated {
            matrix: name,
            detail: format!("row {k} sums to {s}"),
        });
    }
    if !sums.iter().any(|s| *s < 1.0) {
        return Err(EquilibriumError::SubstochasticityViolated {
            matrix: name,
            detail: "every row sums to 1".into(),
        });
    }
    Ok(())
}

pub fn network_constants(spec: &NetworkSpec) -> Result<NetworkConstants, EquilibriumError> {
    validate_network(spec)?;
    let n = spec.len();
    let f_plus: Vec<_> = spec
        .markets
        .iter()
        .map(|p| Exponent::new(-p.v_plus, &p.mu_plus))
        .collect();
    let f_minus: Vec<_> = spec
        .markets
        .iter()
        .map(|p| Exponent::new(p.v_minus, &p.mu_minus))
        .collect();
    let mut lambda_hat_plus = Vec::with_capacity(n);
    let mut lambda_hat_minus = Vec::with_capacity(n);
    for (m, p) in spec.markets.iter().enumerate() {
        lambda_hat_plus.push(f_plus[m].weighted_total(&p.lambda_plus)?);
        lambda_hat_minus.push(f_minus[m].weighted_total(&p.lambda_minus)?);
    }
    let mut a_mp = DMatrix::zeros(n, n);
    let mut a_pm = DMatrix::zeros(n, n);
    for r in &spec.routing {
        if let Some(k) = &r.p_minus_plus {
            a_mp[(r.from, r.to)] += f_plus[r.to].weighted_total(k)?;
        }
        if let Some(k) = &r.p_plus_minus {
            a_pm[(r.from, r.to)] += f_minus[r.to].weighted_total(k)?;
        }
    }
    check_substochastic("A_mp", &a_mp)?;
    check_substochastic("A_pm", &a_pm)?;
    Ok(NetworkConstants {
        lambda_hat_plus,
        lambda_hat_minus,
        a_mp,
        a_pm,
    })
}

/// Least positive solution of the fixed-point inequalities.
///
/// Monotone iteration `s ← max(λ̂₊ + sA₋₊, λ̂₋ + sA₊₋, floor)` from
/// `s⁰ = max(λ̂₊, λ̂₋, floor)` converges upward to the least fixed point of
/// the operator. The limit is then polished by solving the linear system of
/// the branches active at the limit, which removes the geometric
/// convergence error when the polished vector is still a solution.
pub fn solve_network_inequalities(c: &NetworkConstants) -> Result<Vec<f64>, EquilibriumError> {
    let n = c.lambda_hat_plus.len();
    let floor: Vec<f64> = (0..n)
        .map(|m| {
            if c.lambda_hat_plus[m] <= 0.0 && c.lambda_hat_minus[m] <= 0.0 {
                EPS_POS
            } else {
                0.0
            }
        })
        .collect();
    let apply = |s: &DVector<f64>| -> (DVector<f64>, Vec<u8>) {
        let row = s.transpose();
        let sp = &row * &c.a_mp;
        let sm = &row * &c.a_pm;
        let mut out = DVector::zeros(n);
        let mut branch = vec![0u8; n];
        for m in 0..n {
            let a = c.lambda_hat_plus[m] + sp[m];
            let b = c.lambda_hat_minus[m] + sm[m];
            let (v, k) = if a >= b { (a, 0) } else { (b, 1) };
            (out[m], branch[m]) = if floor[m] > v { (floor[m], 2) } else { (v, k) };
        }
        (out, branch)
    };
    let scale = c
        .lambda_hat_plus
        .iter()
        .chain(&c.lambda_hat_minus)
        .fold(1.0f64, |a, b| a.max(*b));
    let mut s = DVector::from_fn(n, |m, _| {
        c.lambda_hat_plus[m]
            .max(c.lambda_hat_minus[m])
            .max(floor[m])
    });
    let mut branch = vec![0u8; n];
    let mut iterations = 0;
    loop {
        let (next, br) = apply(&s);
        let change = (&next - &s).amax();
        s = next;
        branch = br;
        iterations += 1;
        if change < CONVERGED * scale.max(s.amax()) {
            break;
        }
        if s.amax() > DIVERGED * scale || iterations >= MAX_ITERATIONS {
            return Err(EquilibriumError::Infeasible {
                iterations,
                norm: s.amax(),
            });
        }
    }
    Ok(polish(c, &floor, &branch, s).iter().copied().collect())
}

/// Solves `s_m = c_m + Σ_k s_k A^{(π_m)}_{km}` for the active branches `π`.
fn polish(c: &NetworkConstants, floor: &[f64], branch: &[u8], s: DVector<f64>) -> DVector<f64> {
    let n = s.len();
    let mut m_sys = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::zeros(n);
    for m in 0..n {
        match branch[m] {
            0 => {
                rhs[m] = c.lambda_hat_plus[m];
                for k in 0..n {
                    m_sys[(m, k)] -= c.a_mp[(k, m)];
                }
            }
            1 => {
                rhs[m] = c.lambda_hat_minus[m];
                for k in 0..n {
                    m_sys[(m, k)] -= c.a_pm[(k, m)];
                }
            }
            _ => rhs[m] = floor[m],
        }
    }
    let Some(exact) = m_sys.lu().solve(&rhs) else {
        return s;
    };
    let scale = s.amax().max(1.0);
    let close = (&exact - &s).amax() <= 1e-8 * scale;
    let (sp, sm) = c.slacks(exact.as_slice());
    let feasible =
        sp.iter().chain(&sm).all(|x| *x >= -1e-14 * scale) && exact.iter().all(|x| *x > 0.0);
    if close && feasible {
        exact
    } else {
        s
    }
}

/// Per-market fixed points for a given `s`.
pub fn fixed_point_network(
    spec: &NetworkSpec,
    s: &[f64],
) -> Result<Vec<EquilibriumProfile>, EquilibriumError> {
    let c = network_constants(spec)?;
    if s.len() != spec.len() {
        return Err(EquilibriumError::BadInput {
            name: "s length",
            value: s.len() as f64,
        });
    }
    if let Some(v) = s.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(EquilibriumError::BadInput {
            name: "s",
            value: *v,
        });
    }
    let (sp, sm) = c.slacks(s);
    for m in 0..s.len() {
        let tol = VERIFY_REL * s[m].max(1.0);
        for (which, slack) in [("plus", sp[m]), ("minus", sm[m])] {
            if slack < -tol {
                return Err(EquilibriumError::InequalitiesViolated {
                    market: m,
                    which,
                    slack,
                });
            }
        }
    }
    spec.markets
        .iter()
        .enumerate()
        .map(|(m, p)| {
            let mut plus_src = vec![(1.0, p.lambda_plus.clone())];
            let mut minus_src = vec![(1.0, p.lambda_minus.clone())];
            for r in spec.incoming(m) {
                if let Some(k) = &r.p_minus_plus {
                    plus_src.push((s[r.from], k.clone()));
                }
                if let Some(k) = &r.p_plus_minus {
                    minus_src.push((s[r.from], k.clone()));
                }
            }
            let gamma_plus = s[m] / -p.v_plus;
            let gamma_minus = s[m] / p.v_minus;
            let plus = PhaseProfile::new(-p.v_plus, gamma_plus, &p.mu_plus, plus_src)?;
            let minus = PhaseProfile::new(p.v_minus, gamma_minus, &p.mu_minus, minus_src)?;
            Ok(EquilibriumProfile::assemble(
                EquilibriumKind::Fixed,
                gamma_plus,
                gamma_minus,
                0.0,
                s[m],
                plus,
                minus,
            )?)
        })
        .collect()
}

//! One-phase free transport in `(x, v)` phase space.
//!
//! Particles move ballistically, arrive with intensity `λ(x, v, t)` and die
//! with rate `μ(x, v, t)`, so the one-particle correlation function obeys
//! `∂f/∂t + v ∂f/∂x = -μ f + λ`. [`evolve_free`] integrates this with a
//! first-order upwind finite-volume scheme; [`characteristics_value`] gives
//! the closed-form solution for `λ = 0` and time-independent `μ`, which the
//! tests use as the reference.

use std::io;
use std::ops::Range;

use thiserror::Error;

use crate::domain::quadrature::{integrate, QuadratureError};

/// Minimum number of velocity slices.
pub const MIN_VELOCITY_SLICES: usize = 8;

/// Largest admissible Courant number `V0 dt / dx`.
pub const MAX_COURANT: f64 = 0.9;

#[derive(Debug, Error)]
pub enum FreeError {
    #[error("CFL violated: V0 dt / dx = {courant:.4} > {MAX_COURANT}")]
    CflViolation { courant: f64 },
    #[error("explicit source step would lose positivity at x = {x}, v = {v} (courant + mu dt = {factor:.4})")]
    SourceTooStiff { x: f64, v: f64, factor: f64 },
    #[error("characteristic through ({x}, {v}) leaves the domain [{lo}, {hi}] within time {t}")]
    DomainViolation {
        x: f64,
        v: f64,
        t: f64,
        lo: f64,
        hi: f64,
    },
    #[error("horizon {t} leaves no cell farther than V0 t from the boundary")]
    EmptyInterior { t: f64 },
    #[error("grid needs nx >= 1 and at least {MIN_VELOCITY_SLICES} velocity slices (got nx = {nx}, nv = {nv})")]
    Grid { nx: usize, nv: usize },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Treatment of the ends of the spatial interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Zero inflow, free outflow.
    Outflow,
    Periodic,
}

/// Cell values of `f(x, v, t)` on `[x_min, x_max] × [-V0, V0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeField {
    x_min: f64,
    dx: f64,
    nx: usize,
    v_max: f64,
    nv: usize,
    boundary: Boundary,
    /// slice-major: `values[j * nx + i]`
    values: Vec<f64>,
    t: f64,
}

/// Anything that can be evaluated at a phase-space point.
pub trait PhaseSpaceFn {
    fn value(&self, x: f64, v: f64) -> f64;
}

impl<F: Fn(f64, f64) -> f64> PhaseSpaceFn for F {
    fn value(&self, x: f64, v: f64) -> f64 {
        self(x, v)
    }
}

impl PhaseSpaceFn for FreeField {
    /// Piecewise-constant lookup; zero outside the grid.
    fn value(&self, x: f64, v: f64) -> f64 {
        let (lo, hi) = self.domain();
        if !(x >= lo && x < hi) || !(v > -self.v_max && v < self.v_max) {
            return 0.0;
        }
        let i = (((x - self.x_min) / self.dx) as usize).min(self.nx - 1);
        let dv = self.dv();
        let j = (((v + self.v_max) / dv) as usize).min(self.nv - 1);
        self.values[j * self.nx + i]
    }
}

impl FreeField {
    pub fn zeros(
        x_min: f64,
        x_max: f64,
        nx: usize,
        v_max: f64,
        nv: usize,
        boundary: Boundary,
    ) -> Result<Self, FreeError> {
        if nx == 0 || nv < MIN_VELOCITY_SLICES || !(x_max > x_min) || !(v_max > 0.0) {
            return Err(FreeError::Grid { nx, nv });
        }
        Ok(Self {
            x_min,
            dx: (x_max - x_min) / nx as f64,
            nx,
            v_max,
            nv,
            boundary,
            values: vec![0.0; nx * nv],
            t: 0.0,
        })
    }

    /// Samples `f0` at cell centres. Negative samples are clipped to zero.
    pub fn from_fn(
        x_min: f64,
        x_max: f64,
        nx: usize,
        v_max: f64,
        nv: usize,
        boundary: Boundary,
        f0: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, FreeError> {
        let mut field = Self::zeros(x_min, x_max, nx, v_max, nv, boundary)?;
        for j in 0..nv {
            let v = field.v_center(j);
            for i in 0..nx {
                field.values[j * nx + i] = f0(field.x_center(i), v).max(0.0);
            }
        }
        Ok(field)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nv(&self) -> usize {
        self.nv
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.v_max / self.nv as f64
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x_min, self.x_min + self.dx * self.nx as f64)
    }

    pub fn x_center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx
    }

    pub fn v_center(&self, j: usize) -> f64 {
        -self.v_max + (j as f64 + 0.5) * self.dv()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `∫ f dx dv` over the whole grid.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx * self.dv()
    }

    /// Cells whose centre is farther than `V0 * horizon + dx` from both ends.
    pub fn interior_cells(&self, horizon: f64) -> Range<usize> {
        if self.boundary == Boundary::Periodic {
            return 0..self.nx;
        }
        let margin = self.v_max * horizon + self.dx;
        let (lo, hi) = self.domain();
        let first = (0..self.nx).find(|&i| self.x_center(i) - lo > margin);
        let last = (0..self.nx).rev().find(|&i| hi - self.x_center(i) > margin);
        match (first, last) {
            (Some(a), Some(b)) if a <= b => a..b + 1,
            _ => 0..0,
        }
    }

    /// Writes `x,v,f` rows.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "v", "f"])?;
        for j in 0..self.nv {
            for i in 0..self.nx {
                w.serialize((self.x_center(i), self.v_center(j), self.get(i, j)))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Closed-form solution `f0(x - vt, v) exp(-∫_0^t μ(x - vs, v) ds)`.
///
/// Valid for `λ = 0` and time-independent `μ`; `domain` is the interval the
/// characteristic must stay inside.
pub fn characteristics_value<F, M>(
    f0: &F,
    mu: M,
    domain: (f64, f64),
    x: f64,
    v: f64,
    t: f64,
    tol: f64,
) -> Result<f64, FreeError>
where
    F: PhaseSpaceFn + ?Sized,
    M: Fn(f64, f64) -> f64,
{
    let foot = x - v * t;
    let (lo, hi) = domain;
    let inside = |p: f64| p >= lo && p <= hi;
    if !(inside(x) && inside(foot)) {
        return Err(FreeError::DomainViolation { x, v, t, lo, hi });
    }
    let exponent = integrate(|s| mu(x - v * s, v), 0.0, t, tol)?;
    Ok(f0.value(foot, v) * (-exponent).exp())
}

/// Integrates the linear Boltzmann equation from `f0.time()` over a span `t_span`.
///
/// The span is divided into equal steps no longer than `dt`.
pub fn evolve_free<L, M>(
    f0: &FreeField,
    lambda: L,
    mu: M,
    t_span: f64,
    dt: f64,
) -> Result<FreeField, FreeError>
where
    L: Fn(f64, f64, f64) -> f64,
    M: Fn(f64, f64, f64) -> f64,
{
    let courant = f0.v_max * dt / f0.dx;
    if courant > MAX_COURANT {
        return Err(FreeError::CflViolation { courant });
    }
    if f0.interior_cells(t_span).is_empty() {
        return Err(FreeError::EmptyInterior { t: t_span });
    }
    let mut field = f0.clone();
    if t_span <= 0.0 {
        return Ok(field);
    }
    let steps = (t_span / dt).ceil() as usize;
    let h = t_span / steps as f64;
    let nx = field.nx;
    let mut next = vec![0.0; field.values.len()];
    let t0 = field.t;
    for n in 0..steps {
        let t = t0 + n as f64 * h;
        for j in 0..field.nv {
            let v = field.v_center(j);
            let c = v * h / field.dx;
            let row = &field.values[j * nx..(j + 1) * nx];
            let out = &mut next[j * nx..(j + 1) * nx];
            for i in 0..nx {
                let x = field.x_center(i);
                let upwind = if v >= 0.0 {
                    i.checked_sub(1)
                } else {
                    (i + 1 < nx).then_some(i + 1)
                };
                let upwind_value = match (upwind, field.boundary) {
                    (Some(k), _) => row[k],
                    (None, Boundary::Outflow) => 0.0,
                    (None, Boundary::Periodic) => {
                        if v >= 0.0 {
                            row[nx - 1]
                        } else {
                            row[0]
                        }
                    }
                };
                let m = mu(x, v, t);
                let factor = c.abs() + m * h;
                if factor > 1.0 {
                    return Err(FreeError::SourceTooStiff { x, v, factor });
                }
                out[i] =
                    row[i] - c.abs() * (row[i] - upwind_value) + h * (lambda(x, v, t) - m * row[i]);
            }
        }
        std::mem::swap(&mut field.values, &mut next);
    }
    field.t = t0 + t_span;
    Ok(field)
}

//! Two-phase kinetic market model.
//!
//! Three engines describe the same system of buyers and sellers meeting at a
//! moving price boundary:
//!
//! * [`particles`]: stochastic simulation of ballistic particles with Poisson
//!   arrivals, exponential deaths and pairwise annihilation at the boundary;
//! * [`fluid`]: deterministic moving-boundary transport equations for the
//!   phase densities, for one market, one market with recycling, and
//!   networks of markets;
//! * [`equilibria`]: critical densities, fixed points and stationary points
//!   in closed form, with residual checks.
//!
//! [`free_kinetics`] holds the one-phase transport reference and [`domain`]
//! the shared parameter types.

pub mod domain;
pub mod equilibria;
pub mod fluid;
pub mod free_kinetics;
pub mod particles;
pub mod validation;

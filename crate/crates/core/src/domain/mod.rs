//! Shared data types: rate functions, market parameters, quadrature.

pub mod market;
pub mod quadrature;
pub mod rate;

pub use market::{
    validate_market, validate_network, InitialCondition, MarketParams, NetworkSpec, Route,
    VelocityProfile, Violation, Violations,
};
pub use quadrature::{integrate, integrate_split, QuadratureError, DEFAULT_TOL};
pub use rate::{CompactRateFunction, PiecewiseLinear, RadiusSampler, RateError};

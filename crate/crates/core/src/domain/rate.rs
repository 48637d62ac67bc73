//! Piecewise-linear tabulated functions.
//!
//! [`PiecewiseLinear`] is a general tabulation that vanishes outside its
//! breakpoint range. [`CompactRateFunction`] adds the constraints used for
//! every arrival, death and recycling rate of the model: the grid starts at
//! `r = 0`, all samples are nonnegative and the last sample is zero, so the
//! function is continuous on `[0, inf)` and identically zero beyond its
//! support radius.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("breakpoints and values differ in length ({breakpoints} vs {values})")]
    LengthMismatch { breakpoints: usize, values: usize },
    #[error("at least two breakpoints are required")]
    TooFewPoints,
    #[error("breakpoints must be finite and strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("value at index {0} is not finite")]
    NonFinite(usize),
    #[error("value at index {index} is negative ({value})")]
    Negative { index: usize, value: f64 },
    #[error("first breakpoint must be 0, got {0}")]
    NonzeroOrigin(f64),
    #[error("last value must be 0 so the support is compact, got {0}")]
    OpenSupport(f64),
}

/// Piecewise-linear interpolant, zero outside `[breakpoints[0], breakpoints[n-1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct PiecewiseLinear {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawTable> for PiecewiseLinear {
    type Error = RateError;
    fn try_from(raw: RawTable) -> Result<Self, RateError> {
        PiecewiseLinear::new(raw.breakpoints, raw.values)
    }
}

impl From<PiecewiseLinear> for RawTable {
    fn from(f: PiecewiseLinear) -> Self {
        RawTable {
            breakpoints: f.breakpoints,
            values: f.values,
        }
    }
}

impl PiecewiseLinear {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, RateError> {
        if breakpoints.len() != values.len() {
            return Err(RateError::LengthMismatch {
                breakpoints: breakpoints.len(),
                values: values.len(),
            });
        }
        if breakpoints.len() < 2 {
            return Err(RateError::TooFewPoints);
        }
        for (i, x) in breakpoints.iter().enumerate() {
            if !x.is_finite() || (i > 0 && *x <= breakpoints[i - 1]) {
                return Err(RateError::NotIncreasing(i));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RateError::NonFinite(i));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    pub fn eval(&self, x: f64) -> f64 {
        let xs = &self.breakpoints;
        let n = xs.len();
        if !(x >= xs[0] && x <= xs[n - 1]) {
            return 0.0;
        }
        // index of the first breakpoint strictly greater than x
        let hi = xs.partition_point(|&b| b <= x);
        if hi == n {
            return self.values[n - 1];
        }
        let lo = hi - 1;
        let w = (x - xs[lo]) / (xs[hi] - xs[lo]);
        self.values[lo] + w * (self.values[hi] - self.values[lo])
    }

    /// Exact integral over `[a, b]` (trapezoid rule per segment is exact).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if b < a {
            return -self.integral(b, a);
        }
        self.antiderivative(b) - self.antiderivative(a)
    }

    /// Exact `∫_{x0}^{x} f` where `x0` is the first breakpoint; constant past the last one.
    pub fn antiderivative(&self, x: f64) -> f64 {
        let xs = &self.breakpoints;
        let ys = &self.values;
        if x <= xs[0] {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..xs.len() - 1 {
            let (x0, x1) = (xs[i], xs[i + 1]);
            if x >= x1 {
                acc += 0.5 * (ys[i] + ys[i + 1]) * (x1 - x0);
            } else {
                let h = x - x0;
                let yx = ys[i] + (ys[i + 1] - ys[i]) * h / (x1 - x0);
                acc += 0.5 * (ys[i] + yx) * h;
                return acc;
            }
        }
        acc
    }

    pub fn total(&self) -> f64 {
        let (a, b) = self.domain();
        self.integral(a, b)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }
}

/// Nonnegative rate of the radial coordinate `r >= 0` with compact support `[0, R0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct CompactRateFunction(PiecewiseLinear);

impl TryFrom<RawTable> for CompactRateFunction {
    type Error = RateError;
    fn try_from(raw: RawTable) -> Result<Self, RateError> {
        CompactRateFunction::new(raw.breakpoints, raw.values)
    }
}

impl From<CompactRateFunction> for RawTable {
    fn from(f: CompactRateFunction) -> Self {
        f.0.into()
    }
}

/// Width of the closing ramp used by [`CompactRateFunction::boxcar`], relative to the box width.
pub const BOX_EDGE: f64 = 1e-13;

impl CompactRateFunction {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, RateError> {
        let table = PiecewiseLinear::new(breakpoints, values)?;
        if table.breakpoints[0] != 0.0 {
            return Err(RateError::NonzeroOrigin(table.breakpoints[0]));
        }
        if let Some((index, &value)) = table.values.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(RateError::Negative { index, value });
        }
        let last = *table.values.last().unwrap();
        if last != 0.0 {
            return Err(RateError::OpenSupport(last));
        }
        Ok(Self(table))
    }

    /// The zero rate, supported on `[0, 1]`.
    pub fn zero() -> Self {
        Self(PiecewiseLinear {
            breakpoints: vec![0.0, 1.0],
            values: vec![0.0, 0.0],
        })
    }

    /// Box of the given height on `[0, width]`, closed by a ramp of relative width [`BOX_EDGE`].
    pub fn boxcar(height: f64, width: f64) -> Self {
        Self::new(
            vec![0.0, width * (1.0 - BOX_EDGE), width],
            vec![height, height, 0.0],
        )
        .expect("box parameters must be finite, nonnegative and ordered")
    }

    /// Linear ramp from `height` at `r = 0` down to zero at `r = width`.
    pub fn ramp(height: f64, width: f64) -> Self {
        Self::new(vec![0.0, width], vec![height, 0.0])
            .expect("ramp parameters must be finite, nonnegative and ordered")
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.0.eval(r)
    }

    pub fn support_radius(&self) -> f64 {
        self.0.domain().1
    }

    pub fn breakpoints(&self) -> &[f64] {
        self.0.breakpoints()
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    /// Exact `∫_0^r f`.
    pub fn antiderivative(&self, r: f64) -> f64 {
        self.0.antiderivative(r)
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.0.integral(a, b)
    }

    /// `∫_0^inf f`.
    pub fn total(&self) -> f64 {
        self.0.total()
    }

    pub fn max_value(&self) -> f64 {
        self.0.max_value()
    }

    pub fn is_zero(&self) -> bool {
        self.0.values.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, k: f64) -> Self {
        assert!(k >= 0.0 && k.is_finite(), "rate scale must be nonnegative");
        Self(self.0.scaled(k))
    }

    pub fn as_table(&self) -> &PiecewiseLinear {
        &self.0
    }

    /// Mean of `f` over `[a, b]` (exact).
    pub fn cell_average(&self, a: f64, b: f64) -> f64 {
        self.integral(a, b) / (b - a)
    }

    pub fn sampler(&self) -> Option<RadiusSampler> {
        RadiusSampler::new(self)
    }
}

/// Draws radii from the normalized density `f(r) / ∫f` by exact inversion.
#[derive(Debug, Clone)]
pub struct RadiusSampler {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    cumulative: Vec<f64>,
}

impl RadiusSampler {
    /// `None` when the function has zero mass.
    pub fn new(f: &CompactRateFunction) -> Option<Self> {
        let xs = f.breakpoints();
        let ys = f.values();
        let mut cumulative = Vec::with_capacity(xs.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for i in 0..xs.len() - 1 {
            acc += 0.5 * (ys[i] + ys[i + 1]) * (xs[i + 1] - xs[i]);
            cumulative.push(acc);
        }
        (acc > 0.0).then(|| Self {
            breakpoints: xs.to_vec(),
            values: ys.to_vec(),
            cumulative,
        })
    }

    pub fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let target = rng.random::<f64>() * self.total();
        let seg = self
            .cumulative
            .partition_point(|&c| c <= target)
            .clamp(1, self.cumulative.len() - 1)
            - 1;
        let (x0, x1) = (self.breakpoints[seg], self.breakpoints[seg + 1]);
        let (y0, y1) = (self.values[seg], self.values[seg + 1]);
        let w = x1 - x0;
        let m = (target - self.cumulative[seg]).max(0.0);
        // mass over [x0, x0 + t w] is y0 t w + (y1 - y0) t^2 w / 2
        let disc = (y0 * y0 + 2.0 * (y1 - y0) * m / w).max(0.0);
        let denom = y0 + disc.sqrt();
        let t = if denom > 0.0 {
            2.0 * m / (w * denom)
        } else {
            0.0
        };
        x0 + t.clamp(0.0, 1.0) * w
    }
}

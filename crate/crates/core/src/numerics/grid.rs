//! Tabulated monotone functions and empirical distributions.
//!
//! A [`MonotoneGridFunction`] is a piecewise-linear interpolant through knots
//! with strictly increasing abscissae and nondecreasing ordinates.  It plays
//! two roles: a tabulated quantile function (evaluated forward) and a
//! tabulated CDF (inverted through [`MonotoneGridFunction::pseudo_inverse`]).
//!
//! The pseudo-inverse uses the left-continuous convention
//! `inf { x : g(x) >= u }`: on a flat segment sitting exactly at level `u` it
//! returns the segment's left endpoint, and `pseudo_inverse(g(x)) <= x` holds
//! at every knot.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// What evaluation does outside the tabulated range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extrapolation {
    /// Clamp to the nearest knot value.
    Clamp,
    /// Report a domain error.
    Error,
}

#[derive(Clone, Debug)]
pub struct MonotoneGridFunction<F> {
    xs: Vec<F>,
    ys: Vec<F>,
    extrapolation: Extrapolation,
}

impl<F: Scalar> MonotoneGridFunction<F> {
    /// Builds the interpolant, checking strict monotonicity of `xs`,
    /// monotonicity of `ys`, and finiteness of both.
    pub fn new(xs: Vec<F>, ys: Vec<F>, extrapolation: Extrapolation) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(CoreError::Grid(format!(
                "knot count mismatch: {} abscissae vs {} ordinates",
                xs.len(),
                ys.len()
            )));
        }
        if xs.len() < 2 {
            return Err(CoreError::InsufficientData {
                needed: 2,
                got: xs.len(),
            });
        }
        for w in xs.windows(2) {
            if !(w[1] > w[0]) {
                return Err(CoreError::Grid(format!(
                    "abscissae not strictly increasing near x = {}",
                    w[0].lossy()
                )));
            }
        }
        for w in ys.windows(2) {
            if !(w[1] >= w[0]) {
                return Err(CoreError::Grid(format!(
                    "ordinates decrease near y = {}",
                    w[0].lossy()
                )));
            }
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(CoreError::Grid("non-finite knot".into()));
        }
        Ok(MonotoneGridFunction {
            xs,
            ys,
            extrapolation,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn xs(&self) -> &[F] {
        &self.xs
    }

    pub fn ys(&self) -> &[F] {
        &self.ys
    }

    pub fn x_range(&self) -> (F, F) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    pub fn y_range(&self) -> (F, F) {
        (self.ys[0], self.ys[self.ys.len() - 1])
    }

    /// Linear interpolation; knots evaluate to their stored ordinate exactly.
    pub fn eval(&self, x: F) -> Result<F> {
        let n = self.xs.len();
        if x < self.xs[0] {
            return match self.extrapolation {
                Extrapolation::Clamp => Ok(self.ys[0]),
                Extrapolation::Error => Err(CoreError::Domain {
                    value: x.lossy(),
                    domain: "tabulated range",
                }),
            };
        }
        if x > self.xs[n - 1] {
            return match self.extrapolation {
                Extrapolation::Clamp => Ok(self.ys[n - 1]),
                Extrapolation::Error => Err(CoreError::Domain {
                    value: x.lossy(),
                    domain: "tabulated range",
                }),
            };
        }
        // partition_point: first index with xs[i] > x; the segment is i-1..i.
        let i = self.xs.partition_point(|&v| v <= x);
        if i == 0 {
            return Ok(self.ys[0]);
        }
        if i == n {
            return Ok(self.ys[n - 1]);
        }
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let (y0, y1) = (self.ys[i - 1], self.ys[i]);
        if x == x0 {
            return Ok(y0);
        }
        let t = (x - x0) / (x1 - x0);
        Ok(y0 + t * (y1 - y0))
    }

    /// Left-continuous generalized inverse `inf { x : g(x) >= u }`.
    ///
    /// Levels outside the ordinate range follow the extrapolation policy
    /// (clamped to the first or last abscissa, or a domain error).
    pub fn pseudo_inverse(&self, u: F) -> Result<F> {
        let n = self.ys.len();
        if u < self.ys[0] || u > self.ys[n - 1] {
            return match self.extrapolation {
                Extrapolation::Clamp => Ok(if u < self.ys[0] {
                    self.xs[0]
                } else {
                    self.xs[n - 1]
                }),
                Extrapolation::Error => Err(CoreError::Domain {
                    value: u.lossy(),
                    domain: "tabulated ordinate range",
                }),
            };
        }
        // First knot at or above the level.
        let j = self.ys.partition_point(|&v| v < u);
        debug_assert!(j < n);
        if self.ys[j] == u {
            return Ok(self.xs[j]);
        }
        debug_assert!(j > 0);
        let (y0, y1) = (self.ys[j - 1], self.ys[j]);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let t = (u - y0) / (y1 - y0);
        Ok(x0 + t * (x1 - x0))
    }
}

/// Evaluates a tabulated quantile function at each level in `us`.
///
/// Order-preserving: sorted levels give sorted samples.  Used to draw from a
/// distribution given its quantile grid and a stream of uniforms.
pub fn inverse_transform_sample<F: Scalar>(
    quantile: &MonotoneGridFunction<F>,
    us: &[F],
) -> Result<Vec<F>> {
    us.iter().map(|&u| quantile.eval(u)).collect()
}

/// A sample held in sorted order, exposing step-function quantiles and CDF.
#[derive(Clone, Debug)]
pub struct EmpiricalDistribution<F> {
    sorted: Vec<F>,
}

impl<F: Scalar> EmpiricalDistribution<F> {
    pub fn new(mut samples: Vec<F>) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::InsufficientData { needed: 1, got: 0 });
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Grid("non-finite sample".into()));
        }
        samples.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        Ok(EmpiricalDistribution { sorted: samples })
    }

    /// Wraps samples already in nondecreasing order without copying checks
    /// beyond a debug assertion; used on simulator snapshots.
    pub fn from_sorted(sorted: Vec<F>) -> Result<Self> {
        if sorted.is_empty() {
            return Err(CoreError::InsufficientData { needed: 1, got: 0 });
        }
        debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        Ok(EmpiricalDistribution { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn samples(&self) -> &[F] {
        &self.sorted
    }

    /// Left-continuous step quantile: `Q(u) = x_(k)` for
    /// `u in ((k-1)/n, k/n]`, clamped to the extreme order statistics.
    pub fn quantile(&self, u: F) -> F {
        let n = self.sorted.len();
        let nf = F::of(n as f64);
        let k = (u * nf).ceil().lossy() as usize;
        let idx = k.clamp(1, n) - 1;
        self.sorted[idx]
    }

    /// Fraction of the sample at or below `y`.
    pub fn cdf(&self, y: F) -> F {
        let count = self.sorted.partition_point(|&v| v <= y);
        F::of(count as f64) / F::of(self.sorted.len() as f64)
    }

    pub fn mean(&self) -> F {
        let n = F::of(self.sorted.len() as f64);
        self.sorted.iter().copied().sum::<F>() / n
    }
}

//! Rank-based market coefficients and the model they assemble into.
//!
//! A market model is a pair of functions on the unit interval, a growth
//! rate profile `gamma(u)` and a variance profile `sigma2(u)` read at the
//! relative rank `u = j/n`, together with an initial law `m` for the log
//! capitalizations.  Everything downstream (equilibrium quantities and the
//! particle simulator alike) reads the model through this module.
//!
//! Three derived quantities are computed once at construction:
//! the mean growth rate `g = integral of gamma over [0,1]`, and the critical
//! diversity indices `p_c = 2 (g - gamma(1)) / sigma2(1)` and
//! `q_c = 2 (gamma(0) - g) / sigma2(0)` that control the equilibrium tails.
//!
//! Every preset carries a closed-form antiderivative, evaluated in forms
//! that stay accurate near both endpoints (`expm1`/`ln_1p` where a naive
//! subtraction would cancel).  The cumulative growth surplus
//! `Gamma(u) - g u` is exposed in both from-zero and from-one forms for the
//! same reason: the equilibrium machinery divides by it arbitrarily close to
//! the endpoints.

use crate::error::{Assumption, CoreError, Result};
use crate::numerics::{integrate, QuadratureSpec};
use crate::scalar::Scalar;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

/// A coefficient profile on the unit interval.
///
/// The serialized form is a JSON object tagged by `kind`; unknown keys are
/// rejected.  `example31` is the zero-mean linear benchmark
/// `gamma(u) = 1 - 2u`; `example51_sigma2` is the variance profile
/// `2 (C + u - gamma_alpha(u))` with `C = 1 + g (alpha + 1)`, built so the
/// rate of return `gamma + sigma2/2 = C + u` increases in rank.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientFunction<F> {
    Constant {
        c: F,
    },
    Linear {
        a: F,
        b: F,
    },
    AtlasAlpha {
        g: F,
        alpha: F,
    },
    #[serde(rename = "example31")]
    ZeroMeanLinear,
    #[serde(rename = "example51_sigma2")]
    IncreasingReturnVariance {
        g: F,
        alpha: F,
    },
    Tabulated {
        knots: Vec<(F, F)>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantParams<F> {
    c: F,
}
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearParams<F> {
    a: F,
    b: F,
}
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AtlasParams<F> {
    g: F,
    alpha: F,
}
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmptyParams {}
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TabulatedParams<F> {
    knots: Vec<(F, F)>,
}

/// Pulls the `kind` tag out of a JSON object and hands the rest to a strict
/// per-variant parameter struct.  Derived deserialization of internally
/// tagged enums cannot reject unknown keys, and strict configs are part of
/// this crate's contract.
fn split_kind<'de, D: Deserializer<'de>>(
    value: serde_json::Value,
) -> std::result::Result<(String, serde_json::Value), D::Error> {
    let mut map = match value {
        serde_json::Value::Object(m) => m,
        other => {
            return Err(D::Error::custom(format!(
                "expected an object with a `kind` tag, got {other}"
            )))
        }
    };
    let kind = match map.remove("kind") {
        Some(serde_json::Value::String(s)) => s,
        Some(other) => {
            return Err(D::Error::custom(format!(
                "`kind` must be a string, got {other}"
            )))
        }
        None => return Err(D::Error::custom("missing `kind` tag")),
    };
    Ok((kind, serde_json::Value::Object(map)))
}

fn from_rest<'de, D: Deserializer<'de>, T: serde::de::DeserializeOwned>(
    kind: &str,
    rest: serde_json::Value,
) -> std::result::Result<T, D::Error> {
    serde_json::from_value(rest)
        .map_err(|e| D::Error::custom(format!("invalid parameters for kind `{kind}`: {e}")))
}

impl<'de, F: Scalar> Deserialize<'de> for CoefficientFunction<F> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        let (kind, rest) = split_kind::<D>(value)?;
        Ok(match kind.as_str() {
            "constant" => {
                let p: ConstantParams<F> = from_rest::<D, _>(&kind, rest)?;
                CoefficientFunction::Constant { c: p.c }
            }
            "linear" => {
                let p: LinearParams<F> = from_rest::<D, _>(&kind, rest)?;
                CoefficientFunction::Linear { a: p.a, b: p.b }
            }
            "atlas_alpha" => {
                let p: AtlasParams<F> = from_rest::<D, _>(&kind, rest)?;
                CoefficientFunction::AtlasAlpha {
                    g: p.g,
                    alpha: p.alpha,
                }
            }
            "example31" => {
                let _: EmptyParams = from_rest::<D, _>(&kind, rest)?;
                CoefficientFunction::ZeroMeanLinear
            }
            "example51_sigma2" => {
                let p: AtlasParams<F> = from_rest::<D, _>(&kind, rest)?;
                CoefficientFunction::IncreasingReturnVariance {
                    g: p.g,
                    alpha: p.alpha,
                }
            }
            "tabulated" => {
                let p: TabulatedParams<F> = from_rest::<D, _>(&kind, rest)?;
                CoefficientFunction::Tabulated { knots: p.knots }
            }
            other => {
                return Err(D::Error::custom(format!(
                    "unknown coefficient kind `{other}`"
                )))
            }
        })
    }
}

impl<F: Scalar> CoefficientFunction<F> {
    /// Structural validity: finite parameters, nonnegative decay exponents,
    /// well-formed knot lists spanning [0, 1].  Sign conditions (positivity
    /// of a variance profile, stability of a growth profile) belong to model
    /// validation, not construction.
    pub fn validate(&self) -> Result<()> {
        let finite = |v: F, what: &'static str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(CoreError::Config(format!("non-finite parameter {what}")))
            }
        };
        match self {
            CoefficientFunction::Constant { c } => finite(*c, "c"),
            CoefficientFunction::Linear { a, b } => {
                finite(*a, "a")?;
                finite(*b, "b")
            }
            CoefficientFunction::AtlasAlpha { g, alpha }
            | CoefficientFunction::IncreasingReturnVariance { g, alpha } => {
                finite(*g, "g")?;
                finite(*alpha, "alpha")?;
                if *alpha < F::zero() {
                    return Err(CoreError::Config(
                        "alpha must be nonnegative (negative exponents are unbounded at u = 1)"
                            .into(),
                    ));
                }
                Ok(())
            }
            CoefficientFunction::ZeroMeanLinear => Ok(()),
            CoefficientFunction::Tabulated { knots } => {
                if knots.len() < 2 {
                    return Err(CoreError::Config(
                        "tabulated coefficient needs at least two knots".into(),
                    ));
                }
                if knots[0].0 != F::zero() || knots[knots.len() - 1].0 != F::one() {
                    return Err(CoreError::Config(
                        "tabulated knots must span exactly [0, 1]".into(),
                    ));
                }
                for w in knots.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return Err(CoreError::Config(
                            "tabulated knot abscissae must be strictly increasing".into(),
                        ));
                    }
                }
                if knots.iter().any(|k| !k.0.is_finite() || !k.1.is_finite()) {
                    return Err(CoreError::Config("non-finite tabulated knot".into()));
                }
                Ok(())
            }
        }
    }

    fn check_unit(u: F) -> Result<()> {
        if u >= F::zero() && u <= F::one() {
            Ok(())
        } else {
            Err(CoreError::Domain {
                value: u.lossy(),
                domain: "unit interval [0, 1]",
            })
        }
    }

    /// Pointwise evaluation on [0, 1].
    pub fn eval(&self, u: F) -> Result<F> {
        Self::check_unit(u)?;
        Ok(self.eval_unchecked(u))
    }

    pub(crate) fn eval_unchecked(&self, u: F) -> F {
        let one = F::one();
        match self {
            CoefficientFunction::Constant { c } => *c,
            CoefficientFunction::Linear { a, b } => *a + *b * u,
            CoefficientFunction::AtlasAlpha { g, alpha } => {
                *g * (*alpha + one) * (one - u).powf(*alpha)
            }
            CoefficientFunction::ZeroMeanLinear => one - (u + u),
            CoefficientFunction::IncreasingReturnVariance { g, alpha } => {
                let gamma_a = *g * (*alpha + one) * (one - u).powf(*alpha);
                let c = one + *g * (*alpha + one);
                F::of(2.0) * (c + u - gamma_a)
            }
            CoefficientFunction::Tabulated { knots } => {
                let j = knots.partition_point(|k| k.0 <= u);
                if j == 0 {
                    return knots[0].1;
                }
                if j == knots.len() {
                    return knots[knots.len() - 1].1;
                }
                let (u0, v0) = knots[j - 1];
                let (u1, v1) = knots[j];
                if u == u0 {
                    return v0;
                }
                v0 + (u - u0) / (u1 - u0) * (v1 - v0)
            }
        }
    }

    /// `1 - (1-u)^(alpha+1)` computed without cancellation for small `u`.
    fn one_minus_pow(u: F, alpha1: F) -> F {
        -(alpha1 * (-u).ln_1p()).exp_m1()
    }

    /// Closed-form `integral of self over [0, u]`.
    pub fn integral(&self, u: F) -> Result<F> {
        Self::check_unit(u)?;
        Ok(self.integral_unchecked(u))
    }

    pub(crate) fn integral_unchecked(&self, u: F) -> F {
        let one = F::one();
        let half = F::of(0.5);
        match self {
            CoefficientFunction::Constant { c } => *c * u,
            CoefficientFunction::Linear { a, b } => u * (*a + *b * u * half),
            CoefficientFunction::AtlasAlpha { g, alpha } => {
                *g * Self::one_minus_pow(u, *alpha + one)
            }
            CoefficientFunction::ZeroMeanLinear => u * (one - u),
            CoefficientFunction::IncreasingReturnVariance { g, alpha } => {
                let c = one + *g * (*alpha + one);
                let gamma_int = *g * Self::one_minus_pow(u, *alpha + one);
                F::of(2.0) * (c * u + u * u * half - gamma_int)
            }
            CoefficientFunction::Tabulated { knots } => {
                let mut acc = F::zero();
                for w in knots.windows(2) {
                    let (u0, v0) = w[0];
                    let (u1, v1) = w[1];
                    if u <= u0 {
                        break;
                    }
                    if u >= u1 {
                        acc += (v0 + v1) * half * (u1 - u0);
                    } else {
                        let vu = v0 + (u - u0) / (u1 - u0) * (v1 - v0);
                        acc += (v0 + vu) * half * (u - u0);
                        break;
                    }
                }
                acc
            }
        }
    }

    /// Closed-form `integral of self over [1 - w, 1]`, written in terms of
    /// the distance `w` from the upper endpoint so no precision is lost when
    /// `w` is tiny.
    pub fn tail_integral(&self, w: F) -> Result<F> {
        Self::check_unit(w)?;
        Ok(self.tail_integral_unchecked(w))
    }

    pub(crate) fn tail_integral_unchecked(&self, w: F) -> F {
        let one = F::one();
        let half = F::of(0.5);
        match self {
            CoefficientFunction::Constant { c } => *c * w,
            CoefficientFunction::Linear { a, b } => w * (*a + *b - *b * w * half),
            CoefficientFunction::AtlasAlpha { g, alpha } => *g * w.powf(*alpha + one),
            CoefficientFunction::ZeroMeanLinear => -w * (one - w),
            CoefficientFunction::IncreasingReturnVariance { g, alpha } => {
                let c = one + *g * (*alpha + one);
                F::of(2.0) * (c * w + w - w * w * half - *g * w.powf(*alpha + one))
            }
            CoefficientFunction::Tabulated { knots } => {
                let lo = one - w;
                let mut acc = F::zero();
                for win in knots.windows(2).rev() {
                    let (u0, v0) = win[0];
                    let (u1, v1) = win[1];
                    if lo >= u1 {
                        break;
                    }
                    if lo <= u0 {
                        acc += (v0 + v1) * half * (u1 - u0);
                    } else {
                        let vl = v0 + (lo - u0) / (u1 - u0) * (v1 - v0);
                        acc += (vl + v1) * half * (u1 - lo);
                        break;
                    }
                }
                acc
            }
        }
    }
}

/// Initial law of the log capitalizations.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDistribution<F> {
    Gaussian { mean: F, sd: F },
    Uniform { lo: F, hi: F },
    /// `shift + sign * Exp(rate)`; `sign` is +1 or -1.  The +1 variant has a
    /// heavy right tail whose exponential moments break down at order
    /// `rate`, which model validation rejects.
    ShiftedExponential { rate: F, shift: F, sign: i8 },
    /// Start from the model's own long-term law; resolved against a built
    /// equilibrium at sampling time.
    Equilibrium,
    /// Quantile function tabulated on [0, 1].
    TabulatedQuantile { knots: Vec<(F, F)> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianParams<F> {
    mean: F,
    sd: F,
}
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UniformParams<F> {
    lo: F,
    hi: F,
}
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ShiftedExpParams<F> {
    rate: F,
    shift: F,
    sign: i8,
}

impl<'de, F: Scalar> Deserialize<'de> for InitialDistribution<F> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        let (kind, rest) = split_kind::<D>(value)?;
        Ok(match kind.as_str() {
            "gaussian" => {
                let p: GaussianParams<F> = from_rest::<D, _>(&kind, rest)?;
                InitialDistribution::Gaussian {
                    mean: p.mean,
                    sd: p.sd,
                }
            }
            "uniform" => {
                let p: UniformParams<F> = from_rest::<D, _>(&kind, rest)?;
                InitialDistribution::Uniform { lo: p.lo, hi: p.hi }
            }
            "shifted_exponential" => {
                let p: ShiftedExpParams<F> = from_rest::<D, _>(&kind, rest)?;
                InitialDistribution::ShiftedExponential {
                    rate: p.rate,
                    shift: p.shift,
                    sign: p.sign,
                }
            }
            "equilibrium" => {
                let _: EmptyParams = from_rest::<D, _>(&kind, rest)?;
                InitialDistribution::Equilibrium
            }
            "tabulated_quantile" => {
                let p: TabulatedParams<F> = from_rest::<D, _>(&kind, rest)?;
                InitialDistribution::TabulatedQuantile { knots: p.knots }
            }
            other => {
                return Err(D::Error::custom(format!(
                    "unknown initial distribution kind `{other}`"
                )))
            }
        })
    }
}

impl<F: Scalar> InitialDistribution<F> {
    pub fn validate(&self) -> Result<()> {
        match self {
            InitialDistribution::Gaussian { mean, sd } => {
                if !mean.is_finite() || !sd.is_finite() || *sd <= F::zero() {
                    return Err(CoreError::Config("gaussian needs finite mean, sd > 0".into()));
                }
                Ok(())
            }
            InitialDistribution::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || !(hi > lo) {
                    return Err(CoreError::Config("uniform needs finite lo < hi".into()));
                }
                Ok(())
            }
            InitialDistribution::ShiftedExponential { rate, shift, sign } => {
                if !rate.is_finite() || *rate <= F::zero() || !shift.is_finite() {
                    return Err(CoreError::Config(
                        "shifted_exponential needs finite shift, rate > 0".into(),
                    ));
                }
                if *sign != 1 && *sign != -1 {
                    return Err(CoreError::Config(
                        "shifted_exponential sign must be +1 or -1".into(),
                    ));
                }
                Ok(())
            }
            InitialDistribution::Equilibrium => Ok(()),
            InitialDistribution::TabulatedQuantile { knots } => {
                if knots.len() < 2 {
                    return Err(CoreError::Config(
                        "tabulated_quantile needs at least two knots".into(),
                    ));
                }
                if knots[0].0 < F::zero() || knots[knots.len() - 1].0 > F::one() {
                    return Err(CoreError::Config(
                        "tabulated_quantile levels must lie in [0, 1]".into(),
                    ));
                }
                for w in knots.windows(2) {
                    if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                        return Err(CoreError::Config(
                            "tabulated_quantile must have increasing levels and \
                             nondecreasing values"
                                .into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    /// Mean of the law; `None` for the self-referential equilibrium preset,
    /// whose centering is fixed by convention when the equilibrium is built.
    pub fn mean(&self) -> Option<F> {
        let half = F::of(0.5);
        match self {
            InitialDistribution::Gaussian { mean, .. } => Some(*mean),
            InitialDistribution::Uniform { lo, hi } => Some((*lo + *hi) * half),
            InitialDistribution::ShiftedExponential { rate, shift, sign } => {
                Some(*shift + F::of(*sign as f64) / *rate)
            }
            InitialDistribution::Equilibrium => None,
            InitialDistribution::TabulatedQuantile { knots } => {
                // Exact mean of a piecewise-linear quantile: trapezoid rule
                // over the knots is exact.
                let mut acc = F::zero();
                for w in knots.windows(2) {
                    acc += (w[0].1 + w[1].1) * half * (w[1].0 - w[0].0);
                }
                // Levels may not span all of [0,1]; extend flat.
                let first = knots[0];
                let last = knots[knots.len() - 1];
                acc += first.1 * first.0 + last.1 * (F::one() - last.0);
                Some(acc)
            }
        }
    }

    /// Whether every exponential moment `E exp(p Y)`, `p >= 0`, is finite.
    /// Decided per preset: only the right-tailed exponential fails.
    pub fn exponential_moments_ok(&self) -> bool {
        !matches!(
            self,
            InitialDistribution::ShiftedExponential { sign: 1, .. }
        )
    }
}

/// A validated market model with its derived constants.
#[derive(Clone, Debug, Serialize)]
pub struct MarketModel<F> {
    gamma: CoefficientFunction<F>,
    sigma2: CoefficientFunction<F>,
    m: InitialDistribution<F>,
    g: F,
    p_c: F,
    q_c: F,
}

impl<F: Scalar> MarketModel<F> {
    /// Assembles a model, computing `g`, `p_c`, `q_c`.  Fails if any part is
    /// structurally invalid or if the variance profile vanishes at an
    /// endpoint (the critical indices would be undefined).
    pub fn new(
        gamma: CoefficientFunction<F>,
        sigma2: CoefficientFunction<F>,
        m: InitialDistribution<F>,
    ) -> Result<Self> {
        gamma.validate()?;
        sigma2.validate()?;
        m.validate()?;
        let s0 = sigma2.eval_unchecked(F::zero());
        let s1 = sigma2.eval_unchecked(F::one());
        if !(s0 > F::zero()) {
            return Err(CoreError::Validation {
                assumption: Assumption::UniformEllipticity,
                witness_u: 0.0,
                detail: format!("sigma2(0) = {} must be positive", s0.lossy()),
            });
        }
        if !(s1 > F::zero()) {
            return Err(CoreError::Validation {
                assumption: Assumption::UniformEllipticity,
                witness_u: 1.0,
                detail: format!("sigma2(1) = {} must be positive", s1.lossy()),
            });
        }
        let g = gamma.integral_unchecked(F::one());
        let two = F::of(2.0);
        let p_c = two * (g - gamma.eval_unchecked(F::one())) / s1;
        let q_c = two * (gamma.eval_unchecked(F::zero()) - g) / s0;
        Ok(MarketModel {
            gamma,
            sigma2,
            m,
            g,
            p_c,
            q_c,
        })
    }

    /// Assembles a model without the endpoint-variance gate, so degenerate
    /// coefficients (sigma2 identically zero, say) can still drive the
    /// particle system for deterministic hand checks.  Critical indices are
    /// set to infinity where their defining ratio is undefined; nothing
    /// built on the equilibrium side accepts such a model.
    pub fn new_unchecked(
        gamma: CoefficientFunction<F>,
        sigma2: CoefficientFunction<F>,
        m: InitialDistribution<F>,
    ) -> Result<Self> {
        gamma.validate()?;
        sigma2.validate()?;
        m.validate()?;
        let s0 = sigma2.eval_unchecked(F::zero());
        let s1 = sigma2.eval_unchecked(F::one());
        let g = gamma.integral_unchecked(F::one());
        let two = F::of(2.0);
        let p_c = if s1 > F::zero() {
            two * (g - gamma.eval_unchecked(F::one())) / s1
        } else {
            F::infinity()
        };
        let q_c = if s0 > F::zero() {
            two * (gamma.eval_unchecked(F::zero()) - g) / s0
        } else {
            F::infinity()
        };
        Ok(MarketModel {
            gamma,
            sigma2,
            m,
            g,
            p_c,
            q_c,
        })
    }

    pub fn gamma(&self) -> &CoefficientFunction<F> {
        &self.gamma
    }

    pub fn sigma2(&self) -> &CoefficientFunction<F> {
        &self.sigma2
    }

    pub fn initial_law(&self) -> &InitialDistribution<F> {
        &self.m
    }

    /// `g`: average growth rate over ranks, also the long-run drift of the
    /// market's mean log capitalization.
    pub fn mean_growth_rate(&self) -> F {
        self.g
    }

    /// `(p_c, q_c)`: exponential decay rates of the equilibrium law's right
    /// and left tail.  Nonnegative whenever the stability margin holds.
    pub fn critical_indices(&self) -> (F, F) {
        (self.p_c, self.q_c)
    }

    /// Cumulative growth `Gamma(u) = integral of gamma over [0, u]`.
    pub fn cumulative_growth(&self, u: F) -> Result<F> {
        self.gamma.integral(u)
    }

    /// Growth surplus `Gamma(u) - g u` of the bottom `u`-fraction over the
    /// market average.  Positive on (0, 1) exactly when the model is stable.
    pub fn stability_margin(&self, u: F) -> Result<F> {
        Ok(self.gamma.integral(u)? - self.g * u)
    }

    /// The same surplus at `u = 1 - w`, computed from the upper endpoint:
    /// `g w - integral of gamma over [1-w, 1]`.  Accurate for tiny `w`.
    pub fn stability_margin_from_top(&self, w: F) -> Result<F> {
        Ok(self.g * w - self.gamma.tail_integral(w)?)
    }

    /// Rate of return `b(u) = gamma(u) + sigma2(u) / 2` of the rank-`u`
    /// stock.
    pub fn rate_of_return(&self, u: F) -> Result<F> {
        Ok(self.gamma.eval(u)? + self.sigma2.eval(u)? * F::of(0.5))
    }

    /// Growth surplus with the caller choosing the evaluation end: the
    /// from-zero form in `v` on the lower half, the from-one form in
    /// `w = 1 - v` on the upper half.  Keeps full relative accuracy where
    /// the surplus vanishes.
    pub(crate) fn margin_split(&self, v: F, w: F, lower_half: bool) -> F {
        if lower_half {
            self.gamma.integral_unchecked(v) - self.g * v
        } else {
            self.g * w - self.gamma.tail_integral_unchecked(w)
        }
    }

    pub(crate) fn rate_of_return_unchecked(&self, u: F) -> F {
        self.gamma.eval_unchecked(u) + self.sigma2.eval_unchecked(u) * F::of(0.5)
    }

    /// Full assumption check; see [`ValidationOptions`].
    pub fn validate(&self, opts: &ValidationOptions<F>) -> ValidationReport {
        validate_model(self, opts)
    }
}

/// Controls for [`MarketModel::validate`].
#[derive(Clone, Debug)]
pub struct ValidationOptions<F> {
    /// Number of Chebyshev-spaced evaluation points (endpoints included).
    pub grid_size: usize,
    /// Strict positivity threshold for the variance profile.
    pub tol: F,
    /// Particle count for the discrete stability check.
    pub stability_n: usize,
}

impl<F: Scalar> Default for ValidationOptions<F> {
    fn default() -> Self {
        ValidationOptions {
            grid_size: 4097,
            tol: F::of(1e-12),
            stability_n: 1000,
        }
    }
}

/// Outcome of a single assumption check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub assumption: Assumption,
    pub pass: bool,
    /// Location of the worst violation (or the tightest margin).
    pub witness_u: Option<f64>,
    pub detail: String,
}

/// Smoothness assertions made per preset, not verified numerically: the
/// closed-form presets are analytic away from `u = 1`, where the decay
/// exponent controls how many derivatives survive; tabulated profiles are
/// only piecewise linear.
#[derive(Clone, Debug, Serialize)]
pub struct RegularityFlags {
    pub gamma_smooth: bool,
    pub sigma2_smooth: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    /// Convenient sufficient condition for quantile integrability:
    /// `gamma(0) > g > gamma(1)`.
    pub sufficient_margin: bool,
    pub regularity: RegularityFlags,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, a: Assumption) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.assumption == a)
    }

    /// First failing check as an error, or `Ok`.
    pub fn into_result(self) -> Result<ValidationReport> {
        if let Some(fail) = self.checks.iter().find(|c| !c.pass) {
            return Err(CoreError::Validation {
                assumption: fail.assumption,
                witness_u: fail.witness_u.unwrap_or(f64::NAN),
                detail: fail.detail.clone(),
            });
        }
        Ok(self)
    }
}

/// Chebyshev–Lobatto points on [0, 1], densest near the endpoints.
fn chebyshev_grid<F: Scalar>(n: usize) -> Vec<F> {
    let m = n.max(3) - 1;
    (0..=m)
        .map(|i| {
            let x = (std::f64::consts::PI * i as f64 / m as f64).cos();
            F::of(0.5 * (1.0 - x))
        })
        .collect()
}

fn smooth_for_gamma<F: Scalar>(c: &CoefficientFunction<F>) -> bool {
    match c {
        CoefficientFunction::Constant { .. }
        | CoefficientFunction::Linear { .. }
        | CoefficientFunction::ZeroMeanLinear => true,
        // One continuous derivative with a Hoelder remainder needs the decay
        // exponent strictly above 1.
        CoefficientFunction::AtlasAlpha { alpha, .. }
        | CoefficientFunction::IncreasingReturnVariance { alpha, .. } => *alpha > F::one(),
        CoefficientFunction::Tabulated { .. } => false,
    }
}

fn smooth_for_sigma2<F: Scalar>(c: &CoefficientFunction<F>) -> bool {
    match c {
        CoefficientFunction::Constant { .. }
        | CoefficientFunction::Linear { .. }
        | CoefficientFunction::ZeroMeanLinear => true,
        // The variance profile enters through second derivatives.
        CoefficientFunction::AtlasAlpha { alpha, .. }
        | CoefficientFunction::IncreasingReturnVariance { alpha, .. } => *alpha > F::of(2.0),
        CoefficientFunction::Tabulated { .. } => false,
    }
}

fn validate_model<F: Scalar>(
    model: &MarketModel<F>,
    opts: &ValidationOptions<F>,
) -> ValidationReport {
    let grid: Vec<F> = chebyshev_grid(opts.grid_size);
    let mut checks = Vec::new();
    let mut warnings = Vec::new();

    // UE: variance bounded away from zero.
    let mut min_s = F::infinity();
    let mut min_u = F::zero();
    for &u in &grid {
        let s = model.sigma2.eval_unchecked(u);
        if s < min_s {
            min_s = s;
            min_u = u;
        }
    }
    checks.push(CheckResult {
        assumption: Assumption::UniformEllipticity,
        pass: min_s > opts.tol,
        witness_u: Some(min_u.lossy()),
        detail: format!("min sigma2 on grid = {:.6e}", min_s.lossy()),
    });

    // E1: growth surplus positive on the open interval.
    let mut min_margin = F::infinity();
    let mut margin_u = F::zero();
    for &u in grid.iter().skip(1).take(grid.len().saturating_sub(2)) {
        let margin = model.stability_margin(u).unwrap_or(F::neg_infinity());
        if margin < min_margin {
            min_margin = margin;
            margin_u = u;
        }
    }
    checks.push(CheckResult {
        assumption: Assumption::StabilityMargin,
        pass: min_margin > F::zero(),
        witness_u: Some(margin_u.lossy()),
        detail: format!("min growth surplus on grid = {:.6e}", min_margin.lossy()),
    });
    let e1_pass = min_margin > F::zero();

    // E2: integrability of u / surplus near 0 and (1-u) / surplus near 1.
    let (e2_pass, e2_detail) = if e1_pass {
        let spec = QuadratureSpec {
            abs_tol: F::of(1e-8),
            rel_tol: F::of(1e-8),
            max_subdivisions: 2000,
            endpoint_exponents: None,
            blowup_threshold: F::of(1e10),
        };
        let half = F::of(0.5);
        let low = integrate(
            |u: F| u / model.stability_margin(u).unwrap_or(F::infinity()).abs(),
            F::zero(),
            half,
            &spec,
        );
        let high = integrate(
            |u: F| {
                (F::one() - u)
                    / model.stability_margin(u).unwrap_or(F::infinity()).abs()
            },
            half,
            F::one(),
            &spec,
        );
        match (low, high) {
            (Ok(a), Ok(b)) => (
                true,
                format!(
                    "endpoint integrals {:.6e} and {:.6e}",
                    a.lossy(),
                    b.lossy()
                ),
            ),
            (Err(CoreError::Divergence { .. }), _) => {
                (false, "lower endpoint integral diverges".into())
            }
            (_, Err(CoreError::Divergence { .. })) => {
                (false, "upper endpoint integral diverges".into())
            }
            (a, b) => {
                warnings.push(
                    "quantile integrability could not be established to tolerance"
                        .into(),
                );
                (
                    false,
                    format!(
                        "quadrature stalled: {:?} / {:?}",
                        a.err().map(|e| e.to_string()),
                        b.err().map(|e| e.to_string())
                    ),
                )
            }
        }
    } else {
        (false, "skipped: growth surplus not positive".into())
    };
    checks.push(CheckResult {
        assumption: Assumption::QuantileIntegrability,
        pass: e2_pass,
        witness_u: None,
        detail: e2_detail,
    });

    // H: exponential moments of the initial law, decided per preset.
    let h_ok = model.m.exponential_moments_ok();
    checks.push(CheckResult {
        assumption: Assumption::ExponentialMoments,
        pass: h_ok,
        witness_u: None,
        detail: if h_ok {
            "all exponential moments finite for this preset".into()
        } else {
            "right exponential tail: moments of order >= rate are infinite".into()
        },
    });

    // Discrete stability for a given particle count: every proper prefix of
    // ranks must outgrow the average.
    let n = opts.stability_n.max(2);
    let nf = F::of(n as f64);
    let rates: Vec<F> = (1..=n)
        .map(|j| model.gamma.eval_unchecked(F::of(j as f64) / nf))
        .collect();
    let g_n = rates.iter().copied().sum::<F>() / nf;
    let mut partial = F::zero();
    let mut min_partial = F::infinity();
    let mut min_k = 0usize;
    for (k, &r) in rates.iter().take(n - 1).enumerate() {
        partial += r - g_n;
        if partial < min_partial {
            min_partial = partial;
            min_k = k + 1;
        }
    }
    checks.push(CheckResult {
        assumption: Assumption::DiscreteStability,
        pass: min_partial > F::zero(),
        witness_u: Some(min_k as f64 / n as f64),
        detail: format!(
            "min prefix surplus at n = {} is {:.6e}",
            n,
            min_partial.lossy()
        ),
    });

    let regularity = RegularityFlags {
        gamma_smooth: smooth_for_gamma(&model.gamma),
        sigma2_smooth: smooth_for_sigma2(&model.sigma2),
    };
    if matches!(model.gamma, CoefficientFunction::Tabulated { .. })
        || matches!(model.sigma2, CoefficientFunction::Tabulated { .. })
    {
        warnings.push(
            "tabulated coefficients are piecewise linear; smoothness-based \
             guarantees do not apply, and positivity is checked on a grid only"
                .into(),
        );
    }

    let g = model.g;
    let sufficient_margin = model.gamma.eval_unchecked(F::zero()) > g
        && g > model.gamma.eval_unchecked(F::one());

    ValidationReport {
        checks,
        sufficient_margin,
        regularity,
        warnings,
    }
}

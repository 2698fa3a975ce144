//! Adaptive one-dimensional quadrature.
//!
//! The core is a 15-point Gauss–Kronrod rule driven by a worst-interval-first
//! refinement loop.  Integrands with an algebraic endpoint singularity
//! `(u - lo)^{-a}` can declare the exponent; the engine then substitutes
//! `u = lo + (hi - lo) * s^{1/(1-a)}` (mirrored at the upper end), which turns
//! the singular factor into a bounded one before any adaptive work happens.
//!
//! Divergent integrals are reported rather than chased: once the running
//! estimate exceeds a blow-up threshold while refinement has stopped reducing
//! the error bound, the loop gives up with [`CoreError::Divergence`].  This is
//! a heuristic; it is tuned for integrands whose divergence is algebraic at an
//! endpoint, which is the only kind the rest of the crate produces.

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use std::collections::BinaryHeap;

/// Kronrod abscissae on [0, 1] (positive half; the rule is symmetric).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

/// 7-point Gauss weights for the embedded rule (odd-index abscissae of `XGK`).
const WG: [f64; 4] = [
    0.129_484_966_168_869_69,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_94,
    0.417_959_183_673_469_4,
];

/// Controls for [`integrate`].
#[derive(Clone, Debug)]
pub struct QuadratureSpec<F> {
    /// Absolute error target.
    pub abs_tol: F,
    /// Relative error target; the effective allowance is
    /// `max(abs_tol, rel_tol * |estimate|)`.
    pub rel_tol: F,
    /// Refinement budget; exceeding it yields `ToleranceNotMet`.
    pub max_subdivisions: usize,
    /// Algebraic singularity exponents `(a0, a1)` at the lower and upper
    /// endpoint: the integrand behaves like `(u - lo)^{-a0}` near `lo` and
    /// `(hi - u)^{-a1}` near `hi`.  Exponents must lie below 1 for a
    /// convergent integral; declaring `a >= 1` reports divergence directly.
    /// `0` means "no singularity" and induces the identity substitution.
    pub endpoint_exponents: Option<(F, F)>,
    /// Estimates larger than this in magnitude are treated as divergence
    /// candidates.
    pub blowup_threshold: F,
}

impl<F: Scalar> Default for QuadratureSpec<F> {
    fn default() -> Self {
        QuadratureSpec {
            abs_tol: F::of(1e-10),
            rel_tol: F::of(1e-10),
            max_subdivisions: 4000,
            endpoint_exponents: None,
            blowup_threshold: F::of(1e12),
        }
    }
}

impl<F: Scalar> QuadratureSpec<F> {
    /// Spec with both tolerances set to `tol` and defaults elsewhere.
    pub fn with_tol(tol: F) -> Self {
        QuadratureSpec {
            abs_tol: tol,
            rel_tol: tol,
            ..Self::default()
        }
    }

    /// Declares endpoint exponents, keeping the other settings.
    pub fn with_exponents(mut self, a0: F, a1: F) -> Self {
        self.endpoint_exponents = Some((a0, a1));
        self
    }
}

struct Interval<F> {
    a: F,
    b: F,
    value: F,
    err: f64,
}

impl<F> PartialEq for Interval<F> {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl<F> Eq for Interval<F> {}
impl<F> PartialOrd for Interval<F> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<F> Ord for Interval<F> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // NaN error bounds sort last; the heap never sees them because
        // `gk15` maps non-finite node values to an infinite bound instead.
        self.err
            .partial_cmp(&other.err)
            .unwrap_or(std::cmp::Ordering::Equal)
    }
}

/// One Gauss–Kronrod application on [a, b].
///
/// Returns the Kronrod estimate and a rescaled error bound.  Non-finite node
/// values contribute zero to the estimate and force an infinite bound, so the
/// interval is split again rather than poisoning the running total.
pub(crate) fn gk15<F: Scalar>(f: &mut impl FnMut(F) -> F, a: F, b: F) -> (F, f64) {
    let half = F::of(0.5);
    let center = (a + b) * half;
    let hw = (b - a) * half;

    let mut resk = F::zero();
    let mut resg = F::zero();
    let mut resabs = F::zero();
    let mut saw_nonfinite = false;
    let mut samples = [F::zero(); 15];

    for (i, &x) in XGK.iter().enumerate() {
        let offset = hw * F::of(x);
        let nodes: &[F] = if x == 0.0 {
            &[center]
        } else {
            &[center - offset, center + offset]
        };
        for (side, &u) in nodes.iter().enumerate() {
            let mut v = f(u);
            if !v.is_finite() {
                saw_nonfinite = true;
                v = F::zero();
            }
            samples[2 * i + side] = v;
            let w = F::of(WGK[i]);
            resk = resk + w * v;
            resabs = resabs + w * v.abs();
            // Odd Kronrod indices (and the center) are the embedded Gauss nodes.
            if i % 2 == 1 || x == 0.0 {
                resg = resg + F::of(WG[i / 2]) * v;
            }
        }
    }

    let mean = resk * half;
    let mut resasc = F::zero();
    for (i, &x) in XGK.iter().enumerate() {
        let w = F::of(WGK[i]);
        if x == 0.0 {
            resasc = resasc + w * (samples[14] - mean).abs();
        } else {
            resasc = resasc
                + w * ((samples[2 * i] - mean).abs() + (samples[2 * i + 1] - mean).abs());
        }
    }

    let value = resk * hw;
    if saw_nonfinite {
        return (value, f64::INFINITY);
    }

    let resasc = (resasc * hw.abs()).lossy();
    let raw = ((resk - resg) * hw).lossy().abs();
    // QUADPACK-style rescaling: trust the raw difference only when it is
    // already small relative to the oscillation of the integrand.
    let mut err = raw;
    if resasc != 0.0 && raw != 0.0 {
        err = resasc * (200.0 * raw / resasc).powf(1.5).min(1.0);
    }
    let round = 50.0 * f64::EPSILON * (resabs * hw.abs()).lossy();
    (value, err.max(round))
}

/// Worst-interval-first refinement of `f` on [a, b].
///
/// Returns the estimate and the final error bound.  `pub(crate)` because
/// other modules drive it directly with their own transformed integrands.
pub(crate) fn adaptive<F: Scalar>(
    f: &mut impl FnMut(F) -> F,
    a: F,
    b: F,
    abs_tol: f64,
    rel_tol: f64,
    max_subdivisions: usize,
    blowup: f64,
) -> Result<(F, f64)> {
    let (v, e) = gk15(f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Interval {
        a,
        b,
        value: v,
        err: e,
    });
    let mut total = v;
    let mut total_err = e;
    let mut stagnant = 0usize;

    for _ in 0..max_subdivisions {
        let allowance = abs_tol.max(rel_tol * total.lossy().abs());
        if total_err <= allowance {
            return Ok((total, total_err));
        }
        let worst = match heap.pop() {
            Some(w) => w,
            None => return Ok((total, total_err)),
        };
        let width = (worst.b - worst.a).lossy().abs();
        let scale = worst.a.lossy().abs().max(worst.b.lossy().abs());
        if width <= 4.0 * f64::EPSILON * scale.max(f64::MIN_POSITIVE) {
            // Cannot refine further; if the integrand is still non-finite
            // here the singularity is not integrable at working precision.
            if !worst.err.is_finite() {
                return Err(CoreError::Divergence {
                    estimate: total.lossy(),
                });
            }
            // Keep the interval's contribution and drop it from refinement.
            total_err -= worst.err;
            continue;
        }
        let mid = (worst.a + worst.b) * F::of(0.5);
        let (v1, e1) = gk15(f, worst.a, mid);
        let (v2, e2) = gk15(f, mid, worst.b);
        total = total - worst.value + v1 + v2;
        let new_err = total_err - worst.err + e1 + e2;
        if total.lossy().abs() > blowup {
            if new_err >= 0.99 * total_err || !new_err.is_finite() {
                stagnant += 1;
            } else {
                stagnant = 0;
            }
            if stagnant >= 12 {
                return Err(CoreError::Divergence {
                    estimate: total.lossy(),
                });
            }
        }
        total_err = new_err;
        heap.push(Interval {
            a: worst.a,
            b: mid,
            value: v1,
            err: e1,
        });
        heap.push(Interval {
            a: mid,
            b: worst.b,
            value: v2,
            err: e2,
        });
    }

    let estimate = total.lossy();
    if estimate.abs() > blowup {
        Err(CoreError::Divergence { estimate })
    } else {
        Err(CoreError::ToleranceNotMet {
            estimate,
            error: total_err,
            subdivisions: max_subdivisions,
        })
    }
}

/// Integrates one substituted endpoint piece.
///
/// The piece covers `[end, end ± delta]` of the original axis with the
/// singular endpoint at `end`; `sign` is `+1` when the interval extends to
/// the right of `end`.  The substitution distance is `delta * s^beta`.
fn singular_piece<F: Scalar>(
    f: &mut impl FnMut(F) -> F,
    end: F,
    delta: F,
    sign: F,
    exponent: F,
    abs_tol: f64,
    rel_tol: f64,
    max_subdivisions: usize,
    blowup: f64,
) -> Result<(F, f64)> {
    let one = F::one();
    let beta = one / (one - exponent);
    let mut g = |s: F| {
        let step = delta * s.powf(beta);
        let u = end + sign * step;
        f(u) * delta * beta * s.powf(beta - one)
    };

    // Below s_cut the reconstructed `u` would round onto the endpoint itself,
    // where a genuinely singular integrand is not evaluable.  The substituted
    // integrand tends to a constant there (that is the point of matching the
    // exponent), so a rectangle on [0, s_cut] closes the gap.
    let end_abs = end.lossy().abs();
    let s_cut = if end_abs == 0.0 {
        F::zero()
    } else {
        let ratio = 4.0 * f64::EPSILON * end_abs / delta.lossy();
        F::of(ratio.powf(1.0 / beta.lossy()).min(0.05))
    };

    let (mut value, mut err) = adaptive(
        &mut g,
        s_cut,
        one,
        abs_tol,
        rel_tol,
        max_subdivisions,
        blowup,
    )?;
    if s_cut > F::zero() {
        let g_cut = g(s_cut);
        let g_probe = g(s_cut + s_cut);
        if g_cut.is_finite() && g_probe.is_finite() {
            value = value + g_cut * s_cut;
            err += ((g_cut - g_probe) * s_cut).lossy().abs();
        }
    }
    Ok((value, err))
}

/// Integrates `f` over [lo, hi] under `spec`.
///
/// With `endpoint_exponents` declared, the interval is split at its midpoint
/// and each half is integrated in the substituted variable that removes the
/// declared algebraic singularity.  Without a declaration the refinement loop
/// works on the raw axis and relies on the blow-up heuristic to flag
/// non-integrable behaviour.
pub fn integrate<F: Scalar>(
    mut f: impl FnMut(F) -> F,
    lo: F,
    hi: F,
    spec: &QuadratureSpec<F>,
) -> Result<F> {
    if !lo.is_finite() || !hi.is_finite() || lo > hi {
        return Err(CoreError::Domain {
            value: lo.lossy(),
            domain: "finite interval with lo <= hi",
        });
    }
    if lo == hi {
        return Ok(F::zero());
    }
    let abs_tol = spec.abs_tol.lossy();
    let rel_tol = spec.rel_tol.lossy();
    let blowup = spec.blowup_threshold.lossy();

    match spec.endpoint_exponents {
        None => adaptive(
            &mut f,
            lo,
            hi,
            abs_tol,
            rel_tol,
            spec.max_subdivisions,
            blowup,
        )
        .map(|(v, _)| v),
        Some((a0, a1)) => {
            if a0 >= F::one() || a1 >= F::one() {
                // A declared non-integrable endpoint: the integral does not
                // exist, no quadrature needed.
                return Err(CoreError::Divergence {
                    estimate: f64::INFINITY,
                });
            }
            let half = F::of(0.5);
            let mid = (lo + hi) * half;
            let delta = mid - lo;
            let (left, le) = singular_piece(
                &mut f,
                lo,
                delta,
                F::one(),
                a0,
                abs_tol * 0.5,
                rel_tol,
                spec.max_subdivisions,
                blowup,
            )?;
            let (right, re) = singular_piece(
                &mut f,
                hi,
                hi - mid,
                -F::one(),
                a1,
                abs_tol * 0.5,
                rel_tol,
                spec.max_subdivisions,
                blowup,
            )?;
            let _ = (le, re);
            Ok(left + right)
        }
    }
}

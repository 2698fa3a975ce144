//! Empirical weighted capital measures, market weights, portfolio
//! accounting, and distances from simulation to equilibrium.
//!
//! Everything here is a pure transformation of sorted snapshots.  The
//! p-weighted capital measure places weight proportional to exp(p y) on the
//! particle of rank j, seen at relative rank u = j/n; market weights are
//! the p = 1 case read in decreasing order.  All exponentials are computed
//! after subtracting the max log capitalization: the formulas are invariant
//! under a common shift, floats are not, and states wander hundreds of log
//! units from zero over long runs.
//!
//! Portfolio accounting follows the p-diversity weighted portfolio through
//! one rank-frozen step at a time.  Its growth rate splits into the
//! weighted average of gamma plus the excess growth rate
//! (1/2)(<sigma2, weights> - sum of w^2 sigma2), a variance-like quantity
//! that is nonnegative for any weights.  Log wealth is accumulated two
//! ways, drift-integrated and self-financing (the latter consumes the
//! simulator's Brownian increments), and both series are reported; their
//! gap is the martingale term whose scale is the accumulated quadratic
//! variation, so agreement within a few of its square roots is a
//! correctness signal, not a tautology.

use crate::coefficients::MarketModel;
use crate::equilibrium::EquilibriumModel;
use crate::error::{CoreError, Result};
use crate::numerics::{
    wasserstein, EmpiricalDistribution, MonotoneGridFunction, QuantileSource,
};
use crate::scalar::Scalar;
use crate::simulator::{RankedView, SnapshotSet, StepObserver};

/// Discrete p-weighted capital measure: atoms (j/n, w_j) with the weights
/// normalized to unit total.
#[derive(Clone, Debug)]
pub struct WeightedCapitalMeasure<F> {
    p: F,
    atoms: Vec<(F, F)>,
}

/// Fills `out` with normalized exp-weights for a sorted state, using
/// max-shift and compensated summation so the total is 1 to within a few
/// ulps regardless of the state's magnitude.
fn fill_weights<F: Scalar>(p: F, sorted_y: &[F], out: &mut Vec<F>) {
    out.clear();
    let n = sorted_y.len();
    if n == 0 {
        return;
    }
    let y_max = sorted_y[n - 1];
    let mut sum = F::zero();
    let mut comp = F::zero();
    for &y in sorted_y {
        let w = (p * (y - y_max)).exp();
        out.push(w);
        // Kahan update.
        let t = w - comp;
        let s = sum + t;
        comp = (s - sum) - t;
        sum = s;
    }
    let inv = sum.recip();
    for w in out.iter_mut() {
        *w = *w * inv;
    }
}

impl<F: Scalar> WeightedCapitalMeasure<F> {
    pub fn p(&self) -> F {
        self.p
    }

    /// Atoms (u_j, w_j) in increasing rank order, u_j = j/n.
    pub fn atoms(&self) -> &[(F, F)] {
        &self.atoms
    }

    /// Sum of w_j f(u_j).
    pub fn integral(&self, f: impl Fn(F) -> F) -> F {
        let mut sum = F::zero();
        let mut comp = F::zero();
        for &(u, w) in &self.atoms {
            let t = w * f(u) - comp;
            let s = sum + t;
            comp = (s - sum) - t;
            sum = s;
        }
        sum
    }
}

/// p-weighted capital measure of a sorted state.  p = 0 is the equal
/// weighting; larger p tilts toward the top ranks.
pub fn capital_measure<F: Scalar>(sorted_y: &[F], p: F) -> WeightedCapitalMeasure<F> {
    debug_assert!(sorted_y.windows(2).all(|w| w[0] <= w[1]), "state sorted");
    debug_assert!(p >= F::zero());
    let n = sorted_y.len();
    let nf = F::of(n as f64);
    let mut weights = Vec::new();
    fill_weights(p, sorted_y, &mut weights);
    let atoms = weights
        .into_iter()
        .enumerate()
        .map(|(j, w)| (F::of((j + 1) as f64) / nf, w))
        .collect();
    WeightedCapitalMeasure { p, atoms }
}

/// Sum of w_j f(u_j) against a measure.
pub fn measure_integral<F: Scalar>(
    meas: &WeightedCapitalMeasure<F>,
    f: impl Fn(F) -> F,
) -> F {
    meas.integral(f)
}

/// Market weights in decreasing order: the biggest company first.
#[derive(Clone, Debug)]
pub struct MarketWeights<F> {
    mu_desc: Vec<F>,
}

impl<F: Scalar> MarketWeights<F> {
    /// mu^[1] >= mu^[2] >= ... >= mu^[n].
    pub fn as_slice(&self) -> &[F] {
        &self.mu_desc
    }

    pub fn len(&self) -> usize {
        self.mu_desc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_desc.is_empty()
    }
}

/// Market weights of a sorted state: exp-proportional shares read from the
/// top rank down; exactly the p = 1 capital measure weights reversed.
pub fn market_weights<F: Scalar>(sorted_y: &[F]) -> MarketWeights<F> {
    let mut weights = Vec::new();
    fill_weights(F::one(), sorted_y, &mut weights);
    weights.reverse();
    MarketWeights { mu_desc: weights }
}

/// Log-log capital distribution curve of one state: points
/// (log(k/n), log mu^[k]) for the ranks whose weight survived in floating
/// point, plus the count of underflowed-to-zero atoms dropped.
#[derive(Clone, Debug)]
pub struct EmpiricalCurve<F> {
    pub points: Vec<(F, F)>,
    pub dropped: usize,
}

pub fn empirical_capital_curve<F: Scalar>(sorted_y: &[F]) -> EmpiricalCurve<F> {
    let mu = market_weights(sorted_y);
    let n = mu.len();
    let nf = F::of(n as f64);
    let mut points = Vec::with_capacity(n);
    let mut dropped = 0usize;
    for (k, &w) in mu.as_slice().iter().enumerate() {
        if w > F::zero() {
            let rel = F::of((k + 1) as f64) / nf;
            points.push((rel.ln(), w.ln()));
        } else {
            dropped += 1;
        }
    }
    EmpiricalCurve { points, dropped }
}

/// Per-step portfolio quantities produced by the shared update rule.
#[derive(Clone, Copy, Debug)]
pub struct StepRates<F> {
    /// Growth rate gamma^p at the step's start.
    pub growth: F,
    /// Excess growth rate, always nonnegative.
    pub excess: F,
    /// Self-financing log-wealth increment over the step (None without
    /// Brownian increments).
    pub d_log_sf: Option<F>,
    /// Quadratic-variation increment over the step.
    pub d_qv: F,
}

/// The one portfolio update rule, used by both the streaming tracker and
/// offline accounting over stored snapshots; `weights` is scratch reused
/// across calls.
pub fn portfolio_step<F: Scalar>(
    model: &MarketModel<F>,
    p: F,
    sorted_y: &[F],
    dt: F,
    delta_b: Option<&[F]>,
    weights: &mut Vec<F>,
) -> StepRates<F> {
    fill_weights(p, sorted_y, weights);
    let n = sorted_y.len();
    let nf = F::of(n as f64);
    let half = F::of(0.5);
    let mut gamma_mean = F::zero();
    let mut s2_mean = F::zero();
    let mut w2s2 = F::zero();
    let mut martingale = F::zero();
    for (j, &w) in weights.iter().enumerate() {
        let u = F::of((j + 1) as f64) / nf;
        let gam = model.gamma().eval_unchecked(u);
        let s2 = model.sigma2().eval_unchecked(u);
        gamma_mean += w * gam;
        s2_mean += w * s2;
        w2s2 += w * w * s2;
        if let Some(db) = delta_b {
            martingale += w * s2.sqrt() * db[j];
        }
    }
    let excess = half * (s2_mean - w2s2);
    let growth = gamma_mean + excess;
    StepRates {
        growth,
        excess,
        d_log_sf: delta_b.map(|_| growth * dt + martingale),
        d_qv: w2s2 * dt,
    }
}

/// Trajectory of the p-diversity portfolio over a run: rate series at each
/// step start and accumulated wealth series at each step boundary.
///
/// `times` has one entry per step boundary (t_0 = 0 included);
/// `growth_rate` and `excess_growth` are left-point values (one entry per
/// step); the accumulated series have a value at every boundary with
/// log wealth starting at 0.
#[derive(Clone, Debug)]
pub struct PortfolioPath<F> {
    pub p: F,
    pub times: Vec<F>,
    pub growth_rate: Vec<F>,
    pub excess_growth: Vec<F>,
    pub log_wealth_drift: Vec<F>,
    pub log_wealth_sf: Vec<F>,
    pub quad_variation: Vec<F>,
}

impl<F: Scalar> PortfolioPath<F> {
    fn with_capacity(p: F, steps: usize) -> Self {
        let mut path = PortfolioPath {
            p,
            times: Vec::with_capacity(steps + 1),
            growth_rate: Vec::with_capacity(steps),
            excess_growth: Vec::with_capacity(steps),
            log_wealth_drift: Vec::with_capacity(steps + 1),
            log_wealth_sf: Vec::with_capacity(steps + 1),
            quad_variation: Vec::with_capacity(steps + 1),
        };
        path.times.push(F::zero());
        path.log_wealth_drift.push(F::zero());
        path.log_wealth_sf.push(F::zero());
        path.quad_variation.push(F::zero());
        path
    }

    fn push_step(&mut self, t_next: F, rates: &StepRates<F>, dt: F) {
        self.growth_rate.push(rates.growth);
        self.excess_growth.push(rates.excess);
        self.times.push(t_next);
        let drift_inc = rates.growth * dt;
        self.log_wealth_drift
            .push(*self.log_wealth_drift.last().unwrap() + drift_inc);
        let sf_inc = rates.d_log_sf.unwrap_or(drift_inc);
        self.log_wealth_sf
            .push(*self.log_wealth_sf.last().unwrap() + sf_inc);
        self.quad_variation
            .push(*self.quad_variation.last().unwrap() + rates.d_qv);
    }

    /// Time average of the growth rate over [t_lo, t_hi] (left-point rule,
    /// matching how the series was built).
    pub fn mean_growth_over(&self, t_lo: F, t_hi: F) -> Result<F> {
        let mut acc = F::zero();
        let mut count = 0usize;
        for (k, &g) in self.growth_rate.iter().enumerate() {
            let t = self.times[k];
            if t >= t_lo && t < t_hi {
                acc += g;
                count += 1;
            }
        }
        if count == 0 {
            return Err(CoreError::InsufficientData { needed: 1, got: 0 });
        }
        Ok(acc / F::of(count as f64))
    }

    /// Window average of the plug-in estimator of the large-n growth
    /// rate, the measure-weighted rate of return <b, Pi^p_n(t)>.
    ///
    /// The realized rate subtracts the granularity term (half the
    /// quadratic-variation rate); adding it back gives the functional
    /// whose large-n limit the growth-rate law of large numbers states.
    /// Beyond criticality the realized rate keeps an order-one
    /// granularity gap at any fixed n, so long-term comparisons against
    /// closed-form G values belong to this estimator.
    pub fn mean_lln_growth_over(&self, t_lo: F, t_hi: F) -> Result<F> {
        let mut acc = F::zero();
        let mut count = 0usize;
        for (k, &g) in self.growth_rate.iter().enumerate() {
            let t = self.times[k];
            if t >= t_lo && t < t_hi {
                let dt = self.times[k + 1] - t;
                let qv_rate = (self.quad_variation[k + 1] - self.quad_variation[k]) / dt;
                acc += g + qv_rate * F::of(0.5);
                count += 1;
            }
        }
        if count == 0 {
            return Err(CoreError::InsufficientData { needed: 1, got: 0 });
        }
        Ok(acc / F::of(count as f64))
    }
}

/// Streaming observer accumulating a [`PortfolioPath`] during a run,
/// without storing any trajectory data.
pub struct PortfolioTracker<F: Scalar> {
    model: MarketModel<F>,
    path: PortfolioPath<F>,
    weights: Vec<F>,
}

impl<F: Scalar> PortfolioTracker<F> {
    pub fn new(model: MarketModel<F>, p: F) -> Self {
        PortfolioTracker {
            model,
            path: PortfolioPath::with_capacity(p, 0),
            weights: Vec::new(),
        }
    }

    pub fn path(&self) -> &PortfolioPath<F> {
        &self.path
    }

    pub fn into_path(self) -> PortfolioPath<F> {
        self.path
    }
}

impl<F: Scalar> StepObserver<F> for PortfolioTracker<F> {
    fn on_step(&mut self, view: &RankedView<'_, F>) -> Result<()> {
        let rates = portfolio_step(
            &self.model,
            self.path.p,
            view.sorted_y,
            view.dt,
            Some(view.delta_b),
            &mut self.weights,
        );
        self.path.push_step(view.t_next, &rates, view.dt);
        Ok(())
    }
}

/// Several trackers sharing one run (one per diversity index).
pub struct TrackerSet<F: Scalar> {
    pub trackers: Vec<PortfolioTracker<F>>,
}

impl<F: Scalar> TrackerSet<F> {
    pub fn new(model: &MarketModel<F>, ps: &[F]) -> Self {
        TrackerSet {
            trackers: ps
                .iter()
                .map(|&p| PortfolioTracker::new(model.clone(), p))
                .collect(),
        }
    }
}

impl<F: Scalar> StepObserver<F> for TrackerSet<F> {
    fn on_step(&mut self, view: &RankedView<'_, F>) -> Result<()> {
        for tr in &mut self.trackers {
            tr.on_step(view)?;
        }
        Ok(())
    }
}

/// Offline portfolio accounting over a dense snapshot series (every step
/// recorded, Brownian increments included).  Produces exactly what a
/// [`PortfolioTracker`] attached to the same run would have produced.
pub fn portfolio_path<F: Scalar>(
    snapshots: &SnapshotSet<F>,
    model: &MarketModel<F>,
    p: F,
) -> Result<PortfolioPath<F>> {
    let noise = snapshots.step_noise.as_ref().ok_or_else(|| {
        CoreError::Config(
            "portfolio accounting needs a dense run with recorded increments".into(),
        )
    })?;
    let steps = snapshots.times.len().saturating_sub(1);
    if noise.len() != steps {
        return Err(CoreError::Config(format!(
            "recorded increments cover {} steps but snapshots span {}",
            noise.len(),
            steps
        )));
    }
    let dt = snapshots.dt;
    for pair in snapshots.times.windows(2) {
        let gap = (pair[1] - pair[0] - dt).abs().lossy();
        if gap > 1e-12 * (1.0 + dt.abs().lossy()) {
            return Err(CoreError::Config(
                "snapshot spacing differs from dt; portfolio accounting needs \
                 per-step snapshots"
                    .into(),
            ));
        }
    }
    let mut path = PortfolioPath::with_capacity(p, steps);
    let mut weights = Vec::new();
    for k in 0..steps {
        let rates = portfolio_step(
            model,
            p,
            &snapshots.states[k],
            dt,
            Some(&noise[k]),
            &mut weights,
        );
        path.push_step(snapshots.times[k + 1], &rates, dt);
    }
    Ok(path)
}

/// W_q between the empirical fluctuation state {y_i - g t} and the
/// equilibrium fluctuation law given by its tabulated CDF.
pub fn wasserstein_to_equilibrium<F: Scalar>(
    sorted_y: &[F],
    eq: &EquilibriumModel<F>,
    g: F,
    t: F,
    q: F,
) -> Result<F> {
    let grid = eq.fluctuation_cdf_grid()?;
    wasserstein_to_equilibrium_with(sorted_y, &grid, g, t, q)
}

/// [`wasserstein_to_equilibrium`] against a prebuilt CDF grid, for callers
/// evaluating many snapshots against the same equilibrium.
pub fn wasserstein_to_equilibrium_with<F: Scalar>(
    sorted_y: &[F],
    fluctuation_cdf: &MonotoneGridFunction<F>,
    g: F,
    t: F,
    q: F,
) -> Result<F> {
    let shift = g * t;
    let shifted: Vec<F> = sorted_y.iter().map(|&v| v - shift).collect();
    let emp = EmpiricalDistribution::from_sorted(shifted)?;
    wasserstein(
        q,
        QuantileSource::Empirical(&emp),
        QuantileSource::GridCdf(fluctuation_cdf),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientFunction, InitialDistribution};
    use crate::simulator::{run_dense, run_observed, sample_initial, SimConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    type C = CoefficientFunction<f64>;
    type M = InitialDistribution<f64>;

    fn benchmark_model() -> MarketModel<f64> {
        MarketModel::new(
            C::ZeroMeanLinear,
            C::Constant { c: 1.0 },
            M::Gaussian { mean: 0.0, sd: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn two_atom_hand_values() {
        let state = [0.0, 3.0f64.ln()];
        let meas = capital_measure(&state, 1.0);
        let atoms = meas.atoms();
        assert!((atoms[0].0 - 0.5).abs() <= 1e-15);
        assert!((atoms[0].1 - 0.25).abs() <= 1e-15);
        assert!((atoms[1].0 - 1.0).abs() <= 1e-15);
        assert!((atoms[1].1 - 0.75).abs() <= 1e-15);
        let mean = measure_integral(&meas, |u| u);
        assert!((mean - 0.875).abs() <= 1e-15, "{mean}");

        let mu = market_weights(&state);
        assert!((mu.as_slice()[0] - 0.75).abs() <= 1e-15);
        assert!((mu.as_slice()[1] - 0.25).abs() <= 1e-15);
    }

    #[test]
    fn equal_weight_hand_mean() {
        let state = [1.0f64, 1.0, 1.0, 1.0];
        let meas = capital_measure(&state, 0.0);
        let mean = measure_integral(&meas, |u| u);
        assert!((mean - 0.625).abs() <= 1e-15, "{mean}");
        for &(_, w) in meas.atoms() {
            assert!((w - 0.25).abs() <= 1e-16);
        }
    }

    #[test]
    fn equal_states_give_uniform_weights_for_any_p() {
        let state = [2.5f64; 7];
        for p in [0.0, 0.5, 1.0, 3.0] {
            let meas = capital_measure(&state, p);
            for &(_, w) in meas.atoms() {
                assert!((w - 1.0 / 7.0).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn weights_sum_to_one_at_extreme_magnitudes() {
        let mut state: Vec<f64> = (0..64)
            .map(|i| -700.0 + 1400.0 * (i as f64) / 63.0)
            .collect();
        state.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for p in [0.0, 0.5, 1.0, 2.0] {
            let meas = capital_measure(&state, p);
            let total: f64 = meas.atoms().iter().map(|&(_, w)| w).sum();
            assert!((total - 1.0).abs() <= 1e-12, "p={p}: {total}");
            assert!(meas.atoms().iter().all(|&(_, w)| w >= 0.0));
        }
        let mu = market_weights(&state);
        let total: f64 = mu.as_slice().iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
        assert!(mu.as_slice().windows(2).all(|w| w[0] >= w[1]), "nonincreasing");
    }

    #[test]
    fn mean_rank_is_nondecreasing_in_p() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mut state: Vec<f64> = (0..10).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            state.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut prev = -1.0;
            for k in 0..=12 {
                let p = k as f64 * 0.25;
                let mean = capital_measure(&state, p).integral(|u| u);
                assert!(
                    mean >= prev - 1e-12,
                    "mean rank decreased: {mean} after {prev} at p={p}"
                );
                prev = mean;
            }
        }
    }

    #[test]
    fn excess_growth_identity_and_sign() {
        // The defining form (1/2)(<s2> - sum w^2 s2) equals the
        // variance-style form (1/2) sum w(1-w) s2 atom by atom.
        let model = MarketModel::new(
            C::AtlasAlpha { g: 1.0, alpha: 3.0 },
            C::IncreasingReturnVariance { g: 1.0, alpha: 3.0 },
            M::Gaussian { mean: 0.0, sd: 1.0 },
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut weights = Vec::new();
        for _ in 0..10 {
            let mut state: Vec<f64> = (0..13).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect();
            state.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for p in [0.0, 0.7, 1.5] {
                let rates = portfolio_step(&model, p, &state, 0.01, None, &mut weights);
                let n = state.len() as f64;
                let alt: f64 = weights
                    .iter()
                    .enumerate()
                    .map(|(j, &w)| {
                        let u = (j as f64 + 1.0) / n;
                        0.5 * w * (1.0 - w) * model.sigma2().eval_unchecked(u)
                    })
                    .sum();
                assert!(
                    (rates.excess - alt).abs() <= 1e-13 * (1.0 + alt.abs()),
                    "forms disagree: {} vs {alt}",
                    rates.excess
                );
                assert!(rates.excess >= 0.0);
            }
        }
    }

    #[test]
    fn two_particle_equal_state_excess_growth() {
        // p=0, n=2, sigma2 = 1: excess = (1/2)(1 - 2 (1/4)) = 1/4.
        let model = benchmark_model();
        let mut weights = Vec::new();
        let rates = portfolio_step(&model, 0.0, &[1.0, 1.0], 0.1, None, &mut weights);
        assert!((rates.excess - 0.25).abs() <= 1e-15, "{}", rates.excess);
    }

    #[test]
    fn diversification_term_scales_as_inverse_n() {
        let model = benchmark_model();
        let mut weights = Vec::new();
        for n in [100usize, 1000] {
            let state = vec![0.0; n];
            let rates = portfolio_step(&model, 0.0, &state, 1.0, None, &mut weights);
            // d_qv with dt=1 is sum w^2 s2 = (1/n) <s2, uniform> = 1/n.
            assert!(
                (rates.d_qv - 1.0 / n as f64).abs() <= 1e-14,
                "n={n}: {}",
                rates.d_qv
            );
        }
    }

    #[test]
    fn noiseless_portfolio_has_no_excess_and_no_variation() {
        let model = MarketModel::new_unchecked(
            C::ZeroMeanLinear,
            C::Constant { c: 0.0 },
            M::Gaussian { mean: 0.0, sd: 1.0 },
        )
        .unwrap();
        let cfg = SimConfig {
            n: 12,
            dt: 0.01,
            t_end: 0.5,
            seed: 3,
            snapshot_times: vec![],
            scheme: Default::default(),
        };
        let y0 = sample_initial(&M::Gaussian { mean: 0.0, sd: 1.0 }, 12, 3, None).unwrap();
        let mut tracker = PortfolioTracker::new(model.clone(), 0.8);
        crate::simulator::run_from(&cfg, &model, y0, &mut tracker).unwrap();
        let path = tracker.path();
        assert!(path.excess_growth.iter().all(|&e| e == 0.0));
        assert_eq!(*path.quad_variation.last().unwrap(), 0.0);
        for (a, b) in path.log_wealth_drift.iter().zip(&path.log_wealth_sf) {
            assert_eq!(a, b, "no martingale term without noise");
        }
    }

    #[test]
    fn tracker_and_offline_accounting_agree_exactly() {
        let model = benchmark_model();
        let cfg = SimConfig {
            n: 16,
            dt: 0.05,
            t_end: 1.0,
            seed: 21,
            snapshot_times: vec![],
            scheme: Default::default(),
        };
        let dense = run_dense(&cfg, &model, None).unwrap();
        let offline = portfolio_path(&dense, &model, 1.0).unwrap();

        let mut tracker = PortfolioTracker::new(model.clone(), 1.0);
        run_observed(&cfg, &model, None, &mut tracker).unwrap();
        let streamed = tracker.path();

        assert_eq!(streamed.times, offline.times);
        assert_eq!(streamed.growth_rate, offline.growth_rate);
        assert_eq!(streamed.excess_growth, offline.excess_growth);
        assert_eq!(streamed.log_wealth_drift, offline.log_wealth_drift);
        assert_eq!(streamed.log_wealth_sf, offline.log_wealth_sf);
        assert_eq!(streamed.quad_variation, offline.quad_variation);
        assert_eq!(offline.log_wealth_drift[0], 0.0);
        assert!(offline
            .quad_variation
            .windows(2)
            .all(|w| w[1] >= w[0]));
    }

    #[test]
    fn wealth_estimators_agree_within_martingale_scale() {
        let model = benchmark_model();
        let cfg = SimConfig {
            n: 100,
            dt: 0.01,
            t_end: 2.0,
            seed: 40,
            snapshot_times: vec![],
            scheme: Default::default(),
        };
        let mut tracker = PortfolioTracker::new(model.clone(), 1.0);
        run_observed(&cfg, &model, None, &mut tracker).unwrap();
        let path = tracker.path();
        let gap =
            (path.log_wealth_drift.last().unwrap() - path.log_wealth_sf.last().unwrap()).abs();
        let scale = path.quad_variation.last().unwrap().sqrt();
        assert!(gap <= 3.0 * scale, "gap {gap} vs scale {scale}");
        assert!(scale > 0.0);
    }

    #[test]
    fn offline_accounting_requires_dense_noise() {
        let model = benchmark_model();
        let cfg = SimConfig {
            n: 8,
            dt: 0.1,
            t_end: 0.5,
            seed: 2,
            snapshot_times: vec![0.0, 0.5],
            scheme: Default::default(),
        };
        let sparse = crate::simulator::run(&cfg, &model, None).unwrap();
        assert!(matches!(
            portfolio_path(&sparse, &model, 1.0),
            Err(CoreError::Config(_))
        ));
    }

    #[test]
    fn curve_drops_underflowed_atoms_and_matches_hand_points() {
        let state = [0.0, 3.0f64.ln()];
        let curve = empirical_capital_curve(&state);
        assert_eq!(curve.dropped, 0);
        assert!((curve.points[0].0 - 0.5f64.ln()).abs() <= 1e-15);
        assert!((curve.points[0].1 - 0.75f64.ln()).abs() <= 1e-15);
        assert!((curve.points[1].0 - 0.0).abs() <= 1e-15);
        assert!((curve.points[1].1 - 0.25f64.ln()).abs() <= 1e-15);

        let flat = [7.0; 5];
        let c = empirical_capital_curve(&flat);
        assert!(c.points.iter().all(|&(_, lm)| (lm - (0.2f64).ln()).abs() <= 1e-12));

        let extreme = [-800.0, 0.0, 0.0];
        let c = empirical_capital_curve(&extreme);
        assert_eq!(c.dropped, 1, "underflowed atom dropped");
        assert_eq!(c.points.len(), 2);
    }

    #[test]
    fn consistency_between_market_weights_and_p1_measure() {
        // Partial sums of the top market weights match the p=1 measure mass
        // of the corresponding upper rank interval within atom granularity.
        let mut state: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        state.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mu = market_weights(&state);
        let meas = capital_measure(&state, 1.0);
        for top in [4usize, 10, 25] {
            let head: f64 = mu.as_slice()[..top].iter().sum();
            let threshold = 1.0 - top as f64 / 40.0;
            let mass: f64 = meas
                .atoms()
                .iter()
                .filter(|&&(u, _)| u > threshold + 1e-12)
                .map(|&(_, w)| w)
                .sum();
            assert!((head - mass).abs() <= 1e-12, "top {top}: {head} vs {mass}");
        }
    }

    #[test]
    fn equilibrium_sample_is_transport_close_to_equilibrium() {
        let model = MarketModel::new(
            C::ZeroMeanLinear,
            C::Constant { c: 1.0 },
            M::Equilibrium,
        )
        .unwrap();
        let eq = EquilibriumModel::build_default(model).unwrap();
        let mut draws = sample_initial(&M::Equilibrium, 100_000, 77, Some(&eq)).unwrap();
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let w1 = wasserstein_to_equilibrium(&draws, &eq, 0.0, 0.0, 1.0).unwrap();
        assert!(w1 < 0.02, "W1 = {w1}");

        // With g = 0 the shift is a no-op regardless of t.
        let w1_later = wasserstein_to_equilibrium(&draws, &eq, 0.0, 5.0, 1.0).unwrap();
        assert_eq!(w1, w1_later);
    }
}

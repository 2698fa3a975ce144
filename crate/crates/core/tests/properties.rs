//! Randomized invariants: facts that must hold for every state, exponent,
//! and configuration, checked over generated inputs.

use std::sync::OnceLock;

use atlaslab::coefficients::{CoefficientFunction, InitialDistribution, MarketModel};
use atlaslab::equilibrium::EquilibriumModel;
use atlaslab::measures::{capital_measure, market_weights, portfolio_step};
use atlaslab::simulator::{run, SimConfig};
use proptest::prelude::*;

type C = CoefficientFunction<f64>;
type M = InitialDistribution<f64>;

fn sorted(mut y: Vec<f64>) -> Vec<f64> {
    y.sort_by(|a, b| a.partial_cmp(b).unwrap());
    y
}

fn shared_model() -> &'static MarketModel<f64> {
    static MODEL: OnceLock<MarketModel<f64>> = OnceLock::new();
    MODEL.get_or_init(|| {
        MarketModel::new(
            C::ZeroMeanLinear,
            C::Constant { c: 1.0 },
            M::Gaussian { mean: 0.0, sd: 1.0 },
        )
        .unwrap()
    })
}

fn shared_eq() -> &'static EquilibriumModel<f64> {
    static EQ: OnceLock<EquilibriumModel<f64>> = OnceLock::new();
    EQ.get_or_init(|| EquilibriumModel::build_default(shared_model().clone()).unwrap())
}

proptest! {
    /// Weights are a probability vector no matter how extreme the state:
    /// entries up to +-700 would overflow exp without the max shift.
    #[test]
    fn weights_sum_to_one_at_any_magnitude(
        y in prop::collection::vec(-700.0f64..700.0, 1..60),
        p in 0.0f64..6.0,
    ) {
        let state = sorted(y);
        let meas = capital_measure(&state, p);
        let mut total = 0.0f64;
        for &(u, w) in meas.atoms() {
            prop_assert!(w >= 0.0, "negative weight {w} at u = {u}");
            prop_assert!(u > 0.0 && u <= 1.0);
            total += w;
        }
        prop_assert!((total - 1.0).abs() <= 1e-12, "total {total}");
    }

    /// Raising the exponent tilts weight toward larger capitalizations, so
    /// the mean relative rank never decreases in p.
    #[test]
    fn mean_rank_is_nondecreasing_in_p(
        y in prop::collection::vec(-8.0f64..8.0, 10),
    ) {
        let state = sorted(y);
        let mut prev = f64::NEG_INFINITY;
        let mut p = 0.0;
        while p <= 3.0 + 1e-12 {
            let value = capital_measure(&state, p).integral(|u| u);
            prop_assert!(
                value >= prev - 1e-12,
                "mean rank fell from {prev} to {value} at p = {p}"
            );
            prev = value;
            p += 0.5;
        }
    }

    /// The excess growth rate is a variance-form quantity; it cannot go
    /// negative for any state or exponent.
    #[test]
    fn excess_growth_never_negative(
        y in prop::collection::vec(-15.0f64..15.0, 2..40),
        p in 0.0f64..5.0,
    ) {
        let state = sorted(y);
        let mut weights = Vec::new();
        let rates = portfolio_step(shared_model(), p, &state, 1e-3, None, &mut weights);
        prop_assert!(rates.excess >= -1e-15, "excess {}", rates.excess);
        prop_assert!(rates.d_qv >= 0.0);
    }

    /// Market weights list the heaviest stock first and form a
    /// probability vector.
    #[test]
    fn market_weights_are_ranked_and_normalized(
        y in prop::collection::vec(-300.0f64..300.0, 1..50),
    ) {
        let state = sorted(y);
        let weights = market_weights(&state);
        let w = weights.as_slice();
        let mut total = 0.0f64;
        for pair in w.windows(2) {
            prop_assert!(pair[0] >= pair[1] - 1e-15, "not nonincreasing: {pair:?}");
        }
        for &wi in w {
            prop_assert!(wi >= 0.0);
            total += wi;
        }
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    /// The quantile function is strictly increasing across the whole open
    /// interval.
    #[test]
    fn quantile_function_is_strictly_increasing(
        a in 1e-6f64..0.999999,
        gap in 1e-6f64..0.5,
    ) {
        let b = (a + gap).min(0.999999);
        prop_assume!(b > a);
        let eq = shared_eq();
        let lo = eq.psi(a).unwrap();
        let hi = eq.psi(b).unwrap();
        prop_assert!(hi > lo, "psi({a}) = {lo} !< psi({b}) = {hi}");
    }

    /// Short runs from arbitrary seeds keep every snapshot sorted and
    /// carry a genuine permutation of particle identities.
    #[test]
    fn snapshots_stay_sorted_with_permutation_identities(
        n in 1usize..24,
        seed in any::<u64>(),
        steps in 1u32..5,
    ) {
        let cfg = SimConfig {
            n,
            dt: 0.05,
            t_end: 0.05 * steps as f64,
            seed,
            snapshot_times: vec![0.05 * steps as f64],
            scheme: Default::default(),
        };
        let snap = run(&cfg, shared_model(), None).unwrap();
        for state in &snap.states {
            for pair in state.windows(2) {
                prop_assert!(pair[0] <= pair[1]);
            }
        }
        for ids in &snap.identities {
            let mut seen = ids.to_vec();
            seen.sort_unstable();
            let expect: Vec<u32> = (0..n as u32).collect();
            prop_assert_eq!(seen, expect);
        }
    }
}

//! Monte Carlo engine for the finite-n rank-based particle system.
//!
//! n particles carry log capitalizations y_1 .. y_n indexed by identity.
//! At each step the particles are ranked (ties broken by identity; they are
//! null events in continuous time but floats do collide), the particle at
//! rank j receives drift gamma(j/n) and volatility sigma(j/n) frozen over
//! the step, and an Euler update is applied:
//!
//!   y_i <- y_i + gamma(rank_i/n) dt + sigma(rank_i/n) sqrt(dt) xi_i
//!
//! with xi_i i.i.d. standard normals.  The normals are consumed in particle
//! identity order, never rank order, so trajectories do not depend on how
//! the sort happens to process equal keys, only on the tie-break rule.
//!
//! Randomness comes from a ChaCha12 stream seeded with a 64-bit value;
//! replicas use seed + replica_index, which keeps every trajectory
//! bit-reproducible regardless of thread count.  A run aborts with a
//! blowup error if any coordinate leaves [-1e300, 1e300].
//!
//! Observers can hook into every step.  The hook sees the pre-step state
//! through the ranked lens (sorted values, the identity occupying each
//! rank, and the Brownian increment each rank is about to receive), which
//! is exactly what portfolio accounting needs, without any trajectory
//! storage.

use crate::coefficients::{InitialDistribution, MarketModel};
use crate::equilibrium::EquilibriumModel;
use crate::error::{CoreError, Result};
use crate::numerics::{Extrapolation, MonotoneGridFunction};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Name of the generator family, recorded in run manifests.
pub const RNG_NAME: &str = "chacha12";

/// A coordinate beyond this magnitude aborts the run.
pub const BLOWUP_LIMIT: f64 = 1e300;

/// Time-stepping scheme.  Only rank-frozen Euler exists; the enum pins the
/// name into configs and manifests so a future scheme cannot silently
/// change the meaning of archived runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerRankFrozen,
}

/// Simulation plan: particle count, step size, horizon, seed, and which
/// times to snapshot.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig<F> {
    pub n: usize,
    pub dt: F,
    pub t_end: F,
    pub seed: u64,
    pub snapshot_times: Vec<F>,
    #[serde(default)]
    pub scheme: Scheme,
}

/// Nearest step index when `t` is a multiple of `dt` within 1e-12
/// (relative to the time magnitude), else None.
fn step_index_of<F: Scalar>(t: F, dt: F) -> Option<u64> {
    let ratio = (t / dt).lossy();
    if !(ratio >= 0.0) || ratio > 4.0e15 {
        return None;
    }
    let k = ratio.round();
    let residual = (t - dt * F::of(k)).abs().lossy();
    if residual <= 1e-12 * (1.0 + t.abs().lossy()) {
        Some(k as u64)
    } else {
        None
    }
}

impl<F: Scalar> SimConfig<F> {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(CoreError::Config("particle count must be at least 1".into()));
        }
        if !(self.dt > F::zero()) || !self.dt.is_finite() {
            return Err(CoreError::Config(format!(
                "time step must be positive and finite, got {}",
                self.dt.lossy()
            )));
        }
        if !(self.t_end >= F::zero()) || !self.t_end.is_finite() {
            return Err(CoreError::Config(format!(
                "horizon must be nonnegative and finite, got {}",
                self.t_end.lossy()
            )));
        }
        if step_index_of(self.t_end, self.dt).is_none() {
            return Err(CoreError::Config(format!(
                "horizon {} is not a multiple of dt = {}",
                self.t_end.lossy(),
                self.dt.lossy()
            )));
        }
        for pair in self.snapshot_times.windows(2) {
            if !(pair[1] > pair[0]) {
                return Err(CoreError::Config(
                    "snapshot times must be strictly increasing".into(),
                ));
            }
        }
        let last_step = self.step_count()?;
        for &t in &self.snapshot_times {
            if !(t >= F::zero()) || t > self.t_end + self.dt * F::of(1e-9) {
                return Err(CoreError::Config(format!(
                    "snapshot time {} outside [0, {}]",
                    t.lossy(),
                    self.t_end.lossy()
                )));
            }
            match step_index_of(t, self.dt) {
                Some(k) if k <= last_step => {}
                _ => {
                    return Err(CoreError::Config(format!(
                        "snapshot time {} is not a multiple of dt = {}",
                        t.lossy(),
                        self.dt.lossy()
                    )))
                }
            }
        }
        Ok(())
    }

    /// Number of Euler steps to reach the horizon.
    pub fn step_count(&self) -> Result<u64> {
        step_index_of(self.t_end, self.dt).ok_or_else(|| {
            CoreError::Config(format!(
                "horizon {} is not a multiple of dt = {}",
                self.t_end.lossy(),
                self.dt.lossy()
            ))
        })
    }

    /// Snapshot times translated to step indices.
    pub fn snapshot_steps(&self) -> Result<Vec<u64>> {
        self.validate()?;
        Ok(self
            .snapshot_times
            .iter()
            .map(|&t| step_index_of(t, self.dt).expect("validated"))
            .collect())
    }
}

/// Pre-step view of the ensemble through the ranked lens, handed to
/// observers before each update.
pub struct RankedView<'a, F> {
    /// Time at the start of the step.
    pub t: F,
    /// Time the step lands on (the driving loop's exact clock, not t + dt
    /// recomputed in floating point).
    pub t_next: F,
    pub dt: F,
    /// Log capitalizations in nondecreasing order; rank j (0-based) holds
    /// relative rank (j+1)/n.
    pub sorted_y: &'a [F],
    /// Identity of the particle occupying each rank.
    pub identities: &'a [u32],
    /// Brownian increment (sigma excluded) the rank-j particle receives
    /// over this step.
    pub delta_b: &'a [F],
}

/// Hook into the step loop.  `on_step` fires before each update with the
/// pre-step ranked view; `on_final` fires once after the last step with the
/// final sorted state.
pub trait StepObserver<F: Scalar> {
    fn on_step(&mut self, view: &RankedView<'_, F>) -> Result<()>;

    fn on_final(&mut self, _t: F, _sorted_y: &[F]) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NullObserver;

impl<F: Scalar> StepObserver<F> for NullObserver {
    fn on_step(&mut self, _view: &RankedView<'_, F>) -> Result<()> {
        Ok(())
    }
}

/// The particle system: identities, their log capitalizations, the seeded
/// noise stream, and per-rank coefficient tables fixed for the run.
pub struct ParticleEnsemble<F: Scalar> {
    model: MarketModel<F>,
    t: F,
    steps_taken: u64,
    y: Vec<F>,
    rng: ChaCha12Rng,
    normal_draws: u64,
    drift_by_rank: Vec<F>,
    vol_by_rank: Vec<F>,
    order: Vec<u32>,
    sorted_scratch: Vec<F>,
    noise_scratch: Vec<F>,
    rank_noise: Vec<F>,
}

impl<F: Scalar> ParticleEnsemble<F> {
    /// Wraps an explicit initial state.  The per-rank tables gamma(j/n) and
    /// sigma(j/n) = sqrt(sigma2(j/n)), j = 1..n, are computed once here.
    pub fn from_state(model: MarketModel<F>, y: Vec<F>, seed: u64) -> Result<Self> {
        Self::from_state_with_rng(model, y, ChaCha12Rng::seed_from_u64(seed))
    }

    fn from_state_with_rng(
        model: MarketModel<F>,
        y: Vec<F>,
        rng: ChaCha12Rng,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(CoreError::Config("empty initial state".into()));
        }
        if n > u32::MAX as usize {
            return Err(CoreError::Config("particle count exceeds u32 range".into()));
        }
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoreError::Config(format!(
                    "initial log-capitalization {} is not finite at index {i}",
                    v.lossy()
                )));
            }
        }
        let nf = F::of(n as f64);
        let mut drift_by_rank = Vec::with_capacity(n);
        let mut vol_by_rank = Vec::with_capacity(n);
        for j in 1..=n {
            let u = F::of(j as f64) / nf;
            let s2 = model.sigma2().eval_unchecked(u);
            if !(s2 >= F::zero()) || !s2.is_finite() {
                return Err(CoreError::Config(format!(
                    "variance profile is {} at rank {j}/{n}",
                    s2.lossy()
                )));
            }
            drift_by_rank.push(model.gamma().eval_unchecked(u));
            vol_by_rank.push(s2.sqrt());
        }
        Ok(ParticleEnsemble {
            model,
            t: F::zero(),
            steps_taken: 0,
            y,
            rng,
            normal_draws: 0,
            drift_by_rank,
            vol_by_rank,
            order: (0..n as u32).collect(),
            sorted_scratch: vec![F::zero(); n],
            noise_scratch: vec![F::zero(); n],
            rank_noise: vec![F::zero(); n],
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn t(&self) -> F {
        self.t
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// Standard normals consumed by stepping so far (n per step).
    pub fn normal_draws(&self) -> u64 {
        self.normal_draws
    }

    pub fn model(&self) -> &MarketModel<F> {
        &self.model
    }

    /// Current coordinates in identity order.
    pub fn state(&self) -> &[F] {
        &self.y
    }

    /// Ranks the current state: after the call, `sorted_scratch` holds the
    /// nondecreasing values and `order` the identity at each rank.  The
    /// comparison key (value, identity) is a total order, so the result
    /// does not depend on the sorting algorithm.
    fn refresh_order(&mut self) {
        let y = &self.y;
        self.order.sort_unstable_by(|&a, &b| {
            y[a as usize]
                .partial_cmp(&y[b as usize])
                .expect("finite log-capitalizations")
                .then(a.cmp(&b))
        });
        for (j, &i) in self.order.iter().enumerate() {
            self.sorted_scratch[j] = y[i as usize];
        }
    }

    /// Sorted copy of the current state together with the identity at each
    /// rank.
    pub fn sorted_state(&mut self) -> (Vec<F>, Vec<u32>) {
        self.refresh_order();
        (self.sorted_scratch.clone(), self.order.clone())
    }

    /// One rank-frozen Euler step of size dt.
    pub fn step(&mut self, dt: F, observer: &mut dyn StepObserver<F>) -> Result<()> {
        let t_next = self.t + dt;
        self.step_until(dt, t_next, observer)
    }

    /// [`Self::step`] with the post-step clock set explicitly, so driving
    /// loops can keep times as exact multiples of dt instead of an
    /// accumulated sum that drifts in ulps.
    pub fn step_until(
        &mut self,
        dt: F,
        t_next: F,
        observer: &mut dyn StepObserver<F>,
    ) -> Result<()> {
        if !(dt > F::zero()) {
            return Err(CoreError::Config(format!(
                "step size must be positive, got {}",
                dt.lossy()
            )));
        }
        let n = self.y.len();
        self.refresh_order();

        let sdt = dt.sqrt();
        for slot in self.noise_scratch.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *slot = F::of(z) * sdt;
        }
        self.normal_draws += n as u64;
        for (j, &i) in self.order.iter().enumerate() {
            self.rank_noise[j] = self.noise_scratch[i as usize];
        }

        observer.on_step(&RankedView {
            t: self.t,
            t_next,
            dt,
            sorted_y: &self.sorted_scratch,
            identities: &self.order,
            delta_b: &self.rank_noise,
        })?;

        for (j, &i) in self.order.iter().enumerate() {
            let i = i as usize;
            self.y[i] =
                self.y[i] + self.drift_by_rank[j] * dt + self.vol_by_rank[j] * self.rank_noise[j];
        }
        self.steps_taken += 1;
        self.t = t_next;

        let limit = F::of(BLOWUP_LIMIT);
        for (i, &v) in self.y.iter().enumerate() {
            if !(v.abs() <= limit) {
                return Err(CoreError::Blowup {
                    t: self.t.lossy(),
                    index: i,
                    value: v.lossy(),
                });
            }
        }
        Ok(())
    }
}

/// n i.i.d. draws from an initial law, deterministic per seed.  The
/// `Equilibrium` preset inverts the tabulated quantile of the fluctuation
/// law and therefore needs the built equilibrium model.
pub fn sample_initial<F: Scalar>(
    m: &InitialDistribution<F>,
    n: usize,
    seed: u64,
    eq: Option<&EquilibriumModel<F>>,
) -> Result<Vec<F>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    sample_initial_with(m, n, &mut rng, eq)
}

fn sample_initial_with<F: Scalar>(
    m: &InitialDistribution<F>,
    n: usize,
    rng: &mut ChaCha12Rng,
    eq: Option<&EquilibriumModel<F>>,
) -> Result<Vec<F>> {
    m.validate()?;
    let mut out = Vec::with_capacity(n);
    match m {
        InitialDistribution::Gaussian { mean, sd } => {
            for _ in 0..n {
                let z: f64 = StandardNormal.sample(rng);
                out.push(*mean + *sd * F::of(z));
            }
        }
        InitialDistribution::Uniform { lo, hi } => {
            let width = *hi - *lo;
            for _ in 0..n {
                let u: f64 = rng.gen();
                out.push(*lo + width * F::of(u));
            }
        }
        InitialDistribution::ShiftedExponential { rate, shift, sign } => {
            let exp = Exp::new(rate.lossy())
                .map_err(|e| CoreError::Config(format!("exponential rate: {e}")))?;
            let s = F::of(*sign as f64);
            for _ in 0..n {
                let e: f64 = exp.sample(rng);
                out.push(*shift + s * F::of(e));
            }
        }
        InitialDistribution::Equilibrium => {
            let eq = eq.ok_or_else(|| {
                CoreError::Config(
                    "initial law 'equilibrium' needs a built equilibrium model to invert"
                        .into(),
                )
            })?;
            for _ in 0..n {
                let u: f64 = rng.gen();
                out.push(eq.fluctuation_quantile(F::of(u))?);
            }
        }
        InitialDistribution::TabulatedQuantile { knots } => {
            let xs: Vec<F> = knots.iter().map(|k| k.0).collect();
            let ys: Vec<F> = knots.iter().map(|k| k.1).collect();
            let q = MonotoneGridFunction::new(xs, ys, Extrapolation::Clamp)?;
            for _ in 0..n {
                let u: f64 = rng.gen();
                out.push(q.eval(F::of(u))?);
            }
        }
    }
    Ok(out)
}

/// Snapshots of a run: at each requested time, the sorted state and the
/// identity occupying each rank.  Dense runs can additionally carry the
/// per-step Brownian increments by rank, which is what offline portfolio
/// accounting replays.
#[derive(Clone, Debug)]
pub struct SnapshotSet<F> {
    pub times: Vec<F>,
    /// Sorted log capitalizations per snapshot.
    pub states: Vec<Vec<F>>,
    /// Identity of the particle at each rank, per snapshot.
    pub identities: Vec<Vec<u32>>,
    pub n: usize,
    pub dt: F,
    pub seed: u64,
    /// For dense runs: `step_noise[k][j]` is the Brownian increment the
    /// rank-j particle received over the step starting at `times[k]`
    /// (one entry fewer than `times`).
    pub step_noise: Option<Vec<Vec<F>>>,
}

impl<F: Scalar> SnapshotSet<F> {
    /// The snapshot at the latest recorded time.
    pub fn last_state(&self) -> Option<(&F, &[F])> {
        match (self.times.last(), self.states.last()) {
            (Some(t), Some(s)) => Some((t, s.as_slice())),
            _ => None,
        }
    }
}

/// Shifts every snapshot by -g t, turning log capitalizations into the
/// fluctuation coordinates whose law stabilizes.  Order is preserved, so
/// states stay sorted and the rank identities still apply.
pub fn fluctuations<F: Scalar>(snap: &SnapshotSet<F>, g: F) -> SnapshotSet<F> {
    let states = snap
        .times
        .iter()
        .zip(&snap.states)
        .map(|(&t, state)| {
            let shift = g * t;
            state.iter().map(|&v| v - shift).collect()
        })
        .collect();
    SnapshotSet {
        times: snap.times.clone(),
        states,
        identities: snap.identities.clone(),
        n: snap.n,
        dt: snap.dt,
        seed: snap.seed,
        step_noise: snap.step_noise.clone(),
    }
}

fn run_core<F: Scalar>(
    config: &SimConfig<F>,
    model: &MarketModel<F>,
    y0: Vec<F>,
    rng: ChaCha12Rng,
    observer: &mut dyn StepObserver<F>,
    dense: bool,
) -> Result<SnapshotSet<F>> {
    let steps = config.step_count()?;
    let snap_steps: Vec<u64> = if dense {
        (0..=steps).collect()
    } else {
        config.snapshot_steps()?
    };
    if y0.len() != config.n {
        return Err(CoreError::Config(format!(
            "initial state has {} particles, config says {}",
            y0.len(),
            config.n
        )));
    }
    let mut ens = ParticleEnsemble::from_state_with_rng(model.clone(), y0, rng)?;

    let mut out = SnapshotSet {
        times: Vec::with_capacity(snap_steps.len()),
        states: Vec::with_capacity(snap_steps.len()),
        identities: Vec::with_capacity(snap_steps.len()),
        n: config.n,
        dt: config.dt,
        seed: config.seed,
        step_noise: if dense { Some(Vec::new()) } else { None },
    };
    let mut next_snap = snap_steps.iter().copied().peekable();

    if next_snap.peek() == Some(&0) {
        next_snap.next();
        let (state, ids) = ens.sorted_state();
        out.times.push(F::zero());
        out.states.push(state);
        out.identities.push(ids);
    }

    struct Recorder<'a, F: Scalar> {
        inner: &'a mut dyn StepObserver<F>,
        record: Option<&'a mut Vec<Vec<F>>>,
    }
    impl<F: Scalar> StepObserver<F> for Recorder<'_, F> {
        fn on_step(&mut self, view: &RankedView<'_, F>) -> Result<()> {
            if let Some(store) = self.record.as_deref_mut() {
                store.push(view.delta_b.to_vec());
            }
            self.inner.on_step(view)
        }
    }

    for k in 0..steps {
        let mut rec = Recorder {
            inner: observer,
            record: out.step_noise.as_mut(),
        };
        ens.step_until(config.dt, config.dt * F::of((k + 1) as f64), &mut rec)?;
        if next_snap.peek() == Some(&(k + 1)) {
            next_snap.next();
            let (state, ids) = ens.sorted_state();
            out.times.push(config.dt * F::of((k + 1) as f64));
            out.states.push(state);
            out.identities.push(ids);
        }
    }

    let (final_state, _) = ens.sorted_state();
    observer.on_final(config.dt * F::of(steps as f64), &final_state)?;
    Ok(out)
}

/// Runs the configured simulation: sample the initial law, step to the
/// horizon, snapshot at the requested times.
pub fn run<F: Scalar>(
    config: &SimConfig<F>,
    model: &MarketModel<F>,
    eq: Option<&EquilibriumModel<F>>,
) -> Result<SnapshotSet<F>> {
    run_observed(config, model, eq, &mut NullObserver)
}

/// [`run`] with a step observer attached.
pub fn run_observed<F: Scalar>(
    config: &SimConfig<F>,
    model: &MarketModel<F>,
    eq: Option<&EquilibriumModel<F>>,
    observer: &mut dyn StepObserver<F>,
) -> Result<SnapshotSet<F>> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let y0 = sample_initial_with(model.initial_law(), config.n, &mut rng, eq)?;
    run_core(config, model, y0, rng, observer, false)
}

/// Runs from an explicit initial state (identity order), bypassing the
/// initial law.  The noise stream starts fresh from the seed.
pub fn run_from<F: Scalar>(
    config: &SimConfig<F>,
    model: &MarketModel<F>,
    y0: Vec<F>,
    observer: &mut dyn StepObserver<F>,
) -> Result<SnapshotSet<F>> {
    config.validate()?;
    let rng = ChaCha12Rng::seed_from_u64(config.seed);
    run_core(config, model, y0, rng, observer, false)
}

/// Runs with a snapshot at every step (ignoring `snapshot_times`) and the
/// per-step Brownian increments recorded, as offline portfolio accounting
/// requires.  Memory is n times step count; meant for windows, not
/// full-length production runs.
pub fn run_dense<F: Scalar>(
    config: &SimConfig<F>,
    model: &MarketModel<F>,
    eq: Option<&EquilibriumModel<F>>,
) -> Result<SnapshotSet<F>> {
    config.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let y0 = sample_initial_with(model.initial_law(), config.n, &mut rng, eq)?;
    run_core(config, model, y0, rng, &mut NullObserver, true)
}

/// Runs `replicas` independent copies in parallel with seeds
/// `config.seed + r`, each with its own observer from the factory.
/// Results come back in replica order, so the merge is deterministic.
pub fn run_replica_set<F, O, B>(
    config: &SimConfig<F>,
    model: &MarketModel<F>,
    eq: Option<&EquilibriumModel<F>>,
    replicas: usize,
    make_observer: B,
) -> Result<Vec<(SnapshotSet<F>, O)>>
where
    F: Scalar,
    O: StepObserver<F> + Send,
    B: Fn(usize) -> O + Sync,
{
    config.validate()?;
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut cfg = config.clone();
            cfg.seed = config.seed.wrapping_add(r as u64);
            let mut obs = make_observer(r);
            let snap = run_observed(&cfg, model, eq, &mut obs)?;
            Ok((snap, obs))
        })
        .collect()
}

/// Discrete market mean growth rate (1/n) sum of gamma(j/n), the exact
/// drift of the coordinate average when sigma = 0.
pub fn discrete_mean_growth<F: Scalar>(model: &MarketModel<F>, n: usize) -> F {
    let nf = F::of(n as f64);
    (1..=n)
        .map(|j| model.gamma().eval_unchecked(F::of(j as f64) / nf))
        .sum::<F>()
        / nf
}

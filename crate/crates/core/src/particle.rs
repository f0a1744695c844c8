//! Exact event-driven simulation of the particle system and its small-mass
//! rescaling.
//!
//! Particles of M types sit on the sites of a finite geography. Each particle
//! of type `m` at site `xi`, with per-particle mass `eps`:
//!
//! - migrates at total rate `1 - a(xi, xi)`, choosing the target from the
//!   renormalized off-diagonal row of `a` (self-moves are identity events and
//!   are skipped);
//! - gives birth to one particle at rate `(gamma^m/eps) (1/2 + eps K^m)`;
//! - dies at rate `(gamma^m/eps) (1/2 + eps sum_n lambda[m][n] (eps z^n_xi))`,
//!   i.e. the competition term sees the *masses* `eps z^n_xi`.
//!
//! At `eps = 1` this is the unscaled model; as `eps -> 0` the measured masses
//! `eps z` converge to the interacting diffusion system integrated by
//! [`crate::diffusion`]. Simulation is exact Gillespie: exponential waiting
//! times from the total rate, channel selection through a binary indexed
//! tree, O(M log) incremental updates per event.

use crate::error::{ConfigError, SimError};
use crate::fenwick::RateTree;
use crate::field::Field;
use crate::geometry::Geography;
use crate::model::ModelParams;
use crate::rng::{CounterStream, StreamTag};

/// Default hard cap on events per run; supercritical parameters must fail
/// loudly instead of hanging.
pub const DEFAULT_MAX_EVENTS: u64 = 1_000_000_000;

/// Events between full rate-table recomputations (drift guard).
const RECHECK_INTERVAL: u64 = 1_000_000;

const DRIFT_TOL: f64 = 1e-9;

const CH_MIGRATION: usize = 0;
const CH_BIRTH: usize = 1;
const CH_DEATH: usize = 2;

/// Particle counts with their mass scale and clock.
#[derive(Debug, Clone)]
pub struct ParticleState {
    pub counts: Field<u64>,
    pub mass_eps: f64,
    pub time: f64,
}

impl ParticleState {
    /// Measured masses `eps * z`.
    pub fn masses(&self) -> Field<f64> {
        let eps = self.mass_eps;
        self.counts.map(|c| c as f64 * eps)
    }

    pub fn total_count(&self) -> u64 {
        self.counts.total()
    }
}

/// Initial state by the floor rule `z = floor(x0 / eps)`.
pub fn init_particles(
    geo: &Geography,
    params: &ModelParams,
    x0: &Field<f64>,
    eps: f64,
) -> Result<ParticleState, ConfigError> {
    if !(eps > 0.0) {
        return Err(ConfigError::single(format!(
            "engine.eps: must be > 0, got {eps}"
        )));
    }
    if x0.sites() != geo.n_sites() || x0.types() != params.types {
        return Err(ConfigError::single(format!(
            "initial: state is {}x{}, expected {}x{}",
            x0.sites(),
            x0.types(),
            geo.n_sites(),
            params.types
        )));
    }
    if let Some(((s, m), v)) = x0.iter().find(|&(_, v)| v < 0.0 || !v.is_finite()) {
        return Err(ConfigError::single(format!(
            "initial: x0[site {s}][type {m}] = {v} must be finite and >= 0"
        )));
    }
    Ok(ParticleState {
        counts: x0.map(|v| (v / eps).floor() as u64),
        mass_eps: eps,
        time: 0.0,
    })
}

/// One applied transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Migration { from: usize, to: usize },
    Birth { site: usize },
    Death { site: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct EventRecord {
    pub time: f64,
    pub ty: usize,
    pub kind: EventKind,
}

/// State snapshot at an observation time.
#[derive(Debug, Clone)]
pub struct ParticleSnapshot {
    pub time: f64,
    pub counts: Field<u64>,
}

/// Exact Gillespie engine owning its state and random stream.
///
/// Single-threaded by construction; concurrency happens one engine per
/// replicate with disjoint streams.
pub struct ParticleEngine<'a> {
    geo: &'a Geography,
    params: &'a ModelParams,
    state: ParticleState,
    tree: RateTree,
    rate_cache: Vec<f64>,
    stream: CounterStream,
    /// `None` = all sites active; otherwise the freeze mask.
    active: Option<Vec<bool>>,
    /// Diagnostic mode: branching channels forced to zero, migration only.
    branching_disabled: bool,
    pub max_events: u64,
    events: u64,
    /// Worst relative drift seen at recheck points.
    max_drift: f64,
}

impl<'a> ParticleEngine<'a> {
    pub fn new(
        geo: &'a Geography,
        params: &'a ModelParams,
        state: ParticleState,
        seed: u64,
        replicate: u64,
    ) -> Self {
        let channels = geo.n_sites() * params.types * 3;
        let mut engine = Self {
            geo,
            params,
            state,
            tree: RateTree::new(channels),
            rate_cache: vec![0.0; channels],
            stream: CounterStream::new(seed, replicate, StreamTag::ParticleEvents),
            active: None,
            branching_disabled: false,
            max_events: DEFAULT_MAX_EVENTS,
            events: 0,
            max_drift: 0.0,
        };
        engine.rebuild_rates();
        engine
    }

    pub fn state(&self) -> &ParticleState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    /// Diagnostic mode for conservation tests: force branching channels to
    /// zero, leaving pure migration.
    pub fn set_branching_disabled(&mut self, disabled: bool) {
        self.branching_disabled = disabled;
        self.rebuild_rates();
    }

    /// Suppress all events at sites outside `active_sites`: frozen sites
    /// neither branch nor emit migrants. Migrants *into* frozen sites are
    /// allowed and accumulate there.
    pub fn freeze_outside(&mut self, active_sites: &[usize]) -> Result<(), ConfigError> {
        if active_sites.is_empty() {
            return Err(ConfigError::single(
                "freeze: active site set must be nonempty",
            ));
        }
        let mut mask = vec![false; self.geo.n_sites()];
        for &s in active_sites {
            if s >= self.geo.n_sites() {
                return Err(ConfigError::single(format!(
                    "freeze: site {s} out of range"
                )));
            }
            mask[s] = true;
        }
        self.active = Some(mask);
        self.rebuild_rates();
        Ok(())
    }

    #[inline]
    fn is_active(&self, site: usize) -> bool {
        self.active.as_ref().map_or(true, |m| m[site])
    }

    #[inline]
    fn channel(&self, site: usize, ty: usize, ch: usize) -> usize {
        (site * self.params.types + ty) * 3 + ch
    }

    fn channel_rate(&self, site: usize, ty: usize, ch: usize) -> f64 {
        if !self.is_active(site) {
            return 0.0;
        }
        let count = self.state.counts.get(site, ty) as f64;
        if count == 0.0 {
            return 0.0;
        }
        let eps = self.state.mass_eps;
        let gamma = self.params.gamma[ty];
        match ch {
            CH_MIGRATION => count * self.geo.offdiag_a(site).total(),
            CH_BIRTH => {
                if self.branching_disabled {
                    0.0
                } else {
                    count * gamma / eps * (0.5 + eps * self.params.k[ty])
                }
            }
            CH_DEATH => {
                if self.branching_disabled {
                    0.0
                } else {
                    let pressure: f64 = (0..self.params.types)
                        .map(|n| {
                            self.params.lambda_at(ty, n)
                                * (eps * self.state.counts.get(site, n) as f64)
                        })
                        .sum();
                    count * gamma / eps * (0.5 + eps * pressure)
                }
            }
            _ => unreachable!(),
        }
    }

    fn rebuild_rates(&mut self) {
        for site in 0..self.geo.n_sites() {
            for ty in 0..self.params.types {
                for ch in 0..3 {
                    let idx = self.channel(site, ty, ch);
                    self.rate_cache[idx] = self.channel_rate(site, ty, ch);
                }
            }
        }
        self.tree.rebuild(&self.rate_cache);
    }

    /// Refresh every channel touched by a count change at `site`.
    fn refresh_site(&mut self, site: usize) {
        for ty in 0..self.params.types {
            for ch in 0..3 {
                let idx = self.channel(site, ty, ch);
                let new = self.channel_rate(site, ty, ch);
                let delta = new - self.rate_cache[idx];
                if delta != 0.0 {
                    self.rate_cache[idx] = new;
                    self.tree.add(idx, delta);
                }
            }
        }
    }

    fn drift_guard(&mut self) -> Result<(), SimError> {
        let cached = self.tree.total();
        let fresh: f64 = (0..self.rate_cache.len())
            .map(|idx| {
                let site = idx / 3 / self.params.types;
                let ty = idx / 3 % self.params.types;
                self.channel_rate(site, ty, idx % 3)
            })
            .sum();
        let rel = (cached - fresh).abs() / fresh.abs().max(1.0);
        self.max_drift = self.max_drift.max(rel);
        if rel > DRIFT_TOL {
            return Err(SimError::RateTableDrift {
                rel,
                events: self.events,
            });
        }
        self.rebuild_rates();
        Ok(())
    }

    /// Advance by one event, or to `horizon` if no event fires before it.
    /// Returns `None` once the clock sits at `horizon` (the zero-rate state
    /// is absorbing: the clock jumps to the horizon).
    pub fn step(&mut self, horizon: f64) -> Result<Option<EventRecord>, SimError> {
        if self.state.time >= horizon {
            return Ok(None);
        }
        let total = self.tree.total();
        if total <= 0.0 {
            self.state.time = horizon;
            return Ok(None);
        }
        let wait = self.stream.exponential(total);
        let t_next = self.state.time + wait;
        if t_next > horizon {
            self.state.time = horizon;
            return Ok(None);
        }
        if self.events >= self.max_events {
            return Err(SimError::ExplosionGuard {
                cap: self.max_events,
                time: self.state.time,
            });
        }

        let mut idx = self.tree.find(self.stream.uniform() * total);
        // Floating-point dust at a channel boundary can land on an empty
        // channel; deterministically walk to the next live one.
        while self.rate_cache[idx] <= 0.0 {
            idx = (idx + 1) % self.rate_cache.len();
        }
        let site = idx / 3 / self.params.types;
        let ty = idx / 3 % self.params.types;
        let kind = match idx % 3 {
            CH_MIGRATION => {
                let u = self.stream.uniform();
                let target = self
                    .geo
                    .offdiag_a(site)
                    .sample(u)
                    .expect("positive migration rate implies off-diagonal mass");
                let c = self.state.counts.get(site, ty);
                self.state.counts.set(site, ty, c - 1);
                let ct = self.state.counts.get(target, ty);
                self.state.counts.set(target, ty, ct + 1);
                self.refresh_site(site);
                self.refresh_site(target);
                EventKind::Migration {
                    from: site,
                    to: target,
                }
            }
            CH_BIRTH => {
                let c = self.state.counts.get(site, ty);
                self.state.counts.set(site, ty, c + 1);
                self.refresh_site(site);
                EventKind::Birth { site }
            }
            CH_DEATH => {
                let c = self.state.counts.get(site, ty);
                debug_assert!(c > 0, "death event on empty channel");
                self.state.counts.set(site, ty, c - 1);
                self.refresh_site(site);
                EventKind::Death { site }
            }
            _ => unreachable!(),
        };

        self.state.time = t_next;
        self.events += 1;
        if self.events % RECHECK_INTERVAL == 0 {
            self.drift_guard()?;
        }
        Ok(Some(EventRecord {
            time: t_next,
            ty,
            kind,
        }))
    }

    /// Exact trajectory with snapshots recording the state holding at each
    /// observation time.
    pub fn run(
        &mut self,
        horizon: f64,
        observation_times: &[f64],
    ) -> Result<Vec<ParticleSnapshot>, SimError> {
        for w in observation_times.windows(2) {
            assert!(w[0] <= w[1], "observation times must be sorted");
        }
        if let Some(&last) = observation_times.last() {
            assert!(
                last <= horizon && observation_times[0] >= 0.0,
                "observation times must lie in [0, horizon]"
            );
        }
        let mut snapshots = Vec::with_capacity(observation_times.len());
        for &obs in observation_times {
            while self.step(obs)?.is_some() {}
            snapshots.push(ParticleSnapshot {
                time: obs,
                counts: self.state.counts.clone(),
            });
        }
        while self.step(horizon)?.is_some() {}
        Ok(snapshots)
    }

    /// Approximate tau-leaping integrator for small-eps profiling runs.
    ///
    /// Draws Poisson event counts per channel over fixed leaps and applies
    /// them with saturation at zero. Kept behind an explicit call: acceptance
    /// checks use only the exact engine.
    pub fn run_tau_leap(&mut self, tau: f64, horizon: f64) -> Result<(), SimError> {
        assert!(tau > 0.0);
        while self.state.time < horizon {
            let step = tau.min(horizon - self.state.time);
            for site in 0..self.geo.n_sites() {
                for ty in 0..self.params.types {
                    let births = self
                        .stream
                        .poisson(self.channel_rate(site, ty, CH_BIRTH) * step);
                    let deaths = self
                        .stream
                        .poisson(self.channel_rate(site, ty, CH_DEATH) * step);
                    let moves = self
                        .stream
                        .poisson(self.channel_rate(site, ty, CH_MIGRATION) * step);
                    let c = self.state.counts.get(site, ty);
                    let after_birth = c + births;
                    let removed = (deaths + moves).min(after_birth);
                    self.state.counts.set(site, ty, after_birth - removed);
                    // Departures that happened move to sampled targets.
                    let actually_moved = moves.min(removed);
                    for _ in 0..actually_moved {
                        if let Some(t) = self.geo.offdiag_a(site).sample(self.stream.uniform())
                        {
                            if t != site {
                                let ct = self.state.counts.get(t, ty);
                                self.state.counts.set(t, ty, ct + 1);
                            }
                        }
                    }
                }
            }
            self.state.time += step;
            self.events += 1;
            if self.state.counts.total() > self.max_events {
                return Err(SimError::ExplosionGuard {
                    cap: self.max_events,
                    time: self.state.time,
                });
            }
        }
        self.rebuild_rates();
        Ok(())
    }
}

//! Full-truncation Euler–Maruyama integration of the interacting branching
//! diffusion system.
//!
//! The system integrated here is, per site `xi` and type `m`,
//!
//! ```text
//! dx^m_xi = [ sum_eta a_bar(xi, eta) (x^m_eta - x^m_xi)
//!             + gamma^m x^m_xi Gamma^m(x_xi) ] dt
//!           + sqrt(gamma^m x^m_xi) dW^m_xi
//! ```
//!
//! with independent Brownian motions per component. The scheme clamps every
//! component at zero after each step and evaluates the square root at the
//! clamped value (full truncation), which preserves nonnegativity and the
//! monotone-coupling property used by the comparison checks. Brownian
//! increments come from a counter-based generator keyed by
//! `(seed, replicate, step, site, type)`, so coupled integrations can share
//! noise without storing it.

use crate::error::{ConfigError, SimError};
use crate::field::Field;
use crate::geometry::Geography;
use crate::model::ModelParams;
use crate::rng::{GridNoise, StreamTag};
use crate::stats::Summary;
use serde::Serialize;

/// Default grid step at O(1) rates.
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct DiffusionState {
    pub x: Field<f64>,
    pub time: f64,
}

impl DiffusionState {
    pub fn new(x: Field<f64>) -> Self {
        Self { x, time: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct DiffusionSnapshot {
    pub time: f64,
    pub x: Field<f64>,
}

/// Deterministic drift field of the system.
///
/// In the exchangeable case the interaction reads the per-site totals only,
/// which are computed once per site.
pub fn drift(geo: &Geography, params: &ModelParams, x: &Field<f64>, out: &mut Field<f64>) {
    let types = params.types;
    let exch = params.exchangeable_rates();
    for site in 0..geo.n_sites() {
        let row = x.site_row(site);
        let site_total: f64 = row.iter().sum();
        for m in 0..types {
            let mut inflow = 0.0;
            geo.kernel_a_bar().for_each_in_row(site, |eta, w| {
                inflow += w * x.get(eta, m);
            });
            let migration = inflow - x.get(site, m);
            let growth = match exch {
                Some((gamma, k, lambda)) => gamma * row[m] * (k - lambda * site_total),
                None => params.gamma[m] * row[m] * params.interaction(m, row),
            };
            out.set(site, m, migration + growth);
        }
    }
}

/// One full-truncation Euler–Maruyama step:
/// `x' = max(0, x + (drift + immigration) dt + sqrt(gamma x) g sqrt(dt))`.
/// Returns the number of clamped components.
pub fn em_step(
    state: &mut DiffusionState,
    geo: &Geography,
    params: &ModelParams,
    dt: f64,
    gaussians: &Field<f64>,
    immigration: Option<&Field<f64>>,
    scratch: &mut Field<f64>,
) -> u64 {
    debug_assert!(dt > 0.0);
    drift(geo, params, &state.x, scratch);
    let sqrt_dt = dt.sqrt();
    let mut clamped = 0;
    for site in 0..geo.n_sites() {
        for m in 0..params.types {
            let x = state.x.get(site, m);
            let mut d = scratch.get(site, m);
            if let Some(y) = immigration {
                d += y.get(site, m);
            }
            let diff = (params.gamma[m] * x.max(0.0)).sqrt();
            let mut next = x + d * dt + diff * gaussians.get(site, m) * sqrt_dt;
            if next < 0.0 {
                next = 0.0;
                clamped += 1;
            }
            state.x.set(site, m, next);
        }
    }
    state.time += dt;
    clamped
}

/// Time-dependent immigration fields for coupled integrations.
#[derive(Debug, Clone)]
pub enum Immigration {
    None,
    Constant(Field<f64>),
    /// Right-continuous piecewise-constant: `values[i]` holds on
    /// `[times[i], times[i+1])`.
    Piecewise {
        times: Vec<f64>,
        values: Vec<Field<f64>>,
    },
}

impl Immigration {
    fn at(&self, t: f64) -> Option<&Field<f64>> {
        match self {
            Immigration::None => None,
            Immigration::Constant(f) => Some(f),
            Immigration::Piecewise { times, values } => {
                let idx = times.partition_point(|&s| s <= t + 1e-15);
                Some(&values[idx.saturating_sub(1)])
            }
        }
    }
}

/// Single-replicate integrator owning its state and noise stream.
pub struct DiffusionEngine<'a> {
    geo: &'a Geography,
    params: &'a ModelParams,
    pub state: DiffusionState,
    noise: GridNoise,
    dt: f64,
    step_index: u64,
    replicate: u64,
    pub clamp_count: u64,
    scratch: Field<f64>,
    gauss: Field<f64>,
}

impl<'a> DiffusionEngine<'a> {
    pub fn new(
        geo: &'a Geography,
        params: &'a ModelParams,
        x0: Field<f64>,
        dt: f64,
        seed: u64,
        replicate: u64,
    ) -> Self {
        let (sites, types) = (geo.n_sites(), params.types);
        Self {
            geo,
            params,
            state: DiffusionState::new(x0),
            noise: GridNoise::new(seed, replicate, StreamTag::DiffusionNoise),
            dt,
            step_index: 0,
            replicate,
            clamp_count: 0,
            scratch: Field::zeros(sites, types),
            gauss: Field::zeros(sites, types),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn fill_gaussians(&mut self) {
        let types = self.params.types;
        for site in 0..self.geo.n_sites() {
            for m in 0..types {
                let cell = (site * types + m) as u64;
                self.gauss
                    .set(site, m, self.noise.gaussian(self.step_index, cell));
            }
        }
    }

    /// Advance one grid step (the last step before `horizon` is shortened
    /// to land on it exactly).
    pub fn step(&mut self, horizon: f64) -> Result<bool, SimError> {
        if self.state.time >= horizon - 1e-15 {
            return Ok(false);
        }
        let dt = self.dt.min(horizon - self.state.time);
        self.fill_gaussians();
        self.clamp_count += em_step(
            &mut self.state,
            self.geo,
            self.params,
            dt,
            &self.gauss,
            None,
            &mut self.scratch,
        );
        self.step_index += 1;
        if self.state.x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite {
                replicate: self.replicate,
                time: self.state.time,
            });
        }
        Ok(true)
    }

    /// Integrate to `horizon`, recording the state at each observation time.
    pub fn run(
        &mut self,
        horizon: f64,
        observation_times: &[f64],
    ) -> Result<Vec<DiffusionSnapshot>, SimError> {
        let mut snapshots = Vec::with_capacity(observation_times.len());
        for &obs in observation_times {
            assert!(obs <= horizon + 1e-12, "observation beyond horizon");
            while self.state.time < obs - 1e-15 {
                self.step(obs)?;
            }
            snapshots.push(DiffusionSnapshot {
                time: obs,
                x: self.state.x.clone(),
            });
        }
        while self.step(horizon)? {}
        Ok(snapshots)
    }
}

/// Integrate several initial states against the *same* Gaussian draws, with
/// optional per-state immigration fields. Used by the ordering and
/// theta-monotonicity checks, where the paper's comparison argument requires
/// a shared Brownian family.
pub fn run_coupled(
    geo: &Geography,
    params: &ModelParams,
    initial_states: &[Field<f64>],
    immigration: &[Immigration],
    dt: f64,
    horizon: f64,
    observation_times: &[f64],
    seed: u64,
    replicate: u64,
) -> Result<Vec<Vec<DiffusionSnapshot>>, SimError> {
    assert_eq!(initial_states.len(), immigration.len());
    for s in initial_states {
        assert_eq!(
            (s.sites(), s.types()),
            (geo.n_sites(), params.types),
            "coupled states must share the geography and type count"
        );
    }
    let types = params.types;
    let noise = GridNoise::new(seed, replicate, StreamTag::DiffusionNoise);
    let mut states: Vec<DiffusionState> = initial_states
        .iter()
        .map(|x| DiffusionState::new(x.clone()))
        .collect();
    let mut out: Vec<Vec<DiffusionSnapshot>> = vec![Vec::new(); states.len()];
    let mut scratch = Field::zeros(geo.n_sites(), types);
    let mut gauss = Field::zeros(geo.n_sites(), types);

    let mut time = 0.0;
    let mut step_index = 0u64;
    let mut obs_iter = observation_times.iter().peekable();
    loop {
        while let Some(&&obs) = obs_iter.peek() {
            if time >= obs - 1e-15 {
                for (k, st) in states.iter().enumerate() {
                    out[k].push(DiffusionSnapshot {
                        time: obs,
                        x: st.x.clone(),
                    });
                }
                obs_iter.next();
            } else {
                break;
            }
        }
        if time >= horizon - 1e-15 {
            break;
        }
        let step_dt = dt.min(horizon - time);
        for site in 0..geo.n_sites() {
            for m in 0..types {
                let cell = (site * types + m) as u64;
                gauss.set(site, m, noise.gaussian(step_index, cell));
            }
        }
        for (k, st) in states.iter_mut().enumerate() {
            em_step(
                st,
                geo,
                params,
                step_dt,
                &gauss,
                immigration[k].at(time),
                &mut scratch,
            );
            if st.x.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFinite { replicate, time });
            }
        }
        time += step_dt;
        step_index += 1;
    }
    Ok(out)
}

/// Per-time moment and norm estimates over a set of replicate trajectories.
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub times: Vec<f64>,
    /// `moments[i][j]` = site-averaged E[(xbar_xi)^n] at times[i] for
    /// n = n_list[j].
    pub n_list: Vec<u32>,
    pub moments: Vec<Vec<Summary>>,
    /// `norms[i][j]` = E of the rho-weighted p-norm at times[i], p_list[j].
    pub p_list: Vec<f64>,
    pub norms: Vec<Vec<Summary>>,
    /// Per-replicate sup over the window of the max site total, summarized.
    pub sup_window: Summary,
    /// Logistic drift-domination bound (exchangeable with lambda > 0):
    /// site-averaged E[xbar] stays below the closed-form ODE bound.
    pub logistic_bound: Option<LogisticBound>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LogisticBound {
    pub theta: f64,
    pub c: f64,
    pub fixed_point: f64,
    pub holds: bool,
}

pub fn moment_report(
    trajectories: &[Vec<DiffusionSnapshot>],
    geo: &Geography,
    params: &ModelParams,
    n_list: &[u32],
    p_list: &[f64],
) -> Result<MomentReport, ConfigError> {
    if trajectories.len() < 2 {
        return Err(ConfigError::single(
            "moment report needs at least two replicates",
        ));
    }
    let n_times = trajectories[0].len();
    let times: Vec<f64> = trajectories[0].iter().map(|s| s.time).collect();
    let sites = geo.n_sites();

    let mut moments = Vec::with_capacity(n_times);
    let mut norms = Vec::with_capacity(n_times);
    for t_idx in 0..n_times {
        let mut per_n = Vec::with_capacity(n_list.len());
        for &n in n_list {
            let vals: Vec<f64> = trajectories
                .iter()
                .map(|tr| {
                    (0..sites)
                        .map(|s| tr[t_idx].x.site_total(s).powi(n as i32))
                        .sum::<f64>()
                        / sites as f64
                })
                .collect();
            per_n.push(Summary::from_slice(&vals));
        }
        moments.push(per_n);
        let mut per_p = Vec::with_capacity(p_list.len());
        for &p in p_list {
            let vals: Vec<f64> = trajectories
                .iter()
                .map(|tr| geo.rho_norm(&tr[t_idx].x, p))
                .collect();
            per_p.push(Summary::from_slice(&vals));
        }
        norms.push(per_p);
    }

    let sups: Vec<f64> = trajectories
        .iter()
        .map(|tr| {
            tr.iter()
                .map(|snap| {
                    (0..sites)
                        .map(|s| snap.x.site_total(s))
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let sup_window = Summary::from_slice(&sups);

    // Drift domination gives d/dt E[xbar] < gamma (theta - c E[xbar]) for any
    // theta > (K + c)^2 / (4 lambda); c = K minimizes the fixed point theta/c.
    let logistic_bound = params.exchangeable_rates().and_then(|(gamma, k, lambda)| {
        if lambda <= 0.0 || k <= 0.0 {
            return None;
        }
        let c = k;
        let theta = (k + c).powi(2) / (4.0 * lambda) * (1.0 + 1e-9);
        let x0: f64 = (0..sites)
            .map(|s| trajectories[0][0].x.site_total(s))
            .fold(0.0, f64::max);
        let holds = (0..n_times).all(|t_idx| {
            let bound = theta / c + (x0 - theta / c) * (-gamma * c * times[t_idx]).exp();
            let idx_n1 = n_list.iter().position(|&n| n == 1);
            match idx_n1 {
                Some(j) => {
                    let s = &moments[t_idx][j];
                    s.mean <= bound.max(x0) + 3.0 * s.se
                }
                None => true,
            }
        });
        Some(LogisticBound {
            theta,
            c,
            fixed_point: theta / c,
            holds,
        })
    });

    Ok(MomentReport {
        times,
        n_list: n_list.to_vec(),
        moments,
        p_list: p_list.to_vec(),
        norms,
        sup_window,
        logistic_bound,
    })
}

//! Temporary duality bias probes (deleted before release).

use latbranch::diffusion::DiffusionEngine;
use latbranch::dual::{simulate_dual, total_dual_mass};
use latbranch::field::Field;
use latbranch::generator::TestFunction;
use latbranch::geometry::{nearest_neighbor_1d, Geography, RhoSpec};
use latbranch::model::ModelParams;
use latbranch::runner::run_replicates_fallible;
use latbranch::stats::Summary;
use std::time::Instant;

fn reference() -> (Geography, ModelParams, Field<f64>, Vec<f64>, Field<u32>) {
    let geo = Geography::torus(1, 3, &nearest_neighbor_1d(), &RhoSpec::default()).unwrap();
    let params = ModelParams::exchangeable(2, 1.0, 1.0, 0.5);
    let x0 = Field::constant(3, 2, 1.0);
    let alpha0 = vec![0.0; 3];
    let mut kappa0 = Field::<u32>::zeros(3, 2);
    kappa0.set(0, 0, 1);
    kappa0.set(0, 1, 1);
    (geo, params, x0, alpha0, kappa0)
}

fn rhs_at(
    geo: &Geography,
    params: &ModelParams,
    x0: &Field<f64>,
    alpha0: &[f64],
    kappa0: &Field<u32>,
    dt: f64,
    reps: u64,
    seed: u64,
) -> Summary {
    let vals: Vec<f64> = run_replicates_fallible(reps, 0, |rep| {
        simulate_dual(alpha0, kappa0, geo, params, dt, 0.5, &[], seed, rep).map(|traj| {
            let h = TestFunction::from_dual(&traj.final_state.alpha, &traj.final_state.kappa);
            h.eval(x0) * traj.final_state.fk_integral.min(50.0).exp()
        })
    })
    .unwrap();
    Summary::from_slice(&vals)
}

fn lhs_at(
    geo: &Geography,
    params: &ModelParams,
    x0: &Field<f64>,
    alpha0: &[f64],
    kappa0: &Field<u32>,
    dt: f64,
    reps: u64,
    seed: u64,
) -> Summary {
    let h = TestFunction::from_dual(alpha0, kappa0);
    let vals: Vec<f64> = run_replicates_fallible(reps, 0, |rep| {
        let mut eng = DiffusionEngine::new(geo, params, x0.clone(), dt, seed, rep);
        eng.run(0.5, &[]).map(|_| h.eval(&eng.state.x))
    })
    .unwrap();
    Summary::from_slice(&vals)
}

#[test]
#[ignore]
fn probe_dt_dependence() {
    let (geo, params, x0, alpha0, kappa0) = reference();
    for dt in [1e-3, 5e-4, 2.5e-4, 1e-4] {
        let t0 = Instant::now();
        let rhs = rhs_at(&geo, &params, &x0, &alpha0, &kappa0, dt, 30_000, 3);
        println!(
            "rhs dt={dt}: {:.5} ± {:.5} [{:.1?}]",
            rhs.mean,
            rhs.se,
            t0.elapsed()
        );
    }
    for dt in [1e-3, 2.5e-4] {
        let t0 = Instant::now();
        let lhs = lhs_at(&geo, &params, &x0, &alpha0, &kappa0, dt, 30_000, 5);
        println!(
            "lhs dt={dt}: {:.5} ± {:.5} [{:.1?}]",
            lhs.mean,
            lhs.se,
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_lambda_zero_exact() {
    // lambda = 0: LHS should equal e (independent linear types), RHS is
    // deterministic e^(2 gamma K t) * 1 = e exactly.
    let geo = Geography::torus(1, 3, &nearest_neighbor_1d(), &RhoSpec::default()).unwrap();
    let params = ModelParams::exchangeable(2, 1.0, 1.0, 0.0);
    let x0 = Field::constant(3, 2, 1.0);
    let alpha0 = vec![0.0; 3];
    let mut kappa0 = Field::<u32>::zeros(3, 2);
    kappa0.set(0, 0, 1);
    kappa0.set(0, 1, 1);
    let rhs = rhs_at(&geo, &params, &x0, &alpha0, &kappa0, 1e-3, 2000, 3);
    let lhs = lhs_at(&geo, &params, &x0, &alpha0, &kappa0, 1e-3, 100_000, 5);
    println!(
        "lambda=0: lhs {:.5} ± {:.5} (expect e = {:.5}), rhs {:.5} ± {:.5}",
        lhs.mean,
        lhs.se,
        std::f64::consts::E,
        rhs.mean,
        rhs.se
    );
}

#[test]
#[ignore]
fn probe_single_particle_dual() {
    // kappa0 = one type-1 particle: LHS = E[x^1_0(t)], RHS via dual.
    let (geo, params, x0, alpha0, _) = reference();
    let mut kappa0 = Field::<u32>::zeros(3, 2);
    kappa0.set(0, 0, 1);
    for dt in [1e-3, 2.5e-4] {
        let rhs = rhs_at(&geo, &params, &x0, &alpha0, &kappa0, dt, 30_000, 3);
        println!("single-particle rhs dt={dt}: {:.5} ± {:.5}", rhs.mean, rhs.se);
    }
    let lhs = lhs_at(&geo, &params, &x0, &alpha0, &kappa0, 1e-3, 30_000, 5);
    println!("single-particle lhs: {:.5} ± {:.5}", lhs.mean, lhs.se);
}

#[test]
#[ignore]
fn probe_alpha_mean_growth() {
    // Sanity on the alpha integrator alone: with K=1, lambda=0.5 and a
    // frozen kbar=1 at site 0, compare E[sum alpha] across dt.
    let (geo, params, _, alpha0, _) = reference();
    let mut kappa0 = Field::<u32>::zeros(3, 2);
    kappa0.set(0, 0, 1);
    for dt in [1e-3, 2.5e-4, 1e-4] {
        let vals: Vec<f64> = run_replicates_fallible(20_000, 0, |rep| {
            simulate_dual(&alpha0, &kappa0, &geo, &params, dt, 0.5, &[], 17, rep)
                .map(|traj| total_dual_mass(&traj.final_state.alpha))
        })
        .unwrap();
        let s = Summary::from_slice(&vals);
        println!("alpha mass dt={dt}: {:.5} ± {:.5}", s.mean, s.se);
    }
}

#[test]
#[ignore]
fn probe_rhs_fine_dt() {
    let (geo, params, x0, alpha0, _) = reference();
    let mut kappa0 = Field::<u32>::zeros(3, 2);
    kappa0.set(0, 0, 1);
    for dt in [1e-4, 5e-5, 2e-5] {
        let t0 = Instant::now();
        let rhs = rhs_at(&geo, &params, &x0, &alpha0, &kappa0, dt, 30_000, 3);
        println!(
            "single-particle rhs dt={dt}: {:.5} ± {:.5} [{:.1?}]",
            rhs.mean,
            rhs.se,
            t0.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_particle_oracle_lhs() {
    use latbranch::particle::{init_particles, ParticleEngine};
    // Exact small-mass particle runs arbitrate the forward side.
    let (geo, params, x0, ..) = reference();
    for eps in [0.0625, 0.015625] {
        let t0 = Instant::now();
        let vals: Vec<f64> = run_replicates_fallible(40_000, 0, |rep| {
            let state = init_particles(&geo, &params, &x0, eps)?;
            let mut eng = ParticleEngine::new(&geo, &params, state, 31, rep);
            eng.run(0.5, &[0.5])?;
            Ok::<f64, latbranch::error::SimError>(
                eng.state().counts.get(0, 0) as f64 * eps,
            )
        })
        .unwrap();
        let s = Summary::from_slice(&vals);
        println!(
            "particle E[x^1_0(0.5)] eps={eps}: {:.5} ± {:.5} [{:.1?}]",
            s.mean,
            s.se,
            t0.elapsed()
        );
        let prods: Vec<f64> = run_replicates_fallible(40_000, 0, |rep| {
            let state = init_particles(&geo, &params, &x0, eps)?;
            let mut eng = ParticleEngine::new(&geo, &params, state, 33, rep);
            eng.run(0.5, &[0.5])?;
            Ok::<f64, latbranch::error::SimError>(
                eng.state().counts.get(0, 0) as f64 * eps
                    * eng.state().counts.get(0, 1) as f64
                    * eps,
            )
        })
        .unwrap();
        let p = Summary::from_slice(&prods);
        println!(
            "particle E[x^1_0 x^2_0] eps={eps}: {:.5} ± {:.5}",
            p.mean, p.se
        );
    }
}

#[test]
#[ignore]
fn probe_lhs_dt_refinement() {
    let (geo, params, x0, alpha0, _) = reference();
    let mut kappa0 = Field::<u32>::zeros(3, 2);
    kappa0.set(0, 0, 1);
    for dt in [1e-3, 2.5e-4, 1e-4] {
        let lhs = lhs_at(&geo, &params, &x0, &alpha0, &kappa0, dt, 40_000, 5);
        println!("single-particle lhs dt={dt}: {:.5} ± {:.5}", lhs.mean, lhs.se);
    }
}

#[test]
#[ignore]
fn probe_dual_self_martingale() {
    // g(alpha, kappa) = H((alpha, kappa), x_fixed). If the dual simulation
    // matches its generator, E[g(T) - g(0) - int Omega_dual g ds] = 0.
    use latbranch::generator::{omega_dual, DualityPoint};
    let (geo, params, x0, alpha0, _) = reference();
    let mut kappa0 = Field::<u32>::zeros(3, 2);
    kappa0.set(0, 0, 1);
    let t_end = 0.5;
    let obs: Vec<f64> = (0..=250).map(|k| k as f64 * 0.002).collect();
    for dt in [1e-3, 2.5e-4] {
        let vals: Vec<f64> = run_replicates_fallible(30_000, 0, |rep| {
            let traj = simulate_dual(
                &alpha0, &kappa0, &geo, &params, dt, t_end, &obs, 41, rep,
            )?;
            let omegas: Vec<f64> = traj
                .snapshots
                .iter()
                .map(|s| {
                    omega_dual(
                        &DualityPoint {
                            alpha: s.alpha.clone(),
                            kappa: s.kappa.clone(),
                            x: x0.clone(),
                        },
                        &geo,
                        &params,
                    )
                    .unwrap()
                })
                .collect();
            let mut integral = 0.0;
            for (w, o) in traj.snapshots.windows(2).zip(omegas.windows(2)) {
                integral += 0.5 * (o[0] + o[1]) * (w[1].time - w[0].time);
            }
            let g_t = {
                let last = traj.snapshots.last().unwrap();
                let h = TestFunction::from_dual(&last.alpha, &last.kappa);
                h.eval(&x0)
            };
            let g_0 = {
                let first = &traj.snapshots[0];
                let h = TestFunction::from_dual(&first.alpha, &first.kappa);
                h.eval(&x0)
            };
            Ok::<f64, latbranch::error::SimError>(g_t - g_0 - integral)
        })
        .unwrap();
        let s = Summary::from_slice(&vals);
        println!(
            "dual self-martingale dt={dt}: residual {:+.5} ± {:.5} (z {:+.2})",
            s.mean,
            s.se,
            s.mean / s.se
        );
    }
}

#[test]
#[ignore]
fn probe_alpha_only_martingale() {
    // kappa = 0: pure alpha SDE against its generator terms.
    use latbranch::generator::{omega_dual, DualityPoint};
    let (geo, params, ..) = reference();
    let x_fixed = Field::from_vec(vec![1.3, 0.2, 0.8, 0.4, 1.0, 0.6], 3, 2);
    let alpha0 = vec![0.8, 0.3, 0.5];
    let kappa0 = Field::<u32>::zeros(3, 2);
    let t_end = 0.5;
    let obs: Vec<f64> = (0..=250).map(|k| k as f64 * 0.002).collect();
    for dt in [1e-3, 2.5e-4] {
        let vals: Vec<f64> = run_replicates_fallible(30_000, 0, |rep| {
            let traj = simulate_dual(
                &alpha0, &kappa0, &geo, &params, dt, t_end, &obs, 43, rep,
            )?;
            let omegas: Vec<f64> = traj
                .snapshots
                .iter()
                .map(|s| {
                    omega_dual(
                        &DualityPoint {
                            alpha: s.alpha.clone(),
                            kappa: s.kappa.clone(),
                            x: x_fixed.clone(),
                        },
                        &geo,
                        &params,
                    )
                    .unwrap()
                })
                .collect();
            let mut integral = 0.0;
            for (w, o) in traj.snapshots.windows(2).zip(omegas.windows(2)) {
                integral += 0.5 * (o[0] + o[1]) * (w[1].time - w[0].time);
            }
            let g = |s: &latbranch::dual::DualSnapshot| {
                TestFunction::from_dual(&s.alpha, &s.kappa).eval(&x_fixed)
            };
            Ok::<f64, latbranch::error::SimError>(
                g(traj.snapshots.last().unwrap()) - g(&traj.snapshots[0]) - integral,
            )
        })
        .unwrap();
        let s = Summary::from_slice(&vals);
        println!(
            "alpha-only martingale dt={dt}: residual {:+.5} ± {:.5} (z {:+.2})",
            s.mean,
            s.se,
            s.mean / s.se
        );
    }
}

#[test]
#[ignore]
fn probe_kappa_walk_marginal() {
    // Single particle position at time t against the matrix exponential of
    // the rate-1 walk with kernel a_bar.
    use latbranch::rng::{CounterStream, StreamTag};
    let geo = Geography::torus(1, 3, &[(vec![1], 0.7), (vec![-1], 0.3)], &RhoSpec::default())
        .unwrap();
    let mut kappa0 = Field::<u32>::zeros(3, 1);
    kappa0.set(0, 0, 1);
    let t_end = 0.7;
    let reps = 200_000u64;
    let mut counts = [0u64; 3];
    for rep in 0..reps {
        let mut stream = CounterStream::new(91, rep, StreamTag::KappaEvents);
        let path = latbranch::dual::simulate_kappa(&kappa0, &geo, 1.0, t_end, &mut stream);
        let last = path.final_state();
        for s in 0..3 {
            if last.get(s, 0) == 1 {
                counts[s] += 1;
            }
        }
    }
    // Oracle: transition probabilities of the continuous-time walk with
    // jump kernel a_bar: P_t = exp(t (a_bar - I)).
    let mut q = nalgebra::DMatrix::<f64>::zeros(3, 3);
    for i in 0..3 {
        for j in 0..3 {
            q[(i, j)] = geo.a_bar(i, j) - if i == j { 1.0 } else { 0.0 };
        }
    }
    let p_t = (q * t_end).exp();
    for s in 0..3 {
        let emp = counts[s] as f64 / reps as f64;
        let se = (emp * (1.0 - emp) / reps as f64).sqrt();
        println!(
            "kappa walk site {s}: empirical {:.5} ± {:.5}, oracle {:.5}, z {:+.2}",
            emp,
            se,
            p_t[(0, s)],
            (emp - p_t[(0, s)]) / se
        );
    }
}

#[test]
#[ignore]
fn probe_single_site_pde_oracle() {
    // Single site, M=2, gamma=1, K=1, lambda=0.5, x0=(1,1), alpha0=0,
    // kappa0 = one type-0 particle, T=0.5.
    //
    // Dual side by Feynman-Kac PDE: u_t = b(a) u' + (gamma lambda a) u''
    //   + (K - a) u,  b(a) = gamma a (K - a/2) + gamma lambda,
    //   u(0, a) = exp(-2a); answer = u(T, 0).
    // Forward side by exact particle simulation at small eps.
    let (gamma, k_cap, lambda) = (1.0f64, 1.0f64, 0.5f64);
    let t_end = 0.5;
    let a_max = 12.0;
    let n = 3000usize;
    let h = a_max / n as f64;
    let dt = 0.4 * h * h / (2.0 * gamma * lambda * a_max);
    let steps = (t_end / dt).ceil() as usize;
    let dt = t_end / steps as f64;
    let mut u: Vec<f64> = (0..=n).map(|i| (-2.0 * i as f64 * h).exp()).collect();
    let mut next = u.clone();
    for _ in 0..steps {
        for i in 0..=n {
            let a = i as f64 * h;
            let b = gamma * a * (k_cap - 0.5 * a) + gamma * lambda * 1.0;
            let diff = gamma * lambda * a;
            let du = if i == 0 {
                // degenerate boundary: one-sided first derivative, no diffusion
                b * (u[1] - u[0]) / h
            } else if i == n {
                0.0
            } else {
                let upwind = if b >= 0.0 {
                    b * (u[i + 1] - u[i]) / h
                } else {
                    b * (u[i] - u[i - 1]) / h
                };
                upwind + diff * (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h)
            };
            next[i] = u[i] + dt * (du + (k_cap - a) * u[i]);
        }
        std::mem::swap(&mut u, &mut next);
    }
    println!("PDE dual side u(T, 0) = {:.6}", u[0]);

    // Forward side: exact particle runs, E[mass of type 0], single site.
    use latbranch::particle::{init_particles, ParticleEngine};
    let geo = Geography::torus(1, 1, &[(vec![0], 1.0)], &RhoSpec::default()).unwrap();
    let params = ModelParams::exchangeable(2, gamma, k_cap, lambda);
    let x0 = Field::constant(1, 2, 1.0);
    for eps in [0.03125, 0.0078125] {
        let vals: Vec<f64> = run_replicates_fallible(60_000, 0, |rep| {
            let state = init_particles(&geo, &params, &x0, eps)?;
            let mut eng = ParticleEngine::new(&geo, &params, state, 51, rep);
            eng.run(t_end, &[t_end])?;
            Ok::<f64, latbranch::error::SimError>(eng.state().counts.get(0, 0) as f64 * eps)
        })
        .unwrap();
        let s = Summary::from_slice(&vals);
        println!("particle forward eps={eps}: {:.5} ± {:.5}", s.mean, s.se);
    }

    // Dual side by the production integrator at several dt.
    let mut kappa0 = Field::<u32>::zeros(1, 2);
    kappa0.set(0, 0, 1);
    for dtm in [1e-3, 1e-4] {
        let rhs = rhs_at(&geo, &params, &x0, &[0.0], &kappa0, dtm, 40_000, 3);
        println!("dual MC dt={dtm}: {:.5} ± {:.5}", rhs.mean, rhs.se);
    }
}

#[test]
#[ignore]
fn probe_single_site_forward_fine() {
    let geo = Geography::torus(1, 1, &[(vec![0], 1.0)], &RhoSpec::default()).unwrap();
    let params = ModelParams::exchangeable(2, 1.0, 1.0, 0.5);
    let x0 = Field::constant(1, 2, 1.0);
    for (dt, reps) in [(1e-3, 200_000u64), (1e-4, 200_000)] {
        let vals: Vec<f64> = run_replicates_fallible(reps, 0, |rep| {
            let mut eng = DiffusionEngine::new(&geo, &params, x0.clone(), dt, 77, rep);
            eng.run(0.5, &[])?;
            Ok::<f64, latbranch::error::SimError>(eng.state.x.get(0, 0))
        })
        .unwrap();
        let s = Summary::from_slice(&vals);
        println!("forward EM dt={dt}: {:.5} ± {:.5}", s.mean, s.se);
    }
    use latbranch::particle::{init_particles, ParticleEngine};
    for eps in [0.001953125] {
        let vals: Vec<f64> = run_replicates_fallible(30_000, 0, |rep| {
            let state = init_particles(&geo, &params, &x0, eps)?;
            let mut eng = ParticleEngine::new(&geo, &params, state, 51, rep);
            eng.run(0.5, &[0.5])?;
            Ok::<f64, latbranch::error::SimError>(eng.state().counts.get(0, 0) as f64 * eps)
        })
        .unwrap();
        let s = Summary::from_slice(&vals);
        println!("particle eps={eps}: {:.5} ± {:.5}", s.mean, s.se);
    }
}

#[test]
#[ignore]
fn probe_brute_force_dual() {
    // Completely independent dual implementation: Bernoulli kappa jumps on a
    // fixed fine grid, Euler alpha, rectangle fk. No shared machinery with
    // the production path except the kernels.
    use latbranch::rng::{CounterStream, StreamTag};
    let (geo, params, x0, ..) = reference();
    let (gamma, k_cap, lambda) = params.exchangeable_rates().unwrap();
    let t_end = 0.5;
    let h = 2e-5_f64;
    let steps = (t_end / h).round() as usize;
    let reps = 30_000u64;
    let vals: Vec<f64> = run_replicates_fallible(reps, 0, |rep| {
        let mut stream = CounterStream::new(1234, rep, StreamTag::KappaEvents);
        let mut noise = CounterStream::new(1234, rep, StreamTag::AlphaNoise);
        let mut pos = 0usize; // single type-0 particle
        let mut alpha = [0.0f64; 3];
        let mut fk = 0.0;
        for _ in 0..steps {
            // fk rectangle (pre-step state)
            fk += gamma * h * (k_cap - alpha[pos]);
            // kappa Bernoulli jump at rate 1 (NN kernel, off-diagonal mass 1)
            let mut new_pos = pos;
            if stream.uniform() < h {
                new_pos = if stream.uniform() < 0.5 {
                    (pos + 1) % 3
                } else {
                    (pos + 2) % 3
                };
            }
            // alpha Euler with full truncation
            let mut next = [0.0f64; 3];
            for xi in 0..3 {
                let inflow = 0.5 * (alpha[(xi + 1) % 3] + alpha[(xi + 2) % 3]);
                let imm = if xi == pos { gamma * lambda } else { 0.0 };
                let drift =
                    (inflow - alpha[xi]) + gamma * alpha[xi] * (k_cap - 0.5 * alpha[xi]) + imm;
                let coef = (2.0 * gamma * lambda * alpha[xi]).sqrt();
                next[xi] = (alpha[xi] + drift * h + coef * noise.normal() * h.sqrt()).max(0.0);
            }
            alpha = next;
            pos = new_pos;
        }
        let hval = (-(alpha[0] + alpha[1] + alpha[2]) * 2.0).exp();
        Ok::<f64, latbranch::error::SimError>(hval * fk.exp())
    })
    .unwrap();
    let s = Summary::from_slice(&vals);
    println!("brute-force dual rhs (h={h}): {:.5} ± {:.5}", s.mean, s.se);
    let _ = (x0, geo);
}

/// Andersen quadratic-exponential step for d a = b dt + sqrt(c a) dW over h
/// (zero-reversion CIR): matches the exact mean and variance, atom at zero.
fn qe_step(alpha: f64, b: f64, c: f64, h: f64, z: f64, u: f64) -> f64 {
    let m = alpha + b * h;
    if m <= 0.0 {
        return 0.0;
    }
    let s2 = c * h * (alpha + 0.5 * b * h);
    let psi = s2 / (m * m);
    if psi <= 1.5 {
        let inv = 2.0 / psi;
        let b2 = inv - 1.0 + (inv * (inv - 1.0)).sqrt();
        let a = m / (1.0 + b2);
        a * (b2.sqrt() + z) * (b2.sqrt() + z)
    } else {
        let p = (psi - 1.0) / (psi + 1.0);
        if u <= p {
            0.0
        } else {
            let beta = (1.0 - p) / m;
            ((1.0 - p) / (1.0 - u)).ln() / beta
        }
    }
}

#[test]
#[ignore]
fn probe_qe_dual() {
    // Brute-force dual with drift-split + QE stochastic part.
    use latbranch::rng::{CounterStream, StreamTag};
    let (geo, params, ..) = reference();
    let (gamma, k_cap, lambda) = params.exchangeable_rates().unwrap();
    let t_end = 0.5;
    for h in [1e-3_f64, 2.5e-4] {
        let steps = (t_end / h).round() as usize;
        let reps = 40_000u64;
        let vals: Vec<f64> = run_replicates_fallible(reps, 0, |rep| {
            let mut stream = CounterStream::new(4321, rep, StreamTag::KappaEvents);
            let mut noise = CounterStream::new(4321, rep, StreamTag::AlphaNoise);
            let mut pos = 0usize;
            let mut alpha = [0.0f64; 3];
            let mut fk = 0.0;
            let c = 2.0 * gamma * lambda;
            for _ in 0..steps {
                let fk_left: f64 = k_cap - alpha[pos];
                let mut new_pos = pos;
                if stream.uniform() < h {
                    new_pos = if stream.uniform() < 0.5 {
                        (pos + 1) % 3
                    } else {
                        (pos + 2) % 3
                    };
                }
                let mut next = [0.0f64; 3];
                for xi in 0..3 {
                    let inflow = 0.5 * (alpha[(xi + 1) % 3] + alpha[(xi + 2) % 3]);
                    let drift =
                        (inflow - alpha[xi]) + gamma * alpha[xi] * (k_cap - 0.5 * alpha[xi]);
                    let star = (alpha[xi] + drift * h).max(0.0);
                    let b = if xi == pos { gamma * lambda } else { 0.0 };
                    next[xi] = qe_step(star, b, c, h, noise.normal(), noise.uniform());
                }
                alpha = next;
                pos = new_pos;
                fk += gamma * h * 0.5 * (fk_left + (k_cap - alpha[pos]));
            }
            let hval = (-(alpha[0] + alpha[1] + alpha[2]) * 2.0).exp();
            Ok::<f64, latbranch::error::SimError>(hval * fk.exp())
        })
        .unwrap();
        let s = Summary::from_slice(&vals);
        println!("QE dual rhs h={h}: {:.5} ± {:.5}", s.mean, s.se);
    }
}

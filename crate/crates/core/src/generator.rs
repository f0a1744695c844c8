//! Closed-form generator algebra for the exponential duality function and
//! the separating family of exponential-monomial test functions.
//!
//! The central object is
//!
//! ```text
//! f_{mu,kappa}(x) = exp(-sum_xi mu_xi xbar_xi) * prod_{xi,m} (x^m_xi)^(kappa^m_xi)
//! ```
//!
//! with the convention `0^0 = 1`. With `mu = alpha` this is the duality
//! function `H((alpha, kappa), x)`. Its partial derivatives close under
//! shifting `kappa` down by unit vectors:
//!
//! ```text
//! d/dx^m_xi   f = -mu_xi f + kappa^m_xi f_{kappa - e(m,xi)}
//! d2/d(x^m_xi)2 f = mu_xi^2 f - 2 mu_xi kappa^m_xi f_{kappa - e(m,xi)}
//!                   + kappa^m_xi (kappa^m_xi - 1) f_{kappa - 2e(m,xi)}
//! ```
//!
//! which lets the diffusion generator, the dual generator, and the particle
//! generator be evaluated exactly as finite sums. The headline identity,
//! checked to near machine precision by `generator_identity_residual`, is
//!
//! ```text
//! Omega_X H = Omega_(alpha,kappa) H + beta(alpha, kappa) H
//! with beta = gamma sum_xi [ sum_m C(kappa^m_xi, 2)
//!                            - alpha_xi kbar_xi + K kbar_xi ].
//! ```

use crate::error::ConfigError;
use crate::field::Field;
use crate::geometry::Geography;
use crate::model::ModelParams;

/// A state triple at which the duality function and both generators are
/// evaluated.
#[derive(Debug, Clone)]
pub struct DualityPoint {
    pub alpha: Vec<f64>,
    pub kappa: Field<u32>,
    pub x: Field<f64>,
}

/// Exponential-monomial function `f_{mu,kappa}`.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub mu: Vec<f64>,
    pub kappa: Field<u32>,
    /// Nonzero powers `(site, type, kappa)`.
    support: Vec<(usize, usize, u32)>,
}

impl TestFunction {
    /// Build without the separating-family positivity constraint; this is
    /// the form the duality uses (`mu = alpha` may vanish on occupied sites).
    pub fn new(mu: Vec<f64>, kappa: Field<u32>) -> Result<Self, ConfigError> {
        if mu.len() != kappa.sites() {
            return Err(ConfigError::single(format!(
                "test function: {} site weights for {} sites",
                mu.len(),
                kappa.sites()
            )));
        }
        if mu.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ConfigError::single(
                "test function: site weights must be finite and >= 0",
            ));
        }
        let support = kappa
            .iter()
            .filter(|&(_, k)| k > 0)
            .map(|((s, m), k)| (s, m, k))
            .collect();
        Ok(Self { mu, kappa, support })
    }

    /// Member of the separating family: additionally requires `mu_xi > 0`
    /// wherever the site carries a power, so the function is bounded.
    pub fn separating(mu: Vec<f64>, kappa: Field<u32>) -> Result<Self, ConfigError> {
        let f = Self::new(mu, kappa)?;
        for &(s, _, _) in &f.support {
            if f.mu[s] <= 0.0 {
                return Err(ConfigError::single(format!(
                    "test function: mu must be positive at site {s} carrying a power"
                )));
            }
        }
        Ok(f)
    }

    /// Duality function for a dual state `(alpha, kappa)`.
    pub fn from_dual(alpha: &[f64], kappa: &Field<u32>) -> Self {
        Self::new(alpha.to_vec(), kappa.clone()).expect("dual states have matching shapes")
    }

    pub fn eval(&self, x: &Field<f64>) -> f64 {
        self.eval_general(|s, m| x.get(s, m), &[])
    }

    /// Evaluate with the powers shifted by `kappa_adj` (deltas per
    /// coordinate) and coordinates read through `get`.
    fn eval_general(
        &self,
        get: impl Fn(usize, usize) -> f64,
        kappa_adj: &[(usize, usize, i32)],
    ) -> f64 {
        let mut expo = 0.0;
        for (s, &mu) in self.mu.iter().enumerate() {
            if mu != 0.0 {
                let bar: f64 = (0..self.kappa.types()).map(|m| get(s, m)).sum();
                expo += mu * bar;
            }
        }
        let mut prod = 1.0;
        for &(s, m, k) in &self.support {
            let delta: i32 = kappa_adj
                .iter()
                .filter(|&&(sa, ma, _)| sa == s && ma == m)
                .map(|&(_, _, d)| d)
                .sum();
            let k_eff = k as i32 + delta;
            debug_assert!(k_eff >= 0, "negative power requested");
            if k_eff > 0 {
                prod *= get(s, m).powi(k_eff);
            }
        }
        // Adjustments adding powers at coordinates outside the support.
        for &(s, m, d) in kappa_adj {
            if d > 0 && self.kappa.get(s, m) == 0 {
                prod *= get(s, m).powi(d);
            }
        }
        (-expo).exp() * prod
    }

    /// Evaluate with selected coordinates overridden.
    fn eval_shifted(&self, x: &Field<f64>, shifts: &[(usize, usize, f64)]) -> f64 {
        self.eval_general(
            |s, m| {
                shifts
                    .iter()
                    .find(|&&(ss, mm, _)| ss == s && mm == m)
                    .map(|&(_, _, v)| v)
                    .unwrap_or_else(|| x.get(s, m))
            },
            &[],
        )
    }

    fn eval_kappa_adjusted(&self, x: &Field<f64>, adj: &[(usize, usize, i32)]) -> f64 {
        self.eval_general(|s, m| x.get(s, m), adj)
    }
}

/// Duality function `H((alpha, kappa), x)`.
pub fn h_function(point: &DualityPoint) -> f64 {
    TestFunction::from_dual(&point.alpha, &point.kappa).eval(&point.x)
}

/// The weight `beta(alpha, kappa)` of the Feynman–Kac correction
/// (exchangeable model only).
pub fn beta_weight(
    alpha: &[f64],
    kappa: &Field<u32>,
    params: &ModelParams,
) -> Result<f64, ConfigError> {
    let (gamma, k_cap, _) = params
        .exchangeable_rates()
        .ok_or_else(|| ConfigError::single("beta weight requires the exchangeable model"))?;
    let mut total = 0.0;
    for s in 0..kappa.sites() {
        let kbar = kappa.site_total(s) as f64;
        let pairs: f64 = kappa
            .site_row(s)
            .iter()
            .map(|&k| k as f64 * (k as f64 - 1.0) / 2.0)
            .sum();
        total += pairs - alpha[s] * kbar + k_cap * kbar;
    }
    Ok(gamma * total)
}

/// Diffusion generator applied to `f` at `x`, assembled from the closed-form
/// partial derivatives. Valid for general (not necessarily exchangeable)
/// parameters.
pub fn omega_x(f: &TestFunction, geo: &Geography, params: &ModelParams, x: &Field<f64>) -> f64 {
    let f0 = f.eval(x);
    let mut total = 0.0;
    for site in 0..geo.n_sites() {
        let row = x.site_row(site);
        let mu = f.mu[site];
        for m in 0..params.types {
            let xm = x.get(site, m);
            let kappa = f.kappa.get(site, m);

            let mut inflow = 0.0;
            geo.kernel_a_bar().for_each_in_row(site, |eta, w| {
                inflow += w * x.get(eta, m);
            });
            let drift =
                inflow - xm + params.gamma[m] * xm * params.interaction(m, row);

            let f_down1 = if kappa >= 1 {
                f.eval_kappa_adjusted(x, &[(site, m, -1)])
            } else {
                0.0
            };
            let first = -mu * f0 + kappa as f64 * f_down1;
            total += drift * first;

            let f_down2 = if kappa >= 2 {
                f.eval_kappa_adjusted(x, &[(site, m, -2)])
            } else {
                0.0
            };
            let second = mu * mu * f0 - 2.0 * mu * kappa as f64 * f_down1
                + kappa as f64 * (kappa as f64 - 1.0) * f_down2;
            total += 0.5 * params.gamma[m] * xm * second;
        }
    }
    total
}

/// Independent finite-difference route to `Omega_X f`: the same drift and
/// diffusion coefficients, but every derivative of `f` taken numerically.
/// First derivatives use central differences at `h1`; second derivatives use
/// a wider step `h2` because their rounding floor scales like `eps_mach/h^2`.
pub fn omega_x_fd(
    f: &TestFunction,
    geo: &Geography,
    params: &ModelParams,
    x: &Field<f64>,
    h1: f64,
    h2: f64,
) -> f64 {
    let f0 = f.eval(x);
    let mut total = 0.0;
    for site in 0..geo.n_sites() {
        let row = x.site_row(site);
        for m in 0..params.types {
            let xm = x.get(site, m);
            let mut inflow = 0.0;
            geo.kernel_a_bar().for_each_in_row(site, |eta, w| {
                inflow += w * x.get(eta, m);
            });
            let drift =
                inflow - xm + params.gamma[m] * xm * params.interaction(m, row);

            let fp = f.eval_shifted(x, &[(site, m, xm + h1)]);
            let fm = f.eval_shifted(x, &[(site, m, xm - h1)]);
            total += drift * (fp - fm) / (2.0 * h1);

            let fp2 = f.eval_shifted(x, &[(site, m, xm + h2)]);
            let fm2 = f.eval_shifted(x, &[(site, m, xm - h2)]);
            total += 0.5 * params.gamma[m] * xm * (fp2 - 2.0 * f0 + fm2) / (h2 * h2);
        }
    }
    total
}

/// Dual generator applied to the duality function at a point (exchangeable
/// model only): coalescent jumps in `kappa`, drift/diffusion/immigration
/// in `alpha`. The `kappa` migration reads the reversed kernel, the `alpha`
/// migration the forward kernel, exactly as the generator is written.
pub fn omega_dual(
    point: &DualityPoint,
    geo: &Geography,
    params: &ModelParams,
) -> Result<f64, ConfigError> {
    let (gamma, k_cap, lambda) = params
        .exchangeable_rates()
        .ok_or_else(|| ConfigError::single("dual generator requires the exchangeable model"))?;
    let f = TestFunction::from_dual(&point.alpha, &point.kappa);
    let x = &point.x;
    let h0 = f.eval(x);
    let mut total = 0.0;

    for site in 0..geo.n_sites() {
        let xbar = x.site_total(site);
        let alpha = point.alpha[site];
        let kbar = point.kappa.site_total(site) as f64;

        for m in 0..params.types {
            let kappa = point.kappa.get(site, m);
            if kappa > 0 {
                // Migration of one kappa particle by the reversed kernel.
                geo.kernel_a_bar().for_each_in_row(site, |eta, w| {
                    if eta != site {
                        let jumped =
                            f.eval_kappa_adjusted(x, &[(site, m, -1), (eta, m, 1)]);
                        total += kappa as f64 * w * (jumped - h0);
                    }
                });
                // Pairwise coalescence.
                let pairs = kappa as f64 * (kappa as f64 - 1.0) / 2.0;
                if pairs > 0.0 {
                    let merged = f.eval_kappa_adjusted(x, &[(site, m, -1)]);
                    total += gamma * pairs * (merged - h0);
                }
            }
        }

        // d/d alpha_xi H = -xbar_xi H, d2/d alpha_xi2 H = xbar_xi^2 H.
        let mut alpha_inflow = 0.0;
        geo.kernel_a().for_each_in_row(site, |eta, w| {
            alpha_inflow += w * point.alpha[eta];
        });
        let alpha_drift = (alpha_inflow - alpha)
            + gamma * alpha * (k_cap - 0.5 * alpha)
            + gamma * lambda * kbar;
        total += alpha_drift * (-xbar) * h0;
        total += gamma * lambda * alpha * xbar * xbar * h0;
    }
    Ok(total)
}

/// Relative residual of the generator identity
/// `|Omega_X H - Omega_dual H - beta H| / (1 + |Omega_X H|)`.
pub fn generator_identity_residual(
    point: &DualityPoint,
    geo: &Geography,
    params: &ModelParams,
) -> Result<f64, ConfigError> {
    let f = TestFunction::from_dual(&point.alpha, &point.kappa);
    let ox = omega_x(&f, geo, params, &point.x);
    let od = omega_dual(point, geo, params)?;
    let beta = beta_weight(&point.alpha, &point.kappa, params)?;
    let h = f.eval(&point.x);
    Ok((ox - od - beta * h).abs() / (1.0 + ox.abs()))
}

/// Particle generator applied to `f` in mass coordinates: the exact finite
/// sum over all one-event moves from `counts` at mass scale `eps`.
pub fn omega_z(
    f: &TestFunction,
    geo: &Geography,
    params: &ModelParams,
    eps: f64,
    counts: &Field<u64>,
) -> f64 {
    let masses = counts.map(|c| c as f64 * eps);
    let f0 = f.eval(&masses);
    let mut total = 0.0;
    for site in 0..geo.n_sites() {
        for m in 0..params.types {
            let c = counts.get(site, m) as f64;
            if c == 0.0 {
                continue;
            }
            let zm = masses.get(site, m);
            let gamma = params.gamma[m];

            geo.kernel_a().for_each_in_row(site, |eta, w| {
                if eta != site {
                    let moved = f.eval_shifted(
                        &masses,
                        &[(site, m, zm - eps), (eta, m, masses.get(eta, m) + eps)],
                    );
                    total += c * w * (moved - f0);
                }
            });

            let birth_rate = c * gamma / eps * (0.5 + eps * params.k[m]);
            let born = f.eval_shifted(&masses, &[(site, m, zm + eps)]);
            total += birth_rate * (born - f0);

            let pressure: f64 = (0..params.types)
                .map(|n| params.lambda_at(m, n) * masses.get(site, n))
                .sum();
            let death_rate = c * gamma / eps * (0.5 + eps * pressure);
            let died = f.eval_shifted(&masses, &[(site, m, zm - eps)]);
            total += death_rate * (died - f0);
        }
    }
    total
}

/// Randomized duality points for identity sweeps: `|G| <= 9`, `M <= 3`,
/// total kappa at most 4, `alpha` and `x` in `[0, 3]` with occasional exact
/// zeros to exercise the `0^0` edges.
pub fn random_point(
    geo: &Geography,
    types: usize,
    max_kappa_total: u32,
    stream: &mut crate::rng::CounterStream,
) -> DualityPoint {
    let sites = geo.n_sites();
    let alpha: Vec<f64> = (0..sites)
        .map(|_| {
            if stream.uniform() < 0.15 {
                0.0
            } else {
                3.0 * stream.uniform()
            }
        })
        .collect();
    let mut x = Field::<f64>::zeros(sites, types);
    for s in 0..sites {
        for m in 0..types {
            let v = if stream.uniform() < 0.1 {
                0.0
            } else {
                3.0 * stream.uniform()
            };
            x.set(s, m, v);
        }
    }
    let mut kappa = Field::<u32>::zeros(sites, types);
    let n_particles = (stream.uniform() * (max_kappa_total + 1) as f64) as u32;
    for _ in 0..n_particles {
        let s = (stream.uniform() * sites as f64) as usize % sites;
        let m = (stream.uniform() * types as f64) as usize % types;
        kappa.set(s, m, kappa.get(s, m) + 1);
    }
    DualityPoint { alpha, kappa, x }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{nearest_neighbor_1d, RhoSpec};
    use crate::rng::{CounterStream, StreamTag};

    fn single_site() -> Geography {
        Geography::torus(1, 1, &[(vec![0], 1.0)], &RhoSpec::default()).unwrap()
    }

    fn torus(side: usize) -> Geography {
        Geography::torus(1, side, &nearest_neighbor_1d(), &RhoSpec::default()).unwrap()
    }

    #[test]
    fn h_examples() {
        // alpha = 0, kappa = 0 -> 1.
        let p = DualityPoint {
            alpha: vec![0.0],
            kappa: Field::zeros(1, 2),
            x: Field::from_vec(vec![1.5, 0.5], 1, 2),
        };
        assert_eq!(h_function(&p), 1.0);

        // alpha = 1, xbar = 2, kappa = (1, 0) -> e^-2 * 1.5.
        let mut kappa = Field::<u32>::zeros(1, 2);
        kappa.set(0, 0, 1);
        let p = DualityPoint {
            alpha: vec![1.0],
            kappa,
            x: Field::from_vec(vec![1.5, 0.5], 1, 2),
        };
        assert!((h_function(&p) - (-2.0f64).exp() * 1.5).abs() < 1e-15);

        // Zero mass with a positive power -> 0.
        let mut kappa = Field::<u32>::zeros(1, 2);
        kappa.set(0, 1, 2);
        let p = DualityPoint {
            alpha: vec![0.5],
            kappa,
            x: Field::from_vec(vec![1.0, 0.0], 1, 2),
        };
        assert_eq!(h_function(&p), 0.0);
    }

    #[test]
    fn h_bounded_by_one_without_powers() {
        let mut stream = CounterStream::new(1, 0, StreamTag::ParticleEvents);
        let geo = torus(3);
        for _ in 0..200 {
            let mut p = random_point(&geo, 2, 0, &mut stream);
            p.kappa = Field::zeros(3, 2);
            let h = h_function(&p);
            assert!((0.0..=1.0).contains(&h));
        }
    }

    #[test]
    fn beta_examples() {
        let params = ModelParams::exchangeable(2, 1.0, 1.0, 0.5);
        // kappa = 0 -> 0.
        assert_eq!(
            beta_weight(&[1.0], &Field::zeros(1, 2), &params).unwrap(),
            0.0
        );
        // kappa = (2,0), alpha = 1, K = 1: C(2,2)=1, -1*2, +1*2 -> 1.
        let mut kappa = Field::<u32>::zeros(1, 2);
        kappa.set(0, 0, 2);
        assert!((beta_weight(&[1.0], &kappa, &params).unwrap() - 1.0).abs() < 1e-15);
        // kappa = (1,1), alpha = 0, K = 2 -> 4.
        let params2 = ModelParams::exchangeable(2, 1.0, 2.0, 0.5);
        let mut kappa = Field::<u32>::zeros(1, 2);
        kappa.set(0, 0, 1);
        kappa.set(0, 1, 1);
        assert!((beta_weight(&[0.0], &kappa, &params2).unwrap() - 4.0).abs() < 1e-15);
        // Non-exchangeable rejected.
        let bad = ModelParams::new(vec![1.0, 2.0], vec![1.0, 1.0], vec![1.0; 4]).unwrap();
        assert!(beta_weight(&[0.0], &kappa, &bad).is_err());
    }

    #[test]
    fn residual_zero_for_trivial_point() {
        let geo = torus(3);
        let params = ModelParams::exchangeable(2, 1.0, 1.0, 0.5);
        let p = DualityPoint {
            alpha: vec![0.0; 3],
            kappa: Field::zeros(3, 2),
            x: Field::constant(3, 2, 1.0),
        };
        assert_eq!(generator_identity_residual(&p, &geo, &params).unwrap(), 0.0);
    }

    #[test]
    fn single_site_hand_expansion() {
        // alpha = 0, kappa = 1, x = c: Omega_X H = gamma c (K - lambda c);
        // the dual side contributes -gamma lambda c^2 and beta H = gamma K c.
        let geo = single_site();
        let params = ModelParams::exchangeable(1, 1.0, 1.0, 0.5);
        let c = 1.7;
        let mut kappa = Field::<u32>::zeros(1, 1);
        kappa.set(0, 0, 1);
        let p = DualityPoint {
            alpha: vec![0.0],
            kappa: kappa.clone(),
            x: Field::from_vec(vec![c], 1, 1),
        };
        let f = TestFunction::from_dual(&p.alpha, &p.kappa);
        let ox = omega_x(&f, &geo, &params, &p.x);
        assert!((ox - c * (1.0 - 0.5 * c)).abs() < 1e-14);
        let od = omega_dual(&p, &geo, &params).unwrap();
        assert!((od - (-0.5 * c * c)).abs() < 1e-14);
        let beta = beta_weight(&p.alpha, &p.kappa, &params).unwrap();
        assert!((beta - 1.0).abs() < 1e-15);
        assert!(generator_identity_residual(&p, &geo, &params).unwrap() < 1e-14);
    }

    #[test]
    fn identity_on_random_cloud() {
        let params = ModelParams::exchangeable(3, 0.8, 1.3, 0.6);
        let mut stream = CounterStream::new(2024, 0, StreamTag::ParticleEvents);
        for side in [1usize, 2, 3] {
            let geo = torus(side.max(2)); // side 1 handled separately below
            for _ in 0..300 {
                let p = random_point(&geo, 3, 4, &mut stream);
                let r = generator_identity_residual(&p, &geo, &params).unwrap();
                assert!(r <= 1e-10, "residual {r} on side {side}");
            }
        }
        let geo1 = single_site();
        for _ in 0..100 {
            let p = random_point(&geo1, 3, 4, &mut stream);
            let r = generator_identity_residual(&p, &geo1, &params).unwrap();
            assert!(r <= 1e-10, "residual {r} on single site");
        }
    }

    #[test]
    fn finite_differences_agree_with_closed_form() {
        let geo = torus(3);
        let params = ModelParams::exchangeable(2, 1.0, 1.0, 0.5);
        let mut stream = CounterStream::new(7, 0, StreamTag::ParticleEvents);
        for _ in 0..100 {
            let p = random_point(&geo, 2, 4, &mut stream);
            let f = TestFunction::from_dual(&p.alpha, &p.kappa);
            let exact = omega_x(&f, &geo, &params, &p.x);
            let fd = omega_x_fd(&f, &geo, &params, &p.x, 1e-6, 1e-4);
            let rel = (exact - fd).abs() / (1.0 + exact.abs());
            assert!(rel <= 1e-5, "fd mismatch {rel}");
        }
    }

    #[test]
    fn omega_z_hand_value_and_constant_function() {
        // Single site, M=1, eps=1, gamma=1, K=1, lambda=1, z=2, f = mass:
        // birth 3 * (+1) + death 5 * (-1) = -2 = gamma z Gamma(z).
        let geo = single_site();
        let params = ModelParams::exchangeable(1, 1.0, 1.0, 1.0);
        let mut kappa = Field::<u32>::zeros(1, 1);
        kappa.set(0, 0, 1);
        let f = TestFunction::new(vec![0.0], kappa).unwrap();
        let counts = Field::from_vec(vec![2u64], 1, 1);
        let oz = omega_z(&f, &geo, &params, 1.0, &counts);
        assert!((oz - (-2.0)).abs() < 1e-12, "omega_z {oz}");

        // Constant f (no weights, no powers): generator annihilates it.
        let one = TestFunction::new(vec![0.0], Field::zeros(1, 1)).unwrap();
        assert_eq!(omega_z(&one, &geo, &params, 1.0, &counts), 0.0);
    }

    #[test]
    fn omega_z_converges_to_omega_x_in_small_eps() {
        // The rescaled particle generator approaches the diffusion generator
        // at masses held fixed.
        let geo = torus(3);
        let params = ModelParams::exchangeable(2, 1.0, 1.0, 0.5);
        let mut mu = vec![0.0; 3];
        mu[0] = 1.0;
        let mut kappa = Field::<u32>::zeros(3, 2);
        kappa.set(0, 0, 1);
        let f = TestFunction::separating(mu, kappa).unwrap();

        let masses = Field::constant(3, 2, 1.0);
        let ox = omega_x(&f, &geo, &params, &masses);
        for eps in [1e-2, 1e-3] {
            let counts = masses.map(|v| (v / eps).round() as u64);
            let oz = omega_z(&f, &geo, &params, eps, &counts);
            let rel = (oz - ox).abs() / (1.0 + ox.abs());
            assert!(
                rel < 10.0 * eps,
                "eps {eps}: omega_z {oz} vs omega_x {ox} (rel {rel})"
            );
        }
    }

    #[test]
    fn separating_family_constraint() {
        let mut kappa = Field::<u32>::zeros(2, 1);
        kappa.set(0, 0, 1);
        assert!(TestFunction::separating(vec![0.0, 1.0], kappa.clone()).is_err());
        assert!(TestFunction::separating(vec![1.0, 0.0], kappa).is_ok());
    }
}

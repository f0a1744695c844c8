//! Finite lattice geography, migration kernels, and the summable site
//! weight function with its norms.
//!
//! A `Geography` is a torus `(Z mod side)^dim` together with a row-stochastic
//! migration kernel `a`, its reversal `a_bar(x, y) = a(y, x)`, and the
//! symmetrization `a_hat = (a + a^T)/2`. On top of the kernels sits the
//! weight vector
//!
//! ```text
//! rho(xi) = sum_eta sum_{n=0}^{n_max} (R/2)^(-n) a_hat^(n)(eta, xi) beta(eta)
//! ```
//!
//! truncated at `n_max` with a certified geometric tail bound. The weight
//! satisfies the contraction property
//! `sum_xi a_hat(xi, eta) rho(xi) <= (R/2) rho(eta)` (up to truncation slack),
//! which is what makes rho-weighted mass a Lyapunov-type functional for the
//! engines built on this geography.

use crate::error::ConfigError;
use crate::field::Field;
use serde::{Deserialize, Serialize};

/// Kernels switch to per-row neighbor lists above this site count; the
/// nearest-neighbor kernels used in practice are extremely sparse.
const DENSE_LIMIT: usize = 4096;

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic migration kernel over `n` sites.
#[derive(Debug, Clone)]
pub struct Kernel {
    n: usize,
    storage: Storage,
}

#[derive(Debug, Clone)]
enum Storage {
    /// Row-major `n x n` matrix.
    Dense(Vec<f64>),
    /// Sorted `(target, weight)` lists per row.
    Sparse(Vec<Vec<(usize, f64)>>),
}

impl Kernel {
    fn from_entries(n: usize, entries: impl Iterator<Item = (usize, usize, f64)>) -> Self {
        if n <= DENSE_LIMIT {
            let mut data = vec![0.0; n * n];
            for (i, j, v) in entries {
                data[i * n + j] += v;
            }
            Kernel {
                n,
                storage: Storage::Dense(data),
            }
        } else {
            let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
            for (i, j, v) in entries {
                rows[i].push((j, v));
            }
            for row in &mut rows {
                row.sort_unstable_by_key(|&(j, _)| j);
                row.dedup_by(|b, a| {
                    if a.0 == b.0 {
                        a.1 += b.1;
                        true
                    } else {
                        false
                    }
                });
            }
            Kernel {
                n,
                storage: Storage::Sparse(rows),
            }
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(d) => d[i * self.n + j],
            Storage::Sparse(rows) => rows[i]
                .binary_search_by_key(&j, |&(t, _)| t)
                .map(|k| rows[i][k].1)
                .unwrap_or(0.0),
        }
    }

    /// Visit the nonzero entries of row `i` without allocating.
    #[inline]
    pub fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match &self.storage {
            Storage::Dense(d) => {
                for (j, &v) in d[i * self.n..(i + 1) * self.n].iter().enumerate() {
                    if v != 0.0 {
                        f(j, v);
                    }
                }
            }
            Storage::Sparse(rows) => {
                for &(j, v) in &rows[i] {
                    f(j, v);
                }
            }
        }
    }

    /// Nonzero entries of row `i`.
    pub fn row(&self, i: usize) -> Vec<(usize, f64)> {
        match &self.storage {
            Storage::Dense(d) => d[i * self.n..(i + 1) * self.n]
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(j, &v)| (j, v))
                .collect(),
            Storage::Sparse(rows) => rows[i].clone(),
        }
    }

    fn row_sum(&self, i: usize) -> f64 {
        match &self.storage {
            Storage::Dense(d) => d[i * self.n..(i + 1) * self.n].iter().sum(),
            Storage::Sparse(rows) => rows[i].iter().map(|&(_, v)| v).sum(),
        }
    }

    fn col_sum(&self, j: usize) -> f64 {
        match &self.storage {
            Storage::Dense(d) => (0..self.n).map(|i| d[i * self.n + j]).sum(),
            Storage::Sparse(rows) => rows
                .iter()
                .map(|row| {
                    row.binary_search_by_key(&j, |&(t, _)| t)
                        .map(|k| row[k].1)
                        .unwrap_or(0.0)
                })
                .sum(),
        }
    }

    fn transpose(&self) -> Kernel {
        let entries: Vec<(usize, usize, f64)> = (0..self.n)
            .flat_map(|i| self.row(i).into_iter().map(move |(j, v)| (j, i, v)))
            .collect();
        Kernel::from_entries(self.n, entries.into_iter())
    }

    fn symmetrize(&self) -> Kernel {
        let entries: Vec<(usize, usize, f64)> = (0..self.n)
            .flat_map(|i| {
                self.row(i).into_iter().flat_map(move |(j, v)| {
                    [(i, j, 0.5 * v), (j, i, 0.5 * v)].into_iter()
                })
            })
            .collect();
        Kernel::from_entries(self.n, entries.into_iter())
    }

    /// `out(xi) = sum_eta v(eta) * k(eta, xi)` (left application).
    fn apply_left(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for eta in 0..self.n {
            let w = v[eta];
            if w == 0.0 {
                continue;
            }
            for (xi, val) in self.row(eta) {
                out[xi] += w * val;
            }
        }
        out
    }
}

/// Pre-built inverse CDF over the off-diagonal part of one kernel row, for
/// O(log) migration-target sampling.
#[derive(Debug, Clone)]
pub struct OffDiagonalRow {
    /// `(cumulative weight, target)` in target order.
    cum: Vec<(f64, usize)>,
    total: f64,
}

impl OffDiagonalRow {
    fn build(kernel: &Kernel, site: usize) -> Self {
        let mut cum = Vec::new();
        let mut acc = 0.0;
        for (j, v) in kernel.row(site) {
            if j != site && v > 0.0 {
                acc += v;
                cum.push((acc, j));
            }
        }
        Self { cum, total: acc }
    }

    /// Total off-diagonal weight `1 - k(site, site)`.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// Sample a target from the renormalized off-diagonal row; `u` uniform
    /// in `[0, 1)`. Returns `None` when the row has no off-diagonal mass.
    pub fn sample(&self, u: f64) -> Option<usize> {
        if self.cum.is_empty() {
            return None;
        }
        let target = u * self.total;
        let k = self.cum.partition_point(|&(c, _)| c <= target);
        Some(self.cum[k.min(self.cum.len() - 1)].1)
    }
}

/// How the weight vector beta is chosen.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
pub enum BetaSpec {
    /// `beta(eta) = 1 / |G|`.
    Uniform,
    /// Explicit positive weights, one per site.
    Explicit(Vec<f64>),
}

/// Parameters of the weight-function series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhoSpec {
    /// Series ratio, must exceed 2.
    pub r: f64,
    pub beta: BetaSpec,
    /// Truncation order; derived from `tail_tol` when absent.
    pub n_max: Option<usize>,
    /// Certified bound on the dropped geometric tail.
    pub tail_tol: f64,
}

impl Default for RhoSpec {
    fn default() -> Self {
        Self {
            r: 4.0,
            beta: BetaSpec::Uniform,
            n_max: None,
            tail_tol: 1e-12,
        }
    }
}

/// Finite geography: torus sites, migration kernels, and the weight vector.
#[derive(Debug, Clone)]
pub struct Geography {
    dim: usize,
    side: usize,
    n_sites: usize,
    kernel_a: Kernel,
    kernel_a_bar: Kernel,
    kernel_a_hat: Kernel,
    offdiag_a: Vec<OffDiagonalRow>,
    offdiag_a_bar: Vec<OffDiagonalRow>,
    rho: Vec<f64>,
    rho_r: f64,
    rho_beta: Vec<f64>,
    rho_truncation: usize,
    rho_tail_bound: f64,
    translation_invariant: bool,
}

impl Geography {
    /// Build the torus `(Z mod side)^dim` with migration given by a step
    /// distribution (offset -> probability); offsets wrap modulo `side`.
    pub fn torus(
        dim: usize,
        side: usize,
        steps: &[(Vec<i64>, f64)],
        rho_spec: &RhoSpec,
    ) -> Result<Geography, ConfigError> {
        let mut violations = Vec::new();
        if dim == 0 {
            violations.push("geography.dim: must be >= 1".to_string());
        }
        if side == 0 {
            violations.push("geography.side: must be >= 1".to_string());
        }
        if steps.is_empty() {
            violations.push("geography.step: at least one offset required".to_string());
        }
        let mut prob_sum = 0.0;
        for (k, (offset, p)) in steps.iter().enumerate() {
            if offset.len() != dim {
                violations.push(format!(
                    "geography.step[{k}].offset: expected {dim} coordinates, got {}",
                    offset.len()
                ));
            }
            if *p < 0.0 {
                violations.push(format!("geography.step[{k}].prob: negative probability"));
            }
            prob_sum += p;
        }
        if (prob_sum - 1.0).abs() > ROW_SUM_TOL {
            violations.push(format!(
                "geography.step: probabilities sum to {prob_sum}, expected 1"
            ));
        }
        if !violations.is_empty() {
            return Err(ConfigError::new(violations));
        }

        let n_sites = side.pow(dim as u32);
        let entries: Vec<(usize, usize, f64)> = (0..n_sites)
            .flat_map(|site| {
                let coords = coords_of(site, dim, side);
                steps.iter().map(move |(offset, p)| {
                    let target: Vec<usize> = coords
                        .iter()
                        .zip(offset.iter())
                        .map(|(&c, &o)| {
                            (((c as i64 + o) % side as i64 + side as i64) % side as i64) as usize
                        })
                        .collect();
                    (site, site_of(&target, side), *p)
                })
            })
            .collect();
        let kernel_a = Kernel::from_entries(n_sites, entries.into_iter());
        Self::finish(dim, side, kernel_a, rho_spec, true)
    }

    /// Accept a raw row-stochastic kernel matrix (row-major). The matrix must
    /// also be column-stochastic so that the reversed kernel `a_bar` is again
    /// a random-walk kernel.
    pub fn from_kernel(
        matrix: &[f64],
        n_sites: usize,
        rho_spec: &RhoSpec,
    ) -> Result<Geography, ConfigError> {
        if matrix.len() != n_sites * n_sites {
            return Err(ConfigError::single(format!(
                "geography.kernel: expected {n_sites}x{n_sites} entries, got {}",
                matrix.len()
            )));
        }
        let entries: Vec<(usize, usize, f64)> = matrix
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(k, &v)| (k / n_sites, k % n_sites, v))
            .collect();
        let kernel_a = Kernel::from_entries(n_sites, entries.into_iter());
        Self::finish(1, n_sites, kernel_a, rho_spec, false)
    }

    fn finish(
        dim: usize,
        side: usize,
        kernel_a: Kernel,
        rho_spec: &RhoSpec,
        translation_invariant: bool,
    ) -> Result<Geography, ConfigError> {
        let n_sites = kernel_a.size();
        let mut violations = Vec::new();
        for i in 0..n_sites {
            if (kernel_a.row_sum(i) - 1.0).abs() > ROW_SUM_TOL {
                violations.push(format!(
                    "geography.kernel: row {i} sums to {}, expected 1",
                    kernel_a.row_sum(i)
                ));
            }
            if (kernel_a.col_sum(i) - 1.0).abs() > ROW_SUM_TOL {
                violations.push(format!(
                    "geography.kernel: column {i} sums to {}; a doubly stochastic kernel \
                     is required for the reversed kernel to be a random walk",
                    kernel_a.col_sum(i)
                ));
            }
        }

        if rho_spec.r <= 2.0 {
            violations.push(format!(
                "geography.r: series ratio R = {} must exceed 2 (series diverges)",
                rho_spec.r
            ));
        }
        let beta = match &rho_spec.beta {
            BetaSpec::Uniform => vec![1.0 / n_sites as f64; n_sites],
            BetaSpec::Explicit(b) => {
                if b.len() != n_sites {
                    violations.push(format!(
                        "geography.beta: expected {n_sites} weights, got {}",
                        b.len()
                    ));
                }
                if b.iter().any(|&v| v <= 0.0) {
                    violations.push("geography.beta: weights must be positive".to_string());
                }
                b.clone()
            }
        };
        if !violations.is_empty() {
            return Err(ConfigError::new(violations));
        }

        let kernel_a_bar = kernel_a.transpose();
        let kernel_a_hat = kernel_a.symmetrize();

        let ratio = 2.0 / rho_spec.r;
        let beta_max = beta.iter().cloned().fold(0.0, f64::max);
        let tail_bound = |n: usize| ratio.powi(n as i32 + 1) / (1.0 - ratio) * beta_max;
        let n_max = match rho_spec.n_max {
            Some(n) => {
                if tail_bound(n) > rho_spec.tail_tol {
                    return Err(ConfigError::single(format!(
                        "geography.n_max: {n} leaves a series tail of {:.3e}, above the \
                         tolerance {:.3e}",
                        tail_bound(n),
                        rho_spec.tail_tol
                    )));
                }
                n
            }
            None => {
                let mut n = 0;
                while tail_bound(n) > rho_spec.tail_tol {
                    n += 1;
                }
                n
            }
        };

        // rho = sum_n (2/R)^n beta^T a_hat^n, truncated at n_max.
        let mut rho = vec![0.0; n_sites];
        let mut power = beta.clone();
        let mut coeff = 1.0;
        for n in 0..=n_max {
            for (r, &p) in rho.iter_mut().zip(power.iter()) {
                *r += coeff * p;
            }
            if n < n_max {
                power = kernel_a_hat.apply_left(&power);
                coeff *= ratio;
            }
        }

        let offdiag_a = (0..n_sites)
            .map(|s| OffDiagonalRow::build(&kernel_a, s))
            .collect();
        let offdiag_a_bar = (0..n_sites)
            .map(|s| OffDiagonalRow::build(&kernel_a_bar, s))
            .collect();

        let geo = Geography {
            dim,
            side,
            n_sites,
            kernel_a,
            kernel_a_bar,
            kernel_a_hat,
            offdiag_a,
            offdiag_a_bar,
            rho,
            rho_r: rho_spec.r,
            rho_beta: beta,
            rho_truncation: n_max,
            rho_tail_bound: tail_bound(n_max),
            translation_invariant,
        };
        debug_assert!(
            geo.contraction_excess() <= geo.rho_r / 2.0 * geo.rho_tail_bound + 1e-12,
            "contraction property violated beyond truncation slack"
        );
        Ok(geo)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// The distinguished origin colony.
    pub fn origin(&self) -> usize {
        0
    }

    pub fn a(&self, from: usize, to: usize) -> f64 {
        self.kernel_a.entry(from, to)
    }

    pub fn a_bar(&self, from: usize, to: usize) -> f64 {
        self.kernel_a_bar.entry(from, to)
    }

    pub fn a_hat(&self, from: usize, to: usize) -> f64 {
        self.kernel_a_hat.entry(from, to)
    }

    pub fn kernel_a(&self) -> &Kernel {
        &self.kernel_a
    }

    pub fn kernel_a_bar(&self) -> &Kernel {
        &self.kernel_a_bar
    }

    pub fn kernel_a_hat(&self) -> &Kernel {
        &self.kernel_a_hat
    }

    /// Off-diagonal sampler for the forward kernel `a` (particle migration).
    pub fn offdiag_a(&self, site: usize) -> &OffDiagonalRow {
        &self.offdiag_a[site]
    }

    /// Off-diagonal sampler for the reversed kernel `a_bar` (dual migration).
    pub fn offdiag_a_bar(&self, site: usize) -> &OffDiagonalRow {
        &self.offdiag_a_bar[site]
    }

    pub fn rho(&self, site: usize) -> f64 {
        self.rho[site]
    }

    pub fn rho_slice(&self) -> &[f64] {
        &self.rho
    }

    pub fn rho_r(&self) -> f64 {
        self.rho_r
    }

    pub fn rho_beta(&self) -> &[f64] {
        &self.rho_beta
    }

    pub fn rho_truncation(&self) -> usize {
        self.rho_truncation
    }

    pub fn rho_tail_bound(&self) -> f64 {
        self.rho_tail_bound
    }

    pub fn translation_invariant(&self) -> bool {
        self.translation_invariant
    }

    /// Worst violation of the contraction property over all sites:
    /// `max_eta [ sum_xi a_hat(xi, eta) rho(xi) - (R/2) rho(eta) ]`.
    /// Nonpositive up to the documented truncation slack.
    pub fn contraction_excess(&self) -> f64 {
        let lhs = self.kernel_a_hat.apply_left(&self.rho);
        lhs.iter()
            .zip(self.rho.iter())
            .map(|(&l, &r)| l - self.rho_r / 2.0 * r)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// rho-weighted l^p norm `( sum_xi (xbar_xi)^p rho(xi) )^(1/p)` of a
    /// per-site per-type state, where `xbar` sums over types.
    pub fn rho_norm(&self, x: &Field<f64>, p: f64) -> f64 {
        assert!(p >= 1.0, "rho_norm requires p >= 1");
        assert_eq!(x.sites(), self.n_sites, "state does not match geography");
        let sum: f64 = (0..self.n_sites)
            .map(|s| x.site_total(s).powf(p) * self.rho[s])
            .sum();
        sum.powf(1.0 / p)
    }

    /// Torus coordinates of a site index.
    pub fn coords(&self, site: usize) -> Vec<usize> {
        coords_of(site, self.dim, self.side)
    }
}

fn coords_of(site: usize, dim: usize, side: usize) -> Vec<usize> {
    let mut c = vec![0; dim];
    let mut s = site;
    for slot in c.iter_mut() {
        *slot = s % side;
        s /= side;
    }
    c
}

fn site_of(coords: &[usize], side: usize) -> usize {
    coords.iter().rev().fold(0, |acc, &c| acc * side + c)
}

/// Symmetric nearest-neighbor step distribution in one dimension.
pub fn nearest_neighbor_1d() -> Vec<(Vec<i64>, f64)> {
    vec![(vec![1], 0.5), (vec![-1], 0.5)]
}

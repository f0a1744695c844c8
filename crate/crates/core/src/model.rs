//! Model parameters: branching rates, carrying capacities, the competition
//! matrix, the resources-to-capacity derivation, and exchangeability.

use crate::error::ConfigError;
use serde::{Deserialize, Serialize};

/// Tolerance for detecting the exchangeable model; the exponential duality is
/// only valid there, so detection must be strict.
pub const EXCHANGEABLE_TOL: f64 = 1e-12;

/// Per-type branching rates, capacities, and competition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    /// Number of types M.
    pub types: usize,
    /// Branching rates `gamma^m > 0`.
    pub gamma: Vec<f64>,
    /// Carrying capacities `K^m >= 0`.
    pub k: Vec<f64>,
    /// Competition matrix `lambda[m][n] >= 0`, row-major M x M.
    pub lambda: Vec<f64>,
    /// True iff all gammas, all capacities, and all lambda entries agree
    /// within `EXCHANGEABLE_TOL`.
    pub exchangeable: bool,
}

impl ModelParams {
    pub fn new(gamma: Vec<f64>, k: Vec<f64>, lambda: Vec<f64>) -> Result<Self, ConfigError> {
        let types = gamma.len();
        let mut violations = Vec::new();
        if types == 0 {
            violations.push("model.gamma: at least one type required".to_string());
        }
        if k.len() != types {
            violations.push(format!(
                "model.k: expected {types} entries, got {}",
                k.len()
            ));
        }
        if lambda.len() != types * types {
            violations.push(format!(
                "model.lambda: expected {types}x{types} entries, got {}",
                lambda.len()
            ));
        }
        for (m, &g) in gamma.iter().enumerate() {
            if !(g > 0.0) || !g.is_finite() {
                violations.push(format!("model.gamma[{m}]: must be finite and > 0, got {g}"));
            }
        }
        for (m, &v) in k.iter().enumerate() {
            if v < 0.0 || !v.is_finite() {
                violations.push(format!("model.k[{m}]: must be finite and >= 0, got {v}"));
            }
        }
        for (i, &v) in lambda.iter().enumerate() {
            if v < 0.0 || !v.is_finite() {
                violations.push(format!(
                    "model.lambda[{}][{}]: must be finite and >= 0, got {v}",
                    i / types.max(1),
                    i % types.max(1)
                ));
            }
        }
        if !violations.is_empty() {
            return Err(ConfigError::new(violations));
        }
        let exchangeable = all_close(&gamma) && all_close(&k) && all_close(&lambda);
        Ok(Self {
            types,
            gamma,
            k,
            lambda,
            exchangeable,
        })
    }

    /// The exchangeable model with scalar rates.
    pub fn exchangeable(types: usize, gamma: f64, k: f64, lambda: f64) -> Self {
        Self::new(
            vec![gamma; types],
            vec![k; types],
            vec![lambda; types * types],
        )
        .expect("scalar parameters are always well-formed")
    }

    /// Competition entry `lambda[m][n]`.
    #[inline]
    pub fn lambda_at(&self, m: usize, n: usize) -> f64 {
        self.lambda[m * self.types + n]
    }

    /// Interaction function `Gamma^m(y) = K^m - sum_n lambda[m][n] y^n`:
    /// the signed per-capita growth rate at local masses `y`.
    pub fn interaction(&self, m: usize, y: &[f64]) -> f64 {
        assert!(m < self.types, "type index {m} out of range");
        assert_eq!(y.len(), self.types);
        let pressure: f64 = y
            .iter()
            .enumerate()
            .map(|(n, &yn)| self.lambda_at(m, n) * yn)
            .sum();
        self.k[m] - pressure
    }

    /// Scalar `(gamma, K, lambda)` of the exchangeable model, if applicable.
    pub fn exchangeable_rates(&self) -> Option<(f64, f64, f64)> {
        if self.exchangeable {
            Some((self.gamma[0], self.k[0], self.lambda[0]))
        } else {
            None
        }
    }

    /// Largest gamma times largest capacity: the constant `C` in the
    /// first-moment growth bound `exp((C+1) t)`.
    pub fn moment_growth_constant(&self) -> f64 {
        let gmax = self.gamma.iter().cloned().fold(0.0, f64::max);
        let kmax = self.k.iter().cloned().fold(0.0, f64::max);
        gmax * kmax
    }

    /// Critical branching: no drift at all (`K = 0`, `lambda = 0`).
    pub fn is_critical(&self) -> bool {
        self.k.iter().all(|&v| v == 0.0) && self.lambda.iter().all(|&v| v == 0.0)
    }
}

fn all_close(values: &[f64]) -> bool {
    values
        .iter()
        .all(|&v| (v - values[0]).abs() <= EXCHANGEABLE_TOL)
}

/// Resource-level description: sizes, sensitivities, and utilizations, from
/// which capacities and competition are derived.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResourceSpec {
    /// Number of resources J.
    pub resources: usize,
    /// Resource sizes `R^j > 0`.
    pub r: Vec<f64>,
    /// Sensitivities `s[j][m] >= 0`, row-major J x M.
    pub s: Vec<f64>,
    /// Utilizations `lambda_tilde[j][n] >= 0`, row-major J x M.
    pub lambda_tilde: Vec<f64>,
}

impl ResourceSpec {
    /// Derive `K^m = sum_j s[j][m] R^j` and
    /// `lambda[m][n] = sum_j s[j][m] lambda_tilde[j][n]`.
    pub fn derive_params(&self, gamma: Vec<f64>) -> Result<ModelParams, ConfigError> {
        let types = gamma.len();
        let j = self.resources;
        let mut violations = Vec::new();
        if self.r.len() != j {
            violations.push(format!(
                "model.resources.r: expected {j} entries, got {}",
                self.r.len()
            ));
        }
        if self.s.len() != j * types {
            violations.push(format!(
                "model.resources.s: expected {j}x{types} entries, got {}",
                self.s.len()
            ));
        }
        if self.lambda_tilde.len() != j * types {
            violations.push(format!(
                "model.resources.lambda_tilde: expected {j}x{types} entries, got {}",
                self.lambda_tilde.len()
            ));
        }
        if !violations.is_empty() {
            return Err(ConfigError::new(violations));
        }

        let mut k = vec![0.0; types];
        for (m, slot) in k.iter_mut().enumerate() {
            *slot = (0..j).map(|jj| self.s[jj * types + m] * self.r[jj]).sum();
        }
        let mut lambda = vec![0.0; types * types];
        for m in 0..types {
            for n in 0..types {
                lambda[m * types + n] = (0..j)
                    .map(|jj| self.s[jj * types + m] * self.lambda_tilde[jj * types + n])
                    .sum();
            }
        }
        ModelParams::new(gamma, k, lambda)
    }
}

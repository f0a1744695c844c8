//! Error types shared across the crate.

use thiserror::Error;

/// Configuration rejected before any simulation started.
///
/// Carries *every* violation found, not just the first, so a user can fix a
/// config file in one pass.
#[derive(Debug, Error)]
#[error("invalid configuration:\n{}", violations.join("\n"))]
pub struct ConfigError {
    /// One human-readable message per violation, each naming the key path.
    pub violations: Vec<String>,
}

impl ConfigError {
    pub fn new(violations: Vec<String>) -> Self {
        Self { violations }
    }

    pub fn single(msg: impl Into<String>) -> Self {
        Self {
            violations: vec![msg.into()],
        }
    }
}

/// Failures during simulation or verification.
#[derive(Debug, Error)]
pub enum SimError {
    /// The per-run event cap was hit; parameters are likely supercritical.
    #[error("event cap of {cap} exceeded at t={time}: runaway explosion")]
    ExplosionGuard { cap: u64, time: f64 },

    /// A state component left the finite range (overflow in the integrator).
    #[error("non-finite state in replicate {replicate} at t={time}")]
    NonFinite { replicate: u64, time: f64 },

    /// Incremental rate bookkeeping drifted from a full recomputation.
    #[error("rate table drift {rel} exceeds 1e-9 after {events} events")]
    RateTableDrift { rel: f64, events: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Config(#[from] ConfigError),
}

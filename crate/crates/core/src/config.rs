//! Run configuration: parsing, exhaustive validation, defaults, and the
//! stable 64-bit hash stamped on every output artifact.
//!
//! Configs are TOML. Unknown keys are rejected (no silent typos), and
//! validation reports *every* violation with its key path, not just the
//! first. The hash is FNV-1a over the canonical JSON serialization of the
//! config after defaults are filled, so a minimal config and its fully
//! spelled-out form hash identically.

use crate::error::ConfigError;
use crate::field::Field;
use crate::geometry::{BetaSpec, Geography, RhoSpec};
use crate::model::{ModelParams, ResourceSpec};
use serde::{Deserialize, Serialize};

fn default_dim() -> usize {
    1
}
fn default_side() -> usize {
    1
}
fn default_r() -> f64 {
    4.0
}
fn default_tail_tol() -> f64 {
    1e-12
}
fn default_gamma() -> Vec<f64> {
    vec![1.0]
}
fn default_dt() -> f64 {
    1e-3
}
fn default_eps() -> f64 {
    1.0
}
fn default_max_events() -> u64 {
    crate::particle::DEFAULT_MAX_EVENTS
}
fn default_fk_clip() -> f64 {
    50.0
}
fn default_horizon() -> f64 {
    1.0
}
fn default_replicates() -> u64 {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepEntry {
    pub offset: Vec<i64>,
    pub prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum BetaConfig {
    Mode(String),
    Weights(Vec<f64>),
}

impl Default for BetaConfig {
    fn default() -> Self {
        BetaConfig::Mode("uniform".to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeographyConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_side")]
    pub side: usize,
    /// Step distribution; ignored when a raw kernel matrix is given.
    #[serde(default)]
    pub step: Vec<StepEntry>,
    /// Raw row-stochastic kernel (row-major), alternative to `step`.
    #[serde(default)]
    pub kernel: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default)]
    pub beta: BetaConfig,
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
}

impl Default for GeographyConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            side: 1,
            step: vec![StepEntry {
                offset: vec![0],
                prob: 1.0,
            }],
            kernel: None,
            r: 4.0,
            beta: BetaConfig::default(),
            n_max: None,
            tail_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourcesConfig {
    pub count: usize,
    pub r: Vec<f64>,
    pub s: Vec<Vec<f64>>,
    pub lambda_tilde: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_gamma")]
    pub gamma: Vec<f64>,
    /// Direct capacities; conflicts with `resources`.
    #[serde(default)]
    pub k: Option<Vec<f64>>,
    /// Direct competition matrix; conflicts with `resources`.
    #[serde(default)]
    pub lambda: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub resources: Option<ResourcesConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gamma: vec![1.0],
            k: Some(vec![1.0]),
            lambda: Some(vec![vec![1.0]]),
            resources: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKindConfig {
    Particle,
    Diffusion,
    Dual,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub kind: EngineKindConfig,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_events")]
    pub max_events: u64,
    /// Approximate tau-leaping profile mode (exact engine otherwise).
    #[serde(default)]
    pub tau_leap: bool,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "default_fk_clip")]
    pub fk_clip: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            kind: EngineKindConfig::Diffusion,
            dt: 1e-3,
            eps: 1.0,
            max_events: default_max_events(),
            tau_leap: false,
            tau: None,
            fk_clip: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KappaEntry {
    pub site: usize,
    /// Zero-based type index.
    pub ty: usize,
    pub n: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Constant per-site per-type initial mass, or explicit rows.
    #[serde(default)]
    pub value: Option<f64>,
    /// Explicit `x[site][type]`.
    #[serde(default)]
    pub x: Option<Vec<Vec<f64>>>,
    /// Dual initial alpha, one entry per site (defaults to zero).
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    /// Dual initial particles.
    #[serde(default)]
    pub kappa: Vec<KappaEntry>,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            value: Some(1.0),
            x: None,
            alpha: None,
            kappa: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Observation times; defaults to `[horizon]`.
    #[serde(default)]
    pub observe: Vec<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: u64,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads: 0 = all cores, 1 = sequential.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub out: Option<String>,
    #[serde(default)]
    pub format: Option<OutputFormat>,
    /// Optional wall-clock budget for studies, in seconds.
    #[serde(default)]
    pub budget_seconds: Option<f64>,
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            observe: Vec::new(),
            replicates: 100,
            seed: 0,
            threads: 0,
            out: None,
            format: None,
            budget_seconds: None,
        }
    }
}

/// Study grids, all optional with documented defaults.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub side_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub theta_tilde: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub schema_version: Option<u32>,
    #[serde(default)]
    pub geography: GeographyConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub study: StudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: Some(crate::SCHEMA_VERSION),
            geography: GeographyConfig::default(),
            model: ModelConfig::default(),
            engine: EngineConfig::default(),
            initial: InitialConfig::default(),
            run: RunBlock::default(),
            study: StudyConfig::default(),
        }
    }
}

/// The documented reference scenario: torus of side 3 with the symmetric
/// nearest-neighbor kernel, two exchangeable types with gamma = K = 1 and
/// lambda = 1/2, constant unit initial mass, and a dual start of one
/// particle of each type at the origin with alpha = 0, horizon 1/2.
pub fn reference_config() -> RunConfig {
    RunConfig {
        schema_version: Some(crate::SCHEMA_VERSION),
        geography: GeographyConfig {
            dim: 1,
            side: 3,
            step: vec![
                StepEntry {
                    offset: vec![1],
                    prob: 0.5,
                },
                StepEntry {
                    offset: vec![-1],
                    prob: 0.5,
                },
            ],
            ..GeographyConfig::default()
        },
        model: ModelConfig {
            gamma: vec![1.0, 1.0],
            k: Some(vec![1.0, 1.0]),
            lambda: Some(vec![vec![0.5, 0.5], vec![0.5, 0.5]]),
            resources: None,
        },
        engine: EngineConfig::default(),
        initial: InitialConfig {
            value: Some(1.0),
            x: None,
            alpha: None,
            kappa: vec![
                KappaEntry {
                    site: 0,
                    ty: 0,
                    n: 1,
                },
                KappaEntry {
                    site: 0,
                    ty: 1,
                    n: 1,
                },
            ],
        },
        run: RunBlock {
            horizon: 0.5,
            observe: vec![0.5],
            replicates: 10_000,
            ..RunBlock::default()
        },
        study: StudyConfig::default(),
    }
}

/// A parsed and validated configuration with the derived objects built.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub raw: RunConfig,
    pub geo: Geography,
    pub params: ModelParams,
    pub x0: Field<f64>,
    pub alpha0: Vec<f64>,
    pub kappa0: Field<u32>,
    pub hash: u64,
}

impl ResolvedConfig {
    pub fn observation_times(&self) -> Vec<f64> {
        if self.raw.run.observe.is_empty() {
            vec![self.raw.run.horizon]
        } else {
            self.raw.run.observe.clone()
        }
    }
}

/// Parse TOML text into a validated configuration; collects every violation.
pub fn parse_config(text: &str) -> Result<ResolvedConfig, ConfigError> {
    let raw: RunConfig = toml::from_str(text)
        .map_err(|e| ConfigError::single(format!("config: {e}")))?;
    resolve(raw)
}

/// Validate a config and build the geography, parameters, and initial data.
pub fn resolve(mut raw: RunConfig) -> Result<ResolvedConfig, ConfigError> {
    let mut violations = Vec::new();

    if let Some(v) = raw.schema_version {
        if v != crate::SCHEMA_VERSION {
            violations.push(format!(
                "schema_version: artifact understands {}, got {v}",
                crate::SCHEMA_VERSION
            ));
        }
    } else {
        raw.schema_version = Some(crate::SCHEMA_VERSION);
    }
    if raw.geography.step.is_empty() && raw.geography.kernel.is_none() {
        raw.geography.step = vec![StepEntry {
            offset: vec![0; raw.geography.dim],
            prob: 1.0,
        }];
    }

    let rho_spec = RhoSpec {
        r: raw.geography.r,
        beta: match &raw.geography.beta {
            BetaConfig::Mode(m) if m == "uniform" => BetaSpec::Uniform,
            BetaConfig::Mode(m) => {
                violations.push(format!(
                    "geography.beta: unknown mode {m:?}, expected \"uniform\" or a weight list"
                ));
                BetaSpec::Uniform
            }
            BetaConfig::Weights(w) => BetaSpec::Explicit(w.clone()),
        },
        n_max: raw.geography.n_max,
        tail_tol: raw.geography.tail_tol,
    };
    let geo = if let Some(kernel) = &raw.geography.kernel {
        let n = kernel.len();
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in kernel.iter().enumerate() {
            if row.len() != n {
                violations.push(format!(
                    "geography.kernel[{i}]: expected {n} entries, got {}",
                    row.len()
                ));
            }
            flat.extend_from_slice(row);
        }
        if violations.is_empty() {
            Geography::from_kernel(&flat, n, &rho_spec)
        } else {
            Err(ConfigError::new(Vec::new()))
        }
    } else {
        let steps: Vec<(Vec<i64>, f64)> = raw
            .geography
            .step
            .iter()
            .map(|s| (s.offset.clone(), s.prob))
            .collect();
        Geography::torus(raw.geography.dim, raw.geography.side, &steps, &rho_spec)
    };
    let geo = match geo {
        Ok(g) => Some(g),
        Err(e) => {
            violations.extend(e.violations);
            None
        }
    };

    let params = build_params(&raw.model, &mut violations);

    // Engine and run blocks.
    if !(raw.engine.dt > 0.0) {
        violations.push(format!("engine.dt: must be > 0, got {}", raw.engine.dt));
    }
    if !(raw.engine.eps > 0.0) {
        violations.push(format!("engine.eps: must be > 0, got {}", raw.engine.eps));
    }
    if raw.engine.tau_leap && raw.engine.tau.map_or(true, |t| t <= 0.0) {
        violations.push("engine.tau: tau-leap mode needs a positive leap size".to_string());
    }
    if !(raw.engine.fk_clip > 0.0) {
        violations.push(format!(
            "engine.fk_clip: must be > 0, got {}",
            raw.engine.fk_clip
        ));
    }
    if !(raw.run.horizon >= 0.0) {
        violations.push(format!(
            "run.horizon: must be >= 0, got {}",
            raw.run.horizon
        ));
    }
    if raw.run.replicates == 0 {
        violations.push("run.replicates: must be >= 1".to_string());
    }
    let mut sorted = raw.run.observe.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted != raw.run.observe {
        violations.push("run.observe: times must be sorted ascending".to_string());
    }
    for (i, &t) in raw.run.observe.iter().enumerate() {
        if t < 0.0 || t > raw.run.horizon {
            violations.push(format!(
                "run.observe[{i}]: {t} outside [0, horizon = {}]",
                raw.run.horizon
            ));
        }
    }

    // Initial data against shapes.
    let (x0, alpha0, kappa0) = match (&geo, &params) {
        (Some(g), Some(p)) => {
            let sites = g.n_sites();
            let types = p.types;
            let x0 = match (&raw.initial.x, raw.initial.value) {
                (Some(rows), _) => {
                    let mut f = Field::<f64>::zeros(sites, types);
                    if rows.len() != sites {
                        violations.push(format!(
                            "initial.x: expected {sites} site rows, got {}",
                            rows.len()
                        ));
                    }
                    for (s, row) in rows.iter().enumerate().take(sites) {
                        if row.len() != types {
                            violations.push(format!(
                                "initial.x[{s}]: expected {types} entries, got {}",
                                row.len()
                            ));
                            continue;
                        }
                        for (m, &v) in row.iter().enumerate() {
                            if v < 0.0 || !v.is_finite() {
                                violations.push(format!(
                                    "initial.x[{s}][{m}]: must be finite and >= 0, got {v}"
                                ));
                            }
                            f.set(s, m, v);
                        }
                    }
                    f
                }
                (None, Some(v)) => {
                    if v < 0.0 || !v.is_finite() {
                        violations
                            .push(format!("initial.value: must be finite and >= 0, got {v}"));
                    }
                    Field::constant(sites, types, v.max(0.0))
                }
                (None, None) => Field::constant(sites, types, 1.0),
            };
            let alpha0 = match &raw.initial.alpha {
                Some(a) => {
                    if a.len() != sites {
                        violations.push(format!(
                            "initial.alpha: expected {sites} entries, got {}",
                            a.len()
                        ));
                    }
                    for (s, &v) in a.iter().enumerate() {
                        if v < 0.0 || !v.is_finite() {
                            violations.push(format!(
                                "initial.alpha[{s}]: must be finite and >= 0, got {v}"
                            ));
                        }
                    }
                    let mut out = a.clone();
                    out.resize(sites, 0.0);
                    out
                }
                None => vec![0.0; sites],
            };
            let mut kappa0 = Field::<u32>::zeros(sites, types);
            for (i, entry) in raw.initial.kappa.iter().enumerate() {
                if entry.site >= sites {
                    violations.push(format!(
                        "initial.kappa[{i}].site: {} out of range (sites = {sites})",
                        entry.site
                    ));
                    continue;
                }
                if entry.ty >= types {
                    violations.push(format!(
                        "initial.kappa[{i}].ty: {} out of range (types = {types})",
                        entry.ty
                    ));
                    continue;
                }
                kappa0.set(
                    entry.site,
                    entry.ty,
                    kappa0.get(entry.site, entry.ty) + entry.n,
                );
            }
            (x0, alpha0, kappa0)
        }
        _ => (Field::zeros(1, 1), vec![0.0], Field::zeros(1, 1)),
    };

    if !violations.is_empty() {
        return Err(ConfigError::new(violations));
    }
    let geo = geo.unwrap();
    let params = params.unwrap();
    let hash = config_hash(&raw);
    Ok(ResolvedConfig {
        raw,
        geo,
        params,
        x0,
        alpha0,
        kappa0,
        hash,
    })
}

fn build_params(model: &ModelConfig, violations: &mut Vec<String>) -> Option<ModelParams> {
    let gamma = model.gamma.clone();
    let types = gamma.len();
    let direct = model.k.is_some() || model.lambda.is_some();
    if direct && model.resources.is_some() {
        violations.push(
            "model: both direct (k / lambda) and resources given; direct entry conflicts \
             with the resource derivation, choose one"
                .to_string(),
        );
        return None;
    }
    if let Some(res) = &model.resources {
        let spec = ResourceSpec {
            resources: res.count,
            r: res.r.clone(),
            s: res.s.iter().flatten().copied().collect(),
            lambda_tilde: res.lambda_tilde.iter().flatten().copied().collect(),
        };
        if res.s.len() != res.count || res.lambda_tilde.len() != res.count {
            violations.push(format!(
                "model.resources: s and lambda_tilde need {} rows",
                res.count
            ));
            return None;
        }
        return match spec.derive_params(gamma) {
            Ok(p) => Some(p),
            Err(e) => {
                violations.extend(e.violations);
                None
            }
        };
    }
    let k = model.k.clone().unwrap_or_else(|| vec![1.0; types]);
    let lambda_rows = model
        .lambda
        .clone()
        .unwrap_or_else(|| vec![vec![1.0; types]; types]);
    let mut lambda = Vec::with_capacity(types * types);
    let mut shape_ok = true;
    if lambda_rows.len() != types {
        violations.push(format!(
            "model.lambda: expected {types} rows, got {}",
            lambda_rows.len()
        ));
        shape_ok = false;
    }
    for (m, row) in lambda_rows.iter().enumerate() {
        if row.len() != types {
            violations.push(format!(
                "model.lambda[{m}]: expected {types} entries, got {}",
                row.len()
            ));
            shape_ok = false;
        }
        lambda.extend_from_slice(row);
    }
    if !shape_ok {
        return None;
    }
    match ModelParams::new(gamma, k, lambda) {
        Ok(p) => Some(p),
        Err(e) => {
            violations.extend(e.violations);
            None
        }
    }
}

/// FNV-1a over the canonical JSON form of the defaults-filled config.
pub fn config_hash(raw: &RunConfig) -> u64 {
    let canonical = serde_json::to_string(raw).expect("config serializes");
    let mut h = 0xcbf2_9ce4_8422_2325_u64;
    for b in canonical.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
